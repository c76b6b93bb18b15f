#include "pcloc/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "pcloc/rng.hpp"

namespace pcloc {

namespace {

using json = nlohmann::json;

double cell_hash(std::uint64_t seed, std::int64_t a, std::int64_t b) {
    const std::uint64_t h =
        hash_mix(seed ^ hash_mix(std::uint64_t(a) * 0x9E3779B97F4A7C15ULL ^ std::uint64_t(b)));
    return double(h >> 11) * (1.0 / 9007199254740992.0);
}

Rgb8 scale_color(const Rgb8& c, double f) {
    Rgb8 out;
    for (int i = 0; i < 3; ++i)
        out[i] = std::uint8_t(std::clamp(std::lround(c[i] * f), 0l, 255l));
    return out;
}

Rgb8 lerp_color(const Rgb8& a, const Rgb8& b, double t) {
    Rgb8 out;
    for (int i = 0; i < 3; ++i) out[i] = std::uint8_t(std::lround(a[i] + t * (b[i] - a[i])));
    return out;
}

// `face_salt` must differ between parallel faces of the same body; without
// it, opposite walls carry identical textures and the scene acquires a
// translational symmetry that aliases feature-based localization.
Rgb8 sample_texture(const TextureSpec& tex, double a, double b, std::uint64_t face_salt) {
    if (face_salt != 0) {
        TextureSpec salted = tex;
        salted.seed = hash_mix(tex.seed ^ face_salt);
        return sample_texture(salted, a, b, 0);
    }
    switch (tex.kind) {
        case TextureKind::Solid:
            return tex.color_a;
        case TextureKind::Checker: {
            const auto ia = std::int64_t(std::floor(a / tex.texel));
            const auto ib = std::int64_t(std::floor(b / tex.texel));
            Rgb8 base = ((ia + ib) & 1) ? tex.color_b : tex.color_a;
            if (tex.cell_jitter) base = scale_color(base, 0.7 + 0.3 * cell_hash(tex.seed, ia, ib));
            return base;
        }
        case TextureKind::ValueNoise: {
            const double fa = a / tex.texel, fb = b / tex.texel;
            const auto ia = std::int64_t(std::floor(fa));
            const auto ib = std::int64_t(std::floor(fb));
            const double ta = fa - double(ia), tb = fb - double(ib);
            const double v00 = cell_hash(tex.seed, ia, ib);
            const double v10 = cell_hash(tex.seed, ia + 1, ib);
            const double v01 = cell_hash(tex.seed, ia, ib + 1);
            const double v11 = cell_hash(tex.seed, ia + 1, ib + 1);
            const double v = (1 - tb) * ((1 - ta) * v00 + ta * v10) +
                             tb * ((1 - ta) * v01 + ta * v11);
            return lerp_color(tex.color_a, tex.color_b, v);
        }
    }
    return tex.color_a;
}

// In-plane coordinates of a point on a face normal to `axis`.
std::pair<double, double> plane_coords(const Vec3& p, int axis) {
    switch (axis) {
        case 0: return {p.y(), p.z()};
        case 1: return {p.x(), p.z()};
        default: return {p.x(), p.y()};
    }
}

struct BoxHit {
    double t;
    int axis;
};

// Slab intersection. Rays starting inside return the exit (interior surface).
std::optional<BoxHit> intersect_box(const Box& box, const Vec3& o, const Vec3& d, double t_min) {
    double t_enter = -std::numeric_limits<double>::infinity();
    double t_exit = std::numeric_limits<double>::infinity();
    int enter_axis = -1, exit_axis = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d(a)) < 1e-15) {
            if (o(a) < box.min_corner(a) || o(a) > box.max_corner(a)) return std::nullopt;
            continue;
        }
        double t0 = (box.min_corner(a) - o(a)) / d(a);
        double t1 = (box.max_corner(a) - o(a)) / d(a);
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > t_enter) {
            t_enter = t0;
            enter_axis = a;
        }
        if (t1 < t_exit) {
            t_exit = t1;
            exit_axis = a;
        }
    }
    if (t_enter > t_exit) return std::nullopt;
    if (t_enter > t_min) return BoxHit{t_enter, enter_axis};
    if (t_exit > t_min) return BoxHit{t_exit, exit_axis};
    return std::nullopt;
}

bool inside_box(const Box& box, const Vec3& p) {
    for (int a = 0; a < 3; ++a)
        if (p(a) <= box.min_corner(a) || p(a) >= box.max_corner(a)) return false;
    return true;
}

TextureSpec parse_texture(const json& j) {
    TextureSpec t;
    const std::string kind = j.value("kind", "solid");
    if (kind == "solid") t.kind = TextureKind::Solid;
    else if (kind == "checker") t.kind = TextureKind::Checker;
    else if (kind == "noise") t.kind = TextureKind::ValueNoise;
    else
        throw std::runtime_error("scene: unknown texture kind " + kind);
    auto color = [](const json& c) -> Rgb8 {
        return {std::uint8_t(c.at(0)), std::uint8_t(c.at(1)), std::uint8_t(c.at(2))};
    };
    if (j.contains("color_a")) t.color_a = color(j["color_a"]);
    if (j.contains("color_b")) t.color_b = color(j["color_b"]);
    t.texel = j.value("texel", 0.25);
    t.cell_jitter = j.value("jitter", true);
    t.seed = j.value("seed", std::uint64_t(0));
    if (!(t.texel > 0)) throw std::runtime_error("scene: texel must be > 0");
    return t;
}

json texture_json(const TextureSpec& t) {
    json j;
    j["kind"] = t.kind == TextureKind::Solid ? "solid"
                : t.kind == TextureKind::Checker ? "checker"
                                                 : "noise";
    j["color_a"] = {t.color_a[0], t.color_a[1], t.color_a[2]};
    j["color_b"] = {t.color_b[0], t.color_b[1], t.color_b[2]};
    j["texel"] = t.texel;
    j["jitter"] = t.cell_jitter;
    j["seed"] = t.seed;
    return j;
}

}  // namespace

std::optional<RayHit> ray_cast(const Scene& scene, const Vec3& origin, const Vec3& direction,
                               double t_min) {
    std::optional<RayHit> best;
    for (const auto& box : scene.boxes) {
        const auto hit = intersect_box(box, origin, direction, t_min);
        if (!hit || (best && hit->t >= best->t)) continue;
        const Vec3 pos = origin + hit->t * direction;
        const auto [a, b] = plane_coords(pos, hit->axis);
        const double mid = 0.5 * (box.min_corner(hit->axis) + box.max_corner(hit->axis));
        const std::uint64_t salt = 1 + 2 * std::uint64_t(hit->axis) + (pos(hit->axis) > mid);
        best = RayHit{hit->t, pos, sample_texture(box.texture, a, b, salt)};
    }
    for (const auto& rect : scene.rects) {
        if (std::abs(direction(rect.axis)) < 1e-15) continue;
        const double t = (rect.offset - origin(rect.axis)) / direction(rect.axis);
        if (t <= t_min || (best && t >= best->t)) continue;
        const Vec3 pos = origin + t * direction;
        const auto [a, b] = plane_coords(pos, rect.axis);
        if (a < rect.lo0 || a > rect.hi0 || b < rect.lo1 || b > rect.hi1) continue;
        best = RayHit{t, pos, sample_texture(rect.texture, a, b, 0)};
    }
    return best;
}

double distance_to_nearest_surface(const Scene& scene, const Vec3& point) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& box : scene.boxes) {
        if (inside_box(box, point)) {
            for (int a = 0; a < 3; ++a) {
                best = std::min(best, point(a) - box.min_corner(a));
                best = std::min(best, box.max_corner(a) - point(a));
            }
        } else {
            Vec3 d = Vec3::Zero();
            for (int a = 0; a < 3; ++a)
                d(a) = std::max({box.min_corner(a) - point(a), 0.0, point(a) - box.max_corner(a)});
            best = std::min(best, d.norm());
        }
    }
    for (const auto& rect : scene.rects) {
        const auto [a, b] = plane_coords(point, rect.axis);
        const double da = std::max({rect.lo0 - a, 0.0, a - rect.hi0});
        const double db = std::max({rect.lo1 - b, 0.0, b - rect.hi1});
        const double dn = point(rect.axis) - rect.offset;
        best = std::min(best, std::sqrt(da * da + db * db + dn * dn));
    }
    return best;
}

PointCloud simulate_lidar(const Scene& scene, const ScanConfig& config, std::uint64_t seed) {
    if (!(config.angular_resolution > 0)) throw std::runtime_error("scan: resolution must be > 0");
    if (!(config.max_range > 0)) throw std::runtime_error("scan: max_range must be > 0");

    for (const auto& pos : config.scanner_positions) {
        int containing = 0;
        for (const auto& box : scene.boxes)
            if (inside_box(box, pos)) ++containing;
        // One containing box is the scene shell; more means the scanner sits
        // inside an interior solid.
        if (containing > 1) throw std::runtime_error("scan: scanner inside solid geometry");
    }

    PointCloud cloud;
    Rng rng(seed);
    const double res = config.angular_resolution;
    const int n_el = int(std::floor(M_PI / res)) + 1;
    const int n_az = int(std::floor(2.0 * M_PI / res));
    for (const auto& origin : config.scanner_positions) {
        for (int ie = 0; ie < n_el; ++ie) {
            const double el = -M_PI / 2.0 + ie * res;
            const double ce = std::cos(el), se = std::sin(el);
            for (int ia = 0; ia < n_az; ++ia) {
                const double az = ia * res;
                const Vec3 dir(ce * std::cos(az), ce * std::sin(az), se);
                const auto hit = ray_cast(scene, origin, dir);
                if (!hit || hit->t > config.max_range) continue;
                Vec3 p = hit->position;
                if (config.range_noise_sigma > 0) {
                    // Box-Muller from the seeded stream.
                    const double u1 = std::max(rng.next_double(), 1e-12);
                    const double u2 = rng.next_double();
                    const double g =
                        std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
                    p += config.range_noise_sigma * g * dir;
                }
                cloud.points.push_back(p.cast<float>());
                cloud.colors.push_back(hit->color);
            }
        }
    }
    return cloud;
}

ImageRgb render_camera_frame(const Scene& scene, const RigidPose& pose, const Intrinsics& K,
                             std::vector<float>* depth_out) {
    ImageRgb img(K.width, K.height);
    if (depth_out) depth_out->assign(std::size_t(K.width) * K.height, 0.f);
    for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) {
            Vec3 dir_cam((x + 0.5 - K.cx) / K.fx, (y + 0.5 - K.cy) / K.fy, 1.0);
            dir_cam.normalize();
            const Vec3 dir = pose.rotation * dir_cam;
            const auto hit = ray_cast(scene, pose.translation, dir);
            if (!hit) continue;
            img.set(x, y, hit->color);
            if (depth_out)
                (*depth_out)[std::size_t(y) * K.width + x] = float(hit->t * dir_cam.z());
        }
    return img;
}

RigidPose look_at_pose(const Vec3& position, const Vec3& target) {
    const Vec3 f = (target - position).normalized();
    Vec3 up(0, 0, 1);
    if (std::abs(f.dot(up)) > 0.999) up = Vec3(1, 0, 0);
    const Vec3 r = f.cross(up).normalized();
    const Vec3 d = f.cross(r);
    RigidPose pose;
    pose.rotation.col(0) = r;  // camera x: right
    pose.rotation.col(1) = d;  // camera y: down
    pose.rotation.col(2) = f;  // camera z: forward
    pose.translation = position;
    return pose;
}

Trajectory generate_trajectory(const TrajectorySpec& spec) {
    if (spec.waypoints.size() < 2) throw std::runtime_error("trajectory: need >= 2 waypoints");
    if (!(spec.speed > 0) || !(spec.frame_rate > 0))
        throw std::runtime_error("trajectory: speed and frame rate must be > 0");

    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < spec.waypoints.size(); ++i) {
        const double len =
            (spec.waypoints[i].position - spec.waypoints[i - 1].position).norm();
        if (len < 1e-12)
            throw std::runtime_error("trajectory: coincident consecutive waypoints");
        cum.push_back(cum.back() + len);
    }
    const double total = cum.back();
    const double step = spec.speed / spec.frame_rate;

    Trajectory traj;
    std::size_t seg = 0;
    for (int k = 0;; ++k) {
        const double s = std::min(k * step, total);
        while (seg + 1 < cum.size() - 1 && cum[seg + 1] < s) ++seg;
        const double seg_len = cum[seg + 1] - cum[seg];
        const double t = (s - cum[seg]) / seg_len;
        const Vec3 pos = (1 - t) * spec.waypoints[seg].position +
                         t * spec.waypoints[seg + 1].position;
        const Vec3 target = (1 - t) * spec.waypoints[seg].look_at +
                            t * spec.waypoints[seg + 1].look_at;
        traj.poses.push_back({k / spec.frame_rate, look_at_pose(pos, target)});
        if (k * step >= total - 1e-12) break;
    }
    return traj;
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scene file: " + path);
    json j;
    in >> j;
    Scene scene;
    scene.seed = j.value("seed", std::uint64_t(0));
    for (const auto& b : j.value("boxes", json::array())) {
        Box box;
        for (int a = 0; a < 3; ++a) {
            box.min_corner(a) = b.at("min").at(a);
            box.max_corner(a) = b.at("max").at(a);
            if (!(box.min_corner(a) < box.max_corner(a)))
                throw std::runtime_error("scene: degenerate box extents");
        }
        if (b.contains("texture")) box.texture = parse_texture(b["texture"]);
        scene.boxes.push_back(box);
    }
    for (const auto& r : j.value("rects", json::array())) {
        Rect rect;
        rect.axis = r.at("axis");
        if (rect.axis < 0 || rect.axis > 2) throw std::runtime_error("scene: rect axis must be 0-2");
        rect.offset = r.at("offset");
        rect.lo0 = r.at("extent").at(0);
        rect.hi0 = r.at("extent").at(1);
        rect.lo1 = r.at("extent").at(2);
        rect.hi1 = r.at("extent").at(3);
        if (!(rect.lo0 < rect.hi0) || !(rect.lo1 < rect.hi1))
            throw std::runtime_error("scene: degenerate rect extents");
        if (r.contains("texture")) rect.texture = parse_texture(r["texture"]);
        scene.rects.push_back(rect);
    }
    return scene;
}

void save_scene(const Scene& scene, const std::string& path) {
    json j;
    j["seed"] = scene.seed;
    j["boxes"] = json::array();
    for (const auto& b : scene.boxes) {
        json jb;
        jb["min"] = {b.min_corner.x(), b.min_corner.y(), b.min_corner.z()};
        jb["max"] = {b.max_corner.x(), b.max_corner.y(), b.max_corner.z()};
        jb["texture"] = texture_json(b.texture);
        j["boxes"].push_back(jb);
    }
    j["rects"] = json::array();
    for (const auto& r : scene.rects) {
        json jr;
        jr["axis"] = r.axis;
        jr["offset"] = r.offset;
        jr["extent"] = {r.lo0, r.hi0, r.lo1, r.hi1};
        jr["texture"] = texture_json(r.texture);
        j["rects"].push_back(jr);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open scene file for writing: " + path);
    out << j.dump(2) << "\n";
}

Scene make_default_room(double size_x, double size_y, double size_z, std::uint64_t seed) {
    Scene scene;
    scene.seed = seed;

    Box shell;
    shell.min_corner = Vec3(0, 0, 0);
    shell.max_corner = Vec3(size_x, size_y, size_z);
    // Non-repetitive noise texture on the shell: repetitive patterns (e.g. a
    // checkerboard) alias under wide-baseline feature matching and defeat
    // relocalization, much like bare textureless walls would in real scans.
    shell.texture = {TextureKind::ValueNoise, {210, 205, 190}, {70, 75, 90}, 0.25, true, seed};
    scene.boxes.push_back(shell);

    // Interior boxes use value-noise too, not checkerboards: a checker
    // lattice is self-similar under a one-cell shift, and descriptor matches
    // aliased by exactly one cell vote for a consistent pose a full cell
    // width away from the truth. Distinct palettes and texels keep the boxes
    // visually separable.
    Box table;
    table.min_corner = Vec3(0.25 * size_x, 0.25 * size_y, 0.0);
    table.max_corner = Vec3(0.45 * size_x, 0.45 * size_y, 0.9);
    table.texture = {TextureKind::ValueNoise, {200, 130, 60}, {70, 40, 15}, 0.1, true, seed + 1};
    scene.boxes.push_back(table);

    Box pillar;
    pillar.min_corner = Vec3(0.65 * size_x, 0.6 * size_y, 0.0);
    pillar.max_corner = Vec3(0.75 * size_x, 0.7 * size_y, size_z);
    pillar.texture = {TextureKind::ValueNoise, {140, 160, 200}, {30, 40, 70}, 0.12, true,
                      seed + 2};
    scene.boxes.push_back(pillar);

    Box crate;
    crate.min_corner = Vec3(0.15 * size_x, 0.7 * size_y, 0.0);
    crate.max_corner = Vec3(0.3 * size_x, 0.85 * size_y, 0.6);
    crate.texture = {TextureKind::ValueNoise, {100, 190, 100}, {25, 70, 25}, 0.1, true, seed + 3};
    scene.boxes.push_back(crate);

    // Wall posters with noise texture for non-repetitive structure.
    Rect poster1;
    poster1.axis = 1;
    poster1.offset = 1e-4;  // just inside the y=0 wall
    poster1.lo0 = 0.1 * size_x;
    poster1.hi0 = 0.5 * size_x;
    poster1.lo1 = 0.3 * size_z;
    poster1.hi1 = 0.8 * size_z;
    poster1.texture = {TextureKind::ValueNoise, {250, 240, 90}, {120, 30, 140}, 0.12, true,
                       seed + 4};
    scene.rects.push_back(poster1);

    Rect poster2;
    poster2.axis = 0;
    poster2.offset = size_x - 1e-4;
    poster2.lo0 = 0.2 * size_y;
    poster2.hi0 = 0.8 * size_y;
    poster2.lo1 = 0.25 * size_z;
    poster2.hi1 = 0.85 * size_z;
    poster2.texture = {TextureKind::ValueNoise, {80, 220, 210}, {160, 40, 40}, 0.15, true,
                       seed + 5};
    scene.rects.push_back(poster2);

    return scene;
}

}  // namespace pcloc
