#include "pcloc/renderer.hpp"

#include <cmath>
#include <stdexcept>

namespace pcloc {

std::size_t Framebuffer::valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v;
    return n;
}

double RenderConfig::depth_band(double z_min) const {
    return std::max(delta_rel * z_min, delta_min);
}

void RenderConfig::validate() const {
    if (!(delta_rel > 0.0) || delta_rel > 0.2)
        throw std::runtime_error("RenderConfig: delta_rel must be in (0, 0.2]");
    if (!(delta_min > 0.0)) throw std::runtime_error("RenderConfig: delta_min must be > 0");
    if (filter_levels < 1) throw std::runtime_error("RenderConfig: filter_levels must be >= 1");
    if (!(filter_ratio > 1.0)) throw std::runtime_error("RenderConfig: filter_ratio must be > 1");
}

namespace {

struct ViewTransform {
    float r[9];
    float t[3];
    float fx, fy, cx, cy;
    int w, h;

    ViewTransform(const RigidPose& pose, const Intrinsics& K) {
        const RigidPose view = pose.inverse();  // world -> camera
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r[3 * i + j] = float(view.rotation(i, j));
        for (int i = 0; i < 3; ++i) t[i] = float(view.translation(i));
        fx = float(K.fx);
        fy = float(K.fy);
        cx = float(K.cx);
        cy = float(K.cy);
        w = K.width;
        h = K.height;
    }

    // Returns pixel index, or -1 when culled.
    inline std::int64_t project(const Eigen::Vector3f& p, float& z_out) const {
        const float x = p.x(), y = p.y(), z = p.z();
        const float zc = r[6] * x + r[7] * y + r[8] * z + t[2];
        if (!(zc > float(kNearPlane))) return -1;
        const float xc = r[0] * x + r[1] * y + r[2] * z + t[0];
        const float yc = r[3] * x + r[4] * y + r[5] * z + t[1];
        const float u = fx * xc / zc + cx;
        const float v = fy * yc / zc + cy;
        if (!(u >= 0.f) || u >= float(w) || !(v >= 0.f) || v >= float(h)) return -1;
        z_out = zc;
        return std::int64_t(v) * w + std::int64_t(u);
    }
};

}  // namespace

Framebuffer depth_pass(const PointCloud& cloud, const RigidPose& pose, const Intrinsics& K) {
    if (!K.is_valid()) throw std::runtime_error("depth_pass: invalid intrinsics");
    Framebuffer fb(K.width, K.height);
    const ViewTransform vt(pose, K);
    for (const auto& p : cloud.points) {
        float z;
        const std::int64_t i = vt.project(p, z);
        if (i < 0) continue;
        if (z < fb.depth[i]) {
            fb.depth[i] = z;
            fb.valid[i] = 1;
        }
    }
    return fb;
}

Framebuffer accumulate_colors(const PointCloud& cloud, const RigidPose& pose, const Intrinsics& K,
                              const Framebuffer& z_min, const RenderConfig& config) {
    if (z_min.width != K.width || z_min.height != K.height)
        throw std::runtime_error("accumulate_colors: z_min size mismatch");
    const std::size_t n_px = std::size_t(K.width) * K.height;
    std::vector<std::uint32_t> sum(3 * n_px, 0);
    std::vector<std::uint32_t> count(n_px, 0);

    const ViewTransform vt(pose, K);
    for (std::size_t k = 0; k < cloud.size(); ++k) {
        float z;
        const std::int64_t i = vt.project(cloud.points[k], z);
        if (i < 0 || !z_min.valid[i]) continue;
        const float zm = z_min.depth[i];
        if (z > zm + float(config.depth_band(zm))) continue;
        const Rgb8& c = cloud.colors[k];
        sum[3 * i + 0] += c[0];
        sum[3 * i + 1] += c[1];
        sum[3 * i + 2] += c[2];
        count[i] += 1;
    }

    Framebuffer fb(K.width, K.height);
    fb.depth = z_min.depth;
    fb.valid = z_min.valid;
    for (std::size_t i = 0; i < n_px; ++i) {
        if (!count[i]) continue;
        std::uint8_t* px = fb.color.data.data() + 3 * i;
        for (int c = 0; c < 3; ++c)
            px[c] = std::uint8_t((2 * sum[3 * i + c] + count[i]) / (2 * count[i]));
    }
    return fb;
}

Framebuffer hierarchical_depth_filter(const Framebuffer& fb, const RenderConfig& config) {
    const int levels = config.filter_levels;
    if (levels <= 1) return fb;

    // Min-depth pyramid; level 0 is the framebuffer itself. Cells with no
    // valid children carry +inf.
    struct Level {
        int w, h;
        std::vector<float> depth;
    };
    std::vector<Level> pyr(levels);
    pyr[0].w = fb.width;
    pyr[0].h = fb.height;
    pyr[0].depth = fb.depth;
    for (int l = 1; l < levels; ++l) {
        const Level& prev = pyr[l - 1];
        Level& cur = pyr[l];
        cur.w = (prev.w + 1) / 2;
        cur.h = (prev.h + 1) / 2;
        cur.depth.assign(std::size_t(cur.w) * cur.h, std::numeric_limits<float>::infinity());
        for (int y = 0; y < prev.h; ++y)
            for (int x = 0; x < prev.w; ++x) {
                const float d = prev.depth[std::size_t(y) * prev.w + x];
                float& cell = cur.depth[std::size_t(y / 2) * cur.w + x / 2];
                if (d < cell) cell = d;
            }
    }

    Framebuffer out = fb;
    for (int y = 0; y < fb.height; ++y)
        for (int x = 0; x < fb.width; ++x) {
            const std::size_t i = fb.idx(x, y);
            if (!fb.valid[i]) continue;
            float m = std::numeric_limits<float>::infinity();
            for (int l = 1; l < levels; ++l) {
                const Level& lv = pyr[l];
                const int cx = x >> l, cy = y >> l;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= lv.w || ny >= lv.h) continue;
                        m = std::min(m, lv.depth[std::size_t(ny) * lv.w + nx]);
                    }
            }
            if (double(fb.depth[i]) > config.filter_ratio * double(m)) {
                out.valid[i] = 0;
                out.depth[i] = std::numeric_limits<float>::infinity();
                out.color.set(x, y, {0, 0, 0});
            }
        }
    return out;
}

Framebuffer fill_holes(const Framebuffer& fb) {
    bool any_valid = false;
    for (auto v : fb.valid)
        if (v) {
            any_valid = true;
            break;
        }
    if (!any_valid) throw UnrenderableView();

    // Pull: average valid pixels down to a 1x1 level.
    struct Level {
        int w, h;
        std::vector<float> rgb;  // 3 per pixel
        std::vector<float> weight;
    };
    std::vector<Level> pyr;
    {
        Level l0;
        l0.w = fb.width;
        l0.h = fb.height;
        const std::size_t n = std::size_t(l0.w) * l0.h;
        l0.rgb.resize(3 * n);
        l0.weight.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            l0.weight[i] = fb.valid[i] ? 1.f : 0.f;
            for (int c = 0; c < 3; ++c) l0.rgb[3 * i + c] = float(fb.color.data[3 * i + c]);
        }
        pyr.push_back(std::move(l0));
    }
    while (pyr.back().w > 1 || pyr.back().h > 1) {
        const Level& prev = pyr.back();
        Level cur;
        cur.w = (prev.w + 1) / 2;
        cur.h = (prev.h + 1) / 2;
        const std::size_t n = std::size_t(cur.w) * cur.h;
        cur.rgb.assign(3 * n, 0.f);
        cur.weight.assign(n, 0.f);
        for (int y = 0; y < prev.h; ++y)
            for (int x = 0; x < prev.w; ++x) {
                const std::size_t pi = std::size_t(y) * prev.w + x;
                const float w = prev.weight[pi];
                if (w <= 0.f) continue;
                const std::size_t ci = std::size_t(y / 2) * cur.w + x / 2;
                cur.weight[ci] += w;
                for (int c = 0; c < 3; ++c) cur.rgb[3 * ci + c] += w * prev.rgb[3 * pi + c];
            }
        for (std::size_t i = 0; i < n; ++i) {
            if (cur.weight[i] > 0.f) {
                for (int c = 0; c < 3; ++c) cur.rgb[3 * i + c] /= cur.weight[i];
                cur.weight[i] = 1.f;
            }
        }
        pyr.push_back(std::move(cur));
    }

    // Push: fill holes at each level by bilinear upsampling from the level
    // above (which is already hole-free once processed top-down).
    for (int l = int(pyr.size()) - 2; l >= 0; --l) {
        Level& fine = pyr[l];
        const Level& coarse = pyr[l + 1];
        for (int y = 0; y < fine.h; ++y)
            for (int x = 0; x < fine.w; ++x) {
                const std::size_t i = std::size_t(y) * fine.w + x;
                if (fine.weight[i] > 0.f) continue;
                const float u = (float(x) + 0.5f) * 0.5f - 0.5f;
                const float v = (float(y) + 0.5f) * 0.5f - 0.5f;
                const int x0 = std::clamp(int(std::floor(u)), 0, coarse.w - 1);
                const int y0 = std::clamp(int(std::floor(v)), 0, coarse.h - 1);
                const int x1 = std::min(x0 + 1, coarse.w - 1);
                const int y1 = std::min(y0 + 1, coarse.h - 1);
                const float ax = std::clamp(u - float(x0), 0.f, 1.f);
                const float ay = std::clamp(v - float(y0), 0.f, 1.f);
                for (int c = 0; c < 3; ++c) {
                    const float v00 = coarse.rgb[3 * (std::size_t(y0) * coarse.w + x0) + c];
                    const float v10 = coarse.rgb[3 * (std::size_t(y0) * coarse.w + x1) + c];
                    const float v01 = coarse.rgb[3 * (std::size_t(y1) * coarse.w + x0) + c];
                    const float v11 = coarse.rgb[3 * (std::size_t(y1) * coarse.w + x1) + c];
                    fine.rgb[3 * i + c] = (1.f - ay) * ((1.f - ax) * v00 + ax * v10) +
                                          ay * ((1.f - ax) * v01 + ax * v11);
                }
                fine.weight[i] = 1.f;
            }
    }

    Framebuffer out = fb;
    const std::size_t n = std::size_t(fb.width) * fb.height;
    for (std::size_t i = 0; i < n; ++i) {
        if (fb.valid[i]) continue;
        for (int c = 0; c < 3; ++c)
            out.color.data[3 * i + c] =
                std::uint8_t(std::clamp(std::lround(pyr[0].rgb[3 * i + c]), 0l, 255l));
    }
    return out;
}

std::vector<std::uint8_t> closed_validity_mask(const Framebuffer& fb, int radius) {
    if (radius <= 0) return fb.valid;
    const int w = fb.width, h = fb.height;
    auto box_pass = [&](const std::vector<std::uint8_t>& in, bool take_max) {
        std::vector<std::uint8_t> mid(in.size()), out(in.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                std::uint8_t v = take_max ? 0 : 1;
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int nx = x + dx;
                    const std::uint8_t s =
                        (nx < 0 || nx >= w) ? (take_max ? 0 : 1) : in[std::size_t(y) * w + nx];
                    v = take_max ? std::max(v, s) : std::min(v, s);
                }
                mid[std::size_t(y) * w + x] = v;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                std::uint8_t v = take_max ? 0 : 1;
                for (int dy = -radius; dy <= radius; ++dy) {
                    const int ny = y + dy;
                    const std::uint8_t s =
                        (ny < 0 || ny >= h) ? (take_max ? 0 : 1) : mid[std::size_t(ny) * w + x];
                    v = take_max ? std::max(v, s) : std::min(v, s);
                }
                out[std::size_t(y) * w + x] = v;
            }
        return out;
    };
    return box_pass(box_pass(fb.valid, true), false);
}

Framebuffer render(const PointCloud& cloud, const RigidPose& pose, const Intrinsics& K,
                   const RenderConfig& config) {
    config.validate();
    Framebuffer fb = depth_pass(cloud, pose, K);
    fb = accumulate_colors(cloud, pose, K, fb, config);
    if (config.depth_filter) fb = hierarchical_depth_filter(fb, config);
    if (config.fill_holes) fb = pcloc::fill_holes(fb);
    else if (fb.valid_count() == 0)
        throw UnrenderableView();
    return fb;
}

}  // namespace pcloc
