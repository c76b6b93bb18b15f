#include "pcloc/relocalizer.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "pcloc/detail/binary_io.hpp"
#include "pcloc/renderer.hpp"
#include "pcloc/synth_world.hpp"
#include "pcloc/tracker.hpp"

namespace pcloc {

void RegionOfInterest::validate() const {
    for (int a = 0; a < 3; ++a)
        if (!(min_corner(a) < max_corner(a)))
            throw std::runtime_error("roi: min must be < max per axis");
    if (!(grid_step > 0)) throw std::runtime_error("roi: grid_step must be > 0");
}

std::vector<Vec3> RegionOfInterest::grid_positions() const {
    validate();
    std::vector<double> heights = height_levels;
    if (heights.empty()) heights.push_back(1.6);
    std::vector<Vec3> out;
    for (double h : heights) {
        const double z = min_corner.z() + h;
        if (z > max_corner.z()) continue;
        for (double y = min_corner.y() + 0.5 * grid_step; y < max_corner.y(); y += grid_step)
            for (double x = min_corner.x() + 0.5 * grid_step; x < max_corner.x(); x += grid_step)
                out.emplace_back(x, y, z);
    }
    return out;
}

RegionOfInterest load_roi(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open roi file: " + path);
    nlohmann::json j;
    in >> j;
    RegionOfInterest roi;
    for (int a = 0; a < 3; ++a) {
        roi.min_corner(a) = j.at("min").at(a);
        roi.max_corner(a) = j.at("max").at(a);
    }
    roi.grid_step = j.value("grid_step", 1.0);
    if (j.contains("height_levels"))
        roi.height_levels = j["height_levels"].get<std::vector<double>>();
    roi.validate();
    return roi;
}

void save_roi(const RegionOfInterest& roi, const std::string& path) {
    nlohmann::json j;
    j["min"] = {roi.min_corner.x(), roi.min_corner.y(), roi.min_corner.z()};
    j["max"] = {roi.max_corner.x(), roi.max_corner.y(), roi.max_corner.z()};
    j["grid_step"] = roi.grid_step;
    j["height_levels"] = roi.height_levels.empty() ? std::vector<double>{1.6} : roi.height_levels;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write roi file: " + path);
    out << j.dump(2) << "\n";
}

RigidPose cubemap_face_pose(const Vec3& position, int face) {
    static const Vec3 forwards[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                     {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    return look_at_pose(position, position + forwards[face]);
}

Intrinsics cubemap_intrinsics(int resolution) {
    Intrinsics K;
    K.fx = K.fy = resolution / 2.0;
    K.cx = K.cy = resolution / 2.0;
    K.width = K.height = resolution;
    return K;
}

KeyframeDatabase build_database(const PointCloud& cloud, const RegionOfInterest& roi,
                                const PipelineConfig& config) {
    const Intrinsics K = cubemap_intrinsics(config.cubemap_resolution);
    KeyframeDatabase db;
    db.cloud_fingerprint = cloud_fingerprint(cloud);
    db.config_hash = config_hash(config);

    for (const Vec3& pos : roi.grid_positions()) {
        for (int face = 0; face < 6; ++face) {
            const RigidPose pose = cubemap_face_pose(pos, face);
            Framebuffer fb;
            try {
                fb = render(cloud, pose, K, config.render);
            } catch (const UnrenderableView&) {
                continue;
            }
            const auto mask = closed_validity_mask(fb, config.mask_close_radius);
            const FeatureSet fs = detect_and_describe(fb.color, config.features, &mask);

            KeyframeRecord rec;
            rec.pose = pose;
            rec.face_id = std::uint8_t(face);
            for (std::size_t i = 0; i < fs.size(); ++i) {
                const auto& kp = fs.keypoints[i];
                const int px = std::clamp(int(std::floor(kp.position.u)), 0, fb.width - 1);
                const int py = std::clamp(int(std::floor(kp.position.v)), 0, fb.height - 1);
                const std::size_t idx = fb.idx(px, py);
                // Landmarks come only from measured (non-inpainted) depth.
                if (!fb.valid[idx]) continue;
                rec.descriptors.push_back(fs.descriptors[i]);
                rec.landmarks.push_back(back_project(kp.position, fb.depth[idx], pose, K));
                rec.keypoints.push_back(kp.position);
            }
            if (!rec.descriptors.empty()) db.records.push_back(std::move(rec));
        }
    }
    if (db.records.empty())
        throw std::runtime_error("build_database: roi does not overlap the cloud");
    return db;
}

std::optional<PoseEstimate> relocalize(const ImageRgb& query, const Intrinsics& K_cam,
                                       const KeyframeDatabase& db, const PointCloud& cloud,
                                       const PipelineConfig& config) {
    if (db.records.empty()) throw std::runtime_error("relocalize: empty database");
    const FeatureSet query_fs = detect_and_describe(query, config.features);

    struct Candidate {
        int record;
        std::vector<Match> matches;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(db.records.size());
    for (int r = 0; r < int(db.records.size()); ++r) {
        candidates.push_back(
            {r, match_descriptors(query_fs.descriptors, db.records[r].descriptors,
                                  config.features)});
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        return a.matches.size() > b.matches.size();
    });

    // The coarse stage fights a high outlier ratio (database views are up to
    // 45 degrees off-axis from the query), so it runs with a relaxed inlier
    // gate and a larger iteration budget. The full gate is enforced by the
    // render-match-solve refinement round, which re-renders at the coarse
    // pose where matching is near-frontal; an estimate is only ever returned
    // through that refinement, so min_inliers holds for every emitted pose.
    const int relaxed_min = std::max(6, config.ransac.min_inliers / 2);
    RansacConfig coarse_cfg = config.ransac;
    coarse_cfg.min_inliers = relaxed_min;
    coarse_cfg.max_iterations = std::max(4000, config.ransac.max_iterations);
    // Off-axis database keypoints localize several pixels away from where
    // the query sees the same structure, so the coarse inlier threshold is
    // widened too; a loose-but-roughly-right coarse pose refines better than
    // none at all.
    coarse_cfg.reproj_threshold = std::max(config.ransac.reproj_threshold, 8.0);

    for (const auto& cand : candidates) {
        if (int(cand.matches.size()) < relaxed_min) break;
        const KeyframeRecord& rec = db.records[cand.record];
        std::vector<Correspondence2D3D> corrs;
        corrs.reserve(cand.matches.size());
        for (const auto& m : cand.matches)
            corrs.push_back({query_fs.keypoints[m.index_a].position, rec.landmarks[m.index_b]});
        const auto coarse = solve_pnp_ransac(corrs, K_cam, coarse_cfg);
        if (!coarse) continue;
        if (auto refined = render_match_solve(query, K_cam, coarse->pose, cloud, config))
            return refined;
    }

    // Fallback: direct descriptor matching can fail entirely when the query
    // looks diagonally between cubemap faces. Sweep intermediate yaw
    // renders (camera intrinsics) at the best-matching grid positions; each
    // successful sweep solve is validated by a full-gate refinement round.
    PipelineConfig sweep_config = config;
    sweep_config.ransac = coarse_cfg;
    std::vector<Vec3> positions;
    for (const auto& cand : candidates) {
        const Vec3 pos = db.records[cand.record].pose.translation;
        const bool seen = std::any_of(positions.begin(), positions.end(), [&](const Vec3& p) {
            return (p - pos).norm() < 1e-9;
        });
        if (!seen) positions.push_back(pos);
        if (positions.size() >= 3) break;
    }
    constexpr int kSweepYaws = 8;
    for (const Vec3& pos : positions) {
        for (int y = 0; y < kSweepYaws; ++y) {
            const double yaw = 2.0 * M_PI * y / kSweepYaws;
            const RigidPose seed =
                look_at_pose(pos, pos + Vec3(std::cos(yaw), std::sin(yaw), 0.0));
            const auto coarse = render_match_solve(query, K_cam, seed, cloud, sweep_config);
            if (!coarse) continue;
            if (auto refined = render_match_solve(query, K_cam, coarse->pose, cloud, config))
                return refined;
        }
    }
    return std::nullopt;
}

namespace {

constexpr std::uint32_t kDbVersion = 1;

void write_pose(std::ofstream& out, const RigidPose& pose) {
    Eigen::Quaterniond q(pose.rotation);
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    for (int i = 0; i < 3; ++i) detail::write_pod(out, double(pose.translation(i)));
    detail::write_pod(out, q.x());
    detail::write_pod(out, q.y());
    detail::write_pod(out, q.z());
    detail::write_pod(out, q.w());
}

RigidPose read_pose(std::ifstream& in) {
    RigidPose pose;
    for (int i = 0; i < 3; ++i) pose.translation(i) = detail::read_pod<double>(in);
    const double qx = detail::read_pod<double>(in);
    const double qy = detail::read_pod<double>(in);
    const double qz = detail::read_pod<double>(in);
    const double qw = detail::read_pod<double>(in);
    Eigen::Quaterniond q(qw, qx, qy, qz);
    q.normalize();
    pose.rotation = q.toRotationMatrix();
    return pose;
}

}  // namespace

void save_database(const KeyframeDatabase& db, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write database: " + path);
    detail::write_magic(out, "PCLOCDB1");
    detail::write_pod(out, kDbVersion);
    detail::write_pod(out, db.cloud_fingerprint);
    detail::write_pod(out, db.config_hash);
    detail::write_pod(out, std::uint32_t(db.records.size()));
    for (const auto& rec : db.records) {
        write_pose(out, rec.pose);
        detail::write_pod(out, rec.face_id);
        detail::write_pod(out, std::uint32_t(rec.descriptors.size()));
        for (const auto& d : rec.descriptors)
            out.write(reinterpret_cast<const char*>(d.bits.data()), 32);
        for (const auto& l : rec.landmarks) {
            const float xyz[3] = {float(l.x()), float(l.y()), float(l.z())};
            out.write(reinterpret_cast<const char*>(xyz), 12);
        }
    }
}

KeyframeDatabase load_database(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open database: " + path);
    detail::expect_magic(in, "PCLOCDB1");
    if (detail::read_pod<std::uint32_t>(in) != kDbVersion)
        throw std::runtime_error("unsupported database version");
    KeyframeDatabase db;
    db.cloud_fingerprint = detail::read_pod<std::uint64_t>(in);
    db.config_hash = detail::read_pod<std::uint64_t>(in);
    const auto n = detail::read_pod<std::uint32_t>(in);
    db.records.resize(n);
    for (auto& rec : db.records) {
        rec.pose = read_pose(in);
        rec.face_id = detail::read_pod<std::uint8_t>(in);
        const auto count = detail::read_pod<std::uint32_t>(in);
        rec.descriptors.resize(count);
        for (auto& d : rec.descriptors)
            if (!in.read(reinterpret_cast<char*>(d.bits.data()), 32))
                throw std::runtime_error("truncated database");
        rec.landmarks.resize(count);
        for (auto& l : rec.landmarks) {
            float xyz[3];
            if (!in.read(reinterpret_cast<char*>(xyz), 12))
                throw std::runtime_error("truncated database");
            l = Vec3(xyz[0], xyz[1], xyz[2]);
        }
    }
    return db;
}

}  // namespace pcloc
