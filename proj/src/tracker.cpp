#include "pcloc/tracker.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "pcloc/renderer.hpp"

namespace pcloc {

namespace {

double ms_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

}  // namespace

std::size_t SequenceResult::localized() const {
    std::size_t n = 0;
    for (const auto& r : reports)
        if (r.status != FrameStatus::Lost) ++n;
    return n;
}

std::optional<PoseEstimate> render_match_solve(const ImageRgb& image, const Intrinsics& K_cam,
                                               const RigidPose& render_pose,
                                               const PointCloud& cloud,
                                               const PipelineConfig& config, FrameStats* stats) {
    FrameStats local;
    FrameStats& st = stats ? *stats : local;
    st = {};

    auto t0 = std::chrono::steady_clock::now();
    Framebuffer fb;
    try {
        fb = render(cloud, render_pose, K_cam, config.render);
    } catch (const UnrenderableView&) {
        st.ms_render = ms_since(t0);
        return std::nullopt;
    }
    const auto mask = closed_validity_mask(fb, config.mask_close_radius);
    st.ms_render = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    const FeatureSet synth = detect_and_describe(fb.color, config.features, &mask);
    const FeatureSet cam = detect_and_describe(image, config.features);
    const auto matches = match_features(cam, synth, config.features);
    st.ms_match = ms_since(t0);
    st.matches = int(matches.size());

    t0 = std::chrono::steady_clock::now();
    std::vector<Correspondence2D3D> corrs;
    corrs.reserve(matches.size());
    for (const auto& m : matches) {
        const auto& sp = synth.keypoints[m.index_b].position;
        const int px = std::clamp(int(std::floor(sp.u)), 0, fb.width - 1);
        const int py = std::clamp(int(std::floor(sp.v)), 0, fb.height - 1);
        const std::size_t idx = fb.idx(px, py);
        // Only measured depth lifts to a landmark; inpainted color does not.
        if (!fb.valid[idx]) continue;
        corrs.push_back({cam.keypoints[m.index_a].position,
                         back_project(sp, fb.depth[idx], render_pose, K_cam)});
    }
    auto estimate = solve_pnp_ransac(corrs, K_cam, config.ransac);
    st.ms_solve = ms_since(t0);
    if (estimate) {
        st.inliers = int(estimate->inlier_indices.size());
        st.mean_reproj_px = estimate->mean_reproj_error;
    }
    return estimate;
}

std::optional<PoseEstimate> track_frame(const ImageRgb& image, const Intrinsics& K_cam,
                                        TrackerState& state, const PointCloud& cloud,
                                        const PipelineConfig& config) {
    if (!state.last_pose) return std::nullopt;
    auto estimate =
        render_match_solve(image, K_cam, *state.last_pose, cloud, config, &state.last_stats);
    if (estimate) {
        state.last_pose = estimate->pose;
        state.consecutive_failures = 0;
    } else {
        if (++state.consecutive_failures >= config.max_consecutive_failures)
            state.last_pose.reset();
    }
    return estimate;
}

SequenceResult run_sequence(const std::function<ImageRgb(std::size_t)>& load_frame,
                            const std::vector<double>& timestamps, const Intrinsics& K_cam,
                            const PointCloud& cloud, const KeyframeDatabase& db,
                            const PipelineConfig& config) {
    SequenceResult result;
    TrackerState state;
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
        const ImageRgb image = load_frame(i);
        FrameReport report;
        report.frame = int(i);
        report.timestamp = timestamps[i];

        std::optional<PoseEstimate> estimate;
        if (state.last_pose) {
            estimate = track_frame(image, K_cam, state, cloud, config);
            if (estimate) report.status = FrameStatus::Tracked;
        }
        if (!estimate && !state.last_pose) {
            estimate = relocalize(image, K_cam, db, cloud, config);
            if (estimate) {
                report.status = FrameStatus::Relocalized;
                state.last_pose = estimate->pose;
                state.consecutive_failures = 0;
            }
        }
        report.stats = state.last_stats;
        if (estimate) {
            report.stats.inliers = int(estimate->inlier_indices.size());
            report.stats.mean_reproj_px = estimate->mean_reproj_error;
            result.trajectory.poses.push_back({timestamps[i], estimate->pose});
        }
        result.reports.push_back(report);
    }
    return result;
}

void save_report_csv(const SequenceResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << "frame,timestamp,status,matches,inliers,mean_reproj_px,ms_render,ms_match,ms_solve\n";
    for (const auto& r : result.reports) {
        const char* status = r.status == FrameStatus::Tracked       ? "tracked"
                             : r.status == FrameStatus::Relocalized ? "relocalized"
                                                                    : "lost";
        out << r.frame << ',' << r.timestamp << ',' << status << ',' << r.stats.matches << ','
            << r.stats.inliers << ',' << r.stats.mean_reproj_px << ',' << r.stats.ms_render << ','
            << r.stats.ms_match << ',' << r.stats.ms_solve << '\n';
    }
}

}  // namespace pcloc
