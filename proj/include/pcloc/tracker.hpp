#pragma once

#include <functional>
#include <optional>
#include <string>

#include "pcloc/config.hpp"
#include "pcloc/relocalizer.hpp"

namespace pcloc {

struct FrameStats {
    int inliers = 0;
    double mean_reproj_px = 0.0;
    double ms_render = 0.0;
    double ms_match = 0.0;
    double ms_solve = 0.0;
    int matches = 0;
};

struct TrackerState {
    std::optional<RigidPose> last_pose;
    int consecutive_failures = 0;
    FrameStats last_stats;
};

// One render-match-solve round: render the cloud at render_pose, match
// features against the image, back-project matched synthetic pixels through
// the (non-inpainted) depth map, and solve PnP-RANSAC. The shared primitive
// behind tracking and relocalization refinement.
std::optional<PoseEstimate> render_match_solve(const ImageRgb& image, const Intrinsics& K_cam,
                                               const RigidPose& render_pose,
                                               const PointCloud& cloud,
                                               const PipelineConfig& config,
                                               FrameStats* stats = nullptr);

// Tracks one frame from state.last_pose; updates the state. Empty result
// means tracking failed for this frame (state.last_pose is cleared after
// max_consecutive_failures).
std::optional<PoseEstimate> track_frame(const ImageRgb& image, const Intrinsics& K_cam,
                                        TrackerState& state, const PointCloud& cloud,
                                        const PipelineConfig& config);

enum class FrameStatus { Tracked, Relocalized, Lost };

struct FrameReport {
    int frame = 0;
    double timestamp = 0.0;
    FrameStatus status = FrameStatus::Lost;
    FrameStats stats;
};

struct SequenceResult {
    Trajectory trajectory;
    std::vector<FrameReport> reports;

    std::size_t localized() const;
};

// Full Render & Match loop over a frame stream with relocalization fallback.
// The frame loader is called once per index in order.
SequenceResult run_sequence(const std::function<ImageRgb(std::size_t)>& load_frame,
                            const std::vector<double>& timestamps, const Intrinsics& K_cam,
                            const PointCloud& cloud, const KeyframeDatabase& db,
                            const PipelineConfig& config);

void save_report_csv(const SequenceResult& result, const std::string& path);

}  // namespace pcloc
