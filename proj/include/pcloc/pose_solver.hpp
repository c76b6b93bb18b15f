#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pcloc/geometry.hpp"

namespace pcloc {

struct Correspondence2D3D {
    PixelCoord pixel;  // observation in the camera image
    Vec3 point;        // world-frame landmark, meters
};

struct RansacConfig {
    int max_iterations = 1000;
    double reproj_threshold = 3.0;  // pixels
    double confidence = 0.999;
    int min_inliers = 15;
    std::uint64_t seed = 1;
};

struct PoseEstimate {
    RigidPose pose;  // camera-to-world
    std::vector<int> inlier_indices;
    double mean_reproj_error = 0.0;  // pixels, over inliers
};

// EPnP on n >= 4 correspondences (homography decomposition in the planar
// case). Returned poses are camera-to-world candidates; empty when the
// configuration is degenerate (collinear points).
std::vector<RigidPose> solve_pnp_minimal(const std::vector<Correspondence2D3D>& corrs,
                                         const Intrinsics& K);

// PnP-RANSAC with adaptive iteration count and a final refinement on the
// inlier set. Deterministic for a fixed seed. Empty result means no pose
// passed the min_inliers gate (tracking loss for the caller).
std::optional<PoseEstimate> solve_pnp_ransac(const std::vector<Correspondence2D3D>& corrs,
                                             const Intrinsics& K, const RansacConfig& config);

struct RefineResult {
    RigidPose pose;
    bool improved = false;
    int iterations = 0;
    double initial_error = 0.0;  // summed squared reprojection error, px^2
    double final_error = 0.0;
};

// Gauss-Newton on SE(3) (axis-angle increment composed on the left of the
// world-to-camera transform) minimizing summed squared reprojection error.
// Never returns a pose with a higher total error than the input.
RefineResult refine_pose(const RigidPose& initial, const std::vector<Correspondence2D3D>& inliers,
                         const Intrinsics& K);

// Summed squared reprojection error in pixels^2; points behind the camera
// contribute a large fixed penalty.
double total_reprojection_error(const RigidPose& cam_to_world,
                                const std::vector<Correspondence2D3D>& corrs, const Intrinsics& K);

// Residual (2n) and Jacobian (2n x 6, columns = [translation, rotation]) of
// the reprojection error at a world-to-camera pose. Exposed so the analytic
// Jacobian can be checked against finite differences.
void reprojection_jacobian(const RigidPose& world_to_cam,
                           const std::vector<Correspondence2D3D>& corrs, const Intrinsics& K,
                           Eigen::VectorXd& residual, Eigen::MatrixXd& jacobian);

}  // namespace pcloc
