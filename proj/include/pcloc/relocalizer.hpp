#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcloc/config.hpp"
#include "pcloc/features.hpp"
#include "pcloc/point_cloud.hpp"
#include "pcloc/pose_solver.hpp"

namespace pcloc {

struct RegionOfInterest {
    Vec3 min_corner;
    Vec3 max_corner;
    double grid_step = 1.0;               // meters, x/y grid
    std::vector<double> height_levels;    // meters above min_corner.z; default 1.6

    void validate() const;
    std::vector<Vec3> grid_positions() const;
};

RegionOfInterest load_roi(const std::string& path);
void save_roi(const RegionOfInterest& roi, const std::string& path);

struct KeyframeRecord {
    RigidPose pose;  // cubemap face, camera-to-world
    std::uint8_t face_id = 0;
    std::vector<Descriptor> descriptors;
    std::vector<Vec3> landmarks;
    std::vector<PixelCoord> keypoints;  // in-memory only, not serialized
};

struct KeyframeDatabase {
    std::vector<KeyframeRecord> records;
    std::uint64_t cloud_fingerprint = 0;
    std::uint64_t config_hash = 0;
};

// Camera-to-world pose of cubemap face `face` (0..5) at `position`.
RigidPose cubemap_face_pose(const Vec3& position, int face);
Intrinsics cubemap_intrinsics(int resolution);

// Renders six cubemap faces at every grid pose, extracts masked features and
// back-projects them to world landmarks. Throws when the roi yields no
// renderable faces.
KeyframeDatabase build_database(const PointCloud& cloud, const RegionOfInterest& roi,
                                const PipelineConfig& config);

// Global relocalization: candidate records ranked by raw match count, coarse
// PnP on the first record passing the inlier gate, then one render-match
// refinement round at the coarse pose.
std::optional<PoseEstimate> relocalize(const ImageRgb& query, const Intrinsics& K_cam,
                                       const KeyframeDatabase& db, const PointCloud& cloud,
                                       const PipelineConfig& config);

void save_database(const KeyframeDatabase& db, const std::string& path);
KeyframeDatabase load_database(const std::string& path);

}  // namespace pcloc
