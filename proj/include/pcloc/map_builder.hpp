#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcloc/config.hpp"
#include "pcloc/features.hpp"
#include "pcloc/point_cloud.hpp"
#include "pcloc/pose_solver.hpp"
#include "pcloc/relocalizer.hpp"

namespace pcloc {

struct Observation {
    std::uint32_t landmark_id = 0;
    std::uint32_t keypoint_index = 0;
};

struct MapKeyframe {
    std::uint32_t id = 0;
    RigidPose pose;
    Intrinsics intrinsics;
    FeatureSet features;
    std::vector<Observation> observations;  // (landmark id, keypoint index)
};

struct Landmark {
    std::uint32_t id = 0;
    Vec3 position;
    Descriptor descriptor;  // representative
    std::vector<Observation> observations;  // (keyframe id, keypoint index)
};

struct SlamMap {
    std::vector<MapKeyframe> keyframes;
    std::vector<Landmark> landmarks;
    std::uint64_t cloud_fingerprint = 0;
    std::uint64_t config_hash = 0;
};

// Renders map_directions yaw directions x 2 pitches per grid pose with the
// camera intrinsics, lifts masked keypoints to provisional landmarks, then
// merges and prunes. Keyframe poses are grid poses, exact by construction.
SlamMap build_map(const PointCloud& cloud, const RegionOfInterest& roi, const Intrinsics& K_cam,
                  const PipelineConfig& config);

// Merges provisional landmarks across keyframes: a landmark projecting
// within the 3x3 window of a keypoint with agreeing descriptor and depth is
// the same map point (union-find; mean position; medoid descriptor).
void merge_landmarks(SlamMap& map, const PipelineConfig& config);

// Drops landmarks observed by a single keyframe.
void prune_landmarks(SlamMap& map);

// Map-based localization. With a prior: match against landmarks of the
// nearest keyframes; without: relocalizer-style search over all keyframes.
std::optional<PoseEstimate> localize_frame(const ImageRgb& image, const Intrinsics& K_cam,
                                           const SlamMap& map,
                                           const std::optional<RigidPose>& prior,
                                           const PipelineConfig& config);

void save_map(const SlamMap& map, const std::string& path);
SlamMap load_map(const std::string& path);

// Structural audit used by tests and the map CLI: bidirectional observation
// consistency and the min-two-observations rule.
void check_map_invariants(const SlamMap& map);

}  // namespace pcloc
