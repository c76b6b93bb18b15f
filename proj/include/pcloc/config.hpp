#pragma once

#include <cstdint>
#include <string>

#include "pcloc/features.hpp"
#include "pcloc/pose_solver.hpp"
#include "pcloc/renderer.hpp"

namespace pcloc {

// One config object for the whole pipeline; every CLI run starts from
// defaults, optionally overlaid with a JSON file and flags.
struct PipelineConfig {
    RenderConfig render;
    FeatureConfig features;
    RansacConfig ransac;

    // Tracking
    int max_consecutive_failures = 3;
    int mask_close_radius = 2;  // closes speckle holes in the detection mask

    // Relocalization database
    int cubemap_resolution = 512;

    // Prebuilt map
    double pitch_deg = 15.0;
    int map_directions = 4;
    int merge_max_hamming = 64;
    int nearest_keyframes = 3;

    std::uint64_t seed = 1;
    int threads = 0;  // 0 = machine parallelism
};

PipelineConfig load_config(const std::string& path);
void save_config(const PipelineConfig& config, const std::string& path);
std::string config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const std::string& text);

// FNV-1a over the canonical JSON serialization.
std::uint64_t config_hash(const PipelineConfig& config);

// Reproducibility manifest written beside every CLI output.
void write_manifest(const std::string& path, const PipelineConfig& config,
                    std::uint64_t cloud_fingerprint, const std::string& command);

}  // namespace pcloc
