#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "pcloc/geometry.hpp"
#include "pcloc/image.hpp"

namespace pcloc {

struct Keypoint {
    PixelCoord position;       // level-0 image coordinates
    float response = 0.f;      // Harris corner score
    float orientation = 0.f;   // radians
    int octave = 0;
};

// 256-bit binary descriptor from a fixed intensity-comparison pattern.
struct Descriptor {
    std::array<std::uint64_t, 4> bits{};
};

int hamming_distance(const Descriptor& a, const Descriptor& b);

struct FeatureSet {
    std::vector<Keypoint> keypoints;
    std::vector<Descriptor> descriptors;

    std::size_t size() const { return keypoints.size(); }
};

struct Match {
    int index_a = -1;
    int index_b = -1;
    int distance = 0;  // Hamming bits
};

struct FeatureConfig {
    int max_features = 1000;
    int fast_threshold = 20;       // intensity levels
    int nms_radius = 8;            // pixels
    int mask_margin = 16;          // keypoints closer than this to an invalid pixel are dropped
    int octaves = 3;
    double scale_factor = 1.5;
    int match_max_distance = 64;   // Hamming gate
    double match_ratio = 0.9;      // Lowe ratio for binary descriptors
};

// Deterministic corner detection + description. The optional mask (level-0
// size, nonzero = usable) suppresses keypoints on or within mask_margin px of
// an unusable pixel. Throws when the image is smaller than 64x64.
FeatureSet detect_and_describe(const ImageRgb& image, const FeatureConfig& config,
                               const std::vector<std::uint8_t>* mask = nullptr);
FeatureSet detect_and_describe(const ImageGray& gray, const FeatureConfig& config,
                               const std::vector<std::uint8_t>* mask = nullptr);

// Mutual nearest neighbors under Hamming distance, gated by match_max_distance
// and the ratio test in both directions. Symmetric in its arguments.
std::vector<Match> match_features(const FeatureSet& a, const FeatureSet& b,
                                  const FeatureConfig& config = {});
std::vector<Match> match_descriptors(const std::vector<Descriptor>& a,
                                     const std::vector<Descriptor>& b,
                                     const FeatureConfig& config = {});

}  // namespace pcloc
