#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcloc/geometry.hpp"
#include "pcloc/image.hpp"

namespace pcloc {

// Colored metric point cloud in the world frame.
struct PointCloud {
    std::vector<Eigen::Vector3f> points;
    std::vector<Rgb8> colors;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

// PLY, ascii or binary_little_endian, properties x,y,z (+ red,green,blue).
// Unknown vertex properties are skipped.
PointCloud load_ply(const std::string& path);
void save_ply(const PointCloud& cloud, const std::string& path);

// FNV-1a over point count plus the first/last 1024 coordinate bytes.
// A cheap mismatch guard for databases/maps, not a cryptographic digest.
std::uint64_t cloud_fingerprint(const PointCloud& cloud);

// Seeded uniform subsample keeping round(fraction * n) points.
PointCloud decimate(const PointCloud& cloud, double fraction, std::uint64_t seed);

}  // namespace pcloc
