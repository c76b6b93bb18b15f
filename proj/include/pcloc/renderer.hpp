#pragma once

#include <limits>

#include "pcloc/geometry.hpp"
#include "pcloc/image.hpp"
#include "pcloc/point_cloud.hpp"

namespace pcloc {

// Synthetic view target: color + per-pixel camera-z depth + validity mask.
// Invalid pixels carry depth = +inf and black color.
struct Framebuffer {
    int width = 0;
    int height = 0;
    ImageRgb color;
    std::vector<float> depth;
    std::vector<std::uint8_t> valid;

    Framebuffer() = default;
    Framebuffer(int w, int h)
        : width(w),
          height(h),
          color(w, h),
          depth(std::size_t(w) * h, std::numeric_limits<float>::infinity()),
          valid(std::size_t(w) * h, 0) {}

    std::size_t idx(int x, int y) const { return std::size_t(y) * width + x; }
    std::size_t valid_count() const;
};

struct RenderConfig {
    double delta_rel = 0.02;   // depth band: delta(p) = max(delta_rel * z, delta_min)
    double delta_min = 0.01;   // meters
    int filter_levels = 4;     // min-depth pyramid levels (incl. full resolution)
    double filter_ratio = 1.1; // pixel removed when depth > ratio * neighborhood min
    bool depth_filter = true;
    bool fill_holes = true;

    double depth_band(double z_min) const;
    void validate() const;
};

// Pass 1: per-pixel minimum camera-z over all projecting points (z-buffer).
Framebuffer depth_pass(const PointCloud& cloud, const RigidPose& pose, const Intrinsics& K);

// Passes 2-3: accumulate colors of points within the depth band of z_min,
// then average (round half up). Depth stays z_min.
Framebuffer accumulate_colors(const PointCloud& cloud, const RigidPose& pose, const Intrinsics& K,
                              const Framebuffer& z_min, const RenderConfig& config);

// Invalidates pixels whose depth exceeds filter_ratio times the minimum depth
// seen over the 3x3 neighborhoods of their coarse-pyramid ancestors.
Framebuffer hierarchical_depth_filter(const Framebuffer& fb, const RenderConfig& config);

// Pull-push inpainting of color into invalid pixels; valid pixels and depth
// are untouched. Throws UnrenderableView when nothing is valid.
Framebuffer fill_holes(const Framebuffer& fb);

struct UnrenderableView : std::runtime_error {
    UnrenderableView() : std::runtime_error("unrenderable view: no valid pixels") {}
};

// Morphological closing (dilate then erode, box radius) of the validity mask.
// Closes splat speckle so it does not blanket the feature detector's
// suppression margin; large holes survive and stay suppressed.
std::vector<std::uint8_t> closed_validity_mask(const Framebuffer& fb, int radius);

// Full pipeline. The returned framebuffer has every color pixel defined, but
// the validity mask and depth are those from before hole filling: depth is
// never inpainted, so consumers can reject correspondences in filled regions.
Framebuffer render(const PointCloud& cloud, const RigidPose& pose, const Intrinsics& K,
                   const RenderConfig& config);

}  // namespace pcloc
