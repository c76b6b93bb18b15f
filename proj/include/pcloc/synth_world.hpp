#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcloc/geometry.hpp"
#include "pcloc/image.hpp"
#include "pcloc/point_cloud.hpp"

namespace pcloc {

enum class TextureKind { Solid, Checker, ValueNoise };

struct TextureSpec {
    TextureKind kind = TextureKind::Solid;
    Rgb8 color_a{200, 200, 200};
    Rgb8 color_b{40, 40, 40};
    double texel = 0.25;        // meters per checker cell / noise feature
    bool cell_jitter = true;    // per-cell hashed brightness variation (checker)
    std::uint64_t seed = 0;
};

// Axis-aligned box. Rays starting inside hit the interior surface, so a
// single box doubles as a room shell.
struct Box {
    Vec3 min_corner;
    Vec3 max_corner;
    TextureSpec texture;
};

// Axis-aligned rectangle: a flat patch on a plane normal to `axis`.
struct Rect {
    int axis = 2;  // 0=x, 1=y, 2=z plane normal
    double offset = 0.0;
    double lo0 = 0, hi0 = 0, lo1 = 0, hi1 = 0;  // extents in the other two axes
    TextureSpec texture;
};

struct Scene {
    std::vector<Box> boxes;
    std::vector<Rect> rects;
    std::uint64_t seed = 0;
};

struct RayHit {
    double t = 0.0;
    Vec3 position;
    Rgb8 color;
};

// First intersection of the ray with the scene, t > t_min.
std::optional<RayHit> ray_cast(const Scene& scene, const Vec3& origin, const Vec3& direction,
                               double t_min = 1e-6);

// Distance from a point to the nearest scene surface (used by test oracles).
double distance_to_nearest_surface(const Scene& scene, const Vec3& point);

struct ScanConfig {
    std::vector<Vec3> scanner_positions;
    double angular_resolution = 0.2 * M_PI / 180.0;  // radians
    double max_range = 50.0;                         // meters
    double range_noise_sigma = 0.0;                  // meters, off by default
};

// Equal-angle spherical scan from each scanner position; one colored point
// per first hit within range. Throws when a scanner sits inside solid
// geometry or outside the scene shell.
PointCloud simulate_lidar(const Scene& scene, const ScanConfig& config, std::uint64_t seed);

// Ground-truth pinhole render: per-pixel ray cast, flat albedo, no shading.
ImageRgb render_camera_frame(const Scene& scene, const RigidPose& pose, const Intrinsics& K,
                             std::vector<float>* depth_out = nullptr);

struct TrajectorySpec {
    struct Waypoint {
        Vec3 position;
        Vec3 look_at;
    };
    std::vector<Waypoint> waypoints;
    double frame_rate = 30.0;  // Hz
    double speed = 1.0;        // m/s
};

// Piecewise-linear position interpolation with look-at orientation
// (camera +z toward target, world +z up).
Trajectory generate_trajectory(const TrajectorySpec& spec);

RigidPose look_at_pose(const Vec3& position, const Vec3& target);

// Scene spec JSON (see README for the schema).
Scene load_scene(const std::string& path);
void save_scene(const Scene& scene, const std::string& path);

// Built-in room scene: textured shell with a few interior boxes, suitable
// for end-to-end runs with zero configuration.
Scene make_default_room(double size_x = 8.0, double size_y = 6.0, double size_z = 3.0,
                        std::uint64_t seed = 7);

}  // namespace pcloc
