#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace pcloc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct PixelCoord {
    double u = 0.0;
    double v = 0.0;
};

// Camera-to-world rigid transform. World point = rotation * X_cam + translation.
struct RigidPose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidPose identity() { return {}; }

    Vec3 apply(const Vec3& x_cam) const { return rotation * x_cam + translation; }

    RigidPose inverse() const {
        RigidPose out;
        out.rotation = rotation.transpose();
        out.translation = -(rotation.transpose() * translation);
        return out;
    }

    // this ∘ other: first apply other, then this.
    RigidPose compose(const RigidPose& other) const {
        RigidPose out;
        out.rotation = rotation * other.rotation;
        out.translation = rotation * other.translation + translation;
        return out;
    }

    bool is_valid(double tol = 1e-9) const;
    void reorthonormalize();
};

RigidPose compose(const RigidPose& a, const RigidPose& b);
RigidPose invert(const RigidPose& a);

// Geodesic rotation angle between two poses, radians.
double rotation_angle(const Mat3& a, const Mat3& b);

struct SimTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

struct Intrinsics {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;

    bool is_valid() const {
        return fx > 0 && fy > 0 && width > 0 && height > 0 && cx > 0 && cx < width &&
               cy > 0 && cy < height;
    }
    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
        k(0, 0) = fx;
        k(1, 1) = fy;
        k(0, 2) = cx;
        k(1, 2) = cy;
        return k;
    }
};

inline constexpr double kNearPlane = 0.05;  // meters; camera-z at or below is culled

// Projects a world point through cam_from_world (world-to-camera view transform).
// Empty when behind the near plane or outside the image.
std::optional<std::pair<PixelCoord, double>> project(const Vec3& point_world,
                                                     const RigidPose& cam_from_world,
                                                     const Intrinsics& K);

// Lifts a pixel with known camera-frame depth into the world.
Vec3 back_project(const PixelCoord& pixel, double depth, const RigidPose& cam_to_world,
                  const Intrinsics& K);

struct TimedPose {
    double timestamp = 0.0;  // seconds
    RigidPose pose;
};

struct Trajectory {
    std::vector<TimedPose> poses;

    bool empty() const { return poses.empty(); }
    std::size_t size() const { return poses.size(); }
};

// Least-squares Sim(3)/SE(3) between matched position lists (Umeyama).
// Throws std::runtime_error on degenerate (rank-deficient) input.
SimTransform umeyama_align(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                           bool with_scale);
SimTransform umeyama_align(const Trajectory& source, const Trajectory& target, bool with_scale);

// TUM-RGBD trajectory text format: "timestamp tx ty tz qx qy qz qw" per line.
void save_trajectory(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory(const std::string& path);

}  // namespace pcloc
