#include "pcloc/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pcloc {

bool RigidPose::is_valid(double tol) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const Mat3 rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation.determinant() - 1.0) <= tol;
}

void RigidPose::reorthonormalize() {
    Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0) {
        Mat3 u = svd.matrixU();
        u.col(2) *= -1.0;
        r = u * svd.matrixV().transpose();
    }
    rotation = r;
}

RigidPose compose(const RigidPose& a, const RigidPose& b) { return a.compose(b); }
RigidPose invert(const RigidPose& a) { return a.inverse(); }

double rotation_angle(const Mat3& a, const Mat3& b) {
    const double c = ((a.transpose() * b).trace() - 1.0) * 0.5;
    return std::acos(std::clamp(c, -1.0, 1.0));
}

std::optional<std::pair<PixelCoord, double>> project(const Vec3& point_world,
                                                     const RigidPose& cam_from_world,
                                                     const Intrinsics& K) {
    const Vec3 x = cam_from_world.apply(point_world);
    if (!(x.z() > kNearPlane)) return std::nullopt;
    PixelCoord p;
    p.u = K.fx * x.x() / x.z() + K.cx;
    p.v = K.fy * x.y() / x.z() + K.cy;
    if (p.u < 0.0 || p.u >= K.width || p.v < 0.0 || p.v >= K.height) return std::nullopt;
    return std::make_pair(p, x.z());
}

Vec3 back_project(const PixelCoord& pixel, double depth, const RigidPose& cam_to_world,
                  const Intrinsics& K) {
    if (!(depth > 0.0) || !std::isfinite(depth))
        throw std::runtime_error("back_project: depth must be positive and finite");
    Vec3 x_cam;
    x_cam.x() = depth * (pixel.u - K.cx) / K.fx;
    x_cam.y() = depth * (pixel.v - K.cy) / K.fy;
    x_cam.z() = depth;
    return cam_to_world.apply(x_cam);
}

SimTransform umeyama_align(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                           bool with_scale) {
    const std::size_t n = source.size();
    if (n != target.size() || n < 3)
        throw std::runtime_error("umeyama_align: need >= 3 matched positions");

    Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        mu_s += source[i];
        mu_t += target[i];
    }
    mu_s /= double(n);
    mu_t /= double(n);

    Mat3 sigma = Mat3::Zero();
    double var_s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 ds = source[i] - mu_s;
        const Vec3 dt = target[i] - mu_t;
        sigma += dt * ds.transpose();
        var_s += ds.squaredNorm();
    }
    sigma /= double(n);
    var_s /= double(n);

    Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
    // Collinear input leaves the covariance rank-deficient in two directions.
    if (svd.singularValues()(1) < 1e-12 * std::max(1.0, svd.singularValues()(0)))
        throw std::runtime_error("umeyama_align: degenerate (collinear) input");

    Mat3 s_fix = Mat3::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s_fix(2, 2) = -1.0;

    SimTransform t;
    t.rotation = svd.matrixU() * s_fix * svd.matrixV().transpose();
    if (with_scale) {
        if (var_s < 1e-15) throw std::runtime_error("umeyama_align: zero source variance");
        t.scale = (svd.singularValues().asDiagonal().toDenseMatrix() * s_fix).trace() / var_s;
        if (!(t.scale > 0)) throw std::runtime_error("umeyama_align: non-positive scale");
    } else {
        t.scale = 1.0;
    }
    t.translation = mu_t - t.scale * (t.rotation * mu_s);
    return t;
}

SimTransform umeyama_align(const Trajectory& source, const Trajectory& target, bool with_scale) {
    if (source.size() != target.size())
        throw std::runtime_error("umeyama_align: trajectory length mismatch");
    std::vector<Vec3> ps, pt;
    ps.reserve(source.size());
    pt.reserve(target.size());
    for (const auto& s : source.poses) ps.push_back(s.pose.translation);
    for (const auto& t : target.poses) pt.push_back(t.pose.translation);
    return umeyama_align(ps, pt, with_scale);
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open trajectory file for writing: " + path);
    out.precision(12);
    out << "# timestamp tx ty tz qx qy qz qw\n";
    for (const auto& tp : traj.poses) {
        Eigen::Quaterniond q(tp.pose.rotation);
        q.normalize();
        if (q.w() < 0) q.coeffs() *= -1.0;
        const Vec3& t = tp.pose.translation;
        out << tp.timestamp << " " << t.x() << " " << t.y() << " " << t.z() << " " << q.x()
            << " " << q.y() << " " << q.z() << " " << q.w() << "\n";
    }
}

Trajectory load_trajectory(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
    Trajectory traj;
    std::string line;
    double last_ts = -std::numeric_limits<double>::infinity();
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        TimedPose tp;
        double qx, qy, qz, qw;
        if (!(ss >> tp.timestamp >> tp.pose.translation.x() >> tp.pose.translation.y() >>
              tp.pose.translation.z() >> qx >> qy >> qz >> qw))
            throw std::runtime_error("malformed trajectory line: " + line);
        if (!(tp.timestamp > last_ts))
            throw std::runtime_error("trajectory timestamps must strictly increase");
        last_ts = tp.timestamp;
        Eigen::Quaterniond q(qw, qx, qy, qz);
        q.normalize();
        tp.pose.rotation = q.toRotationMatrix();
        traj.poses.push_back(tp);
    }
    return traj;
}

}  // namespace pcloc
