#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "pcloc/evaluation.hpp"
#include "pcloc/rng.hpp"

using namespace pcloc;

namespace {

Trajectory circle_trajectory(int n, double radius, double dt = 0.1) {
    Trajectory traj;
    for (int i = 0; i < n; ++i) {
        const double a = 2 * M_PI * i / n;
        TimedPose tp;
        tp.timestamp = dt * i;
        tp.pose.translation = Vec3(radius * std::cos(a), radius * std::sin(a), 1.0);
        tp.pose.rotation = Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix();
        traj.poses.push_back(tp);
    }
    return traj;
}

ImageRgb noise_image(int w, int h, std::uint64_t seed) {
    ImageRgb img(w, h);
    Rng rng(seed);
    for (auto& b : img.data) b = std::uint8_t(rng.next_below(256));
    return img;
}

}  // namespace

TEST_CASE("APE of a trajectory against itself is zero") {
    const Trajectory traj = circle_trajectory(100, 3.0);
    const ApeResult res = ape_rmse(traj, traj, AlignMode::SE3);
    CHECK(res.pos_rmse < 1e-12);
    CHECK(res.ang_rmse_deg < 1e-4);  // acos is ill-conditioned at 0
    CHECK(res.n_matched == 100);
}

TEST_CASE("APE is invariant to a global rigid transform of the estimate") {
    const Trajectory gt = circle_trajectory(100, 3.0);
    Trajectory moved = gt;
    const Mat3 r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
    const Vec3 t(4, -2, 7);
    for (auto& tp : moved.poses) {
        tp.pose.translation = r * tp.pose.translation + t;
        tp.pose.rotation = r * tp.pose.rotation;
    }
    const ApeResult res = ape_rmse(moved, gt, AlignMode::SE3);
    CHECK(res.pos_rmse < 1e-9);
    CHECK(res.ang_rmse_deg < 1e-4);
}

TEST_CASE("APE Monte Carlo: fixed-norm translation noise gives pos_rmse ~ epsilon") {
    const double eps = 0.03;
    const Trajectory gt = circle_trajectory(1000, 3.0);
    Trajectory noisy = gt;
    Rng rng(42);
    for (auto& tp : noisy.poses) {
        Vec3 dir(rng.next_range(-1, 1), rng.next_range(-1, 1), rng.next_range(-1, 1));
        while (dir.norm() < 1e-6)
            dir = Vec3(rng.next_range(-1, 1), rng.next_range(-1, 1), rng.next_range(-1, 1));
        tp.pose.translation += eps * dir.normalized();
    }
    const ApeResult res = ape_rmse(noisy, gt, AlignMode::SE3);
    CHECK(res.pos_rmse == doctest::Approx(eps).epsilon(0.10));
}

TEST_CASE("APE associates by nearest timestamp and throws below 3 pairs") {
    const Trajectory gt = circle_trajectory(100, 3.0, 0.1);
    Trajectory est;
    // Every other pose, timestamps offset by less than half the period.
    for (std::size_t i = 0; i < gt.size(); i += 2) {
        TimedPose tp = gt.poses[i];
        tp.timestamp += 0.03;
        est.poses.push_back(tp);
    }
    const ApeResult res = ape_rmse(est, gt, AlignMode::SE3);
    CHECK(res.n_matched == est.size());
    CHECK(res.pos_rmse < 1e-9);

    Trajectory two;
    two.poses = {gt.poses[0], gt.poses[1]};
    CHECK_THROWS_AS(ape_rmse(two, gt, AlignMode::SE3), std::runtime_error);
}

TEST_CASE("SSIM closed forms") {
    const ImageRgb a = noise_image(96, 96, 1);
    CHECK(ssim(a, a) == doctest::Approx(1.0));

    // A mildly blurred/offset copy scores below identity but above noise.
    ImageRgb brighter = a;
    for (auto& b : brighter.data) b = std::uint8_t(std::min(255, b + 10));
    const double s_bright = ssim(a, brighter);
    CHECK(s_bright > 0.8);
    CHECK(s_bright < 1.0);

    ImageRgb inverted = a;
    for (auto& b : inverted.data) b = std::uint8_t(255 - b);
    CHECK(ssim(a, inverted) < 0.2);

    const ImageRgb unrelated = noise_image(96, 96, 2);
    CHECK(ssim(a, unrelated) < 0.1);
}

TEST_CASE("SSIM is symmetric and validates input") {
    const ImageRgb a = noise_image(64, 64, 3);
    const ImageRgb b = noise_image(64, 64, 4);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)));
    const ImageRgb small(8, 8);
    CHECK_THROWS_AS(ssim(a, ImageRgb(32, 64)), std::runtime_error);
    CHECK_THROWS_AS(ssim(small, small), std::runtime_error);
}

TEST_CASE("overlay blends and honors the validity mask") {
    ImageRgb cam(16, 16), ren(16, 16);
    for (auto& b : cam.data) b = 100;
    for (auto& b : ren.data) b = 200;
    std::vector<std::uint8_t> valid(16 * 16, 1);
    valid[0] = 0;
    const ImageRgb out = overlay(cam, ren, 0.5, &valid);
    CHECK(int(out.get(0, 0)[0]) == 100);  // invalid pixel: camera only
    CHECK(int(out.get(5, 5)[0]) == 150);  // 0.5 blend
    const ImageRgb full = overlay(cam, ren, 1.0, nullptr);
    CHECK(int(full.get(3, 3)[0]) == 200);
}
