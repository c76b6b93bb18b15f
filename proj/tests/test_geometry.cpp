#include <doctest.h>

#include <Eigen/Geometry>
#include <cstdio>
#include <filesystem>

#include "pcloc/geometry.hpp"
#include "pcloc/rng.hpp"

using namespace pcloc;

namespace {

Mat3 random_rotation(Rng& rng) {
    const Eigen::Quaterniond q(rng.next_range(-1, 1), rng.next_range(-1, 1),
                               rng.next_range(-1, 1), rng.next_range(-1, 1));
    return q.normalized().toRotationMatrix();
}

RigidPose random_pose(Rng& rng) {
    RigidPose p;
    p.rotation = random_rotation(rng);
    p.translation = Vec3(rng.next_range(-5, 5), rng.next_range(-5, 5), rng.next_range(-5, 5));
    return p;
}

Intrinsics test_intrinsics() {
    Intrinsics K;
    K.fx = K.fy = 450.0;
    K.cx = 320.0;
    K.cy = 240.0;
    K.width = 640;
    K.height = 480;
    return K;
}

}  // namespace

TEST_CASE("project/back_project round-trip over random in-view points") {
    Rng rng(11);
    const Intrinsics K = test_intrinsics();
    int tested = 0;
    while (tested < 1000) {
        const RigidPose cam_to_world = random_pose(rng);
        // Build a point guaranteed in view: pick pixel + depth, lift it.
        const PixelCoord pix{rng.next_range(1, K.width - 1), rng.next_range(1, K.height - 1)};
        const double depth = rng.next_range(0.2, 20.0);
        const Vec3 world = back_project(pix, depth, cam_to_world, K);
        const auto proj = project(world, cam_to_world.inverse(), K);
        REQUIRE(proj.has_value());
        CHECK(std::abs(proj->first.u - pix.u) < 1e-9);
        CHECK(std::abs(proj->first.v - pix.v) < 1e-9);
        CHECK(std::abs(proj->second - depth) < 1e-9);
        const Vec3 again = back_project(proj->first, proj->second, cam_to_world, K);
        CHECK((again - world).norm() < 1e-9);
        ++tested;
    }
}

TEST_CASE("project rejects points behind the near plane and outside the image") {
    const Intrinsics K = test_intrinsics();
    CHECK(!project(Vec3(0, 0, -1), RigidPose::identity(), K).has_value());
    CHECK(!project(Vec3(0, 0, kNearPlane * 0.5), RigidPose::identity(), K).has_value());
    CHECK(!project(Vec3(100, 0, 1), RigidPose::identity(), K).has_value());
    CHECK(project(Vec3(0, 0, 1), RigidPose::identity(), K).has_value());
}

TEST_CASE("rigid pose group laws") {
    Rng rng(22);
    for (int i = 0; i < 100; ++i) {
        const RigidPose a = random_pose(rng);
        const RigidPose b = random_pose(rng);
        const RigidPose lhs = invert(compose(a, b));
        const RigidPose rhs = compose(invert(b), invert(a));
        CHECK((lhs.rotation - rhs.rotation).norm() < 1e-12);
        CHECK((lhs.translation - rhs.translation).norm() < 1e-12);

        const RigidPose id = compose(a, invert(a));
        CHECK((id.rotation - Mat3::Identity()).norm() < 1e-12);
        CHECK(id.translation.norm() < 1e-12);

        const Vec3 x(rng.next_range(-3, 3), rng.next_range(-3, 3), rng.next_range(-3, 3));
        CHECK((compose(a, b).apply(x) - a.apply(b.apply(x))).norm() < 1e-12);
    }
}

TEST_CASE("rotation_angle is geodesic") {
    Rng rng(33);
    for (int i = 0; i < 50; ++i) {
        const Mat3 r = random_rotation(rng);
        CHECK(rotation_angle(r, r) < 1e-6);  // acos is ill-conditioned at 0
        const double ang = rng.next_range(0.01, 3.0);
        Vec3 axis(rng.next_range(-1, 1), rng.next_range(-1, 1), rng.next_range(-1, 1));
        axis.normalize();
        const Mat3 r2 = r * Eigen::AngleAxisd(ang, axis).toRotationMatrix();
        CHECK(std::abs(rotation_angle(r, r2) - ang) < 1e-9);
    }
}

TEST_CASE("umeyama recovers random Sim(3) transforms to 1e-9") {
    Rng rng(44);
    for (int trial = 0; trial < 50; ++trial) {
        const double s0 = rng.next_range(0.2, 4.0);
        const Mat3 r0 = random_rotation(rng);
        const Vec3 t0(rng.next_range(-10, 10), rng.next_range(-10, 10), rng.next_range(-10, 10));
        std::vector<Vec3> src, dst;
        for (int i = 0; i < 40; ++i) {
            const Vec3 p(rng.next_range(-5, 5), rng.next_range(-5, 5), rng.next_range(-5, 5));
            src.push_back(p);
            dst.push_back(s0 * (r0 * p) + t0);
        }
        const SimTransform sim = umeyama_align(src, dst, true);
        CHECK(std::abs(sim.scale - s0) < 1e-9);
        CHECK((sim.rotation - r0).norm() < 1e-9);
        CHECK((sim.translation - t0).norm() < 1e-9);

        // SE(3) variant: known scale 1.
        std::vector<Vec3> dst_rigid;
        for (const auto& p : src) dst_rigid.push_back(r0 * p + t0);
        const SimTransform se3 = umeyama_align(src, dst_rigid, false);
        CHECK(std::abs(se3.scale - 1.0) < 1e-12);
        CHECK((se3.rotation - r0).norm() < 1e-9);
        CHECK((se3.translation - t0).norm() < 1e-9);
    }
}

TEST_CASE("umeyama recovers a known doubled transform exactly") {
    Rng rng(55);
    const Mat3 r0 = random_rotation(rng);
    const Vec3 t0(1.0, -2.0, 3.0);
    std::vector<Vec3> src, dst;
    for (int i = 0; i < 20; ++i) {
        const Vec3 p(rng.next_range(-2, 2), rng.next_range(-2, 2), rng.next_range(-2, 2));
        src.push_back(p);
        dst.push_back(2.0 * (r0 * p) + t0);
    }
    const SimTransform sim = umeyama_align(src, dst, true);
    CHECK(std::abs(sim.scale - 2.0) < 1e-9);
    CHECK((sim.rotation - r0).norm() < 1e-9);
    CHECK((sim.translation - t0).norm() < 1e-9);
}

TEST_CASE("umeyama throws on degenerate input") {
    std::vector<Vec3> src = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};  // collinear
    std::vector<Vec3> dst = {{0, 0, 0}, {0, 1, 0}, {0, 2, 0}};
    CHECK_THROWS_AS(umeyama_align(src, dst, true), std::runtime_error);
    std::vector<Vec3> two = {{0, 0, 0}, {1, 1, 1}};
    CHECK_THROWS_AS(umeyama_align(two, two, false), std::runtime_error);
}

TEST_CASE("trajectory TUM text round-trip") {
    Rng rng(66);
    Trajectory traj;
    for (int i = 0; i < 25; ++i) {
        TimedPose tp;
        tp.timestamp = 0.1 * i;
        tp.pose = random_pose(rng);
        traj.poses.push_back(tp);
    }
    const std::string path =
        (std::filesystem::temp_directory_path() / "pcloc_traj_test.txt").string();
    save_trajectory(traj, path);
    const Trajectory loaded = load_trajectory(path);
    REQUIRE(loaded.size() == traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i) {
        CHECK(std::abs(loaded.poses[i].timestamp - traj.poses[i].timestamp) < 1e-9);
        CHECK((loaded.poses[i].pose.translation - traj.poses[i].pose.translation).norm() < 1e-6);
        CHECK(rotation_angle(loaded.poses[i].pose.rotation, traj.poses[i].pose.rotation) < 1e-6);
    }
    std::remove(path.c_str());
}
