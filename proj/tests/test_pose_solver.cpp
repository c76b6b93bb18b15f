#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "pcloc/pose_solver.hpp"
#include "pcloc/rng.hpp"

using namespace pcloc;

namespace {

Intrinsics test_intrinsics() {
    Intrinsics K;
    K.fx = K.fy = 450.0;
    K.cx = 320.0;
    K.cy = 240.0;
    K.width = 640;
    K.height = 480;
    return K;
}

RigidPose random_pose(Rng& rng) {
    const Eigen::Quaterniond q(rng.next_range(-1, 1), rng.next_range(-1, 1),
                               rng.next_range(-1, 1), rng.next_range(-1, 1));
    RigidPose p;
    p.rotation = q.normalized().toRotationMatrix();
    p.translation = Vec3(rng.next_range(-2, 2), rng.next_range(-2, 2), rng.next_range(-2, 2));
    return p;
}

// Perfect correspondences: world points in front of the camera, projected
// exactly through the ground-truth pose.
std::vector<Correspondence2D3D> make_correspondences(const RigidPose& cam_to_world,
                                                     const Intrinsics& K, int n, Rng& rng,
                                                     double min_depth = 0.5,
                                                     double max_depth = 8.0) {
    std::vector<Correspondence2D3D> corrs;
    while (int(corrs.size()) < n) {
        const PixelCoord pix{rng.next_range(10, K.width - 10), rng.next_range(10, K.height - 10)};
        const double depth = rng.next_range(min_depth, max_depth);
        const Vec3 cam(depth * (pix.u - K.cx) / K.fx, depth * (pix.v - K.cy) / K.fy, depth);
        corrs.push_back({pix, cam_to_world.apply(cam)});
    }
    return corrs;
}

double pose_translation_error(const RigidPose& a, const RigidPose& b) {
    return (a.translation - b.translation).norm();
}

double best_candidate_error(const std::vector<RigidPose>& candidates, const RigidPose& truth) {
    double best = 1e9;
    for (const auto& c : candidates)
        best = std::min(best, pose_translation_error(c, truth) +
                                  rotation_angle(c.rotation, truth.rotation));
    return best;
}

}  // namespace

TEST_CASE("EPnP minimal recovers a known pose from 6 noiseless points") {
    Rng rng(101);
    const Intrinsics K = test_intrinsics();
    for (int trial = 0; trial < 20; ++trial) {
        const RigidPose truth = random_pose(rng);
        const auto corrs = make_correspondences(truth, K, 6, rng);
        const auto candidates = solve_pnp_minimal(corrs, K);
        REQUIRE(!candidates.empty());
        CHECK(best_candidate_error(candidates, truth) < 1e-6);
    }
}

TEST_CASE("EPnP handles the planar case with 4 coplanar points") {
    Rng rng(102);
    const Intrinsics K = test_intrinsics();
    int recovered = 0;
    for (int trial = 0; trial < 20; ++trial) {
        // Camera above the z = 1 plane, looking straight down at a random
        // offset so the plane is guaranteed in view.
        RigidPose truth;
        truth.translation =
            Vec3(rng.next_range(-0.5, 0.5), rng.next_range(-0.5, 0.5), rng.next_range(3.0, 5.0));
        truth.rotation = Eigen::AngleAxisd(M_PI, Vec3::UnitX()).toRotationMatrix() *
                         Eigen::AngleAxisd(rng.next_range(0, 2 * M_PI), Vec3::UnitZ())
                             .toRotationMatrix();
        // Points on the z = 1 plane of the world frame, visible to the camera.
        std::vector<Correspondence2D3D> corrs;
        Rng local(trial + 1);
        int attempts = 0;
        while (int(corrs.size()) < 4 && ++attempts < 10000) {
            const Vec3 world(local.next_range(-1.0, 1.0), local.next_range(-1.0, 1.0), 1.0);
            const auto proj = project(world, truth.inverse(), K);
            if (!proj) continue;
            corrs.push_back({proj->first, world});
        }
        REQUIRE(int(corrs.size()) == 4);
        const auto candidates = solve_pnp_minimal(corrs, K);
        if (!candidates.empty() && best_candidate_error(candidates, truth) < 1e-4) ++recovered;
    }
    CHECK(recovered >= 18);  // minimal planar fits admit rare mirror ambiguities
}

TEST_CASE("EPnP reports degeneracy on collinear points") {
    const Intrinsics K = test_intrinsics();
    std::vector<Correspondence2D3D> corrs;
    for (int i = 0; i < 6; ++i)
        corrs.push_back({{320.0, 100.0 + 40.0 * i}, Vec3(0.0, -1.0 + 0.4 * i, 2.0)});
    CHECK(solve_pnp_minimal(corrs, K).empty());
}

TEST_CASE("PnP-RANSAC: 100 perfect correspondences give all inliers") {
    Rng rng(103);
    const Intrinsics K = test_intrinsics();
    const RigidPose truth = random_pose(rng);
    const auto corrs = make_correspondences(truth, K, 100, rng);
    RansacConfig cfg;
    const auto est = solve_pnp_ransac(corrs, K, cfg);
    REQUIRE(est.has_value());
    CHECK(est->inlier_indices.size() == 100);
    CHECK(pose_translation_error(est->pose, truth) < 1e-6);
}

TEST_CASE("PnP-RANSAC: 60 inliers + 40 outliers recovers exactly the planted inliers") {
    Rng rng(104);
    const Intrinsics K = test_intrinsics();
    const RigidPose truth = random_pose(rng);
    auto corrs = make_correspondences(truth, K, 60, rng);
    // Outliers: random pixels paired with unrelated world points far from
    // their true projection.
    int added = 0;
    while (added < 40) {
        const PixelCoord pix{rng.next_range(10, K.width - 10), rng.next_range(10, K.height - 10)};
        const double depth = rng.next_range(0.5, 8.0);
        const PixelCoord wrong{rng.next_range(10, K.width - 10),
                               rng.next_range(10, K.height - 10)};
        if (std::abs(wrong.u - pix.u) + std::abs(wrong.v - pix.v) < 30) continue;
        const Vec3 cam(depth * (wrong.u - K.cx) / K.fx, depth * (wrong.v - K.cy) / K.fy, depth);
        corrs.push_back({pix, truth.apply(cam)});
        ++added;
    }
    RansacConfig cfg;
    const auto est = solve_pnp_ransac(corrs, K, cfg);
    REQUIRE(est.has_value());
    CHECK(est->inlier_indices.size() == 60);
    for (int idx : est->inlier_indices) CHECK(idx < 60);
    CHECK(pose_translation_error(est->pose, truth) < 1e-4);
}

TEST_CASE("PnP-RANSAC planted-pose oracle: 99/100 seeded trials within 1mm / 0.05 deg") {
    const Intrinsics K = test_intrinsics();
    int good = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(1000 + trial);
        const RigidPose truth = random_pose(rng);
        auto corrs = make_correspondences(truth, K, 40, rng);
        // Up to 50% outliers.
        for (int i = 0; i < 40; ++i) {
            const PixelCoord pix{rng.next_range(10, K.width - 10),
                                 rng.next_range(10, K.height - 10)};
            const Vec3 world(rng.next_range(-4, 4), rng.next_range(-4, 4), rng.next_range(-4, 4));
            corrs.push_back({pix, world});
        }
        RansacConfig cfg;
        cfg.seed = trial + 1;
        const auto est = solve_pnp_ransac(corrs, K, cfg);
        if (!est) continue;
        const double pos_err = pose_translation_error(est->pose, truth);
        const double ang_err = rotation_angle(est->pose.rotation, truth.rotation) * 180.0 / M_PI;
        if (pos_err < 1e-3 && ang_err < 0.05) ++good;
    }
    CHECK(good >= 99);
}

TEST_CASE("PnP-RANSAC is deterministic for a fixed seed") {
    Rng rng(105);
    const Intrinsics K = test_intrinsics();
    const RigidPose truth = random_pose(rng);
    auto corrs = make_correspondences(truth, K, 50, rng);
    for (int i = 0; i < 30; ++i)
        corrs.push_back({{rng.next_range(10, 630), rng.next_range(10, 470)},
                         Vec3(rng.next_range(-4, 4), rng.next_range(-4, 4), rng.next_range(1, 4))});
    RansacConfig cfg;
    cfg.seed = 42;
    const auto a = solve_pnp_ransac(corrs, K, cfg);
    const auto b = solve_pnp_ransac(corrs, K, cfg);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK((a->pose.translation - b->pose.translation).norm() == 0.0);
    CHECK((a->pose.rotation - b->pose.rotation).norm() == 0.0);
    CHECK(a->inlier_indices == b->inlier_indices);
}

TEST_CASE("PnP-RANSAC returns empty below the inlier gate") {
    Rng rng(106);
    const Intrinsics K = test_intrinsics();
    std::vector<Correspondence2D3D> corrs;
    for (int i = 0; i < 40; ++i)
        corrs.push_back({{rng.next_range(10, 630), rng.next_range(10, 470)},
                         Vec3(rng.next_range(-4, 4), rng.next_range(-4, 4), rng.next_range(1, 4))});
    RansacConfig cfg;
    CHECK(!solve_pnp_ransac(corrs, K, cfg).has_value());
}

TEST_CASE("refinement recovers from a perturbed initial pose") {
    Rng rng(107);
    const Intrinsics K = test_intrinsics();
    for (int trial = 0; trial < 20; ++trial) {
        const RigidPose truth = random_pose(rng);
        const auto corrs = make_correspondences(truth, K, 50, rng);
        RigidPose init = truth;
        Vec3 axis(rng.next_range(-1, 1), rng.next_range(-1, 1), rng.next_range(-1, 1));
        axis.normalize();
        init.rotation = truth.rotation * Eigen::AngleAxisd(M_PI / 180.0, axis).toRotationMatrix();
        init.translation += 0.01 * axis;
        const RefineResult res = refine_pose(init, corrs, K);
        CHECK(pose_translation_error(res.pose, truth) < 1e-8);
        CHECK(res.final_error <= res.initial_error);
    }
}

TEST_CASE("refinement never increases the total error") {
    Rng rng(108);
    const Intrinsics K = test_intrinsics();
    for (int trial = 0; trial < 20; ++trial) {
        const RigidPose truth = random_pose(rng);
        auto corrs = make_correspondences(truth, K, 30, rng);
        // Heavy noise so the optimum is far from the initial pose.
        for (auto& c : corrs) {
            c.pixel.u += rng.next_range(-20, 20);
            c.pixel.v += rng.next_range(-20, 20);
        }
        const RefineResult res = refine_pose(truth, corrs, K);
        CHECK(res.final_error <= total_reprojection_error(truth, corrs, K) + 1e-9);
    }
}

TEST_CASE("analytic Jacobian matches central finite differences within 1e-5") {
    Rng rng(109);
    const Intrinsics K = test_intrinsics();
    const double eps = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        const RigidPose cam_to_world = random_pose(rng);
        const auto corrs = make_correspondences(cam_to_world, K, 8, rng);
        const RigidPose w2c = cam_to_world.inverse();

        Eigen::VectorXd residual;
        Eigen::MatrixXd jac;
        reprojection_jacobian(w2c, corrs, K, residual, jac);
        REQUIRE(jac.rows() == int(2 * corrs.size()));
        REQUIRE(jac.cols() == 6);

        // Perturb the world-to-camera pose: delta composed on the left,
        // columns ordered [translation, rotation].
        for (int col = 0; col < 6; ++col) {
            auto perturbed = [&](double step) {
                Eigen::Matrix<double, 6, 1> delta = Eigen::Matrix<double, 6, 1>::Zero();
                delta(col) = step;
                RigidPose d;
                d.translation = delta.head<3>();
                const Vec3 w = delta.tail<3>();
                const double ang = w.norm();
                d.rotation = ang < 1e-300
                                 ? Mat3::Identity()
                                 : Eigen::AngleAxisd(ang, w / ang).toRotationMatrix();
                return d.compose(w2c);
            };
            Eigen::VectorXd r_plus, r_minus;
            Eigen::MatrixXd unused;
            reprojection_jacobian(perturbed(eps), corrs, K, r_plus, unused);
            reprojection_jacobian(perturbed(-eps), corrs, K, r_minus, unused);
            const Eigen::VectorXd fd = (r_plus - r_minus) / (2.0 * eps);
            CHECK((fd - jac.col(col)).cwiseAbs().maxCoeff() < 1e-5);
        }
    }
}
