#include "pcloc/pose_solver.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "pcloc/rng.hpp"

namespace pcloc {

namespace {

constexpr double kBehindCameraPenalty = 1e8;

Mat3 axis_angle_to_matrix(const Vec3& w) {
    const double theta = w.norm();
    if (theta < 1e-12) return Mat3::Identity() + Eigen::Matrix3d((Mat3() << 0, -w.z(), w.y(),
                                                                  w.z(), 0, -w.x(), -w.y(), w.x(),
                                                                  0).finished());
    return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

// Rigid absolute orientation (Horn/Umeyama, no scale): finds R,t with
// dst ~= R * src + t.
RigidPose rigid_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        mu_s += src[i];
        mu_d += dst[i];
    }
    mu_s /= double(src.size());
    mu_d /= double(src.size());
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) h += (dst[i] - mu_d) * (src[i] - mu_s).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 s = Mat3::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2, 2) = -1;
    RigidPose out;
    out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
    out.translation = mu_d - out.rotation * mu_s;
    return out;
}

// ---------------------------------------------------------------------------
// EPnP

struct EpnpProblem {
    std::vector<Vec3> pw;
    std::vector<double> us, vs;  // normalized image coordinates
    std::array<Vec3, 4> cw;      // world-frame control points
    Eigen::MatrixXd alphas;      // n x 4 barycentric coordinates
};

// Returns the world-to-camera pose given camera-frame control points.
RigidPose pose_from_camera_control_points(const EpnpProblem& prob,
                                          const std::array<Vec3, 4>& cc_in) {
    std::array<Vec3, 4> cc = cc_in;
    // Cheirality: point depths must be positive.
    double z_sum = 0;
    for (std::size_t i = 0; i < prob.pw.size(); ++i) {
        Vec3 pc = Vec3::Zero();
        for (int j = 0; j < 4; ++j) pc += prob.alphas(i, j) * cc[j];
        z_sum += pc.z();
    }
    if (z_sum < 0)
        for (auto& c : cc) c = -c;

    std::vector<Vec3> pcs(prob.pw.size());
    for (std::size_t i = 0; i < prob.pw.size(); ++i) {
        Vec3 pc = Vec3::Zero();
        for (int j = 0; j < 4; ++j) pc += prob.alphas(i, j) * cc[j];
        pcs[i] = pc;
    }
    return rigid_fit(prob.pw, pcs);  // world -> camera
}

double reproj_error_norm(const EpnpProblem& prob, const RigidPose& world_to_cam) {
    double e = 0;
    for (std::size_t i = 0; i < prob.pw.size(); ++i) {
        const Vec3 pc = world_to_cam.apply(prob.pw[i]);
        if (pc.z() <= 0) return kBehindCameraPenalty;
        const double du = pc.x() / pc.z() - prob.us[i];
        const double dv = pc.y() / pc.z() - prob.vs[i];
        e += du * du + dv * dv;
    }
    return e;
}

using Vec10 = Eigen::Matrix<double, 10, 1>;
using Mat6x10 = Eigen::Matrix<double, 6, 10>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

void gauss_newton_betas(const Mat6x10& l, const Vec6& rho, Eigen::Vector4d& betas) {
    for (int iter = 0; iter < 5; ++iter) {
        Eigen::Matrix<double, 6, 4> jac;
        Vec6 res;
        for (int r = 0; r < 6; ++r) {
            const auto& row = l.row(r);
            // rho ordering of the quadratic terms: b11 b12 b22 b13 b23 b33 b14 b24 b34 b44
            res(r) = rho(r) - (row(0) * betas(0) * betas(0) + row(1) * betas(0) * betas(1) +
                               row(2) * betas(1) * betas(1) + row(3) * betas(0) * betas(2) +
                               row(4) * betas(1) * betas(2) + row(5) * betas(2) * betas(2) +
                               row(6) * betas(0) * betas(3) + row(7) * betas(1) * betas(3) +
                               row(8) * betas(2) * betas(3) + row(9) * betas(3) * betas(3));
            jac(r, 0) = 2 * row(0) * betas(0) + row(1) * betas(1) + row(3) * betas(2) +
                        row(6) * betas(3);
            jac(r, 1) = row(1) * betas(0) + 2 * row(2) * betas(1) + row(4) * betas(2) +
                        row(7) * betas(3);
            jac(r, 2) = row(3) * betas(0) + row(4) * betas(1) + 2 * row(5) * betas(2) +
                        row(8) * betas(3);
            jac(r, 3) = row(6) * betas(0) + row(7) * betas(1) + row(8) * betas(2) +
                        2 * row(9) * betas(3);
        }
        betas += jac.colPivHouseholderQr().solve(res);
    }
}

std::vector<RigidPose> solve_epnp(const EpnpProblem& prob) {
    const int n = int(prob.pw.size());

    Eigen::MatrixXd m(2 * n, 12);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 4; ++j) {
            const double a = prob.alphas(i, j);
            m(2 * i, 3 * j) = a;
            m(2 * i, 3 * j + 1) = 0;
            m(2 * i, 3 * j + 2) = -a * prob.us[i];
            m(2 * i + 1, 3 * j) = 0;
            m(2 * i + 1, 3 * j + 1) = a;
            m(2 * i + 1, 3 * j + 2) = -a * prob.vs[i];
        }

    const Eigen::Matrix<double, 12, 12> mtm = m.transpose() * m;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> eig(mtm);
    // Four eigenvectors of the smallest eigenvalues (ascending order).
    std::array<std::array<Vec3, 4>, 4> v;  // v[k][control point]
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j) v[k][j] = eig.eigenvectors().col(k).segment<3>(3 * j);

    // L * betas_quadratic = rho over the 6 control point pairs.
    const int pa[6] = {0, 0, 0, 1, 1, 2};
    const int pb[6] = {1, 2, 3, 2, 3, 3};
    Mat6x10 l;
    Vec6 rho;
    for (int r = 0; r < 6; ++r) {
        std::array<Vec3, 4> dv;
        for (int k = 0; k < 4; ++k) dv[k] = v[k][pa[r]] - v[k][pb[r]];
        l(r, 0) = dv[0].dot(dv[0]);
        l(r, 1) = 2 * dv[0].dot(dv[1]);
        l(r, 2) = dv[1].dot(dv[1]);
        l(r, 3) = 2 * dv[0].dot(dv[2]);
        l(r, 4) = 2 * dv[1].dot(dv[2]);
        l(r, 5) = dv[2].dot(dv[2]);
        l(r, 6) = 2 * dv[0].dot(dv[3]);
        l(r, 7) = 2 * dv[1].dot(dv[3]);
        l(r, 8) = 2 * dv[2].dot(dv[3]);
        l(r, 9) = dv[3].dot(dv[3]);
        rho(r) = (prob.cw[pa[r]] - prob.cw[pb[r]]).squaredNorm();
    }

    std::vector<Eigen::Vector4d> beta_seeds;
    {
        // Case N=1: single eigenvector, closed-form scale.
        double num = 0, den = 0;
        for (int r = 0; r < 6; ++r) {
            num += std::sqrt(rho(r)) * std::sqrt(std::max(0.0, l(r, 0)));
            den += l(r, 0);
        }
        beta_seeds.push_back({den > 0 ? num / std::sqrt(den) : 0.0, 0, 0, 0});
    }
    {
        // Case N=2: columns b11 b12 b22.
        Eigen::Matrix<double, 6, 3> l3;
        l3 << l.col(0), l.col(1), l.col(2);
        const Eigen::Vector3d x = l3.colPivHouseholderQr().solve(rho);
        Eigen::Vector4d b = Eigen::Vector4d::Zero();
        b(0) = std::sqrt(std::abs(x(0)));
        b(1) = std::sqrt(std::abs(x(2)));
        if (x(1) < 0) b(1) = -b(1);
        beta_seeds.push_back(b);
    }
    {
        // Case N=3: columns b11 b12 b22 b13 b23.
        Eigen::Matrix<double, 6, 5> l5;
        l5 << l.col(0), l.col(1), l.col(2), l.col(3), l.col(4);
        const Eigen::Matrix<double, 5, 1> x = l5.colPivHouseholderQr().solve(rho);
        Eigen::Vector4d b = Eigen::Vector4d::Zero();
        b(0) = std::sqrt(std::abs(x(0)));
        b(1) = std::sqrt(std::abs(x(2)));
        if (x(1) < 0) b(1) = -b(1);
        b(2) = x(0) != 0 ? x(3) / b(0) : 0.0;
        beta_seeds.push_back(b);
    }

    std::vector<RigidPose> poses;
    double best_err = std::numeric_limits<double>::infinity();
    RigidPose best_pose;
    for (auto betas : beta_seeds) {
        gauss_newton_betas(l, rho, betas);
        std::array<Vec3, 4> cc;
        for (int j = 0; j < 4; ++j) {
            cc[j] = Vec3::Zero();
            for (int k = 0; k < 4; ++k) cc[j] += betas(k) * v[k][j];
        }
        const RigidPose world_to_cam = pose_from_camera_control_points(prob, cc);
        const double err = reproj_error_norm(prob, world_to_cam);
        if (err < best_err) {
            best_err = err;
            best_pose = world_to_cam;
        }
    }
    if (!std::isfinite(best_err) || best_err >= kBehindCameraPenalty) return poses;
    poses.push_back(best_pose.inverse());  // camera-to-world
    return poses;
}

// Planar fallback: pose from the homography between plane coordinates and
// normalized image coordinates.
std::vector<RigidPose> solve_planar(const std::vector<Correspondence2D3D>& corrs,
                                    const Intrinsics& K, const Vec3& centroid, const Vec3& ax0,
                                    const Vec3& ax1) {
    const int n = int(corrs.size());
    Eigen::MatrixXd a(2 * n, 9);
    for (int i = 0; i < n; ++i) {
        const Vec3 d = corrs[i].point - centroid;
        const double px = d.dot(ax0), py = d.dot(ax1);
        const double u = (corrs[i].pixel.u - K.cx) / K.fx;
        const double v = (corrs[i].pixel.v - K.cy) / K.fy;
        a.row(2 * i) << px, py, 1, 0, 0, 0, -u * px, -u * py, -u;
        a.row(2 * i + 1) << 0, 0, 0, px, py, 1, -v * px, -v * py, -v;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Mat3 hm;
    hm << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

    const double lambda = 0.5 * (hm.col(0).norm() + hm.col(1).norm());
    if (lambda < 1e-12) return {};

    std::vector<RigidPose> out;
    for (double sign : {1.0, -1.0}) {
        const Mat3 hs = hm * (sign / lambda);
        Mat3 r_raw;
        r_raw.col(0) = hs.col(0);
        r_raw.col(1) = hs.col(1);
        r_raw.col(2) = hs.col(0).cross(hs.col(1));
        Eigen::JacobiSVD<Mat3> rsvd(r_raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 s = Mat3::Identity();
        if (rsvd.matrixU().determinant() * rsvd.matrixV().determinant() < 0) s(2, 2) = -1;
        const Mat3 r_plane = rsvd.matrixU() * s * rsvd.matrixV().transpose();
        const Vec3 t_plane = hs.col(2);

        // Compose with the world->plane frame change.
        RigidPose world_to_cam;
        Mat3 plane_basis;
        plane_basis.col(0) = ax0;
        plane_basis.col(1) = ax1;
        plane_basis.col(2) = ax0.cross(ax1);
        world_to_cam.rotation = r_plane * plane_basis.transpose();
        world_to_cam.translation = t_plane - world_to_cam.rotation * centroid;

        bool in_front = true;
        for (const auto& c : corrs)
            if (world_to_cam.apply(c.point).z() <= 0) {
                in_front = false;
                break;
            }
        if (in_front) out.push_back(world_to_cam.inverse());
    }
    return out;
}

}  // namespace

std::vector<RigidPose> solve_pnp_minimal(const std::vector<Correspondence2D3D>& corrs,
                                         const Intrinsics& K) {
    const int n = int(corrs.size());
    if (n < 4) return {};

    Vec3 centroid = Vec3::Zero();
    for (const auto& c : corrs) centroid += c.point;
    centroid /= double(n);
    Mat3 cov = Mat3::Zero();
    for (const auto& c : corrs) {
        const Vec3 d = c.point - centroid;
        cov += d * d.transpose();
    }
    cov /= double(n);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);  // ascending eigenvalues
    const double e0 = eig.eigenvalues()(2), e1 = eig.eigenvalues()(1), e2 = eig.eigenvalues()(0);
    if (e1 < 1e-10 * std::max(e0, 1e-12)) return {};  // collinear: degenerate

    if (e2 < 1e-8 * e0) {
        // Coplanar configuration.
        return solve_planar(corrs, K, centroid, eig.eigenvectors().col(2),
                            eig.eigenvectors().col(1));
    }

    EpnpProblem prob;
    prob.pw.reserve(n);
    prob.us.reserve(n);
    prob.vs.reserve(n);
    for (const auto& c : corrs) {
        prob.pw.push_back(c.point);
        prob.us.push_back((c.pixel.u - K.cx) / K.fx);
        prob.vs.push_back((c.pixel.v - K.cy) / K.fy);
    }
    prob.cw[0] = centroid;
    for (int j = 0; j < 3; ++j)
        prob.cw[j + 1] =
            centroid + std::sqrt(std::max(eig.eigenvalues()(2 - j), 0.0)) *
                           eig.eigenvectors().col(2 - j);

    Mat3 basis;
    for (int j = 0; j < 3; ++j) basis.col(j) = prob.cw[j + 1] - prob.cw[0];
    const Mat3 basis_inv = basis.inverse();
    prob.alphas.resize(n, 4);
    for (int i = 0; i < n; ++i) {
        const Vec3 b = basis_inv * (prob.pw[i] - prob.cw[0]);
        prob.alphas(i, 1) = b(0);
        prob.alphas(i, 2) = b(1);
        prob.alphas(i, 3) = b(2);
        prob.alphas(i, 0) = 1.0 - b(0) - b(1) - b(2);
    }
    return solve_epnp(prob);
}

double total_reprojection_error(const RigidPose& cam_to_world,
                                const std::vector<Correspondence2D3D>& corrs,
                                const Intrinsics& K) {
    const RigidPose wc = cam_to_world.inverse();
    double e = 0;
    for (const auto& c : corrs) {
        const Vec3 pc = wc.apply(c.point);
        if (pc.z() <= 1e-9) {
            e += kBehindCameraPenalty;
            continue;
        }
        const double du = K.fx * pc.x() / pc.z() + K.cx - c.pixel.u;
        const double dv = K.fy * pc.y() / pc.z() + K.cy - c.pixel.v;
        e += du * du + dv * dv;
    }
    return e;
}

void reprojection_jacobian(const RigidPose& world_to_cam,
                           const std::vector<Correspondence2D3D>& corrs, const Intrinsics& K,
                           Eigen::VectorXd& residual, Eigen::MatrixXd& jacobian) {
    const int n = int(corrs.size());
    residual.resize(2 * n);
    jacobian.resize(2 * n, 6);
    for (int i = 0; i < n; ++i) {
        const Vec3 pc = world_to_cam.apply(corrs[i].point);
        const double z = pc.z();
        const double zi = 1.0 / z;
        residual(2 * i) = K.fx * pc.x() * zi + K.cx - corrs[i].pixel.u;
        residual(2 * i + 1) = K.fy * pc.y() * zi + K.cy - corrs[i].pixel.v;

        Eigen::Matrix<double, 2, 3> dproj;
        dproj << K.fx * zi, 0, -K.fx * pc.x() * zi * zi, 0, K.fy * zi, -K.fy * pc.y() * zi * zi;
        Mat3 skew;
        skew << 0, -pc.z(), pc.y(), pc.z(), 0, -pc.x(), -pc.y(), pc.x(), 0;
        jacobian.block<2, 3>(2 * i, 0) = dproj;          // d/d translation
        jacobian.block<2, 3>(2 * i, 3) = -dproj * skew;  // d/d rotation (left increment)
    }
}

RefineResult refine_pose(const RigidPose& initial, const std::vector<Correspondence2D3D>& inliers,
                         const Intrinsics& K) {
    RefineResult out;
    out.pose = initial;
    out.initial_error = total_reprojection_error(initial, inliers, K);
    out.final_error = out.initial_error;
    if (inliers.size() < 6) return out;

    RigidPose wc = initial.inverse();
    double err = out.initial_error;
    Eigen::VectorXd r;
    Eigen::MatrixXd j;
    for (int iter = 0; iter < 20; ++iter) {
        reprojection_jacobian(wc, inliers, K, r, j);
        const Eigen::Matrix<double, 6, 6> h = j.transpose() * j;
        const Vec6 g = j.transpose() * r;
        Vec6 step = -h.ldlt().solve(g);
        if (!step.allFinite()) break;

        bool accepted = false;
        for (int bt = 0; bt < 8; ++bt) {
            RigidPose trial;
            const Mat3 dr = axis_angle_to_matrix(step.tail<3>());
            trial.rotation = dr * wc.rotation;
            trial.translation = dr * wc.translation + step.head<3>();
            const double trial_err = total_reprojection_error(trial.inverse(), inliers, K);
            if (trial_err < err) {
                wc = trial;
                err = trial_err;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        out.iterations = iter + 1;
        if (!accepted) break;
        out.improved = true;
        if (step.norm() < 1e-10) break;
    }
    if (out.improved) {
        RigidPose refined = wc.inverse();
        refined.reorthonormalize();
        out.pose = refined;
        out.final_error = err;
    }
    return out;
}

namespace {

bool sample_degenerate(const std::vector<Correspondence2D3D>& corrs, const int idx[4]) {
    // Reject when any three sampled points are within ~1 degree of collinear.
    constexpr double kMinSin = 0.0175;  // sin(1 deg)
    for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b)
            for (int c = b + 1; c < 4; ++c) {
                const Vec3 d1 = corrs[idx[b]].point - corrs[idx[a]].point;
                const Vec3 d2 = corrs[idx[c]].point - corrs[idx[a]].point;
                const double n1 = d1.norm(), n2 = d2.norm();
                if (n1 < 1e-9 || n2 < 1e-9) return true;
                if (d1.cross(d2).norm() / (n1 * n2) < kMinSin) return true;
            }
    return false;
}

}  // namespace

std::optional<PoseEstimate> solve_pnp_ransac(const std::vector<Correspondence2D3D>& corrs,
                                             const Intrinsics& K, const RansacConfig& config) {
    const int n = int(corrs.size());
    if (n < std::max(config.min_inliers, 6)) return std::nullopt;

    Rng rng(config.seed);
    const double thr2 = config.reproj_threshold * config.reproj_threshold;

    int best_count = 0;
    double best_err = std::numeric_limits<double>::infinity();
    RigidPose best_pose;
    std::vector<std::uint8_t> best_mask;

    int max_iter = config.max_iterations;
    for (int iter = 0; iter < max_iter; ++iter) {
        int idx[4];
        for (int k = 0; k < 4; ++k) {
            bool dup;
            do {
                idx[k] = int(rng.next_below(std::uint32_t(n)));
                dup = false;
                for (int m = 0; m < k; ++m)
                    if (idx[m] == idx[k]) dup = true;
            } while (dup);
        }
        if (sample_degenerate(corrs, idx)) continue;

        std::vector<Correspondence2D3D> sample = {corrs[idx[0]], corrs[idx[1]], corrs[idx[2]],
                                                  corrs[idx[3]]};
        for (const RigidPose& pose : solve_pnp_minimal(sample, K)) {
            const RigidPose wc = pose.inverse();
            int count = 0;
            double err_sum = 0;
            std::vector<std::uint8_t> mask(n, 0);
            for (int i = 0; i < n; ++i) {
                const Vec3 pc = wc.apply(corrs[i].point);
                if (pc.z() <= 1e-9) continue;
                const double du = K.fx * pc.x() / pc.z() + K.cx - corrs[i].pixel.u;
                const double dv = K.fy * pc.y() / pc.z() + K.cy - corrs[i].pixel.v;
                const double e2 = du * du + dv * dv;
                if (e2 < thr2) {
                    mask[i] = 1;
                    ++count;
                    err_sum += e2;
                }
            }
            if (count > best_count || (count == best_count && err_sum < best_err)) {
                best_count = count;
                best_err = err_sum;
                best_pose = pose;
                best_mask = std::move(mask);
            }
        }
        if (best_count >= config.min_inliers) {
            // Adaptive iteration bound: 1 - (1 - w^4)^N >= confidence.
            const double w = double(best_count) / n;
            const double p_good = std::pow(w, 4);
            if (p_good >= 1.0 - 1e-12) break;
            const int needed =
                int(std::ceil(std::log(1.0 - config.confidence) / std::log(1.0 - p_good)));
            max_iter = std::min(config.max_iterations, std::max(iter + 1, needed));
        }
    }

    if (best_count < config.min_inliers) return std::nullopt;

    std::vector<Correspondence2D3D> inlier_corrs;
    std::vector<int> inlier_idx;
    for (int i = 0; i < n; ++i)
        if (best_mask[i]) {
            inlier_corrs.push_back(corrs[i]);
            inlier_idx.push_back(i);
        }

    const RefineResult refined = refine_pose(best_pose, inlier_corrs, K);

    // Re-collect inliers against the refined pose.
    PoseEstimate est;
    est.pose = refined.pose;
    const RigidPose wc = est.pose.inverse();
    double err_sum = 0;
    for (int i = 0; i < n; ++i) {
        const Vec3 pc = wc.apply(corrs[i].point);
        if (pc.z() <= 1e-9) continue;
        const double du = K.fx * pc.x() / pc.z() + K.cx - corrs[i].pixel.u;
        const double dv = K.fy * pc.y() / pc.z() + K.cy - corrs[i].pixel.v;
        const double e2 = du * du + dv * dv;
        if (e2 < thr2) {
            est.inlier_indices.push_back(i);
            err_sum += std::sqrt(e2);
        }
    }
    if (int(est.inlier_indices.size()) < config.min_inliers) return std::nullopt;
    est.mean_reproj_error = err_sum / double(est.inlier_indices.size());
    return est;
}

}  // namespace pcloc
