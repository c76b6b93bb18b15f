#include "pcloc/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pcloc/map_builder.hpp"
#include "pcloc/tracker.hpp"

namespace pcloc {

ApeResult ape_rmse(const Trajectory& estimated, const Trajectory& ground_truth, AlignMode mode) {
    if (ground_truth.size() < 2)
        throw std::runtime_error("ape_rmse: ground truth needs at least two poses");

    // Association window: half the ground-truth frame period (median spacing).
    std::vector<double> gaps;
    gaps.reserve(ground_truth.size() - 1);
    for (std::size_t i = 1; i < ground_truth.size(); ++i)
        gaps.push_back(ground_truth.poses[i].timestamp - ground_truth.poses[i - 1].timestamp);
    std::sort(gaps.begin(), gaps.end());
    const double half_period = 0.5 * gaps[gaps.size() / 2];

    std::vector<const TimedPose*> est, gt;
    for (const auto& e : estimated.poses) {
        auto it = std::lower_bound(ground_truth.poses.begin(), ground_truth.poses.end(),
                                   e.timestamp, [](const TimedPose& p, double t) {
                                       return p.timestamp < t;
                                   });
        const TimedPose* best = nullptr;
        if (it != ground_truth.poses.end()) best = &*it;
        if (it != ground_truth.poses.begin()) {
            const TimedPose* prev = &*std::prev(it);
            if (!best || std::abs(prev->timestamp - e.timestamp) <
                             std::abs(best->timestamp - e.timestamp))
                best = prev;
        }
        if (best && std::abs(best->timestamp - e.timestamp) <= half_period) {
            est.push_back(&e);
            gt.push_back(best);
        }
    }
    if (est.size() < 3) throw std::runtime_error("ape_rmse: fewer than 3 matched pose pairs");

    std::vector<Vec3> src, dst;
    src.reserve(est.size());
    dst.reserve(est.size());
    for (std::size_t i = 0; i < est.size(); ++i) {
        src.push_back(est[i]->pose.translation);
        dst.push_back(gt[i]->pose.translation);
    }
    const SimTransform align = umeyama_align(src, dst, mode == AlignMode::Sim3);

    double pos_sq = 0.0, ang_sq = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        pos_sq += (align.apply(src[i]) - dst[i]).squaredNorm();
        const double ang =
            rotation_angle(align.rotation * est[i]->pose.rotation, gt[i]->pose.rotation);
        ang_sq += ang * ang;
    }
    ApeResult result;
    result.n_matched = est.size();
    result.n_estimated = estimated.size();
    result.pos_rmse = std::sqrt(pos_sq / double(est.size()));
    result.ang_rmse_deg = std::sqrt(ang_sq / double(est.size())) * 180.0 / M_PI;
    return result;
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

const std::array<double, kSsimWindow * kSsimWindow>& ssim_weights() {
    static const auto weights = [] {
        std::array<double, kSsimWindow * kSsimWindow> w{};
        double sum = 0.0;
        for (int dy = 0; dy < kSsimWindow; ++dy)
            for (int dx = 0; dx < kSsimWindow; ++dx) {
                const double rx = dx - kSsimWindow / 2, ry = dy - kSsimWindow / 2;
                const double v = std::exp(-(rx * rx + ry * ry) / (2.0 * kSsimSigma * kSsimSigma));
                w[std::size_t(dy) * kSsimWindow + dx] = v;
                sum += v;
            }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return weights;
}

}  // namespace

double ssim(const ImageGray& a, const ImageGray& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::runtime_error("ssim: dimension mismatch");
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        throw std::runtime_error("ssim: image smaller than the 11x11 window");

    const auto& w = ssim_weights();
    double total = 0.0;
    std::size_t count = 0;
    for (int y = 0; y + kSsimWindow <= a.height; ++y)
        for (int x = 0; x + kSsimWindow <= a.width; ++x) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int dy = 0; dy < kSsimWindow; ++dy)
                for (int dx = 0; dx < kSsimWindow; ++dx) {
                    const double wi = w[std::size_t(dy) * kSsimWindow + dx];
                    const double va = a.at(x + dx, y + dy);
                    const double vb = b.at(x + dx, y + dy);
                    mu_a += wi * va;
                    mu_b += wi * vb;
                    aa += wi * va * va;
                    bb += wi * vb * vb;
                    ab += wi * va * vb;
                }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
                     ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
            ++count;
        }
    return total / double(count);
}

double ssim(const ImageRgb& a, const ImageRgb& b) { return ssim(to_gray(a), to_gray(b)); }

ImageRgb overlay(const ImageRgb& camera_frame, const ImageRgb& render, double alpha,
                 const std::vector<std::uint8_t>* valid) {
    if (!camera_frame.same_size(render)) throw std::runtime_error("overlay: dimension mismatch");
    if (valid && valid->size() != std::size_t(camera_frame.width) * camera_frame.height)
        throw std::runtime_error("overlay: mask size mismatch");
    alpha = std::clamp(alpha, 0.0, 1.0);
    ImageRgb out(camera_frame.width, camera_frame.height);
    const std::size_t n = std::size_t(camera_frame.width) * camera_frame.height;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = (valid && !(*valid)[i]) ? 0.0 : alpha;
        for (int c = 0; c < 3; ++c)
            out.data[3 * i + c] = std::uint8_t(std::lround(
                (1.0 - a) * camera_frame.data[3 * i + c] + a * render.data[3 * i + c]));
    }
    return out;
}

std::vector<StudyRow> decimation_study(const PointCloud& cloud,
                                       const std::function<ImageRgb(std::size_t)>& load_frame,
                                       const std::vector<double>& timestamps,
                                       const Intrinsics& K_cam, const Trajectory& ground_truth,
                                       const RegionOfInterest& roi,
                                       const std::vector<double>& levels, TrackMode mode,
                                       bool with_point_based_arm, const PipelineConfig& config) {
    for (double level : levels)
        if (!(level > 0.0 && level <= 1.0))
            throw std::runtime_error("decimation_study: levels must be in (0, 1]");

    using clock = std::chrono::steady_clock;
    std::vector<StudyRow> rows;
    for (double level : levels) {
        const PointCloud sub =
            level >= 1.0 ? cloud : decimate(cloud, level, config.seed);

        std::vector<std::pair<std::string, PipelineConfig>> arms;
        arms.emplace_back("full", config);
        if (with_point_based_arm) {
            PipelineConfig ablated = config;
            ablated.render.depth_filter = false;
            ablated.render.fill_holes = false;
            arms.emplace_back("point-based", ablated);
        }

        for (const auto& [arm_name, arm_config] : arms) {
            StudyRow row;
            row.level = level;
            row.arm = arm_name;
            row.frames_total = timestamps.size();
            try {
                Trajectory traj;
                if (mode == TrackMode::RenderMatch) {
                    const auto t0 = clock::now();
                    const KeyframeDatabase db = build_database(sub, roi, arm_config);
                    row.preprocess_seconds = std::chrono::duration<double>(clock::now() - t0).count();
                    const auto t1 = clock::now();
                    const SequenceResult result =
                        run_sequence(load_frame, timestamps, K_cam, sub, db, arm_config);
                    const double secs = std::chrono::duration<double>(clock::now() - t1).count();
                    row.frames_localized = result.localized();
                    row.fps = secs > 0 ? double(timestamps.size()) / secs : 0.0;
                    traj = result.trajectory;
                } else {
                    const auto t0 = clock::now();
                    const SlamMap map = build_map(sub, roi, K_cam, arm_config);
                    row.preprocess_seconds = std::chrono::duration<double>(clock::now() - t0).count();
                    const auto t1 = clock::now();
                    std::optional<RigidPose> prior;
                    for (std::size_t i = 0; i < timestamps.size(); ++i) {
                        const auto est =
                            localize_frame(load_frame(i), K_cam, map, prior, arm_config);
                        if (est) {
                            prior = est->pose;
                            traj.poses.push_back({timestamps[i], est->pose});
                            ++row.frames_localized;
                        } else {
                            prior.reset();
                        }
                    }
                    const double secs = std::chrono::duration<double>(clock::now() - t1).count();
                    row.fps = secs > 0 ? double(timestamps.size()) / secs : 0.0;
                }
                const ApeResult ape = ape_rmse(traj, ground_truth, AlignMode::SE3);
                row.pos_rmse = ape.pos_rmse;
                row.ang_rmse_deg = ape.ang_rmse_deg;
                row.ok = true;
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void save_study_csv(const std::vector<StudyRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write study csv: " + path);
    out << "level,arm,ok,pos_rmse_m,ang_rmse_deg,frames_localized,frames_total,fps,"
           "preprocess_seconds,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        out << r.level << ',' << r.arm << ',' << (r.ok ? 1 : 0) << ',' << r.pos_rmse << ','
            << r.ang_rmse_deg << ',' << r.frames_localized << ',' << r.frames_total << ','
            << r.fps << ',' << r.preprocess_seconds << ',' << err << '\n';
    }
}

}  // namespace pcloc
