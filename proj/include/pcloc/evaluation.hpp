#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pcloc/config.hpp"
#include "pcloc/geometry.hpp"
#include "pcloc/image.hpp"
#include "pcloc/point_cloud.hpp"
#include "pcloc/relocalizer.hpp"

namespace pcloc {

enum class AlignMode { SE3, Sim3 };

struct ApeResult {
    double pos_rmse = 0.0;      // meters
    double ang_rmse_deg = 0.0;  // degrees
    std::size_t n_matched = 0;  // timestamp-associated pose pairs
    std::size_t n_estimated = 0;
};

// Absolute pose error after global Umeyama alignment of the estimated
// trajectory onto ground truth. Poses are associated by nearest timestamp
// within half the ground-truth frame period; throws below 3 matched pairs.
ApeResult ape_rmse(const Trajectory& estimated, const Trajectory& ground_truth, AlignMode mode);

// Mean local SSIM on grayscale, 11x11 Gaussian window (sigma 1.5), standard
// constants. Throws on dimension mismatch or images smaller than the window.
double ssim(const ImageRgb& a, const ImageRgb& b);
double ssim(const ImageGray& a, const ImageGray& b);

// Alpha blend of a synthetic render over a camera frame; pixels flagged
// invalid in `valid` (if given) show the camera frame only.
ImageRgb overlay(const ImageRgb& camera_frame, const ImageRgb& render, double alpha,
                 const std::vector<std::uint8_t>* valid = nullptr);

enum class TrackMode { RenderMatch, Prebuilt };

struct StudyRow {
    double level = 1.0;          // cloud fraction kept
    std::string arm;             // "full" or "point-based"
    bool ok = false;
    std::string error;
    double pos_rmse = 0.0;
    double ang_rmse_deg = 0.0;
    std::size_t frames_localized = 0;
    std::size_t frames_total = 0;
    double fps = 0.0;
    double preprocess_seconds = 0.0;
};

// Runs the chosen pipeline end-to-end per decimation level (and per arm when
// with_point_based_arm is set: the ablation disables the depth filter and
// hole filling). Per-level failures become error rows; the study continues.
std::vector<StudyRow> decimation_study(const PointCloud& cloud,
                                       const std::function<ImageRgb(std::size_t)>& load_frame,
                                       const std::vector<double>& timestamps,
                                       const Intrinsics& K_cam, const Trajectory& ground_truth,
                                       const RegionOfInterest& roi,
                                       const std::vector<double>& levels, TrackMode mode,
                                       bool with_point_based_arm, const PipelineConfig& config);

void save_study_csv(const std::vector<StudyRow>& rows, const std::string& path);

}  // namespace pcloc
