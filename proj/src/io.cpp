#include "pcloc/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace pcloc {

void save_png(const ImageRgb& image, const std::string& path) {
    cv::Mat bgr(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const auto c = image.get(x, y);
            bgr.at<cv::Vec3b>(y, x) = {c[2], c[1], c[0]};
        }
    if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

ImageRgb load_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("cannot read image: " + path);
    ImageRgb img(bgr.cols, bgr.rows);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto& c = bgr.at<cv::Vec3b>(y, x);
            img.set(x, y, {c[2], c[1], c[0]});
        }
    return img;
}

void save_depth_png(const std::vector<float>& depth_m, int width, int height,
                    const std::string& path) {
    if (depth_m.size() != std::size_t(width) * height)
        throw std::runtime_error("save_depth_png: size mismatch");
    cv::Mat mm(height, width, CV_16UC1);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const float d = depth_m[std::size_t(y) * width + x];
            std::uint16_t v = 0;
            if (std::isfinite(d) && d > 0)
                v = std::uint16_t(std::clamp(std::lround(d * 1000.f), 1l, 65535l));
            mm.at<std::uint16_t>(y, x) = v;
        }
    if (!cv::imwrite(path, mm)) throw std::runtime_error("cannot write depth image: " + path);
}

std::vector<float> load_depth_png(const std::string& path, int& width, int& height) {
    cv::Mat mm = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (mm.empty() || mm.type() != CV_16UC1)
        throw std::runtime_error("cannot read 16-bit depth image: " + path);
    width = mm.cols;
    height = mm.rows;
    std::vector<float> depth(std::size_t(width) * height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::uint16_t v = mm.at<std::uint16_t>(y, x);
            depth[std::size_t(y) * width + x] =
                v ? float(v) / 1000.f : std::numeric_limits<float>::infinity();
        }
    return depth;
}

FrameSequence load_frame_index(const std::string& index_path) {
    std::ifstream in(index_path);
    if (!in) throw std::runtime_error("cannot open frame index: " + index_path);
    const auto dir = std::filesystem::path(index_path).parent_path();
    FrameSequence seq;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double ts;
        std::string name;
        if (!(ss >> ts >> name)) throw std::runtime_error("malformed frame index line: " + line);
        seq.timestamps.push_back(ts);
        seq.paths.push_back((dir / name).string());
    }
    return seq;
}

void save_frame_index(const FrameSequence& seq, const std::string& index_path) {
    std::ofstream out(index_path);
    if (!out) throw std::runtime_error("cannot open frame index for writing: " + index_path);
    out.precision(9);
    out << "# timestamp filename\n";
    for (std::size_t i = 0; i < seq.size(); ++i)
        out << std::fixed << seq.timestamps[i] << " "
            << std::filesystem::path(seq.paths[i]).filename().string() << "\n";
}

}  // namespace pcloc
