#pragma once

#include <string>
#include <vector>

#include "pcloc/image.hpp"

namespace pcloc {

// PNG/JPEG image files (8-bit RGB).
void save_png(const ImageRgb& image, const std::string& path);
ImageRgb load_image(const std::string& path);

// Depth maps as 16-bit PNG in millimeters; 0 marks invalid pixels.
void save_depth_png(const std::vector<float>& depth_m, int width, int height,
                    const std::string& path);
std::vector<float> load_depth_png(const std::string& path, int& width, int& height);

// Frame index file: one "timestamp filename" line per frame; '#' comments.
// Filenames are resolved relative to the index file's directory.
struct FrameSequence {
    std::vector<double> timestamps;
    std::vector<std::string> paths;

    std::size_t size() const { return timestamps.size(); }
};

FrameSequence load_frame_index(const std::string& index_path);
void save_frame_index(const FrameSequence& seq, const std::string& index_path);

}  // namespace pcloc
