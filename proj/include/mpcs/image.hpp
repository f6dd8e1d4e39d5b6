#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mpcs {

// 8-bit RGB image, row-major, interleaved channels. The on-disk unit.
struct ImageU8 {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> px;  // h*w*3, RGB

    ImageU8() = default;
    ImageU8(int height, int width) : h(height), w(width), px(static_cast<size_t>(height) * width * 3, 0) {}

    uint8_t& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    bool empty() const { return px.empty(); }
};

// Double-valued RGB image in [0, 1]; the unit transforms and the model
// consume. Values start as exact multiples of 1/255.
struct ImageF {
    int h = 0;
    int w = 0;
    std::vector<double> px;  // h*w*3, RGB

    ImageF() = default;
    ImageF(int height, int width) : h(height), w(width), px(static_cast<size_t>(height) * width * 3, 0.0) {}

    double& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    bool empty() const { return px.empty(); }
};

ImageF to_float(const ImageU8& img);
ImageU8 to_u8(const ImageF& img);  // clamps to [0,1] then rounds

void save_png(const std::filesystem::path& path, const ImageU8& img);
ImageU8 load_png(const std::filesystem::path& path);  // throws DataError on failure

// Single-channel 8-bit mask helpers (stored as grayscale PNG).
struct MaskU8 {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> px;
    MaskU8() = default;
    MaskU8(int height, int width) : h(height), w(width), px(static_cast<size_t>(height) * width, 0) {}
    uint8_t& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
};

void save_png_gray(const std::filesystem::path& path, const MaskU8& mask);
MaskU8 load_png_gray(const std::filesystem::path& path);

}  // namespace mpcs
