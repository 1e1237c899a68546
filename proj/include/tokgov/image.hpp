#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tokgov {

// 8-bit RGB raster. Corpus images are stored as binary PPM (P6) files.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;  // row-major, 3 channels

    Image() = default;
    Image(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, 0) {}

    uint8_t& at(int x, int y, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    uint8_t at(int x, int y, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);
std::string encode_ppm(const Image& img);

}  // namespace tokgov
