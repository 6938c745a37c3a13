#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cropadapt {

// 8-bit RGB raster, row-major, interleaved. Intensities in [0,1] are stored
// quantized to k/255 so lossless files reproduce them exactly.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const Image&) const = default;
};

std::uint8_t quantize_unit(double value);

// Planar float copy (3 x H x W) with values k/255.
std::vector<float> to_planar(const Image& img);
void to_planar(const Image& img, std::span<float> out);

Image flip_horizontal(const Image& img);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

struct ImageSize {
    int width = 0;
    int height = 0;
};

// Reads only the header.
ImageSize png_size(const std::filesystem::path& path);

}  // namespace cropadapt
