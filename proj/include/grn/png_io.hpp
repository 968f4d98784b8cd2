#ifndef GRN_PNG_IO_HPP
#define GRN_PNG_IO_HPP

#include "grn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace grn::io {

struct PngError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Single-channel PNG contents at their native depth (8 or 16 bit).
struct GrayPng {
    Image<std::uint16_t> pixels;
    int bit_depth = 8;
};

/// Reads a grayscale PNG; alpha is dropped, depths below 8 are expanded.
/// Colour images are rejected.
GrayPng read_gray_png(const std::filesystem::path& path);

void write_gray8_png(const std::filesystem::path& path, const Image<std::uint8_t>& pixels);
void write_gray16_png(const std::filesystem::path& path, const Image<std::uint16_t>& pixels);

/// Interleaved RGB, 3 * width bytes per row.
struct RgbImage {
    Index height = 0;
    Index width = 0;
    std::vector<std::uint8_t> data;

    RgbImage() = default;
    RgbImage(Index h, Index w, std::uint8_t fill = 0) : height(h), width(w), data(h * w * 3, fill) {}
    std::uint8_t* at(Index r, Index c) { return data.data() + (r * width + c) * 3; }
    const std::uint8_t* at(Index r, Index c) const { return data.data() + (r * width + c) * 3; }
};

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace grn::io

#endif  // GRN_PNG_IO_HPP
