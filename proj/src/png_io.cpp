#include "grn/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

namespace grn::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw PngError("cannot open " + path.string());
    return f;
}

void silent_warning(png_structp, png_const_charp) {}

struct RawRead {
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<png_byte> bytes;
    std::vector<png_bytep> rows;
    std::size_t rowbytes = 0;
};

// Plain C-style body: no objects with non-trivial destructors live across
// the setjmp boundary.
bool read_raw(std::FILE* fp, RawRead& out, char* err, std::size_t err_len) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
    if (!png) {
        std::snprintf(err, err_len, "png_create_read_struct failed");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        std::snprintf(err, err_len, "png_create_info_struct failed");
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::snprintf(err, err_len, "corrupt or unsupported PNG");
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    out.width = png_get_image_width(png, info);
    out.height = png_get_image_height(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    out.color_type = png_get_color_type(png, info);
    if (out.color_type != PNG_COLOR_TYPE_GRAY && out.color_type != PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::snprintf(err, err_len, "not a single-channel PNG (color type %d)", out.color_type);
        return false;
    }
    if (out.bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        out.bit_depth = 8;
    }
    if (out.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.rowbytes = png_get_rowbytes(png, info);
    out.bytes.resize(out.rowbytes * out.height);
    out.rows.resize(out.height);
    for (png_uint_32 r = 0; r < out.height; ++r) out.rows[r] = out.bytes.data() + r * out.rowbytes;
    png_read_image(png, out.rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

bool write_raw(std::FILE* fp, png_uint_32 width, png_uint_32 height, int bit_depth, int color_type,
               const png_byte* data, std::size_t rowbytes, char* err, std::size_t err_len) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
    if (!png) {
        std::snprintf(err, err_len, "png_create_write_struct failed");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        std::snprintf(err, err_len, "png_create_info_struct failed");
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::snprintf(err, err_len, "PNG encoding failed");
        return false;
    }
    png_init_io(png, fp);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 r = 0; r < height; ++r) png_write_row(png, data + r * rowbytes);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

void write_bytes(const std::filesystem::path& path, Index height, Index width, int bit_depth, int color_type,
                 const std::vector<png_byte>& bytes, std::size_t rowbytes) {
    if (height <= 0 || width <= 0) throw PngError("refusing to write empty image " + path.string());
    FilePtr f = open_file(path, "wb");
    char err[256] = {0};
    if (!write_raw(f.get(), static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                   color_type, bytes.data(), rowbytes, err, sizeof(err)))
        throw PngError(path.string() + ": " + err);
    if (std::fflush(f.get()) != 0) throw PngError("write failed: " + path.string());
}

}  // namespace

GrayPng read_gray_png(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    RawRead raw;
    char err[256] = {0};
    if (!read_raw(f.get(), raw, err, sizeof(err))) throw PngError(path.string() + ": " + err);
    GrayPng out;
    out.bit_depth = raw.bit_depth;
    out.pixels.resize(raw.height, raw.width);
    for (png_uint_32 r = 0; r < raw.height; ++r) {
        const png_byte* row = raw.bytes.data() + r * raw.rowbytes;
        for (png_uint_32 c = 0; c < raw.width; ++c)
            out.pixels(r, c) = raw.bit_depth == 16 ? static_cast<std::uint16_t>((row[2 * c] << 8) | row[2 * c + 1])
                                                   : row[c];
    }
    return out;
}

void write_gray8_png(const std::filesystem::path& path, const Image<std::uint8_t>& pixels) {
    std::vector<png_byte> bytes(pixels.data(), pixels.data() + pixels.size());
    write_bytes(path, pixels.rows(), pixels.cols(), 8, PNG_COLOR_TYPE_GRAY, bytes, pixels.cols());
}

void write_gray16_png(const std::filesystem::path& path, const Image<std::uint16_t>& pixels) {
    std::vector<png_byte> bytes(pixels.size() * 2);
    for (Index i = 0; i < pixels.size(); ++i) {
        bytes[2 * i] = static_cast<png_byte>(pixels.data()[i] >> 8);
        bytes[2 * i + 1] = static_cast<png_byte>(pixels.data()[i] & 0xFF);
    }
    write_bytes(path, pixels.rows(), pixels.cols(), 16, PNG_COLOR_TYPE_GRAY, bytes, pixels.cols() * 2);
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
    if (static_cast<Index>(image.data.size()) != image.height * image.width * 3)
        throw PngError("RGB buffer size does not match dimensions");
    std::vector<png_byte> bytes(image.data.begin(), image.data.end());
    write_bytes(path, image.height, image.width, 8, PNG_COLOR_TYPE_RGB, bytes, image.width * 3);
}

}  // namespace grn::io
