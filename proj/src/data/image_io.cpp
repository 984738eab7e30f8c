#include "faircl/data/image_io.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <csetjmp>
#include <cmath>
#include <fstream>
#include <memory>

#include "faircl/error.hpp"

namespace faircl {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw ValidationError("cannot open image '" + path.string() + "'");
    return f;
}

Image read_png(const std::filesystem::path& path) {
    auto file = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw ValidationError("png: cannot allocate reader");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ValidationError("png: cannot allocate info");
    }
    Image img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError("png: corrupt image '" + path.string() + "'");
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.pixels.resize(img.width * img.height * img.channels);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    if (img.channels != 1 && img.channels != 3) throw ValidationError("png: unsupported channel count");
    return img;
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_fail(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
    auto file = open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    JpegError err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_fail;
    Image img;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw ValidationError("jpeg: corrupt image '" + path.string() + "'");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img.width = cinfo.output_width;
    img.height = cinfo.output_height;
    img.channels = static_cast<std::size_t>(cinfo.output_components);
    img.pixels.resize(img.width * img.height * img.channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.pixels.data() + cinfo.output_scanline * img.width * img.channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open image '" + path.string() + "'");
    unsigned char magic[8] = {};
    in.read(reinterpret_cast<char*>(magic), sizeof magic);
    if (in.gcount() >= 8 && png_sig_cmp(magic, 0, 8) == 0) return read_png(path);
    if (in.gcount() >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return read_jpeg(path);
    throw ValidationError("unrecognised image format '" + path.string() + "'");
}

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ValidationError("png: only 1 or 3 channels supported");
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw ValidationError("png: cannot allocate writer");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ValidationError("png: cannot allocate info");
    }
    std::vector<png_bytep> rows(image.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ValidationError("png: failed writing '" + path.string() + "'");
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y) {
        rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<double> image_to_chw(const Image& image, std::size_t channels, std::size_t height, std::size_t width) {
    if (channels != 1 && channels != 3) throw ValidationError("image: target channels must be 1 or 3");
    // channel conversion into a float HWC plane at source resolution
    const std::size_t sw = image.width, sh = image.height;
    std::vector<double> src(sw * sh * channels);
    for (std::size_t p = 0; p < sw * sh; ++p) {
        const std::uint8_t* px = image.pixels.data() + p * image.channels;
        if (image.channels == channels) {
            for (std::size_t c = 0; c < channels; ++c) src[p * channels + c] = px[c] / 255.0;
        } else if (channels == 1) {
            src[p] = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0;
        } else {
            for (std::size_t c = 0; c < 3; ++c) src[p * 3 + c] = px[0] / 255.0;
        }
    }
    std::vector<double> out(channels * height * width);
    const bool same = sw == width && sh == height;
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                double v;
                if (same) {
                    v = src[(y * sw + x) * channels + c];
                } else {
                    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sh / height - 0.5, 0.0,
                                                 static_cast<double>(sh - 1));
                    const double fx = std::clamp((static_cast<double>(x) + 0.5) * sw / width - 0.5, 0.0,
                                                 static_cast<double>(sw - 1));
                    const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
                    const std::size_t y1 = std::min(y0 + 1, sh - 1), x1 = std::min(x0 + 1, sw - 1);
                    const double ty = fy - y0, tx = fx - x0;
                    auto at = [&](std::size_t yy, std::size_t xx) { return src[(yy * sw + xx) * channels + c]; };
                    v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
                }
                out[(c * height + y) * width + x] = v;
            }
        }
    }
    return out;
}

}  // namespace faircl
