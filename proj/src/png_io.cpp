#include "histoscore/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace histoscore::io {

namespace {

struct FileCloser {
    void operator()(FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngRead {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngRead() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWrite {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWrite() { png_destroy_write_struct(&png, &info); }
};

// Reads any PNG into 8- or 16-bit samples with the requested channel layout.
std::vector<uint16_t> read_png(const std::string& path, int want_channels, int want_depth,
                               int& width, int& height) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("cannot open PNG: " + path);

    PngRead r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (!r.png || !r.info) throw std::runtime_error("libpng init failed");
    if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("PNG read error: " + path);

    png_init_io(r.png, f.get());
    png_read_info(r.png, r.info);

    width = png_get_image_width(r.png, r.info);
    height = png_get_image_height(r.png, r.info);
    int depth = png_get_bit_depth(r.png, r.info);
    int color = png_get_color_type(r.png, r.info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    png_set_strip_alpha(r.png);
    if (want_channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA))
        png_set_gray_to_rgb(r.png);
    if (want_channels == 1 && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA))
        throw std::runtime_error("expected single-channel PNG: " + path);
    if (want_depth == 8 && depth == 16) png_set_strip_16(r.png);
    if (want_depth == 16 && depth < 16) png_set_expand_16(r.png);
    png_read_update_info(r.png, r.info);

    size_t rowbytes = png_get_rowbytes(r.png, r.info);
    std::vector<uint8_t> raw(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = raw.data() + rowbytes * y;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);

    std::vector<uint16_t> out(static_cast<size_t>(width) * height * want_channels);
    if (want_depth == 8) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = raw[i];
    } else {
        for (size_t i = 0; i < out.size(); ++i)  // PNG 16-bit samples are big-endian
            out[i] = static_cast<uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
    return out;
}

void write_png(const std::string& path, const uint16_t* samples, int width, int height,
               int channels, int depth) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("cannot create PNG: " + path);

    PngWrite w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    w.info = png_create_info_struct(w.png);
    if (!w.png || !w.info) throw std::runtime_error("libpng init failed");
    if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("PNG write error: " + path);

    png_init_io(w.png, f.get());
    int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(w.png, w.info, width, height, depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);

    size_t n = static_cast<size_t>(width) * channels;
    if (depth == 8) {
        std::vector<uint8_t> row(n);
        for (int y = 0; y < height; ++y) {
            const uint16_t* src = samples + static_cast<size_t>(y) * n;
            for (size_t i = 0; i < n; ++i) row[i] = static_cast<uint8_t>(src[i]);
            png_write_row(w.png, row.data());
        }
    } else {
        std::vector<uint8_t> row(n * 2);
        for (int y = 0; y < height; ++y) {
            const uint16_t* src = samples + static_cast<size_t>(y) * n;
            for (size_t i = 0; i < n; ++i) {
                row[2 * i] = static_cast<uint8_t>(src[i] >> 8);
                row[2 * i + 1] = static_cast<uint8_t>(src[i] & 0xff);
            }
            png_write_row(w.png, row.data());
        }
    }
    png_write_end(w.png, nullptr);
}

}  // namespace

RgbImage read_rgb_png(const std::string& path) {
    int w, h;
    auto s = read_png(path, 3, 8, w, h);
    RgbImage img(w, h);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<uint8_t>(s[i]);
    return img;
}

void write_rgb_png(const std::string& path, const RgbImage& img) {
    std::vector<uint16_t> s(img.data.begin(), img.data.end());
    write_png(path, s.data(), img.width, img.height, 3, 8);
}

MaskImage read_mask_png(const std::string& path) {
    int w, h;
    auto s = read_png(path, 1, 8, w, h);
    MaskImage mask(w, h);
    for (size_t i = 0; i < mask.data.size(); ++i) {
        if (s[i] != 0 && s[i] != 255)
            throw std::runtime_error("mask PNG contains value other than 0/255: " + path);
        mask.data[i] = s[i] == 255 ? 1 : 0;
    }
    return mask;
}

void write_mask_png(const std::string& path, const MaskImage& mask) {
    std::vector<uint16_t> s(mask.data.size());
    for (size_t i = 0; i < s.size(); ++i) s[i] = mask.data[i] ? 255 : 0;
    write_png(path, s.data(), mask.width, mask.height, 1, 8);
}

IntensityImage read_intensity_png(const std::string& path) {
    int w, h;
    auto s = read_png(path, 1, 16, w, h);
    IntensityImage img(w, h);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(s[i] / 65535.0);
    return img;
}

void write_intensity_png(const std::string& path, const IntensityImage& img) {
    std::vector<uint16_t> s(img.data.size());
    for (size_t i = 0; i < s.size(); ++i) {
        double v = std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0);
        s[i] = static_cast<uint16_t>(std::lround(v * 65535.0));
    }
    write_png(path, s.data(), img.width, img.height, 1, 16);
}

InstanceLabelMap read_labels_png(const std::string& path) {
    int w, h;
    auto s = read_png(path, 1, 16, w, h);
    InstanceLabelMap labels(w, h);
    for (size_t i = 0; i < labels.data.size(); ++i) labels.data[i] = s[i];
    return labels;
}

void write_labels_png(const std::string& path, const InstanceLabelMap& labels) {
    std::vector<uint16_t> s(labels.data.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (labels.data[i] < 0 || labels.data[i] > 65535)
            throw std::runtime_error("instance id out of 16-bit range");
        s[i] = static_cast<uint16_t>(labels.data[i]);
    }
    write_png(path, s.data(), labels.width, labels.height, 1, 16);
}

}  // namespace histoscore::io
