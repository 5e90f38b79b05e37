#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace histoscore {

// Generic planar-free image container: C interleaved channels per pixel.
// Images are strict value containers; all pixel math lives in free functions.
template <typename T, int C>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;  // row-major, C values per pixel

    Image() = default;
    Image(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * C) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("image dimensions must be positive");
    }
    Image(int w, int h, std::vector<T> buf) : width(w), height(h), data(std::move(buf)) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("image dimensions must be positive");
        if (data.size() != static_cast<size_t>(w) * h * C)
            throw std::invalid_argument("image buffer length does not match dimensions");
    }

    size_t pixels() const { return static_cast<size_t>(width) * height; }
    T* at(int x, int y) { return data.data() + (static_cast<size_t>(y) * width + x) * C; }
    const T* at(int x, int y) const { return data.data() + (static_cast<size_t>(y) * width + x) * C; }

    bool same_size(int w, int h) const { return width == w && height == h; }
};

using RgbImage = Image<uint8_t, 3>;        // 8-bit R,G,B
using LuminanceImage = Image<float, 1>;    // Rec. 601 luminance, real in [0,255]
using OdImage = Image<float, 3>;           // optical densities, >= 0
using IntensityImage = Image<float, 1>;    // normalized stain intensity in [0,1]
using MaskImage = Image<uint8_t, 1>;       // binary {0,1}
using InstanceLabelMap = Image<int32_t, 1>;// 0 = background, k>0 = instance id

enum class StainClass : uint8_t { Negative = 0, Positive = 1 };
using StainClassMap = Image<uint8_t, 1>;   // values are StainClass

// Per-pixel (dab, hem, residual) concentrations. Negative values are
// deconvolution residue; callers can inspect negative_fraction.
struct StainChannels {
    Image<float, 3> img;
    double negative_fraction = 0.0;  // fraction of concentration entries < 0
};

template <typename T, int C>
void require_same_size(const Image<T, C>& a, int w, int h, const char* what) {
    if (!a.same_size(w, h)) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

// Percentages of tumour nuclei per stain band, summing to 100.
struct IntensityFractions {
    double wsn = 0.0;       // weakly stained
    double msn = 0.0;       // moderately stained
    double ssn = 0.0;       // strongly stained
    double unstained = 0.0;

    void validate() const;
};

struct HScore {
    double value = 0.0;  // in [0, 300]; kept real, rounded only at report time
};

// H = 1*WSN + 2*MSN + 3*SSN
HScore h_score(const IntensityFractions& fractions);

}  // namespace histoscore
