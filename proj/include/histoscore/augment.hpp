#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "histoscore/image.hpp"

namespace histoscore::aug {

struct DlaConfig {
    double sigma = 0.9;        // label std-dev
    int samples_per_image = 1; // S
    int label_max = 300;       // label space is 0..label_max
};

// Gaussian mass integrated over each unit label cell, truncated to the
// label space and renormalized; sums to 1 exactly.
std::vector<double> discretized_label_pmf(double mean, const DlaConfig& cfg);

// S i.i.d. integer labels drawn from the discretized Gaussian around l_d.
std::vector<int> augment_labels(int l_d, const DlaConfig& cfg, std::mt19937_64& rng);

struct GeometricDraw {
    double angle_rad = 0.0;
    int shift_x = 0;
    int shift_y = 0;
};

// Uniform rotation in [0, 2pi) then integer shift within +-5% per axis.
GeometricDraw draw_transform(int width, int height, double max_shift_frac, std::mt19937_64& rng);

// Bilinear for intensity content, nearest for masks; out-of-canvas fills 0.
IntensityImage apply_transform(const IntensityImage& img, const GeometricDraw& t);
MaskImage apply_transform(const MaskImage& mask, const GeometricDraw& t);
RgbImage apply_transform(const RgbImage& img, const GeometricDraw& t);

}  // namespace histoscore::aug
