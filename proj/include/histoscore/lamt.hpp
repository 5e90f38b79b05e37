#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "histoscore/image.hpp"

namespace histoscore::lamt {

// One luminance bin's MAP classifier: a two-component 1-D Gaussian mixture
// over DAB concentrations, with the decision threshold between the means.
struct BinGaussian {
    double mean = 0.0;
    double variance = 1.0;
    double prior = 0.5;
};

struct BinThreshold {
    BinGaussian negative;   // lower-mean component
    BinGaussian positive;   // higher-mean component (DAB)
    double threshold = 0.0; // equal-posterior crossing
    bool fitted = false;    // false when the fallback was used
};

struct LamtParams {
    int k_bins = 4;
    uint64_t seed = 1;
    int em_max_iters = 50;
    double em_tol = 1e-6;
    int min_bin_pixels = 32;
    // Near-white pixels carry no stain evidence and are excluded from
    // fitting (not from classification).
    double luminance_fit_cutoff = 250.0;
};

struct BinClassifier {
    int k_bins = 0;
    std::vector<BinThreshold> bins;
};

// Equal-width luminance bins over [0,256): bin = floor(v*K/256), clamped.
std::vector<int> partition_luminance(const LuminanceImage& lum, int k_bins);
int luminance_bin(double v, int k_bins);

// EM fit of a 2-component mixture; returns nullopt for sparse/degenerate
// bins (caller applies the fallback).
std::optional<BinThreshold> fit_bin_classifier(const std::vector<double>& dab_values,
                                               const LamtParams& params);

BinClassifier fit_classifier(const std::vector<float>& dab, const LuminanceImage& lum,
                             const LamtParams& params);

// Per-pixel positive/negative stain labels. dab holds the DAB concentration
// channel. Ties at the threshold classify Negative.
StainClassMap classify_stain(const std::vector<float>& dab, const LuminanceImage& lum,
                             const LamtParams& params);
StainClassMap classify_with(const BinClassifier& cls, const std::vector<float>& dab,
                            const LuminanceImage& lum);

// Stain intensity description: raw = I_l for positive pixels,
// 255 + (255 - I_l) for negative; returned normalized by 510 into [0,1].
IntensityImage intensity_description(const LuminanceImage& lum, const StainClassMap& cls);

// SINI/SITI construction: pixel-wise product with a binary mask.
IntensityImage build_region_image(const IntensityImage& intensity, const MaskImage& mask);

// Global Otsu threshold (last-resort fallback for bins with no neighbours).
double otsu_threshold(const std::vector<double>& values);

}  // namespace histoscore::lamt
