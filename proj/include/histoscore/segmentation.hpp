#pragma once

#include <string>
#include <vector>

#include "histoscore/image.hpp"

namespace histoscore::seg {

struct WatershedParams {
    int opening_radius = 1;        // pixels
    int min_area = 16;             // pixels^2
    double h_depth = 0.05;         // h-minima depth, normalized intensity units
    double fg_threshold = 0.95;    // foreground iff 0 < I_la < fg_threshold
};

// Foreground = pixels with normalized intensity strictly in (0, fg_threshold),
// opened with a disc of the given radius, small components removed.
MaskImage threshold_foreground(const IntensityImage& intensity, const WatershedParams& params);

// Splits connected foreground regions at h-minima-derived seeds of the
// surface (intensity - normalized distance transform). Labels are contiguous
// from 1 in deterministic scan order.
InstanceLabelMap seeded_watershed(const MaskImage& mask, const IntensityImage& intensity,
                                  const WatershedParams& params);

int instance_count(const InstanceLabelMap& labels);

// Ingests an externally computed binary mask (single-channel {0,255} PNG).
MaskImage load_mask(const std::string& path);

// Entry k-1 = mean normalized intensity over pixels of instance k.
std::vector<double> instance_mean_intensity(const InstanceLabelMap& labels,
                                            const IntensityImage& intensity);

// Chamfer (3-4) distance transform of the mask interior, in pixel units.
std::vector<float> distance_transform(const MaskImage& mask);

}  // namespace histoscore::seg
