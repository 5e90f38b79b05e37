#pragma once

#include <utility>
#include <vector>

#include "histoscore/image.hpp"

namespace histoscore::scoring {

// Band boundaries on the raw I_la scale [0, 510]. Positive pixels have
// raw <= 255; within those, strong: raw < b1, moderate: [b1, b2),
// weak: [b2, b3]. Everything else is unstained.
struct IntensityThresholds {
    double b1 = 85.0;
    double b2 = 170.0;
    double b3 = 255.0;

    void validate() const;
};

enum class Band { Unstained = 0, Weak = 1, Moderate = 2, Strong = 3 };

Band classify_band(double raw_ila, const IntensityThresholds& t);

// NAP: pixel-area percentages per band among tissue-mask pixels.
std::pair<HScore, IntensityFractions> nap_score(const IntensityImage& intensity,
                                                const MaskImage& tissue_mask,
                                                const IntensityThresholds& thresholds);

// NNP: nucleus-count percentages, each nucleus banded by its mean raw I_la.
std::pair<HScore, IntensityFractions> nnp_score(const InstanceLabelMap& labels,
                                                const IntensityImage& intensity,
                                                const IntensityThresholds& thresholds);

}  // namespace histoscore::scoring
