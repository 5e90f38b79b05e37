#include "histoscore/scoring.hpp"

#include <array>

#include "histoscore/segmentation.hpp"

namespace histoscore::scoring {

void IntensityThresholds::validate() const {
    if (!(b1 < b2 && b2 < b3 && b3 <= 255.0))
        throw std::invalid_argument("thresholds must satisfy b1 < b2 < b3 <= 255");
}

Band classify_band(double raw, const IntensityThresholds& t) {
    if (raw > 255.0) return Band::Unstained;
    if (raw < t.b1) return Band::Strong;
    if (raw < t.b2) return Band::Moderate;
    if (raw <= t.b3) return Band::Weak;
    return Band::Unstained;  // unreachable when b3 == 255
}

namespace {

std::pair<HScore, IntensityFractions> from_counts(const std::array<double, 4>& counts) {
    double total = counts[0] + counts[1] + counts[2] + counts[3];
    // exact ratios for three bands; the most populated band absorbs the
    // floating-point remainder so the sum is exactly 100
    int biggest = 0;
    for (int b = 1; b < 4; ++b)
        if (counts[b] > counts[biggest]) biggest = b;
    std::array<double, 4> pct{};
    double rest = 0;
    for (int b = 0; b < 4; ++b) {
        if (b == biggest) continue;
        pct[b] = 100.0 * counts[b] / total;
        rest += pct[b];
    }
    pct[biggest] = 100.0 - rest;
    IntensityFractions f;
    f.unstained = pct[0];
    f.wsn = pct[1];
    f.msn = pct[2];
    f.ssn = pct[3];
    return {h_score(f), f};
}

}  // namespace

std::pair<HScore, IntensityFractions> nap_score(const IntensityImage& intensity,
                                                const MaskImage& tissue_mask,
                                                const IntensityThresholds& thresholds) {
    thresholds.validate();
    require_same_size(tissue_mask, intensity.width, intensity.height, "nap_score");
    std::array<double, 4> counts{};
    for (size_t i = 0; i < intensity.data.size(); ++i) {
        if (!tissue_mask.data[i]) continue;
        double raw = intensity.data[i] * 510.0;
        counts[static_cast<int>(classify_band(raw, thresholds))] += 1.0;
    }
    if (counts[0] + counts[1] + counts[2] + counts[3] == 0)
        throw std::invalid_argument("nap_score: empty tissue mask");
    return from_counts(counts);
}

std::pair<HScore, IntensityFractions> nnp_score(const InstanceLabelMap& labels,
                                                const IntensityImage& intensity,
                                                const IntensityThresholds& thresholds) {
    thresholds.validate();
    auto means = seg::instance_mean_intensity(labels, intensity);
    if (means.empty()) throw std::invalid_argument("nnp_score: no instances");
    std::array<double, 4> counts{};
    for (double m : means) counts[static_cast<int>(classify_band(m * 510.0, thresholds))] += 1.0;
    return from_counts(counts);
}

}  // namespace histoscore::scoring
