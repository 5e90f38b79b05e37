#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "histoscore/image.hpp"
#include "histoscore/stain.hpp"

namespace histoscore::synth {

// Per-band target stain appearance, parameterized on the raw I_la scale so
// scoring thresholds can be matched to generation exactly.
struct BandTargets {
    double strong_lum = 50.0;     // positive: raw I_la == luminance
    double moderate_lum = 127.0;
    double weak_lum = 210.0;
    // Hematoxylin-only nuclei (negative stain). Placed near the weak band's
    // luminance so one luminance bin always carries both stain populations,
    // which is what the adaptive thresholding needs to calibrate itself.
    double unstained_lum = 200.0;
};

struct SynthSceneSpec {
    int size = 64;
    int nucleus_count = 20;
    double radius_min = 3.0;
    double radius_max = 6.0;
    double tumour_fraction = 0.7;             // fraction of nuclei that are tumour
    std::array<double, 4> band_proportions =  // unstained/weak/moderate/strong, sums to 1
        {0.25, 0.25, 0.25, 0.25};
    double overlap_prob = 0.0;                // chance a nucleus may overlap others
    double background_od = 0.02;              // faint hematoxylin tissue tint
    double noise_std = 1.0;                   // additive RGB noise
    BandTargets bands;
    uint64_t seed = 1;

    void validate() const;
};

struct Scene {
    RgbImage rgb;
    MaskImage nuclei;          // all nuclei
    MaskImage tumour;          // tumour nuclei only
    IntensityFractions fractions;  // from the drawn band assignment
    HScore score;
    int tumour_count = 0;
    int non_tumour_count = 0;
};

// Inverts the band's target luminance to a stain concentration under the
// Beer-Lambert forward model (bisection; luminance is monotone in c).
double concentration_for_luminance(const std::array<double, 3>& stain_vec, double target_lum);

Scene generate_scene(const SynthSceneSpec& spec);

struct ManifestRow {
    std::string path_rgb, path_nuclei_mask, path_tumour_mask;
    IntensityFractions fractions;
    double hscore = 0.0;
};

struct DatasetOptions {
    int count = 10;
    SynthSceneSpec scene;     // per-scene template; seed derives per index
    bool imbalanced = false;  // unimodal score histogram instead of uniform
    uint64_t seed = 1;
    std::string out_dir;
};

std::vector<ManifestRow> generate_dataset(const DatasetOptions& opts);

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::string& path);

}  // namespace histoscore::synth
