#pragma once

#include <array>

#include "histoscore/image.hpp"

namespace histoscore {

// Rows are stain OD vectors: DAB, Hematoxylin, residual. The published
// DAB-H matrix has an all-zero third row; complete_stain_matrix fills it
// with the unit cross product of the first two rows.
struct StainMatrix {
    std::array<std::array<double, 3>, 3> rows;

    static StainMatrix dab_h();  // (0.268,0.570,0.776), (0.650,0.704,0.286), (0,0,0)

    double condition_number() const;  // of the completed matrix, 2-norm estimate
};

StainMatrix complete_stain_matrix(const StainMatrix& m);

// Beer-Lambert: od = -ln(clamp(I,1,i0)/i0), natural log. Intensities of 0
// are clamped to 1 before the log.
OdImage to_optical_density(const RgbImage& img, const std::array<double, 3>& i0 = {255, 255, 255});

// Solves (rows of m as stain vectors) * c = od per pixel.
StainChannels colour_deconvolve(const OdImage& od, const StainMatrix& m);

// Rec. 601: 0.299 R + 0.587 G + 0.114 B, kept real.
LuminanceImage luminance(const RgbImage& img);

// Solves the 3x3 system a * x = b where a's rows are stain vectors
// (shared with the synth forward model and tests).
std::array<double, 3> solve3(const std::array<std::array<double, 3>, 3>& a,
                             const std::array<double, 3>& b);

}  // namespace histoscore
