#pragma once

#include <string>

#include "histoscore/image.hpp"

namespace histoscore::io {

// 8-bit RGB PNG.
RgbImage read_rgb_png(const std::string& path);
void write_rgb_png(const std::string& path, const RgbImage& img);

// Masks: single-channel 8-bit PNG holding only {0,255}. 255 -> 1.
MaskImage read_mask_png(const std::string& path);
void write_mask_png(const std::string& path, const MaskImage& mask);

// IntensityImage: 16-bit single-channel PNG, value = round(65535 * v).
IntensityImage read_intensity_png(const std::string& path);
void write_intensity_png(const std::string& path, const IntensityImage& img);

// InstanceLabelMap: 16-bit single-channel PNG of ids.
InstanceLabelMap read_labels_png(const std::string& path);
void write_labels_png(const std::string& path, const InstanceLabelMap& labels);

}  // namespace histoscore::io
