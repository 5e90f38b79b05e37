#include "histoscore/augment.hpp"

#include <algorithm>
#include <cmath>

namespace histoscore::aug {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Snap near-exact multiples of 90 degrees so those rotations are lossless.
void snap(double& v) {
    for (double target : {-1.0, 0.0, 1.0})
        if (std::abs(v - target) < 1e-12) v = target;
}

struct InverseMap {
    double cos_a, sin_a, cx, cy;
    int shift_x, shift_y;
    // output pixel -> source coordinates (rotate then shift, inverted)
    void source(int x, int y, double& sx, double& sy) const {
        double dx = x - shift_x - cx;
        double dy = y - shift_y - cy;
        sx = cx + cos_a * dx + sin_a * dy;   // rotation by -angle
        sy = cy - sin_a * dx + cos_a * dy;
    }
};

InverseMap make_map(const GeometricDraw& t, int w, int h) {
    double c = std::cos(t.angle_rad), s = std::sin(t.angle_rad);
    snap(c);
    snap(s);
    return {c, s, (w - 1) / 2.0, (h - 1) / 2.0, t.shift_x, t.shift_y};
}

}  // namespace

std::vector<double> discretized_label_pmf(double mean, const DlaConfig& cfg) {
    if (cfg.sigma <= 0) throw std::invalid_argument("sigma must be positive");
    std::vector<double> pmf(cfg.label_max + 1);
    double total = 0;
    for (int c = 0; c <= cfg.label_max; ++c) {
        double lo = (c - 0.5 - mean) / cfg.sigma;
        double hi = (c + 0.5 - mean) / cfg.sigma;
        pmf[c] = normal_cdf(hi) - normal_cdf(lo);
        total += pmf[c];
    }
    if (total <= 0) {  // mean far outside the label space; degenerate clamp
        std::fill(pmf.begin(), pmf.end(), 0.0);
        pmf[std::clamp(static_cast<int>(std::lround(mean)), 0, cfg.label_max)] = 1.0;
        return pmf;
    }
    for (double& p : pmf) p /= total;
    return pmf;
}

std::vector<int> augment_labels(int l_d, const DlaConfig& cfg, std::mt19937_64& rng) {
    if (l_d < 0 || l_d > cfg.label_max) throw std::invalid_argument("label outside label space");
    if (cfg.samples_per_image < 1) throw std::invalid_argument("need at least one sample");
    auto pmf = discretized_label_pmf(l_d, cfg);
    std::vector<double> cdf(pmf.size());
    double acc = 0;
    for (size_t i = 0; i < pmf.size(); ++i) {
        acc += pmf[i];
        cdf[i] = acc;
    }
    cdf.back() = 1.0;

    std::vector<int> out(cfg.samples_per_image);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int& v : out) {
        double u = unif(rng);
        v = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    }
    return out;
}

GeometricDraw draw_transform(int width, int height, double max_shift_frac, std::mt19937_64& rng) {
    GeometricDraw t;
    t.angle_rad = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
    int mx = static_cast<int>(std::floor(width * max_shift_frac));
    int my = static_cast<int>(std::floor(height * max_shift_frac));
    t.shift_x = std::uniform_int_distribution<int>(-mx, mx)(rng);
    t.shift_y = std::uniform_int_distribution<int>(-my, my)(rng);
    return t;
}

IntensityImage apply_transform(const IntensityImage& img, const GeometricDraw& t) {
    InverseMap m = make_map(t, img.width, img.height);
    IntensityImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double sx, sy;
            m.source(x, y, sx, sy);
            int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            double fx = sx - x0, fy = sy - y0;
            double acc = 0;
            for (int dy = 0; dy <= 1; ++dy)
                for (int dx = 0; dx <= 1; ++dx) {
                    int ix = x0 + dx, iy = y0 + dy;
                    double wgt = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
                    if (wgt == 0.0) continue;
                    double v = (ix >= 0 && iy >= 0 && ix < img.width && iy < img.height)
                                   ? *img.at(ix, iy)
                                   : 0.0;  // background fill
                    acc += wgt * v;
                }
            *out.at(x, y) = static_cast<float>(acc);
        }
    return out;
}

MaskImage apply_transform(const MaskImage& mask, const GeometricDraw& t) {
    InverseMap m = make_map(t, mask.width, mask.height);
    MaskImage out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            double sx, sy;
            m.source(x, y, sx, sy);
            int ix = static_cast<int>(std::lround(sx)), iy = static_cast<int>(std::lround(sy));
            *out.at(x, y) = (ix >= 0 && iy >= 0 && ix < mask.width && iy < mask.height)
                                ? *mask.at(ix, iy)
                                : 0;
        }
    return out;
}

RgbImage apply_transform(const RgbImage& img, const GeometricDraw& t) {
    InverseMap m = make_map(t, img.width, img.height);
    RgbImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double sx, sy;
            m.source(x, y, sx, sy);
            int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            double fx = sx - x0, fy = sy - y0;
            for (int ch = 0; ch < 3; ++ch) {
                double acc = 0;
                for (int dy = 0; dy <= 1; ++dy)
                    for (int dx = 0; dx <= 1; ++dx) {
                        int ix = x0 + dx, iy = y0 + dy;
                        double wgt = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
                        if (wgt == 0.0) continue;
                        double v = (ix >= 0 && iy >= 0 && ix < img.width && iy < img.height)
                                       ? img.at(ix, iy)[ch]
                                       : 0.0;
                        acc += wgt * v;
                    }
                out.at(x, y)[ch] = static_cast<uint8_t>(std::clamp(std::lround(acc), 0l, 255l));
            }
        }
    return out;
}

}  // namespace histoscore::aug
