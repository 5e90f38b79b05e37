#include "histoscore/lamt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace histoscore::lamt {

namespace {

double log_gauss(double x, double mean, double var) {
    double d = x - mean;
    return -0.5 * std::log(2.0 * M_PI * var) - d * d / (2.0 * var);
}

// Equal-posterior crossing of two weighted Gaussians, searched between the
// component means; falls back to the midpoint if the quadratic degenerates.
double posterior_crossing(const BinGaussian& lo, const BinGaussian& hi) {
    double a = -0.5 / lo.variance + 0.5 / hi.variance;
    double b = lo.mean / lo.variance - hi.mean / hi.variance;
    double c = -lo.mean * lo.mean / (2.0 * lo.variance) + hi.mean * hi.mean / (2.0 * hi.variance) +
               std::log(lo.prior / hi.prior) - 0.5 * std::log(lo.variance / hi.variance);
    double mid = 0.5 * (lo.mean + hi.mean);
    double x0 = std::min(lo.mean, hi.mean), x1 = std::max(lo.mean, hi.mean);
    if (std::abs(a) < 1e-12) {
        if (std::abs(b) < 1e-12) return mid;
        double x = -c / b;
        return (x >= x0 && x <= x1) ? x : mid;
    }
    double disc = b * b - 4.0 * a * c;
    if (disc < 0) return mid;
    double sq = std::sqrt(disc);
    for (double x : {(-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)})
        if (x >= x0 && x <= x1) return x;
    return mid;
}

// A mixture fit only carries thresholding information when its components are
// genuinely apart; EM run on a single noisy cluster "splits" it down the
// middle, which would misclassify half the bin. Two checks: the means must be
// separated relative to the component spreads, and the negative mean must sit
// well below the positive one — concentrations are anchored at zero, so a real
// negative component lives near zero, while sub-clusters carved out of one
// stained population (e.g. quantization spikes) sit close to its mean.
bool well_separated(double mean_lo, double sd_lo, double mean_hi, double sd_hi) {
    return mean_hi - mean_lo > 2.0 * (sd_lo + sd_hi) && mean_lo < 0.5 * mean_hi;
}

// Terminal fallback fit: negative pixels have (near-)zero DAB concentration
// by construction of the deconvolution, so anchor the negative component's
// mean at 0 and let the positive component absorb all stained mass, however
// many intensity modes it spans. Unlike a free mixture this cannot merge the
// negative cluster with the weakest stained cluster.
std::optional<BinThreshold> fit_zero_anchored(const std::vector<double>& values,
                                              const LamtParams& params) {
    const size_t n = values.size();
    if (n < static_cast<size_t>(params.min_bin_pixels)) return std::nullopt;

    double mx = *std::max_element(values.begin(), values.end());
    if (mx < 1e-9) return std::nullopt;

    BinGaussian neg{0.0, 1e-4, 0.5};
    BinGaussian pos{mx, std::max(mx * mx / 16.0, 1e-4), 0.5};
    std::vector<double> resp(n);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < params.em_max_iters; ++iter) {
        double ll = 0;
        for (size_t i = 0; i < n; ++i) {
            double l0 = std::log(neg.prior) + log_gauss(values[i], 0.0, neg.variance);
            double l1 = std::log(pos.prior) + log_gauss(values[i], pos.mean, pos.variance);
            double top = std::max(l0, l1);
            double z = std::exp(l0 - top) + std::exp(l1 - top);
            resp[i] = std::exp(l0 - top) / z;
            ll += top + std::log(z);
        }
        double r0 = 0, v0 = 0, s1 = 0;
        for (size_t i = 0; i < n; ++i) {
            r0 += resp[i];
            v0 += resp[i] * values[i] * values[i];
            s1 += (1.0 - resp[i]) * values[i];
        }
        double r1 = n - r0;
        if (r0 < 1e-6 || r1 < 1e-6) break;
        neg.variance = std::max(v0 / r0, 1e-9);
        pos.mean = s1 / r1;
        double v1 = 0;
        for (size_t i = 0; i < n; ++i) {
            double d = values[i] - pos.mean;
            v1 += (1.0 - resp[i]) * d * d;
        }
        pos.variance = std::max(v1 / r1, 1e-9);
        neg.prior = r0 / n;
        pos.prior = r1 / n;
        if (std::abs(ll - prev_ll) < params.em_tol * (1.0 + std::abs(ll))) break;
        prev_ll = ll;
    }

    if (!well_separated(0.0, std::sqrt(neg.variance), pos.mean, std::sqrt(pos.variance)))
        return std::nullopt;
    BinThreshold out;
    out.negative = neg;
    out.positive = pos;
    out.threshold = posterior_crossing(neg, pos);
    out.fitted = false;
    return out;
}

}  // namespace

int luminance_bin(double v, int k_bins) {
    int bin = static_cast<int>(std::floor(v * k_bins / 256.0));
    return std::clamp(bin, 0, k_bins - 1);
}

std::vector<int> partition_luminance(const LuminanceImage& lum, int k_bins) {
    if (k_bins < 1) throw std::invalid_argument("k_bins must be >= 1");
    std::vector<int> bins(lum.pixels());
    for (size_t i = 0; i < bins.size(); ++i) bins[i] = luminance_bin(lum.data[i], k_bins);
    return bins;
}

std::optional<BinThreshold> fit_bin_classifier(const std::vector<double>& values,
                                               const LamtParams& params) {
    const size_t n = values.size();
    if (n < static_cast<size_t>(params.min_bin_pixels)) return std::nullopt;

    auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    if (*mx_it - *mn_it < 1e-9) return std::nullopt;  // degenerate bin

    std::mt19937_64 rng(params.seed);

    // k-means++-style seeding: first centre uniform, second weighted by
    // squared distance to the first.
    double m1 = values[std::uniform_int_distribution<size_t>(0, n - 1)(rng)];
    std::vector<double> w(n);
    double wsum = 0;
    for (size_t i = 0; i < n; ++i) {
        double d = values[i] - m1;
        w[i] = d * d;
        wsum += w[i];
    }
    double pick = std::uniform_real_distribution<double>(0.0, wsum)(rng);
    double m2 = values.back();
    for (size_t i = 0; i < n; ++i) {
        pick -= w[i];
        if (pick <= 0) { m2 = values[i]; break; }
    }
    if (m1 == m2) m2 = (m1 == *mx_it) ? *mn_it : *mx_it;

    double mean = 0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    var = std::max(var / n, 1e-9);

    BinGaussian g[2] = {{m1, var, 0.5}, {m2, var, 0.5}};
    std::vector<double> resp(n);
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < params.em_max_iters; ++iter) {
        double ll = 0;
        // E step: resp[i] = P(component 0 | x_i)
        for (size_t i = 0; i < n; ++i) {
            double l0 = std::log(g[0].prior) + log_gauss(values[i], g[0].mean, g[0].variance);
            double l1 = std::log(g[1].prior) + log_gauss(values[i], g[1].mean, g[1].variance);
            double mx = std::max(l0, l1);
            double z = std::exp(l0 - mx) + std::exp(l1 - mx);
            resp[i] = std::exp(l0 - mx) / z;
            ll += mx + std::log(z);
        }
        // M step
        double r0 = 0, s0 = 0, s1 = 0;
        for (size_t i = 0; i < n; ++i) {
            r0 += resp[i];
            s0 += resp[i] * values[i];
            s1 += (1.0 - resp[i]) * values[i];
        }
        double r1 = n - r0;
        if (r0 < 1e-6 || r1 < 1e-6) break;  // one component collapsed
        g[0].mean = s0 / r0;
        g[1].mean = s1 / r1;
        double v0 = 0, v1 = 0;
        for (size_t i = 0; i < n; ++i) {
            double d0 = values[i] - g[0].mean, d1 = values[i] - g[1].mean;
            v0 += resp[i] * d0 * d0;
            v1 += (1.0 - resp[i]) * d1 * d1;
        }
        g[0].variance = std::max(v0 / r0, 1e-9);
        g[1].variance = std::max(v1 / r1, 1e-9);
        g[0].prior = r0 / n;
        g[1].prior = r1 / n;

        if (std::abs(ll - prev_ll) < params.em_tol * (1.0 + std::abs(ll))) break;
        prev_ll = ll;
    }

    BinThreshold out;
    int hi = g[0].mean >= g[1].mean ? 0 : 1;
    out.positive = g[hi];        // higher DAB mean is the positive stain
    out.negative = g[1 - hi];
    if (!well_separated(out.negative.mean, std::sqrt(out.negative.variance), out.positive.mean,
                        std::sqrt(out.positive.variance)))
        return std::nullopt;  // single population; caller applies the fallback
    out.threshold = posterior_crossing(out.negative, out.positive);
    out.fitted = true;
    return out;
}

BinClassifier fit_classifier(const std::vector<float>& dab, const LuminanceImage& lum,
                             const LamtParams& params) {
    if (dab.size() != lum.pixels()) throw std::invalid_argument("DAB/luminance size mismatch");
    if (params.k_bins < 1) throw std::invalid_argument("k_bins must be >= 1");

    std::vector<std::vector<double>> per_bin(params.k_bins);
    for (size_t i = 0; i < dab.size(); ++i) {
        if (lum.data[i] > params.luminance_fit_cutoff) continue;
        per_bin[luminance_bin(lum.data[i], params.k_bins)].push_back(dab[i]);
    }

    BinClassifier cls;
    cls.k_bins = params.k_bins;
    cls.bins.resize(params.k_bins);
    std::vector<bool> ok(params.k_bins, false);
    for (int k = 0; k < params.k_bins; ++k) {
        LamtParams p = params;
        p.seed = params.seed + static_cast<uint64_t>(k) * 0x9e3779b97f4a7c15ull;
        if (auto fit = fit_bin_classifier(per_bin[k], p)) {
            cls.bins[k] = *fit;
            ok[k] = true;
        }
    }

    // Fallback: inherit the nearest populated bin; else global Otsu.
    for (int k = 0; k < params.k_bins; ++k) {
        if (ok[k]) continue;
        int best = -1;
        for (int d = 1; d < params.k_bins && best < 0; ++d) {
            if (k - d >= 0 && ok[k - d]) best = k - d;
            else if (k + d < params.k_bins && ok[k + d]) best = k + d;
        }
        if (best >= 0) {
            cls.bins[k] = cls.bins[best];
            cls.bins[k].fitted = false;
        } else {
            // terminal fallback: a global zero-anchored fit over every bin's
            // values; if even that has no separated structure, the image has
            // one stain population and everything classifies Negative
            std::vector<double> all;
            for (auto& b : per_bin) all.insert(all.end(), b.begin(), b.end());
            cls.bins[k] = BinThreshold{};
            if (auto fit = fit_zero_anchored(all, params)) {
                cls.bins[k] = *fit;
            } else {
                cls.bins[k].threshold = std::numeric_limits<double>::infinity();
            }
        }
    }
    return cls;
}

StainClassMap classify_with(const BinClassifier& cls, const std::vector<float>& dab,
                            const LuminanceImage& lum) {
    if (dab.size() != lum.pixels()) throw std::invalid_argument("DAB/luminance size mismatch");
    StainClassMap map(lum.width, lum.height);
    for (size_t i = 0; i < dab.size(); ++i) {
        double t = cls.bins[luminance_bin(lum.data[i], cls.k_bins)].threshold;
        // tie at the threshold classifies Negative
        map.data[i] = dab[i] > t ? static_cast<uint8_t>(StainClass::Positive)
                                 : static_cast<uint8_t>(StainClass::Negative);
    }
    return map;
}

StainClassMap classify_stain(const std::vector<float>& dab, const LuminanceImage& lum,
                             const LamtParams& params) {
    return classify_with(fit_classifier(dab, lum, params), dab, lum);
}

IntensityImage intensity_description(const LuminanceImage& lum, const StainClassMap& cls) {
    require_same_size(cls, lum.width, lum.height, "intensity_description");
    IntensityImage out(lum.width, lum.height);
    for (size_t i = 0; i < out.data.size(); ++i) {
        double il = lum.data[i];
        double raw = cls.data[i] == static_cast<uint8_t>(StainClass::Positive)
                         ? il
                         : 255.0 + (255.0 - il);
        out.data[i] = static_cast<float>(raw / 510.0);
    }
    return out;
}

IntensityImage build_region_image(const IntensityImage& intensity, const MaskImage& mask) {
    require_same_size(mask, intensity.width, intensity.height, "build_region_image");
    IntensityImage out(intensity.width, intensity.height);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = mask.data[i] ? intensity.data[i] : 0.0f;
    return out;
}

double otsu_threshold(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("otsu: empty input");
    auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    double mn = *mn_it, mx = *mx_it;
    if (mx - mn < 1e-12) return mn;

    constexpr int kBins = 256;
    std::vector<double> hist(kBins, 0.0);
    for (double v : values) {
        int b = std::min(kBins - 1, static_cast<int>((v - mn) / (mx - mn) * kBins));
        hist[b] += 1.0;
    }
    double total = static_cast<double>(values.size());
    double sum_all = 0;
    for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];

    double w0 = 0, sum0 = 0, best_sigma = -1, best_t = 0;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += hist[b];
        if (w0 == 0) continue;
        double w1 = total - w0;
        if (w1 == 0) break;
        sum0 += b * hist[b];
        double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        double sigma = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (sigma > best_sigma) {
            best_sigma = sigma;
            best_t = mn + (b + 1) * (mx - mn) / kBins;
        }
    }
    return best_t;
}

}  // namespace histoscore::lamt
