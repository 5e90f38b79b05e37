#include "histoscore/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "histoscore/png_io.hpp"

namespace histoscore::synth {

namespace {

constexpr std::array<double, 3> kRec601 = {0.299, 0.587, 0.114};

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27; x *= 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double luminance_of_concentration(const std::array<double, 3>& v, double c) {
    double lum = 0;
    for (int i = 0; i < 3; ++i) lum += kRec601[i] * 255.0 * std::exp(-c * v[i]);
    return lum;
}

struct Nucleus {
    double cx, cy, a, b, theta;
    bool tumour = false;
    int band = 0;  // 0 unstained, 1 weak, 2 moderate, 3 strong
    std::array<double, 3> od{};  // stain OD vector painted inside

    bool contains(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        double u = std::cos(theta) * dx + std::sin(theta) * dy;
        double v = -std::sin(theta) * dx + std::cos(theta) * dy;
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

// floor counts, then hand out the remainder by largest fractional part
std::array<int, 4> largest_remainder_counts(const std::array<double, 4>& p, int n) {
    std::array<int, 4> counts{};
    std::array<double, 4> frac{};
    int used = 0;
    for (int i = 0; i < 4; ++i) {
        double exact = p[i] * n;
        counts[i] = static_cast<int>(std::floor(exact + 1e-12));
        frac[i] = exact - counts[i];
        used += counts[i];
    }
    for (int r = used; r < n; ++r) {
        int best = 0;
        for (int i = 1; i < 4; ++i)
            if (frac[i] > frac[best]) best = i;
        ++counts[best];
        frac[best] = -1;
    }
    return counts;
}

}  // namespace

void SynthSceneSpec::validate() const {
    if (size < 8) throw std::invalid_argument("scene size too small");
    if (nucleus_count < 0) throw std::invalid_argument("negative nucleus count");
    if (radius_min < 2.0 || radius_max < radius_min)
        throw std::invalid_argument("radii must satisfy 2 <= min <= max");
    double s = 0;
    for (double p : band_proportions) {
        if (p < 0) throw std::invalid_argument("negative band proportion");
        s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("band proportions must sum to 1");
    if (tumour_fraction < 0 || tumour_fraction > 1)
        throw std::invalid_argument("tumour fraction outside [0,1]");
}

double concentration_for_luminance(const std::array<double, 3>& stain_vec, double target_lum) {
    double lo = 0.0, hi = 16.0;
    if (target_lum >= luminance_of_concentration(stain_vec, lo)) return 0.0;
    if (target_lum <= luminance_of_concentration(stain_vec, hi)) return hi;
    for (int it = 0; it < 80; ++it) {
        double mid = 0.5 * (lo + hi);
        if (luminance_of_concentration(stain_vec, mid) > target_lum) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

Scene generate_scene(const SynthSceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(mix_seed(spec.seed, 0x53594eull));

    const StainMatrix m = StainMatrix::dab_h();
    const auto& dab_vec = m.rows[0];
    const auto& hem_vec = m.rows[1];

    const double c_strong = concentration_for_luminance(dab_vec, spec.bands.strong_lum);
    const double c_moderate = concentration_for_luminance(dab_vec, spec.bands.moderate_lum);
    const double c_weak = concentration_for_luminance(dab_vec, spec.bands.weak_lum);
    const double c_unstained = concentration_for_luminance(hem_vec, spec.bands.unstained_lum);

    int n_tumour = static_cast<int>(std::lround(spec.nucleus_count * spec.tumour_fraction));
    int n_other = spec.nucleus_count - n_tumour;
    auto band_counts = largest_remainder_counts(spec.band_proportions, n_tumour);

    std::vector<int> bands;
    for (int b = 0; b < 4; ++b)
        for (int k = 0; k < band_counts[b]; ++k) bands.push_back(b);
    std::shuffle(bands.begin(), bands.end(), rng);

    std::uniform_real_distribution<double> unif01(0.0, 1.0);
    std::uniform_real_distribution<double> rad(spec.radius_min, spec.radius_max);
    std::uniform_real_distribution<double> ang(0.0, M_PI);

    std::vector<Nucleus> nuclei;
    auto place = [&](bool tumour, int band) {
        Nucleus nu;
        nu.tumour = tumour;
        nu.band = band;
        nu.a = rad(rng);
        nu.b = rad(rng);
        nu.theta = ang(rng);
        bool may_overlap = unif01(rng) < spec.overlap_prob;
        double rmax = std::max(nu.a, nu.b);
        for (int attempt = 0; attempt < 2000; ++attempt) {
            nu.cx = rmax + 1 + unif01(rng) * (spec.size - 2 * (rmax + 1));
            nu.cy = rmax + 1 + unif01(rng) * (spec.size - 2 * (rmax + 1));
            bool clash = false;
            if (!may_overlap) {
                for (const Nucleus& other : nuclei) {
                    double d = std::hypot(nu.cx - other.cx, nu.cy - other.cy);
                    if (d < rmax + std::max(other.a, other.b) + 1.5) { clash = true; break; }
                }
            }
            if (!clash) {
                nuclei.push_back(nu);
                return;
            }
        }
        throw std::runtime_error("infeasible packing: cannot place nucleus");
    };

    for (int i = 0; i < n_tumour; ++i) place(true, bands[i]);
    for (int i = 0; i < n_other; ++i) place(false, 0);

    for (Nucleus& nu : nuclei) {
        double c;
        const std::array<double, 3>* vec;
        if (!nu.tumour || nu.band == 0) {
            c = c_unstained;
            vec = &hem_vec;
        } else {
            c = nu.band == 1 ? c_weak : (nu.band == 2 ? c_moderate : c_strong);
            vec = &dab_vec;
        }
        for (int i = 0; i < 3; ++i) nu.od[i] = c * (*vec)[i];
    }

    Scene scene;
    scene.rgb = RgbImage(spec.size, spec.size);
    scene.nuclei = MaskImage(spec.size, spec.size);
    scene.tumour = MaskImage(spec.size, spec.size);
    scene.tumour_count = n_tumour;
    scene.non_tumour_count = n_other;

    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (int y = 0; y < spec.size; ++y)
        for (int x = 0; x < spec.size; ++x) {
            std::array<double, 3> od = {spec.background_od * hem_vec[0],
                                        spec.background_od * hem_vec[1],
                                        spec.background_od * hem_vec[2]};
            // painter's order: the last nucleus covering the pixel wins
            for (const Nucleus& nu : nuclei) {
                if (!nu.contains(x, y)) continue;
                od = nu.od;
                *scene.nuclei.at(x, y) = 1;
                if (nu.tumour) *scene.tumour.at(x, y) = 1;
                else *scene.tumour.at(x, y) = 0;
            }
            uint8_t* px = scene.rgb.at(x, y);
            for (int i = 0; i < 3; ++i) {
                double v = 255.0 * std::exp(-od[i]);
                if (spec.noise_std > 0) v += noise(rng);
                px[i] = static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
            }
        }

    IntensityFractions f;
    if (n_tumour == 0) {
        f.unstained = 100.0;
    } else {
        // exact fractions for three bands; the most populated band absorbs the
        // floating-point remainder so the sum is exactly 100
        int biggest = 0;
        for (int b = 1; b < 4; ++b)
            if (band_counts[b] > band_counts[biggest]) biggest = b;
        std::array<double, 4> pct{};
        double rest = 0;
        for (int b = 0; b < 4; ++b) {
            if (b == biggest) continue;
            pct[b] = 100.0 * band_counts[b] / n_tumour;
            rest += pct[b];
        }
        pct[biggest] = 100.0 - rest;
        f.unstained = pct[0];
        f.wsn = pct[1];
        f.msn = pct[2];
        f.ssn = pct[3];
    }
    scene.fractions = f;
    scene.score = h_score(f);
    return scene;
}

namespace {

std::array<double, 4> proportions_for_target(double target, std::mt19937_64& rng) {
    // random stained-band mix, then blended toward unstained or pure strong
    // so the analytic H-Score hits the target exactly
    std::exponential_distribution<double> expd(1.0);
    double aw = expd(rng), am = expd(rng), as = expd(rng);
    double z = aw + am + as;
    aw /= z; am /= z; as /= z;
    double s = aw + 2 * am + 3 * as;  // 100*s is the fully-stained score
    double t = target / 100.0;
    std::array<double, 4> p{};
    if (t <= s) {
        double f = t / s;
        p = {1.0 - f, f * aw, f * am, f * as};
    } else {
        double lam = (t - s) / (3.0 - s + 1e-12);
        p = {0.0, (1 - lam) * aw, (1 - lam) * am, (1 - lam) * as + lam};
    }
    return p;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::vector<ManifestRow> generate_dataset(const DatasetOptions& opts) {
    if (opts.count < 1) throw std::invalid_argument("dataset count must be >= 1");
    namespace fs = std::filesystem;
    fs::create_directories(opts.out_dir);

    std::vector<ManifestRow> rows;
    for (int i = 0; i < opts.count; ++i) {
        std::mt19937_64 rng(mix_seed(opts.seed, static_cast<uint64_t>(i)));
        double target;
        if (opts.imbalanced) {
            target = std::clamp(std::normal_distribution<double>(120.0, 55.0)(rng), 0.0, 300.0);
        } else {
            target = std::uniform_real_distribution<double>(0.0, 300.0)(rng);
        }
        SynthSceneSpec spec = opts.scene;
        spec.band_proportions = proportions_for_target(target, rng);
        spec.seed = mix_seed(opts.seed, 0xd5 + static_cast<uint64_t>(i));
        Scene scene = generate_scene(spec);

        char name[64];
        std::snprintf(name, sizeof(name), "img_%04d", i);
        ManifestRow row;
        row.path_rgb = (fs::path(opts.out_dir) / (std::string(name) + "_rgb.png")).string();
        row.path_nuclei_mask = (fs::path(opts.out_dir) / (std::string(name) + "_nuclei.png")).string();
        row.path_tumour_mask = (fs::path(opts.out_dir) / (std::string(name) + "_tumour.png")).string();
        row.fractions = scene.fractions;
        row.hscore = scene.score.value;
        io::write_rgb_png(row.path_rgb, scene.rgb);
        io::write_mask_png(row.path_nuclei_mask, scene.nuclei);
        io::write_mask_png(row.path_tumour_mask, scene.tumour);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot create manifest: " + path);
    f << "path_rgb,path_nuclei_mask,path_tumour_mask,wsn,msn,ssn,unstained,hscore\n";
    for (const auto& r : rows) {
        f << r.path_rgb << ',' << r.path_nuclei_mask << ',' << r.path_tumour_mask << ','
          << fmt(r.fractions.wsn) << ',' << fmt(r.fractions.msn) << ',' << fmt(r.fractions.ssn)
          << ',' << fmt(r.fractions.unstained) << ',' << fmt(r.hscore) << '\n';
    }
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    std::vector<ManifestRow> rows;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 8) throw std::runtime_error("malformed manifest row: " + line);
        ManifestRow r;
        r.path_rgb = fields[0];
        r.path_nuclei_mask = fields[1];
        r.path_tumour_mask = fields[2];
        r.fractions.wsn = std::stod(fields[3]);
        r.fractions.msn = std::stod(fields[4]);
        r.fractions.ssn = std::stod(fields[5]);
        r.fractions.unstained = std::stod(fields[6]);
        r.hscore = std::stod(fields[7]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace histoscore::synth
