#include "histoscore/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <random>
#include <sstream>
#include <stdexcept>

#include "histoscore/png_io.hpp"
#include "histoscore/stain.hpp"

namespace histoscore::eval {

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27; x *= 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15, kTiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double t_test_pvalue(double t, double dof) {
    if (dof <= 0) throw std::invalid_argument("t-test needs positive dof");
    return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("pearson: equal nonempty inputs required");
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) { ma += a[i]; mb += b[i]; }
    ma /= a.size(); mb /= b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        sab += da * db; saa += da * da; sbb += db * db;
    }
    if (saa <= 0 || sbb <= 0)
        throw std::invalid_argument("pearson: zero-variance input, CC undefined");
    return sab / std::sqrt(saa * sbb);
}

std::array<GroupCounts, 6> group_report(const std::vector<double>& preds,
                                        const std::vector<double>& labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw std::invalid_argument("group_report: equal nonempty inputs required");
    std::array<GroupCounts, 6> groups{};
    for (size_t i = 0; i < preds.size(); ++i) {
        int g = std::min(5, static_cast<int>(labels[i] / 50.0));  // grouped by label
        double ae = std::abs(preds[i] - labels[i]);
        if (ae < 10.0) ++groups[g].ae_lt_10;
        else if (ae <= 30.0) ++groups[g].ae_10_to_30;
        else ++groups[g].ae_gt_30;
    }
    return groups;
}

EvalReport evaluate(const std::vector<double>& preds, const std::vector<double>& labels,
                    bool signed_sd) {
    if (preds.size() != labels.size() || preds.empty())
        throw std::invalid_argument("evaluate: equal nonempty inputs required");
    EvalReport r;
    r.n = preds.size();
    std::vector<double> errs(r.n);
    double sum_ae = 0;
    for (size_t i = 0; i < r.n; ++i) {
        double e = preds[i] - labels[i];
        errs[i] = signed_sd ? e : std::abs(e);
        sum_ae += std::abs(e);
    }
    r.mae = sum_ae / r.n;
    double mean_e = 0;
    for (double e : errs) mean_e += e;
    mean_e /= r.n;
    double var = 0;
    for (double e : errs) var += (e - mean_e) * (e - mean_e);
    r.sd = r.n > 1 ? std::sqrt(var / (r.n - 1)) : 0.0;
    r.cc = pearson(preds, labels);
    if (r.n < 3) throw std::invalid_argument("evaluate: p-value undefined for n < 3");
    double dof = static_cast<double>(r.n - 2);
    double t = r.cc * std::sqrt(dof / std::max(1e-300, 1.0 - r.cc * r.cc));
    r.p_value = t_test_pvalue(t, dof);
    r.groups = group_report(preds, labels);
    return r;
}

std::vector<std::vector<size_t>> make_folds(size_t n, size_t held_out, uint64_t seed) {
    if (held_out < 1 || held_out > n) throw std::invalid_argument("bad fold size");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(mix_seed(seed, 0xf01d5ull));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<size_t>> folds;
    for (size_t start = 0; start < n; start += held_out) {
        size_t end = std::min(n, start + held_out);
        folds.emplace_back(order.begin() + start, order.begin() + end);
    }
    return folds;
}

std::string format_report(const EvalReport& r) {
    std::ostringstream os;
    os << "n       = " << r.n << "\n";
    os << "MAE     = " << r.mae << "\n";
    os << "SD      = " << r.sd << "\n";
    os << "CC      = " << r.cc << "\n";
    os << "p-value = " << r.p_value << "\n";
    static const char* names[6] = {"0-49", "50-99", "100-149", "150-199", "200-249", "250-300"};
    os << "group    AE<10  10<=AE<=30  AE>30\n";
    for (int g = 0; g < 6; ++g)
        os << names[g] << "\t" << r.groups[g].ae_lt_10 << "\t" << r.groups[g].ae_10_to_30
           << "\t" << r.groups[g].ae_gt_30 << "\n";
    return os.str();
}

// ---- pipeline ----

StainStage stain_intensity(const RgbImage& rgb, const lamt::LamtParams& params) {
    StainStage out;
    out.lum = luminance(rgb);
    OdImage od = to_optical_density(rgb);
    StainMatrix m = complete_stain_matrix(StainMatrix::dab_h());
    StainChannels channels = colour_deconvolve(od, m);
    std::vector<float> dab(channels.img.pixels());
    for (size_t i = 0; i < dab.size(); ++i) dab[i] = channels.img.data[3 * i];
    StainClassMap cls = lamt::classify_stain(dab, out.lum, params);
    out.ila = lamt::intensity_description(out.lum, cls);
    return out;
}

namespace {

// nearest-neighbour resample, used when image size != network input size
template <typename Img>
Img resize_nearest(const Img& img, int res) {
    if (img.width == res && img.height == res) return img;
    Img out(res, res);
    size_t channels = img.data.size() / img.pixels();
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            int sx = std::min(img.width - 1, x * img.width / res);
            int sy = std::min(img.height - 1, y * img.height / res);
            std::copy_n(img.at(sx, sy), channels, out.at(x, y));
        }
    return out;
}

}  // namespace

net::Tensor intensity_to_tensor(const IntensityImage& img, int res) {
    IntensityImage r = resize_nearest(img, res);
    net::Tensor t(1, 1, res, res);
    for (size_t i = 0; i < r.data.size(); ++i) t.data[i] = r.data[i];
    return t;
}

net::Tensor rgb_to_tensor(const RgbImage& img, int res) {
    RgbImage r = resize_nearest(img, res);
    net::Tensor t(1, 3, res, res);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) t.at(0, c, y, x) = r.at(x, y)[c] / 255.0;
    return t;
}

std::vector<net::Tensor> model_inputs(net::ArchKind arch, const RgbImage& rgb,
                                      const IntensityImage& ila, const MaskImage& nuclei,
                                      const MaskImage& tumour, int res) {
    using net::ArchKind;
    if (arch == ArchKind::rgb_cnn) return {rgb_to_tensor(rgb, res)};
    IntensityImage sini = lamt::build_region_image(ila, nuclei);
    IntensityImage siti = lamt::build_region_image(ila, tumour);
    net::Tensor ts = intensity_to_tensor(sini, res);
    net::Tensor tt = intensity_to_tensor(siti, res);
    if (arch == ArchKind::ram_cnn) return {std::move(ts), std::move(tt)};
    if (arch == ArchKind::ra_cnn) {  // SINI and SITI as one two-channel image
        net::Tensor t(1, 2, res, res);
        std::copy(ts.data.begin(), ts.data.end(), t.data.begin());
        std::copy(tt.data.begin(), tt.data.end(), t.data.begin() + ts.data.size());
        return {std::move(t)};
    }
    throw std::invalid_argument("model_inputs: unsupported architecture");
}

std::vector<net::Sample> load_samples(const std::vector<synth::ManifestRow>& rows,
                                      net::ArchKind arch, int res,
                                      const PipelineParams& params) {
    std::vector<net::Sample> samples;
    samples.reserve(rows.size());
    for (const auto& row : rows) {
        RgbImage rgb = io::read_rgb_png(row.path_rgb);
        MaskImage nuclei = io::read_mask_png(row.path_nuclei_mask);
        MaskImage tumour = io::read_mask_png(row.path_tumour_mask);
        StainStage stage = stain_intensity(rgb, params.lamt);
        net::Sample s;
        s.inputs = model_inputs(arch, rgb, stage.ila, nuclei, tumour, res);
        s.label = row.hscore;
        samples.push_back(std::move(s));
    }
    return samples;
}

CrossValResult cross_validate(const std::vector<net::Sample>& samples, size_t held_out,
                              const net::NetworkSpec& spec, const net::TrainConfig& train_cfg,
                              uint64_t fold_seed, int threads) {
    if (samples.size() < 10) throw std::invalid_argument("cross_validate: need >= 10 samples");
    auto folds = make_folds(samples.size(), held_out, fold_seed);

    CrossValResult result;
    result.folds.resize(folds.size());

    auto run_fold = [&](size_t fi) {
        std::vector<bool> held(samples.size(), false);
        for (size_t idx : folds[fi]) held[idx] = true;
        std::vector<net::Sample> train_set;
        for (size_t i = 0; i < samples.size(); ++i)
            if (!held[i]) train_set.push_back(samples[i]);
        net::TrainConfig cfg = train_cfg;
        cfg.seed = mix_seed(train_cfg.seed, fi);
        cfg.threads = 1;  // fold-level parallelism instead
        net::TrainResult tr = net::train(spec, train_set, cfg);
        FoldResult fr;
        fr.test_indices = folds[fi];
        for (size_t idx : folds[fi])
            fr.preds.push_back(net::predict_score(tr.model, samples[idx].inputs));
        result.folds[fi] = std::move(fr);
    };

    if (threads <= 1) {
        for (size_t fi = 0; fi < folds.size(); ++fi) run_fold(fi);
    } else {
        std::vector<std::future<void>> running;
        for (size_t fi = 0; fi < folds.size(); ++fi) {
            if (running.size() >= static_cast<size_t>(threads)) {
                running.front().get();
                running.erase(running.begin());
            }
            running.push_back(std::async(std::launch::async, run_fold, fi));
        }
        for (auto& f : running) f.get();
    }

    for (auto& fr : result.folds) {
        std::vector<double> labels;
        for (size_t k = 0; k < fr.test_indices.size(); ++k) {
            labels.push_back(samples[fr.test_indices[k]].label);
            result.pooled_preds.push_back(fr.preds[k]);
            result.pooled_labels.push_back(labels.back());
        }
        try {
            fr.report = evaluate(fr.preds, labels);
        } catch (const std::invalid_argument&) {
            // tiny/degenerate fold: keep MAE only
            fr.report = EvalReport{};
            fr.report.n = fr.preds.size();
            for (size_t k = 0; k < fr.preds.size(); ++k)
                fr.report.mae += std::abs(fr.preds[k] - labels[k]) / fr.preds.size();
            fr.report.cc = std::numeric_limits<double>::quiet_NaN();
            fr.report.p_value = std::numeric_limits<double>::quiet_NaN();
        }
    }
    result.pooled = evaluate(result.pooled_preds, result.pooled_labels);
    return result;
}

EvalReport run_pipeline(const PipelineConfig& cfg) {
    auto rows = synth::read_manifest(cfg.manifest);
    if (rows.empty()) throw std::runtime_error("pipeline: empty manifest");

    bool is_cnn = cfg.method == "rgb_cnn" || cfg.method == "ra_cnn" || cfg.method == "ram_cnn";
    net::Model model;
    if (is_cnn) {
        if (cfg.model_path.empty()) throw std::runtime_error("pipeline: CNN method needs a model");
        model = net::load_model(cfg.model_path);
    } else if (cfg.method != "nap" && cfg.method != "nnp") {
        throw std::runtime_error("pipeline: unknown method " + cfg.method);
    }

    std::vector<double> preds, labels;
    std::ofstream csv;
    if (!cfg.out_csv.empty()) {
        csv.open(cfg.out_csv);
        if (!csv) throw std::runtime_error("pipeline: cannot create " + cfg.out_csv);
        csv << "image,method,prediction,label\n";
    }

    for (size_t i = 0; i < rows.size(); ++i) {
        auto stage_fail = [&](const char* stage, const std::exception& e) {
            throw std::runtime_error("pipeline stage '" + std::string(stage) + "' failed on image " +
                                     rows[i].path_rgb + ": " + e.what());
        };
        RgbImage rgb;
        MaskImage nuclei, tumour;
        try {
            rgb = io::read_rgb_png(rows[i].path_rgb);
            nuclei = io::read_mask_png(rows[i].path_nuclei_mask);
            tumour = io::read_mask_png(rows[i].path_tumour_mask);
        } catch (const std::exception& e) { stage_fail("load", e); }

        StainStage stage;
        try {
            stage = stain_intensity(rgb, cfg.params.lamt);
        } catch (const std::exception& e) { stage_fail("stain", e); }

        double pred = 0;
        try {
            if (cfg.method == "nap") {
                pred = scoring::nap_score(stage.ila, tumour, cfg.params.thresholds).first.value;
            } else if (cfg.method == "nnp") {
                IntensityImage siti = lamt::build_region_image(stage.ila, tumour);
                MaskImage fg = seg::threshold_foreground(siti, cfg.params.seg);
                InstanceLabelMap inst = seg::seeded_watershed(fg, siti, cfg.params.seg);
                pred = scoring::nnp_score(inst, stage.ila, cfg.params.thresholds).first.value;
            } else {
                auto inputs = model_inputs(model.spec.arch, rgb, stage.ila, nuclei, tumour,
                                           model.spec.input_res);
                pred = net::predict_score(model, inputs);
            }
        } catch (const std::exception& e) { stage_fail("score", e); }

        preds.push_back(pred);
        labels.push_back(rows[i].hscore);
        if (csv.is_open())
            csv << rows[i].path_rgb << ',' << cfg.method << ',' << pred << ',' << rows[i].hscore
                << '\n';
    }

    EvalReport report = evaluate(preds, labels);
    if (!cfg.out_report.empty()) {
        std::ofstream rf(cfg.out_report);
        rf << "method = " << cfg.method << "\n" << format_report(report);
    }
    return report;
}

}  // namespace histoscore::eval
