#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "histoscore/image.hpp"
#include "histoscore/lamt.hpp"
#include "histoscore/net.hpp"
#include "histoscore/scoring.hpp"
#include "histoscore/segmentation.hpp"
#include "histoscore/synth.hpp"

namespace histoscore::eval {

// AE buckets per ground-truth score group {0-49, ..., 250-300}.
struct GroupCounts {
    int ae_lt_10 = 0;
    int ae_10_to_30 = 0;
    int ae_gt_30 = 0;
};

struct EvalReport {
    double mae = 0.0;
    double sd = 0.0;      // std-dev of absolute errors (signed optional)
    double cc = 0.0;      // Pearson correlation
    double p_value = 1.0; // two-sided, t-test with n-2 dof
    size_t n = 0;
    std::array<GroupCounts, 6> groups{};
};

double pearson(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a,b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

// Two-sided p-value for t with the given degrees of freedom.
double t_test_pvalue(double t, double dof);

std::array<GroupCounts, 6> group_report(const std::vector<double>& preds,
                                        const std::vector<double>& labels);

EvalReport evaluate(const std::vector<double>& preds, const std::vector<double>& labels,
                    bool signed_sd = false);

// Shuffled disjoint folds of `held_out` (last may be smaller), union = all.
std::vector<std::vector<size_t>> make_folds(size_t n, size_t held_out, uint64_t seed);

std::string format_report(const EvalReport& r);

// ---- pipeline ----

struct PipelineParams {
    lamt::LamtParams lamt;
    seg::WatershedParams seg;
    scoring::IntensityThresholds thresholds;
};

// Colour deconvolution + LAMT on one RGB image.
struct StainStage {
    LuminanceImage lum;
    IntensityImage ila;  // normalized I_la
};
StainStage stain_intensity(const RgbImage& rgb, const lamt::LamtParams& params);

net::Tensor intensity_to_tensor(const IntensityImage& img, int res);
net::Tensor rgb_to_tensor(const RgbImage& img, int res);

// Model inputs per architecture: ram = {SINI, SITI}, ra = one 2-channel
// tensor, rgb = the raw image scaled to [0,1].
std::vector<net::Tensor> model_inputs(net::ArchKind arch, const RgbImage& rgb,
                                      const IntensityImage& ila, const MaskImage& nuclei,
                                      const MaskImage& tumour, int res);

// Loads manifest images and builds ready-to-train samples.
std::vector<net::Sample> load_samples(const std::vector<synth::ManifestRow>& rows,
                                      net::ArchKind arch, int res,
                                      const PipelineParams& params);

struct FoldResult {
    std::vector<size_t> test_indices;
    std::vector<double> preds;
    EvalReport report;
};

struct CrossValResult {
    std::vector<FoldResult> folds;
    EvalReport pooled;
    std::vector<double> pooled_preds, pooled_labels;  // in fold order
};

// Leave-`held_out`-out CV; folds may train concurrently (threads > 1), each
// model single-threaded so seeded runs stay reproducible.
CrossValResult cross_validate(const std::vector<net::Sample>& samples, size_t held_out,
                              const net::NetworkSpec& spec, const net::TrainConfig& train_cfg,
                              uint64_t fold_seed, int threads);

struct PipelineConfig {
    std::string manifest;
    std::string method;       // nap | nnp | rgb_cnn | ra_cnn | ram_cnn
    std::string model_path;   // checkpoint for CNN methods
    std::string out_csv;      // per-image predictions
    std::string out_report;   // plain-text summary
    PipelineParams params;
    int input_res = 64;
};

// Per-image predicted H-Score CSV + summary report; any stage error aborts
// naming the stage and image.
EvalReport run_pipeline(const PipelineConfig& cfg);

}  // namespace histoscore::eval
