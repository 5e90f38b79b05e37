#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "histoscore/augment.hpp"
#include "histoscore/config.hpp"
#include "histoscore/eval.hpp"
#include "histoscore/lamt.hpp"
#include "histoscore/net.hpp"
#include "histoscore/png_io.hpp"
#include "histoscore/scoring.hpp"
#include "histoscore/segmentation.hpp"
#include "histoscore/stain.hpp"
#include "histoscore/synth.hpp"

namespace hs = histoscore;

namespace {

hs::StainMatrix load_stain_matrix(const std::string& path) {
    if (path.empty()) return hs::complete_stain_matrix(hs::StainMatrix::dab_h());
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open stain matrix: " + path);
    hs::StainMatrix m{};
    for (auto& row : m.rows)
        for (auto& v : row)
            if (!(f >> v)) throw std::runtime_error("stain matrix file needs 9 reals: " + path);
    bool zero_third = m.rows[2][0] == 0 && m.rows[2][1] == 0 && m.rows[2][2] == 0;
    return zero_third ? hs::complete_stain_matrix(m) : m;
}

hs::eval::PipelineParams params_from_config(const hs::Config& cfg) {
    hs::eval::PipelineParams p;
    p.lamt.k_bins = cfg.get_int("lamt.k", 4);
    p.lamt.seed = static_cast<uint64_t>(cfg.get_int("lamt.seed", 1));
    p.lamt.luminance_fit_cutoff = cfg.get_double("lamt.fit_cutoff", 250.0);
    p.seg.opening_radius = cfg.get_int("seg.opening_radius", 1);
    p.seg.min_area = cfg.get_int("seg.min_area", 16);
    p.seg.h_depth = cfg.get_double("seg.h_depth", 0.05);
    p.seg.fg_threshold = cfg.get_double("seg.fg_threshold", 0.95);
    p.thresholds.b1 = cfg.get_double("score.b1", 85.0);
    p.thresholds.b2 = cfg.get_double("score.b2", 170.0);
    p.thresholds.b3 = cfg.get_double("score.b3", 255.0);
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"H-Score pipeline for DAB-H stained TMA images"};
    app.require_subcommand(1);

    uint64_t seed = 7;
    int threads = 1;
    std::string config_path;
    app.add_option("--seed", seed, "global RNG seed");
    app.add_option("--threads", threads, "worker threads");
    app.add_option("--config", config_path, "flat key=value config file");

    auto cfg_of = [&]() {
        return config_path.empty() ? hs::Config() : hs::Config::from_file(config_path);
    };

    // deconvolve
    auto* dec = app.add_subcommand("deconvolve", "colour deconvolution of an RGB PNG");
    std::string dec_in, dec_out_dab, dec_matrix;
    dec->add_option("--in", dec_in)->required();
    dec->add_option("--out-dab", dec_out_dab)->required();
    dec->add_option("--stain-matrix", dec_matrix, "9 whitespace-separated reals, row-major");
    dec->callback([&] {
        hs::RgbImage rgb = hs::io::read_rgb_png(dec_in);
        hs::StainMatrix m = load_stain_matrix(dec_matrix);
        hs::StainChannels ch = hs::colour_deconvolve(hs::to_optical_density(rgb), m);
        std::ofstream f(dec_out_dab, std::ios::binary);
        if (!f) throw std::runtime_error("cannot create " + dec_out_dab);
        for (size_t i = 0; i < ch.img.pixels(); ++i) {
            float v = ch.img.data[3 * i];
            f.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
        std::cout << "wrote " << ch.img.pixels() << " DAB values ("
                  << ch.negative_fraction * 100 << "% negative entries)\n";
    });

    // intensity
    auto* inten = app.add_subcommand("intensity", "stain intensity description image");
    std::string in_in, in_out;
    int in_k = 4;
    inten->add_option("--in", in_in)->required();
    inten->add_option("--out", in_out)->required();
    inten->add_option("--k", in_k, "luminance bins");
    inten->callback([&] {
        hs::lamt::LamtParams p;
        p.k_bins = in_k;
        p.seed = seed;
        hs::RgbImage rgb = hs::io::read_rgb_png(in_in);
        auto stage = hs::eval::stain_intensity(rgb, p);
        hs::io::write_intensity_png(in_out, stage.ila);
        std::cout << "wrote " << in_out << "\n";
    });

    // segment
    auto* segc = app.add_subcommand("segment", "nuclei instance segmentation");
    std::string seg_in, seg_out, seg_params;
    segc->add_option("--in", seg_in, "I_la 16-bit PNG")->required();
    segc->add_option("--out", seg_out)->required();
    segc->add_option("--params", seg_params, "config file with seg.* keys");
    segc->callback([&] {
        hs::Config c = seg_params.empty() ? hs::Config() : hs::Config::from_file(seg_params);
        auto p = params_from_config(c).seg;
        hs::IntensityImage ila = hs::io::read_intensity_png(seg_in);
        hs::MaskImage fg = hs::seg::threshold_foreground(ila, p);
        hs::InstanceLabelMap labels = hs::seg::seeded_watershed(fg, ila, p);
        hs::io::write_labels_png(seg_out, labels);
        std::cout << hs::seg::instance_count(labels) << " instances -> " << seg_out << "\n";
    });

    // score
    auto* score = app.add_subcommand("score", "NAP/NNP baseline H-Score");
    std::string sc_method, sc_in, sc_mask, sc_thr, sc_out;
    score->add_option("--method", sc_method, "nap|nnp")->required();
    score->add_option("--in", sc_in, "RGB PNG")->required();
    score->add_option("--mask", sc_mask, "tissue/tumour mask PNG");
    score->add_option("--thresholds", sc_thr, "config file with score.* keys");
    score->add_option("--out", sc_out, "result CSV");
    score->callback([&] {
        hs::Config c = sc_thr.empty() ? hs::Config() : hs::Config::from_file(sc_thr);
        auto params = params_from_config(c);
        params.lamt.seed = seed;
        hs::RgbImage rgb = hs::io::read_rgb_png(sc_in);
        auto stage = hs::eval::stain_intensity(rgb, params.lamt);
        hs::MaskImage mask = sc_mask.empty()
                                 ? hs::seg::threshold_foreground(stage.ila, params.seg)
                                 : hs::io::read_mask_png(sc_mask);
        std::pair<hs::HScore, hs::IntensityFractions> res;
        if (sc_method == "nap") {
            res = hs::scoring::nap_score(stage.ila, mask, params.thresholds);
        } else if (sc_method == "nnp") {
            hs::IntensityImage region = hs::lamt::build_region_image(stage.ila, mask);
            hs::MaskImage fg = hs::seg::threshold_foreground(region, params.seg);
            auto labels = hs::seg::seeded_watershed(fg, region, params.seg);
            res = hs::scoring::nnp_score(labels, stage.ila, params.thresholds);
        } else {
            throw std::runtime_error("--method must be nap or nnp");
        }
        std::ostringstream row;
        row << sc_in << ',' << sc_method << ',' << res.second.wsn << ',' << res.second.msn << ','
            << res.second.ssn << ',' << res.second.unstained << ',' << res.first.value << '\n';
        if (!sc_out.empty()) {
            std::ofstream f(sc_out);
            f << "image,method,wsn,msn,ssn,unstained,hscore\n" << row.str();
        }
        std::cout << "image,method,wsn,msn,ssn,unstained,hscore\n" << row.str();
    });

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic TMA dataset");
    int sy_n = 10;
    std::string sy_out, sy_spec;
    synth->add_option("--n", sy_n)->required();
    synth->add_option("--out", sy_out)->required();
    synth->add_option("--spec", sy_spec, "config file with synth.* keys");
    synth->callback([&] {
        hs::Config c = sy_spec.empty() ? hs::Config() : hs::Config::from_file(sy_spec);
        hs::synth::DatasetOptions opts;
        opts.count = sy_n;
        opts.seed = seed;
        opts.out_dir = sy_out;
        opts.imbalanced = c.get_bool("synth.imbalanced", false);
        opts.scene.size = c.get_int("synth.size", 64);
        opts.scene.nucleus_count = c.get_int("synth.nuclei", 20);
        opts.scene.radius_min = c.get_double("synth.radius_min", 3.0);
        opts.scene.radius_max = c.get_double("synth.radius_max", 6.0);
        opts.scene.tumour_fraction = c.get_double("synth.tumour_fraction", 0.7);
        opts.scene.noise_std = c.get_double("synth.noise_std", 1.0);
        auto rows = hs::synth::generate_dataset(opts);
        hs::synth::write_manifest((std::filesystem::path(sy_out) / "manifest.csv").string(), rows);
        std::cout << rows.size() << " scenes -> " << sy_out << "\n";
    });

    // train
    auto* trainc = app.add_subcommand("train", "train a regression network");
    std::string tr_arch = "ram_cnn", tr_data, tr_out;
    int tr_scale = 8, tr_res = 64, tr_epochs = 30, tr_batch = 16;
    double tr_lr = 0.001;
    trainc->add_option("--arch", tr_arch, "rgb_cnn|ra_cnn|ram_cnn");
    trainc->add_option("--scale", tr_scale);
    trainc->add_option("--res", tr_res);
    trainc->add_option("--data", tr_data, "manifest CSV")->required();
    trainc->add_option("--out", tr_out, "model checkpoint")->required();
    trainc->add_option("--epochs", tr_epochs);
    trainc->add_option("--batch", tr_batch);
    trainc->add_option("--lr", tr_lr);
    trainc->callback([&] {
        auto params = params_from_config(cfg_of());
        params.lamt.seed = seed;
        auto rows = hs::synth::read_manifest(tr_data);
        auto arch = hs::net::arch_from_name(tr_arch);
        auto spec = hs::net::build_network(arch, tr_scale, tr_res);
        auto samples = hs::eval::load_samples(rows, arch, tr_res, params);
        hs::net::TrainConfig cfg;
        cfg.adam.lr = tr_lr;
        cfg.epochs = tr_epochs;
        cfg.batch_size = tr_batch;
        cfg.seed = seed;
        cfg.threads = threads;
        auto result = hs::net::train(spec, samples, cfg);
        hs::net::save_model(tr_out, result.model);
        std::cout << "final training loss " << result.loss_curve.back() << " -> " << tr_out << "\n";
    });

    // predict
    auto* pred = app.add_subcommand("predict", "predict the H-Score of one image");
    std::string pr_model, pr_sini, pr_siti, pr_rgb;
    pred->add_option("--model", pr_model)->required();
    pred->add_option("--sini", pr_sini, "SINI 16-bit PNG");
    pred->add_option("--siti", pr_siti, "SITI 16-bit PNG");
    pred->add_option("--rgb", pr_rgb, "RGB PNG (rgb_cnn models)");
    pred->callback([&] {
        hs::net::Model model = hs::net::load_model(pr_model);
        std::vector<hs::net::Tensor> inputs;
        int res = model.spec.input_res;
        if (model.spec.arch == hs::net::ArchKind::rgb_cnn) {
            if (pr_rgb.empty()) throw std::runtime_error("rgb_cnn model needs --rgb");
            inputs.push_back(hs::eval::rgb_to_tensor(hs::io::read_rgb_png(pr_rgb), res));
        } else {
            if (pr_sini.empty() || pr_siti.empty())
                throw std::runtime_error("this model needs --sini and --siti");
            auto sini = hs::eval::intensity_to_tensor(hs::io::read_intensity_png(pr_sini), res);
            auto siti = hs::eval::intensity_to_tensor(hs::io::read_intensity_png(pr_siti), res);
            if (model.spec.arch == hs::net::ArchKind::ram_cnn) {
                inputs = {std::move(sini), std::move(siti)};
            } else {
                hs::net::Tensor t(1, 2, res, res);
                std::copy(sini.data.begin(), sini.data.end(), t.data.begin());
                std::copy(siti.data.begin(), siti.data.end(), t.data.begin() + sini.data.size());
                inputs = {std::move(t)};
            }
        }
        std::cout << hs::net::predict_score(model, inputs) << "\n";
    });

    // evaluate
    auto* evalc = app.add_subcommand("evaluate", "MAE/SD/CC report from a predictions CSV");
    std::string ev_in;
    evalc->add_option("--in", ev_in, "CSV with prediction,label in last two columns")->required();
    evalc->callback([&] {
        std::ifstream f(ev_in);
        if (!f) throw std::runtime_error("cannot open " + ev_in);
        std::string line;
        std::getline(f, line);  // header
        std::vector<double> preds, labels;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            size_t c2 = line.rfind(',');
            size_t c1 = line.rfind(',', c2 - 1);
            preds.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
            labels.push_back(std::stod(line.substr(c2 + 1)));
        }
        std::cout << hs::eval::format_report(hs::eval::evaluate(preds, labels));
    });

    // cv
    auto* cvc = app.add_subcommand("cv", "leave-k-out cross validation");
    std::string cv_data, cv_arch = "ram_cnn", cv_out;
    int cv_scale = 8, cv_res = 64, cv_epochs = 30, cv_batch = 16, cv_heldout = 5;
    double cv_lr = 0.001;
    cvc->add_option("--data", cv_data)->required();
    cvc->add_option("--arch", cv_arch);
    cvc->add_option("--scale", cv_scale);
    cvc->add_option("--res", cv_res);
    cvc->add_option("--epochs", cv_epochs);
    cvc->add_option("--batch", cv_batch);
    cvc->add_option("--lr", cv_lr);
    cvc->add_option("--held-out", cv_heldout);
    cvc->add_option("--out", cv_out, "pooled scatter CSV (pred,label)");
    cvc->callback([&] {
        auto params = params_from_config(cfg_of());
        params.lamt.seed = seed;
        auto rows = hs::synth::read_manifest(cv_data);
        auto arch = hs::net::arch_from_name(cv_arch);
        auto spec = hs::net::build_network(arch, cv_scale, cv_res);
        auto samples = hs::eval::load_samples(rows, arch, cv_res, params);
        hs::net::TrainConfig cfg;
        cfg.adam.lr = cv_lr;
        cfg.epochs = cv_epochs;
        cfg.batch_size = cv_batch;
        cfg.seed = seed;
        auto result = hs::eval::cross_validate(samples, cv_heldout, spec, cfg, seed, threads);
        std::cout << "folds: " << result.folds.size() << "\n"
                  << hs::eval::format_report(result.pooled);
        if (!cv_out.empty()) {
            std::ofstream f(cv_out);
            f << "prediction,label\n";
            for (size_t i = 0; i < result.pooled_preds.size(); ++i)
                f << result.pooled_preds[i] << ',' << result.pooled_labels[i] << '\n';
        }
    });

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "end-to-end scoring over a manifest");
    std::string pl_manifest, pl_method = "nap", pl_model, pl_csv, pl_report;
    pipe->add_option("--manifest", pl_manifest)->required();
    pipe->add_option("--method", pl_method, "nap|nnp|rgb_cnn|ra_cnn|ram_cnn");
    pipe->add_option("--model", pl_model, "checkpoint for CNN methods");
    pipe->add_option("--out", pl_csv, "predictions CSV");
    pipe->add_option("--report", pl_report, "summary text file");
    pipe->callback([&] {
        hs::eval::PipelineConfig cfg;
        cfg.manifest = pl_manifest;
        cfg.method = pl_method;
        cfg.model_path = pl_model;
        cfg.out_csv = pl_csv;
        cfg.out_report = pl_report;
        cfg.params = params_from_config(cfg_of());
        cfg.params.lamt.seed = seed;
        std::cout << hs::eval::format_report(hs::eval::run_pipeline(cfg));
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
