#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "histoscore/net.hpp"

using namespace histoscore::net;

namespace {

// Single-layer network wrapper for unit probes.
NetworkSpec single_layer(LayerSpec layer, int channels, int res) {
    NetworkSpec spec;
    spec.arch = ArchKind::rgb_cnn;  // irrelevant for hand-built graphs
    spec.input_res = res;
    Node in;
    in.spec.kind = LayerKind::input;
    in.spec.out_channels = channels;
    spec.nodes.push_back(in);
    spec.input_nodes = {0};
    Node body;
    body.spec = layer;
    body.inputs = {0};
    spec.nodes.push_back(body);
    spec.output_node = 1;
    check_shapes(spec);
    return spec;
}

Tensor filled(int n, int c, int h, int w, std::initializer_list<double> v) {
    Tensor t(n, c, h, w);
    REQUIRE(t.size() == v.size());
    std::copy(v.begin(), v.end(), t.data.begin());
    return t;
}

const Shape& out_shape(const NetworkSpec& spec) { return spec.shapes[spec.output_node]; }

}  // namespace

TEST_CASE("maxpool picks window maxima") {
    LayerSpec pool;
    pool.kind = LayerKind::maxpool;
    pool.pool = 2;
    auto spec = single_layer(pool, 1, 2);
    auto model = init_model(spec, 1);
    Workspace ws;
    auto out = forward(model, {filled(1, 1, 2, 2, {1, 2, 3, 4})}, false, nullptr, ws);
    REQUIRE(out.size() == 1);
    CHECK(out.data[0] == doctest::Approx(4.0));
}

TEST_CASE("conv of zero input yields the bias") {
    LayerSpec conv;
    conv.kind = LayerKind::conv;
    conv.out_channels = 2;
    conv.kernel = 3;
    auto spec = single_layer(conv, 1, 4);
    auto model = init_model(spec, 3);
    model.params[1].b.data = {0.25, -1.5};
    Workspace ws;
    auto out = forward(model, {Tensor(1, 1, 4, 4)}, false, nullptr, ws);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(out.at(0, 0, y, x) == doctest::Approx(0.25));
            CHECK(out.at(0, 1, y, x) == doctest::Approx(-1.5));
        }
}

TEST_CASE("relu and sigmoid pointwise values") {
    LayerSpec relu;
    relu.kind = LayerKind::relu;
    auto spec = single_layer(relu, 1, 2);
    auto model = init_model(spec, 1);
    Workspace ws;
    auto out = forward(model, {filled(1, 1, 2, 2, {-1, 0, 0.5, 3})}, false, nullptr, ws);
    CHECK(out.data == std::vector<double>{0, 0, 0.5, 3});

    LayerSpec sig;
    sig.kind = LayerKind::sigmoid;
    auto sspec = single_layer(sig, 1, 2);
    auto smodel = init_model(sspec, 1);
    auto sout = forward(smodel, {filled(1, 1, 2, 2, {0, 1, -1, 100})}, false, nullptr, ws);
    CHECK(sout.data[0] == doctest::Approx(0.5));
    CHECK(sout.data[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(sout.data[2] == doctest::Approx(1.0 - sout.data[1]));
    CHECK(sout.data[3] == doctest::Approx(1.0));
}

TEST_CASE("dropout is identity in eval mode and scales in train mode") {
    LayerSpec drop;
    drop.kind = LayerKind::dropout;
    drop.rate = 0.5;
    auto spec = single_layer(drop, 1, 2);
    auto model = init_model(spec, 1);
    Workspace ws;
    auto in = filled(1, 1, 2, 2, {1, 2, 3, 4});
    auto out = forward(model, {in}, false, nullptr, ws);
    CHECK(out.data == in.data);

    // train mode: each kept value is scaled by 1/(1-rate), dropped is 0
    std::mt19937_64 rng(9);
    auto tout = forward(model, {in}, true, &rng, ws);
    for (size_t i = 0; i < 4; ++i) {
        bool kept = tout.data[i] != 0.0;
        if (kept) CHECK(tout.data[i] == doctest::Approx(in.data[i] * 2.0));
    }

    // rate 0 never drops
    drop.rate = 0.0;
    auto spec0 = single_layer(drop, 1, 2);
    auto model0 = init_model(spec0, 1);
    auto out0 = forward(model0, {in}, true, &rng, ws);
    CHECK(out0.data == in.data);
}

TEST_CASE("upsample repeats pixels") {
    LayerSpec up;
    up.kind = LayerKind::upsample;
    up.factor = 2;
    auto spec = single_layer(up, 1, 2);
    auto model = init_model(spec, 1);
    Workspace ws;
    auto out = forward(model, {filled(1, 1, 2, 2, {1, 2, 3, 4})}, false, nullptr, ws);
    REQUIRE(out.h == 4);
    CHECK(out.at(0, 0, 0, 0) == 1);
    CHECK(out.at(0, 0, 0, 1) == 1);
    CHECK(out.at(0, 0, 1, 1) == 1);
    CHECK(out.at(0, 0, 0, 2) == 2);
    CHECK(out.at(0, 0, 3, 3) == 4);
}

TEST_CASE("dice loss reference values") {
    Tensor p(1, 1, 1, 4), t(1, 1, 1, 4);
    // perfect binary match: 2*4+1 over 4+4+1 -> -log 1 = 0
    p.data = {1, 1, 1, 1};
    t.data = {1, 1, 1, 1};
    CHECK(dice_loss(p, t) == doctest::Approx(0.0));
    // half match: 2*sum(pt)+1 = 5 over sum(p^2)+sum(t^2)+1 = 7
    p.data = {1, 1, 0, 0};
    t.data = {1, 1, 1, 1};
    CHECK(dice_loss(p, t) == doctest::Approx(-std::log(5.0 / 7.0)));
    // no overlap: eps keeps the loss finite at -log(1/(4+1))
    p.data = {0, 0, 0, 0};
    t.data = {1, 1, 0, 0};
    CHECK(dice_loss(p, t) == doctest::Approx(-std::log(1.0 / 3.0)));
}

TEST_CASE("dice loss gradient matches finite differences") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    Tensor p(1, 1, 4, 4), t(1, 1, 4, 4);
    for (auto& v : p.data) v = u(rng);
    for (auto& v : t.data) v = rng() % 2;
    Tensor d(1, 1, 4, 4);
    dice_loss(p, t, &d);
    double step = 1e-6;
    for (size_t i = 0; i < p.size(); ++i) {
        double keep = p.data[i];
        p.data[i] = keep + step;
        double up = dice_loss(p, t);
        p.data[i] = keep - step;
        double down = dice_loss(p, t);
        p.data[i] = keep;
        CHECK(d.data[i] == doctest::Approx((up - down) / (2 * step)).epsilon(1e-4));
    }
}

TEST_CASE("score loss reference values and gradient") {
    CHECK(score_loss({100, 200}, {100, 200}) == doctest::Approx(0.0));
    CHECK(score_loss({110, 200}, {100, 190}) == doctest::Approx(10.0));
    CHECK(score_loss({110, 180}, {100, 200}) == doctest::Approx(15.0));
    std::vector<double> d;
    score_loss({110, 80}, {100, 100}, &d);
    CHECK(d == std::vector<double>{0.5, -0.5});
}

TEST_CASE("adam takes a bias-corrected first step") {
    LayerSpec fc;
    fc.kind = LayerKind::fc;
    fc.out_features = 1;
    auto spec = single_layer(fc, 1, 1);
    auto model = init_model(spec, 2);
    double w0 = model.params[1].w.data[0];
    auto state = init_adam(model);
    AdamConfig cfg;

    // zero gradient leaves parameters untouched
    auto zeros = zero_gradients(model);
    adam_step(model, zeros, state, cfg);
    CHECK(model.params[1].w.data[0] == doctest::Approx(w0));

    // first non-zero step moves by ~lr against the gradient sign
    state = init_adam(model);  // reset the step counter
    auto grads = zero_gradients(model);
    grads.params[1].w.data[0] = 3.7;
    adam_step(model, grads, state, cfg);
    CHECK(model.params[1].w.data[0] == doctest::Approx(w0 - cfg.lr).epsilon(1e-4));
}

TEST_CASE("table architectures have the published shapes at full scale") {
    auto spec = build_network(ArchKind::ram_cnn, 1, 512);
    // two input columns
    REQUIRE(spec.input_nodes.size() == 2);
    CHECK(spec.shapes[spec.input_nodes[0]] == Shape{1, 512, 512});
    CHECK(spec.shapes[spec.input_nodes[1]] == Shape{1, 512, 512});
    // find the concat node: 16+16 channels at 128x128
    bool saw_concat = false;
    for (size_t i = 0; i < spec.nodes.size(); ++i) {
        if (spec.nodes[i].spec.kind == LayerKind::concat) {
            CHECK(spec.shapes[i] == Shape{32, 128, 128});
            saw_concat = true;
        }
    }
    CHECK(saw_concat);
    // fc widths 2048 -> 1024 -> 1
    std::vector<int> fc_widths;
    for (const auto& node : spec.nodes)
        if (node.spec.kind == LayerKind::fc) fc_widths.push_back(node.spec.out_features);
    CHECK(fc_widths == std::vector<int>{2048, 1024, 1});
    CHECK(out_shape(spec).count() == 1);

    auto rgb = build_network(ArchKind::rgb_cnn, 1, 512);
    REQUIRE(rgb.input_nodes.size() == 1);
    CHECK(rgb.shapes[rgb.input_nodes[0]].c == 3);
    auto ra = build_network(ArchKind::ra_cnn, 1, 512);
    REQUIRE(ra.input_nodes.size() == 1);
    CHECK(ra.shapes[ra.input_nodes[0]].c == 2);
}

TEST_CASE("scale divisor shrinks filters with a floor of one") {
    auto spec = build_network(ArchKind::ram_cnn, 8, 64);
    int first_conv = -1;
    std::vector<int> fc_widths;
    for (size_t i = 0; i < spec.nodes.size(); ++i) {
        if (spec.nodes[i].spec.kind == LayerKind::conv && first_conv < 0) first_conv = (int)i;
        if (spec.nodes[i].spec.kind == LayerKind::fc) fc_widths.push_back(spec.nodes[i].spec.out_features);
    }
    CHECK(spec.nodes[first_conv].spec.out_channels == 1);  // 8/8
    CHECK(fc_widths == std::vector<int>{256, 128, 1});
    CHECK_THROWS(build_network(ArchKind::ram_cnn, 1, 100));  // not a power of two
}

TEST_CASE("mini unet output matches its input resolution") {
    auto spec = build_network(ArchKind::mini_unet, 4, 64);
    CHECK(out_shape(spec) == Shape{1, 64, 64});
    CHECK(spec.nodes[spec.output_node].spec.kind == LayerKind::sigmoid);
}

TEST_CASE("analytic gradients match finite differences everywhere") {
    // one tiny network per architecture, both loss heads as applicable
    CHECK(gradient_check(build_network(ArchKind::ram_cnn, 8, 16), false, 31, 48) < 1e-4);
    CHECK(gradient_check(build_network(ArchKind::rgb_cnn, 8, 16), false, 32, 48) < 1e-4);
    CHECK(gradient_check(build_network(ArchKind::ra_cnn, 8, 16), false, 33, 48) < 1e-4);
    CHECK(gradient_check(build_network(ArchKind::mini_unet, 8, 16), true, 34, 48) < 1e-4);
}

TEST_CASE("merged columns stay independent before the concat") {
    auto spec = build_network(ArchKind::ram_cnn, 8, 32);
    auto model = init_model(spec, 17);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor a(1, 1, 32, 32), b(1, 1, 32, 32), b2(1, 1, 32, 32);
    for (auto& v : a.data) v = u(rng);
    for (auto& v : b.data) v = u(rng);
    for (auto& v : b2.data) v = u(rng);

    Workspace ws;
    forward(model, {a, b}, false, nullptr, ws);
    auto acts1 = ws.acts;
    forward(model, {a, b2}, false, nullptr, ws);
    // every activation reachable only from column one is bitwise identical
    // across the two runs, despite column two's input changing
    std::vector<bool> depends_b(spec.nodes.size(), false);
    depends_b[spec.input_nodes[1]] = true;
    for (size_t i = 0; i < spec.nodes.size(); ++i)
        for (int in : spec.nodes[i].inputs)
            if (depends_b[in]) depends_b[i] = true;
    int checked = 0;
    for (size_t i = 0; i < spec.nodes.size(); ++i) {
        if (depends_b[i] || spec.nodes[i].spec.kind == LayerKind::input) continue;
        CHECK(ws.acts[i].data == acts1[i].data);
        ++checked;
    }
    CHECK(checked >= 2);
}

TEST_CASE("training overfits a single sample") {
    auto spec = build_network(ArchKind::ram_cnn, 8, 16);
    Sample s;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2; ++i) {
        Tensor t(1, 1, 16, 16);
        for (auto& v : t.data) v = u(rng);
        s.inputs.push_back(t);
    }
    s.label = 150.0;
    TrainConfig cfg;
    cfg.epochs = 1200;
    cfg.batch_size = 1;
    cfg.seed = 3;
    cfg.adam.lr = 0.05;
    auto result = train(spec, {s}, cfg);
    REQUIRE(!result.loss_curve.empty());
    // dropout keeps the training loss noisy; the eval-mode prediction is the
    // real convergence signal
    CHECK(std::abs(predict_score(result.model, s.inputs) - 150.0) < 5.0);
}

TEST_CASE("training is bitwise deterministic across runs and thread counts") {
    auto spec = build_network(ArchKind::ram_cnn, 8, 16);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Sample> data;
    for (int i = 0; i < 6; ++i) {
        Sample s;
        for (int k = 0; k < 2; ++k) {
            Tensor t(1, 1, 16, 16);
            for (auto& v : t.data) v = u(rng);
            s.inputs.push_back(t);
        }
        s.label = 50.0 * i;
        data.push_back(std::move(s));
    }
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 3;
    cfg.seed = 11;
    auto r1 = train(spec, data, cfg);
    auto r2 = train(spec, data, cfg);
    cfg.threads = 3;
    auto r3 = train(spec, data, cfg);
    CHECK(r1.loss_curve == r2.loss_curve);
    CHECK(r1.loss_curve == r3.loss_curve);
    CHECK(r1.model.params.back().w.data == r3.model.params.back().w.data);

    cfg.threads = 1;
    cfg.seed = 12;
    auto r4 = train(spec, data, cfg);
    CHECK(r1.loss_curve != r4.loss_curve);
}

TEST_CASE("checkpoints round-trip and detect corruption") {
    auto spec = build_network(ArchKind::ra_cnn, 8, 16);
    auto model = init_model(spec, 41);
    std::string path = "tmp_model.hscn";
    save_model(path, model);
    auto loaded = load_model(path);
    CHECK(loaded.spec.arch == model.spec.arch);
    CHECK(loaded.spec.scale == model.spec.scale);
    REQUIRE(loaded.params.size() == model.params.size());
    // parameters pass through float32, so compare at that precision
    for (size_t i = 0; i < model.params.size(); ++i)
        for (size_t k = 0; k < model.params[i].w.size(); ++k)
            CHECK(loaded.params[i].w.data[k]
                  == doctest::Approx(model.params[i].w.data[k]).epsilon(1e-6));

    // identical predictions after the round trip
    Tensor in(1, 2, 16, 16);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : in.data) v = u(rng);
    Workspace ws;
    double before = forward(model, {in}, false, nullptr, ws).data[0];
    double after = forward(loaded, {in}, false, nullptr, ws).data[0];
    CHECK(after == doctest::Approx(before).epsilon(1e-5));

    // flip one byte in the blob region: the checksum must catch it
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-40, std::ios::end);
    char byte = 0;
    f.read(&byte, 1);
    f.seekp(-40, std::ios::end);
    byte = static_cast<char>(byte ^ 0x5a);
    f.write(&byte, 1);
    f.close();
    CHECK_THROWS(load_model(path));
    CHECK_THROWS(load_model("tmp_model_missing.hscn"));
    std::remove(path.c_str());
}
