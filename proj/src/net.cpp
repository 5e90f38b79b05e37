#include "histoscore/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <thread>

namespace histoscore::net {

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27; x *= 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

int scaled(int full, int s) { return std::max(1, full / s); }

}  // namespace

const char* arch_name(ArchKind kind) {
    switch (kind) {
        case ArchKind::rgb_cnn: return "rgb_cnn";
        case ArchKind::ra_cnn: return "ra_cnn";
        case ArchKind::ram_cnn: return "ram_cnn";
        case ArchKind::mini_unet: return "mini_unet";
    }
    return "?";
}

ArchKind arch_from_name(const std::string& name) {
    for (ArchKind k : {ArchKind::rgb_cnn, ArchKind::ra_cnn, ArchKind::ram_cnn, ArchKind::mini_unet})
        if (name == arch_name(k)) return k;
    throw std::invalid_argument("unknown architecture: " + name);
}

void check_shapes(NetworkSpec& spec) {
    spec.shapes.assign(spec.nodes.size(), Shape{});
    for (size_t i = 0; i < spec.nodes.size(); ++i) {
        const Node& node = spec.nodes[i];
        for (int in : node.inputs)
            if (in < 0 || in >= static_cast<int>(i))
                throw std::invalid_argument("network nodes are not topologically ordered");
        auto in_shape = [&](int k) { return spec.shapes[node.inputs[k]]; };
        Shape& out = spec.shapes[i];
        switch (node.spec.kind) {
            case LayerKind::input:
                out = {node.spec.out_channels, spec.input_res, spec.input_res};
                break;
            case LayerKind::conv: {
                Shape s = in_shape(0);
                if (node.spec.kernel < 1 || node.spec.kernel % 2 == 0)
                    throw std::invalid_argument("conv kernel must be odd and positive");
                if (node.spec.out_channels < 1) throw std::invalid_argument("conv needs filters");
                out = {node.spec.out_channels, s.h, s.w};  // same padding
                break;
            }
            case LayerKind::maxpool: {
                Shape s = in_shape(0);
                if (s.h < node.spec.pool || s.w < node.spec.pool)
                    throw std::invalid_argument("maxpool input too small");
                out = {s.c, s.h / node.spec.pool, s.w / node.spec.pool};
                break;
            }
            case LayerKind::relu:
            case LayerKind::sigmoid:
                out = in_shape(0);
                break;
            case LayerKind::dropout:
                if (node.spec.rate < 0.0 || node.spec.rate >= 1.0)
                    throw std::invalid_argument("dropout rate must be in [0,1)");
                out = in_shape(0);
                break;
            case LayerKind::fc: {
                if (node.spec.out_features < 1) throw std::invalid_argument("fc needs width");
                out = {node.spec.out_features, 1, 1};
                break;
            }
            case LayerKind::flatten: {
                Shape s = in_shape(0);
                out = {static_cast<int>(s.count()), 1, 1};
                break;
            }
            case LayerKind::concat: {
                Shape s = in_shape(0);
                int c = 0;
                for (size_t k = 0; k < node.inputs.size(); ++k) {
                    Shape sk = in_shape(static_cast<int>(k));
                    if (sk.h != s.h || sk.w != s.w)
                        throw std::invalid_argument("concat inputs differ spatially");
                    c += sk.c;
                }
                out = {c, s.h, s.w};
                break;
            }
            case LayerKind::upsample: {
                Shape s = in_shape(0);
                out = {s.c, s.h * node.spec.factor, s.w * node.spec.factor};
                break;
            }
        }
    }
    if (spec.output_node < 0 || spec.output_node >= static_cast<int>(spec.nodes.size()))
        throw std::invalid_argument("missing output node");
}

NetworkSpec build_network(ArchKind kind, int scale, int input_res) {
    if (scale < 1) throw std::invalid_argument("scale must be >= 1");
    if (input_res < 16 || (input_res & (input_res - 1)) != 0)
        throw std::invalid_argument("input resolution must be a power of two >= 16");

    NetworkSpec spec;
    spec.arch = kind;
    spec.scale = scale;
    spec.input_res = input_res;

    auto add = [&](LayerSpec ls, std::vector<int> inputs) {
        spec.nodes.push_back({ls, std::move(inputs)});
        return static_cast<int>(spec.nodes.size()) - 1;
    };
    auto conv = [&](int in, int filters, int k) {
        int c = add({.kind = LayerKind::conv, .out_channels = filters, .kernel = k}, {in});
        return add({.kind = LayerKind::relu}, {c});
    };
    auto pool = [&](int in) { return add({.kind = LayerKind::maxpool, .pool = 2}, {in}); };
    // Table-1 column: Conv1 8x7x7 / pool, Conv2 16x5x5 / pool
    auto column = [&](int channels) {
        int in = add({.kind = LayerKind::input, .out_channels = channels}, {});
        spec.input_nodes.push_back(in);
        int x = pool(conv(in, scaled(8, scale), 7));
        return pool(conv(x, scaled(16, scale), 5));
    };
    // Table-1 trunk: Conv3/Conv4 64x3x3 / pool, FC1 2048, FC2 1024, head
    auto trunk = [&](int x) {
        x = pool(conv(x, scaled(64, scale), 3));
        x = pool(conv(x, scaled(64, scale), 3));
        x = add({.kind = LayerKind::flatten}, {x});
        x = add({.kind = LayerKind::fc, .out_features = scaled(2048, scale)}, {x});
        x = add({.kind = LayerKind::relu}, {x});
        x = add({.kind = LayerKind::dropout, .rate = 0.3}, {x});
        x = add({.kind = LayerKind::fc, .out_features = scaled(1024, scale)}, {x});
        x = add({.kind = LayerKind::relu}, {x});
        x = add({.kind = LayerKind::dropout, .rate = 0.5}, {x});
        return add({.kind = LayerKind::fc, .out_features = 1}, {x});
    };

    switch (kind) {
        case ArchKind::ram_cnn: {
            int a = column(1);
            int b = column(1);
            int merged = add({.kind = LayerKind::concat}, {a, b});
            spec.output_node = trunk(merged);
            break;
        }
        case ArchKind::rgb_cnn:
            spec.output_node = trunk(column(3));
            break;
        case ArchKind::ra_cnn:
            spec.output_node = trunk(column(2));
            break;
        case ArchKind::mini_unet: {
            int base = scaled(8, scale);
            int in = add({.kind = LayerKind::input, .out_channels = 1}, {});
            spec.input_nodes.push_back(in);
            int e1 = conv(in, base, 3);
            int e2 = conv(pool(e1), 2 * base, 3);
            int bottom = conv(pool(e2), 4 * base, 3);
            int u2 = add({.kind = LayerKind::upsample, .factor = 2}, {bottom});
            int d2 = conv(add({.kind = LayerKind::concat}, {u2, e2}), 2 * base, 3);
            int u1 = add({.kind = LayerKind::upsample, .factor = 2}, {d2});
            int d1 = conv(add({.kind = LayerKind::concat}, {u1, e1}), base, 3);
            int head = add({.kind = LayerKind::conv, .out_channels = 1, .kernel = 1}, {d1});
            spec.output_node = add({.kind = LayerKind::sigmoid}, {head});
            break;
        }
    }
    check_shapes(spec);
    return spec;
}

Model init_model(const NetworkSpec& spec, uint64_t seed) {
    Model model;
    model.spec = spec;
    check_shapes(model.spec);
    model.params.resize(spec.nodes.size());
    std::mt19937_64 rng(mix_seed(seed, 0x48534e43ull));
    for (size_t i = 0; i < spec.nodes.size(); ++i) {
        const LayerSpec& ls = spec.nodes[i].spec;
        NodeParams& p = model.params[i];
        if (ls.kind == LayerKind::conv) {
            Shape in = model.spec.shapes[spec.nodes[i].inputs[0]];
            p.w = Tensor(ls.out_channels, in.c, ls.kernel, ls.kernel);
            p.b = Tensor(ls.out_channels, 1, 1, 1);
            double stddev = std::sqrt(2.0 / (in.c * ls.kernel * ls.kernel));
            std::normal_distribution<double> dist(0.0, stddev);
            for (auto& v : p.w.data) v = dist(rng);
        } else if (ls.kind == LayerKind::fc) {
            Shape in = model.spec.shapes[spec.nodes[i].inputs[0]];
            int fan_in = static_cast<int>(in.count());
            p.w = Tensor(ls.out_features, fan_in, 1, 1);
            p.b = Tensor(ls.out_features, 1, 1, 1);
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
            for (auto& v : p.w.data) v = dist(rng);
        }
    }
    return model;
}

namespace {

void conv_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const int k = w.h, pad = k / 2;
    for (int n = 0; n < in.n; ++n)
        for (int oc = 0; oc < out.c; ++oc)
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x) {
                    double acc = b.data[oc];
                    for (int ic = 0; ic < in.c; ++ic)
                        for (int ky = 0; ky < k; ++ky) {
                            int iy = y + ky - pad;
                            if (iy < 0 || iy >= in.h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                int ix = x + kx - pad;
                                if (ix < 0 || ix >= in.w) continue;
                                acc += w.at(oc, ic, ky, kx) * in.at(n, ic, iy, ix);
                            }
                        }
                    out.at(n, oc, y, x) = acc;
                }
}

void conv_backward(const Tensor& in, const Tensor& w, const Tensor& dout, Tensor& din,
                   Tensor& dw, Tensor& db) {
    const int k = w.h, pad = k / 2;
    for (int n = 0; n < in.n; ++n)
        for (int oc = 0; oc < dout.c; ++oc)
            for (int y = 0; y < dout.h; ++y)
                for (int x = 0; x < dout.w; ++x) {
                    double g = dout.at(n, oc, y, x);
                    if (g == 0.0) continue;
                    db.data[oc] += g;
                    for (int ic = 0; ic < in.c; ++ic)
                        for (int ky = 0; ky < k; ++ky) {
                            int iy = y + ky - pad;
                            if (iy < 0 || iy >= in.h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                int ix = x + kx - pad;
                                if (ix < 0 || ix >= in.w) continue;
                                dw.at(oc, ic, ky, kx) += g * in.at(n, ic, iy, ix);
                                din.at(n, ic, iy, ix) += g * w.at(oc, ic, ky, kx);
                            }
                        }
                }
}

}  // namespace

const Tensor& forward(const Model& model, const std::vector<Tensor>& inputs, bool train,
                      std::mt19937_64* rng, Workspace& ws) {
    const NetworkSpec& spec = model.spec;
    if (inputs.size() != spec.input_nodes.size())
        throw std::invalid_argument("wrong number of network inputs");
    ws.acts.resize(spec.nodes.size());
    ws.pool_argmax.resize(spec.nodes.size());
    ws.drop_mask.resize(spec.nodes.size());

    size_t next_input = 0;
    for (size_t i = 0; i < spec.nodes.size(); ++i) {
        const Node& node = spec.nodes[i];
        const Shape& sh = spec.shapes[i];
        switch (node.spec.kind) {
            case LayerKind::input: {
                const Tensor& t = inputs[next_input++];
                if (t.c != sh.c || t.h != sh.h || t.w != sh.w)
                    throw std::invalid_argument("input tensor shape mismatch");
                ws.acts[i] = t;
                break;
            }
            case LayerKind::conv: {
                const Tensor& in = ws.acts[node.inputs[0]];
                ws.acts[i] = Tensor(in.n, sh.c, sh.h, sh.w);
                conv_forward(in, model.params[i].w, model.params[i].b, ws.acts[i]);
                break;
            }
            case LayerKind::relu: {
                const Tensor& in = ws.acts[node.inputs[0]];
                ws.acts[i] = in;
                for (auto& v : ws.acts[i].data) v = v > 0 ? v : 0.0;
                break;
            }
            case LayerKind::sigmoid: {
                const Tensor& in = ws.acts[node.inputs[0]];
                ws.acts[i] = in;
                for (auto& v : ws.acts[i].data) v = 1.0 / (1.0 + std::exp(-v));
                break;
            }
            case LayerKind::maxpool: {
                const Tensor& in = ws.acts[node.inputs[0]];
                const int p = node.spec.pool;
                Tensor out(in.n, sh.c, sh.h, sh.w);
                auto& argmax = ws.pool_argmax[i];
                argmax.assign(out.size(), 0);
                size_t idx = 0;
                for (int n = 0; n < in.n; ++n)
                    for (int c = 0; c < sh.c; ++c)
                        for (int y = 0; y < sh.h; ++y)
                            for (int x = 0; x < sh.w; ++x, ++idx) {
                                double best = -std::numeric_limits<double>::infinity();
                                int besti = 0;
                                for (int dy = 0; dy < p; ++dy)
                                    for (int dx = 0; dx < p; ++dx) {
                                        int iy = y * p + dy, ix = x * p + dx;
                                        double v = in.at(n, c, iy, ix);
                                        if (v > best) {
                                            best = v;
                                            besti = iy * in.w + ix;
                                        }
                                    }
                                out.data[idx] = best;
                                argmax[idx] = besti;
                            }
                ws.acts[i] = std::move(out);
                break;
            }
            case LayerKind::dropout: {
                const Tensor& in = ws.acts[node.inputs[0]];
                ws.acts[i] = in;
                if (train && node.spec.rate > 0.0) {
                    if (!rng) throw std::invalid_argument("dropout in train mode needs an RNG");
                    auto& mask = ws.drop_mask[i];
                    mask.assign(in.size(), 1);
                    std::bernoulli_distribution keep(1.0 - node.spec.rate);
                    double inv = 1.0 / (1.0 - node.spec.rate);
                    for (size_t j = 0; j < in.size(); ++j) {
                        mask[j] = keep(*rng) ? 1 : 0;
                        ws.acts[i].data[j] = mask[j] ? in.data[j] * inv : 0.0;
                    }
                } else {
                    ws.drop_mask[i].clear();
                }
                break;
            }
            case LayerKind::fc: {
                const Tensor& in = ws.acts[node.inputs[0]];
                const Tensor& w = model.params[i].w;
                Tensor out(in.n, sh.c, 1, 1);
                size_t fan_in = in.size() / in.n;
                for (int n = 0; n < in.n; ++n) {
                    const double* src = in.data.data() + n * fan_in;
                    for (int o = 0; o < sh.c; ++o) {
                        double acc = model.params[i].b.data[o];
                        const double* wr = w.data.data() + static_cast<size_t>(o) * fan_in;
                        for (size_t j = 0; j < fan_in; ++j) acc += wr[j] * src[j];
                        out.at(n, o, 0, 0) = acc;
                    }
                }
                ws.acts[i] = std::move(out);
                break;
            }
            case LayerKind::flatten: {
                const Tensor& in = ws.acts[node.inputs[0]];
                Tensor out(in.n, sh.c, 1, 1);
                out.data = in.data;
                ws.acts[i] = std::move(out);
                break;
            }
            case LayerKind::concat: {
                int n = ws.acts[node.inputs[0]].n;
                Tensor out(n, sh.c, sh.h, sh.w);
                for (int b = 0; b < n; ++b) {
                    int coff = 0;
                    for (int src : node.inputs) {
                        const Tensor& t = ws.acts[src];
                        size_t plane = static_cast<size_t>(t.c) * t.h * t.w;
                        std::copy_n(t.data.data() + b * plane, plane,
                                    out.data.data() +
                                        (static_cast<size_t>(b) * sh.c + coff) * sh.h * sh.w);
                        coff += t.c;
                    }
                }
                ws.acts[i] = std::move(out);
                break;
            }
            case LayerKind::upsample: {
                const Tensor& in = ws.acts[node.inputs[0]];
                const int f = node.spec.factor;
                Tensor out(in.n, sh.c, sh.h, sh.w);
                for (int n = 0; n < in.n; ++n)
                    for (int c = 0; c < sh.c; ++c)
                        for (int y = 0; y < sh.h; ++y)
                            for (int x = 0; x < sh.w; ++x)
                                out.at(n, c, y, x) = in.at(n, c, y / f, x / f);
                ws.acts[i] = std::move(out);
                break;
            }
        }
    }
    return ws.acts[spec.output_node];
}

Gradients zero_gradients(const Model& model) {
    Gradients g;
    g.params.resize(model.params.size());
    for (size_t i = 0; i < model.params.size(); ++i) {
        if (!model.params[i].w.data.empty()) {
            g.params[i].w = model.params[i].w;
            g.params[i].b = model.params[i].b;
            std::fill(g.params[i].w.data.begin(), g.params[i].w.data.end(), 0.0);
            std::fill(g.params[i].b.data.begin(), g.params[i].b.data.end(), 0.0);
        }
    }
    return g;
}

void Gradients::accumulate(const Gradients& other) {
    for (size_t i = 0; i < params.size(); ++i) {
        for (size_t j = 0; j < params[i].w.data.size(); ++j)
            params[i].w.data[j] += other.params[i].w.data[j];
        for (size_t j = 0; j < params[i].b.data.size(); ++j)
            params[i].b.data[j] += other.params[i].b.data[j];
    }
}

void Gradients::scale(double s) {
    for (auto& p : params) {
        for (auto& v : p.w.data) v *= s;
        for (auto& v : p.b.data) v *= s;
    }
}

void backward(const Model& model, const Workspace& ws, const Tensor& d_output, Gradients& grads) {
    const NetworkSpec& spec = model.spec;
    std::vector<Tensor> d(spec.nodes.size());
    auto ensure = [&](int i) {
        if (d[i].data.empty()) {
            const Tensor& a = ws.acts[i];
            d[i] = Tensor(a.n, a.c, a.h, a.w);
        }
    };
    d[spec.output_node] = d_output;

    for (int i = static_cast<int>(spec.nodes.size()) - 1; i >= 0; --i) {
        if (d[i].data.empty()) continue;  // node not on any path to the loss
        const Node& node = spec.nodes[i];
        switch (node.spec.kind) {
            case LayerKind::input:
                break;
            case LayerKind::conv: {
                int src = node.inputs[0];
                ensure(src);
                conv_backward(ws.acts[src], model.params[i].w, d[i], d[src],
                              grads.params[i].w, grads.params[i].b);
                break;
            }
            case LayerKind::relu: {
                int src = node.inputs[0];
                ensure(src);
                const Tensor& in = ws.acts[src];
                for (size_t j = 0; j < in.size(); ++j)
                    if (in.data[j] > 0) d[src].data[j] += d[i].data[j];
                break;
            }
            case LayerKind::sigmoid: {
                int src = node.inputs[0];
                ensure(src);
                const Tensor& out = ws.acts[i];
                for (size_t j = 0; j < out.size(); ++j)
                    d[src].data[j] += d[i].data[j] * out.data[j] * (1.0 - out.data[j]);
                break;
            }
            case LayerKind::maxpool: {
                int src = node.inputs[0];
                ensure(src);
                const Tensor& out = ws.acts[i];
                const auto& argmax = ws.pool_argmax[i];
                size_t plane = static_cast<size_t>(ws.acts[src].h) * ws.acts[src].w;
                size_t idx = 0;
                for (int n = 0; n < out.n; ++n)
                    for (int c = 0; c < out.c; ++c) {
                        size_t base = (static_cast<size_t>(n) * out.c + c) * plane;
                        for (int y = 0; y < out.h; ++y)
                            for (int x = 0; x < out.w; ++x, ++idx)
                                d[src].data[base + argmax[idx]] += d[i].data[idx];
                    }
                break;
            }
            case LayerKind::dropout: {
                int src = node.inputs[0];
                ensure(src);
                const auto& mask = ws.drop_mask[i];
                if (mask.empty()) {
                    for (size_t j = 0; j < d[i].size(); ++j) d[src].data[j] += d[i].data[j];
                } else {
                    double inv = 1.0 / (1.0 - node.spec.rate);
                    for (size_t j = 0; j < d[i].size(); ++j)
                        if (mask[j]) d[src].data[j] += d[i].data[j] * inv;
                }
                break;
            }
            case LayerKind::fc: {
                int src = node.inputs[0];
                ensure(src);
                const Tensor& in = ws.acts[src];
                const Tensor& w = model.params[i].w;
                size_t fan_in = in.size() / in.n;
                for (int n = 0; n < in.n; ++n) {
                    const double* src_a = in.data.data() + n * fan_in;
                    double* src_d = d[src].data.data() + n * fan_in;
                    for (int o = 0; o < node.spec.out_features; ++o) {
                        double g = d[i].at(n, o, 0, 0);
                        if (g == 0.0) continue;
                        grads.params[i].b.data[o] += g;
                        const double* wr = w.data.data() + static_cast<size_t>(o) * fan_in;
                        double* dwr = grads.params[i].w.data.data() + static_cast<size_t>(o) * fan_in;
                        for (size_t j = 0; j < fan_in; ++j) {
                            dwr[j] += g * src_a[j];
                            src_d[j] += g * wr[j];
                        }
                    }
                }
                break;
            }
            case LayerKind::flatten: {
                int src = node.inputs[0];
                ensure(src);
                for (size_t j = 0; j < d[i].size(); ++j) d[src].data[j] += d[i].data[j];
                break;
            }
            case LayerKind::concat: {
                const Tensor& out = ws.acts[i];
                for (int n = 0; n < out.n; ++n) {
                    int coff = 0;
                    for (int src : node.inputs) {
                        ensure(src);
                        Tensor& ds = d[src];
                        size_t plane = static_cast<size_t>(ds.c) * ds.h * ds.w;
                        const double* from =
                            d[i].data.data() +
                            (static_cast<size_t>(n) * out.c + coff) * out.h * out.w;
                        double* to = ds.data.data() + n * plane;
                        for (size_t j = 0; j < plane; ++j) to[j] += from[j];
                        coff += ds.c;
                    }
                }
                break;
            }
            case LayerKind::upsample: {
                int src = node.inputs[0];
                ensure(src);
                const Tensor& out = ws.acts[i];
                const int f = node.spec.factor;
                for (int n = 0; n < out.n; ++n)
                    for (int c = 0; c < out.c; ++c)
                        for (int y = 0; y < out.h; ++y)
                            for (int x = 0; x < out.w; ++x)
                                d[src].at(n, c, y / f, x / f) += d[i].at(n, c, y, x);
                break;
            }
        }
    }
}

double dice_loss(const Tensor& pred, const Tensor& truth, Tensor* d_pred, double eps) {
    if (pred.size() != truth.size()) throw std::invalid_argument("dice_loss shape mismatch");
    double inter = 0, p2 = 0, t2 = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        inter += pred.data[i] * truth.data[i];
        p2 += pred.data[i] * pred.data[i];
        t2 += truth.data[i] * truth.data[i];
    }
    double a = 2.0 * inter + eps;
    double b = p2 + t2 + eps;
    if (d_pred) {
        *d_pred = Tensor(pred.n, pred.c, pred.h, pred.w);
        for (size_t i = 0; i < pred.size(); ++i)
            d_pred->data[i] = -(2.0 * truth.data[i] / a - 2.0 * pred.data[i] / b);
    }
    return -std::log(a / b);
}

double score_loss(const std::vector<double>& preds, const std::vector<double>& labels,
                  std::vector<double>* d_preds) {
    if (preds.empty() || preds.size() != labels.size())
        throw std::invalid_argument("score_loss needs equal nonempty batches");
    double sum = 0;
    if (d_preds) d_preds->assign(preds.size(), 0.0);
    for (size_t i = 0; i < preds.size(); ++i) {
        double e = preds[i] - labels[i];
        sum += std::abs(e);
        if (d_preds) (*d_preds)[i] = (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0)) / preds.size();
    }
    return sum / preds.size();
}

AdamState init_adam(const Model& model) {
    AdamState st;
    st.m = zero_gradients(model).params;
    st.v = st.m;
    return st;
}

void adam_step(Model& model, const Gradients& grads, AdamState& state, const AdamConfig& cfg) {
    ++state.step;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < model.params.size(); ++i) {
        auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                          std::vector<double>& m, std::vector<double>& v) {
            for (size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                double mhat = m[j] / bc1, vhat = v[j] / bc2;
                p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        };
        update(model.params[i].w.data, grads.params[i].w.data, state.m[i].w.data,
               state.v[i].w.data);
        update(model.params[i].b.data, grads.params[i].b.data, state.m[i].b.data,
               state.v[i].b.data);
    }
}

double gradient_check(const NetworkSpec& spec, bool dice_head, uint64_t seed, int samples,
                      double step) {
    Model model = init_model(spec, seed);
    std::mt19937_64 rng(mix_seed(seed, 17));
    std::uniform_real_distribution<double> unif(0.05, 0.95);

    std::vector<Tensor> inputs;
    for (int in_node : spec.input_nodes) {
        Shape s = model.spec.shapes[in_node];
        Tensor t(1, s.c, s.h, s.w);
        for (auto& v : t.data) v = unif(rng);
        inputs.push_back(std::move(t));
    }
    Shape out_shape = model.spec.shapes[spec.output_node];
    Tensor truth(1, out_shape.c, out_shape.h, out_shape.w);
    std::vector<double> labels = {std::uniform_real_distribution<double>(0, 300)(rng)};
    for (auto& v : truth.data) v = rng() % 2 ? 1.0 : 0.0;

    auto eval_loss = [&](Workspace& ws, Tensor* d_out) {
        const Tensor& out = forward(model, inputs, false, nullptr, ws);
        if (dice_head) return dice_loss(out, truth, d_out);
        std::vector<double> d1;
        double l = score_loss({out.data[0]}, labels, d_out ? &d1 : nullptr);
        if (d_out) {
            *d_out = Tensor(out.n, out.c, out.h, out.w);
            d_out->data[0] = d1[0];
        }
        return l;
    };

    Workspace ws;
    Tensor d_out;
    eval_loss(ws, &d_out);
    Gradients grads = zero_gradients(model);
    backward(model, ws, d_out, grads);

    // gather (node, is_bias, flat index) coordinates of all parameters
    std::vector<std::tuple<size_t, bool, size_t>> coords;
    for (size_t i = 0; i < model.params.size(); ++i) {
        for (size_t j = 0; j < model.params[i].w.data.size(); ++j) coords.emplace_back(i, false, j);
        for (size_t j = 0; j < model.params[i].b.data.size(); ++j) coords.emplace_back(i, true, j);
    }
    std::shuffle(coords.begin(), coords.end(), rng);
    if (static_cast<int>(coords.size()) > samples) coords.resize(samples);

    double max_rel = 0;
    for (auto [i, is_bias, j] : coords) {
        double& p = is_bias ? model.params[i].b.data[j] : model.params[i].w.data[j];
        double analytic = is_bias ? grads.params[i].b.data[j] : grads.params[i].w.data[j];
        double orig = p;
        Workspace tmp;
        p = orig + step;
        double lp = eval_loss(tmp, nullptr);
        p = orig - step;
        double lm = eval_loss(tmp, nullptr);
        p = orig;
        double numeric = (lp - lm) / (2.0 * step);
        double rel = std::abs(analytic - numeric) / std::max({1e-8, std::abs(analytic), std::abs(numeric)});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

TrainResult train(const NetworkSpec& spec, const std::vector<Sample>& data,
                  const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    TrainResult result;
    result.model = init_model(spec, cfg.seed);
    Model& model = result.model;
    AdamState adam = init_adam(model);
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x51ull));

    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int threads = std::max(1, cfg.threads);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t bn = std::min<size_t>(cfg.batch_size, order.size() - start);
            // per-sample gradient slots, reduced in sample order afterwards so
            // the result is bitwise identical for any thread count
            std::vector<Gradients> sample_grads(bn);
            std::vector<double> sample_loss(bn, 0.0);

            auto worker = [&](int t) {
                Workspace ws;
                for (size_t k = t; k < bn; k += threads) {
                    const Sample& s = data[order[start + k]];
                    // per-sample dropout stream: independent of thread count
                    std::mt19937_64 drop_rng(
                        mix_seed(cfg.seed, mix_seed(epoch * 1000003ull + start + k, 0xd5ull)));
                    const Tensor& out = forward(model, s.inputs, true, &drop_rng, ws);
                    Tensor d_out;
                    double loss;
                    if (cfg.dice) {
                        loss = dice_loss(out, s.target_mask, &d_out);
                    } else {
                        std::vector<double> dp;
                        loss = score_loss({out.data[0]}, {s.label}, &dp);
                        d_out = Tensor(out.n, out.c, out.h, out.w);
                        d_out.data[0] = dp[0];
                    }
                    sample_loss[k] = loss;
                    Gradients local = zero_gradients(model);
                    backward(model, ws, d_out, local);
                    sample_grads[k] = std::move(local);
                }
            };
            if (threads == 1) {
                worker(0);
            } else {
                std::vector<std::thread> pool;
                for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
                for (auto& th : pool) th.join();
            }

            Gradients grads = std::move(sample_grads[0]);
            for (size_t k = 1; k < bn; ++k) grads.accumulate(sample_grads[k]);
            grads.scale(1.0 / bn);
            adam_step(model, grads, adam, cfg.adam);
            double loss = 0;
            for (double l : sample_loss) loss += l;
            result.loss_curve.push_back(loss / bn);
        }
    }
    return result;
}

double predict_score(const Model& model, const std::vector<Tensor>& inputs) {
    Workspace ws;
    const Tensor& out = forward(model, inputs, false, nullptr, ws);
    return std::clamp(out.data[0], 0.0, 300.0);
}

Tensor predict_mask(const Model& model, const std::vector<Tensor>& inputs) {
    Workspace ws;
    return forward(model, inputs, false, nullptr, ws);
}

// ---- checkpoint io ----

namespace {

uint32_t adler32(const uint8_t* data, size_t len) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

struct Writer {
    std::vector<uint8_t> bytes;
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        uint8_t buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        bytes.insert(bytes.end(), buf, buf + sizeof(T));
    }
};

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;
    template <typename T>
    T get() {
        if (pos + sizeof(T) > bytes.size()) throw std::runtime_error("truncated checkpoint");
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
};

void put_tensor(Writer& w, const Tensor& t) {
    w.put<int32_t>(t.n); w.put<int32_t>(t.c); w.put<int32_t>(t.h); w.put<int32_t>(t.w);
    for (double v : t.data) w.put<float>(static_cast<float>(v));
}

Tensor get_tensor(Reader& r) {
    int n = r.get<int32_t>(), c = r.get<int32_t>(), h = r.get<int32_t>(), w = r.get<int32_t>();
    if (n == 0) return Tensor();
    Tensor t(n, c, h, w);
    for (auto& v : t.data) v = r.get<float>();
    return t;
}

}  // namespace

void save_model(const std::string& path, const Model& model) {
    Writer w;
    w.bytes = {'H', 'S', 'C', 'N'};
    w.put<uint32_t>(1);  // format version
    w.put<uint8_t>(static_cast<uint8_t>(model.spec.arch));
    w.put<int32_t>(model.spec.scale);
    w.put<int32_t>(model.spec.input_res);
    w.put<uint32_t>(static_cast<uint32_t>(model.spec.nodes.size()));
    for (const Node& node : model.spec.nodes) {
        w.put<uint8_t>(static_cast<uint8_t>(node.spec.kind));
        w.put<int32_t>(node.spec.out_channels);
        w.put<int32_t>(node.spec.kernel);
        w.put<int32_t>(node.spec.pool);
        w.put<int32_t>(node.spec.out_features);
        w.put<int32_t>(node.spec.factor);
        w.put<double>(node.spec.rate);
        w.put<uint32_t>(static_cast<uint32_t>(node.inputs.size()));
        for (int in : node.inputs) w.put<int32_t>(in);
    }
    w.put<int32_t>(model.spec.output_node);
    w.put<uint32_t>(static_cast<uint32_t>(model.spec.input_nodes.size()));
    for (int in : model.spec.input_nodes) w.put<int32_t>(in);
    for (const NodeParams& p : model.params) {
        if (p.w.data.empty()) {
            w.put<int32_t>(0); w.put<int32_t>(0); w.put<int32_t>(0); w.put<int32_t>(0);
            w.put<int32_t>(0); w.put<int32_t>(0); w.put<int32_t>(0); w.put<int32_t>(0);
        } else {
            put_tensor(w, p.w);
            put_tensor(w, p.b);
        }
    }
    w.put<uint32_t>(adler32(w.bytes.data(), w.bytes.size()));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot create checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(w.bytes.data()), w.bytes.size());
}

Model load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 9 || bytes[0] != 'H' || bytes[1] != 'S' || bytes[2] != 'C' ||
        bytes[3] != 'N')
        throw std::runtime_error("not a HSCN checkpoint: " + path);
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (stored != adler32(bytes.data(), bytes.size() - 4))
        throw std::runtime_error("checkpoint checksum mismatch: " + path);

    Reader r{bytes, 4};
    if (r.get<uint32_t>() != 1) throw std::runtime_error("unsupported checkpoint version");
    Model model;
    model.spec.arch = static_cast<ArchKind>(r.get<uint8_t>());
    model.spec.scale = r.get<int32_t>();
    model.spec.input_res = r.get<int32_t>();
    uint32_t n_nodes = r.get<uint32_t>();
    model.spec.nodes.resize(n_nodes);
    for (Node& node : model.spec.nodes) {
        node.spec.kind = static_cast<LayerKind>(r.get<uint8_t>());
        node.spec.out_channels = r.get<int32_t>();
        node.spec.kernel = r.get<int32_t>();
        node.spec.pool = r.get<int32_t>();
        node.spec.out_features = r.get<int32_t>();
        node.spec.factor = r.get<int32_t>();
        node.spec.rate = r.get<double>();
        uint32_t ni = r.get<uint32_t>();
        node.inputs.resize(ni);
        for (auto& in : node.inputs) in = r.get<int32_t>();
    }
    model.spec.output_node = r.get<int32_t>();
    uint32_t n_in = r.get<uint32_t>();
    model.spec.input_nodes.resize(n_in);
    for (auto& in : model.spec.input_nodes) in = r.get<int32_t>();
    check_shapes(model.spec);
    model.params.resize(n_nodes);
    for (NodeParams& p : model.params) {
        p.w = get_tensor(r);
        if (!p.w.data.empty()) p.b = get_tensor(r);
        else { for (int k = 0; k < 4; ++k) r.get<int32_t>(); }
    }
    return model;
}

}  // namespace histoscore::net
