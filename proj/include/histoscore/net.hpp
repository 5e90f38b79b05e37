#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace histoscore::net {

// Minimal NCHW tensor. Math runs in double; checkpoints store float32.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}

    size_t size() const { return data.size(); }
    double& at(int in, int ic, int iy, int ix) {
        return data[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    double at(int in, int ic, int iy, int ix) const {
        return data[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
    }
};

enum class LayerKind : uint8_t {
    input, conv, maxpool, relu, fc, dropout, upsample, concat, flatten, sigmoid
};

struct LayerSpec {
    LayerKind kind = LayerKind::input;
    int out_channels = 0;  // conv
    int kernel = 0;        // conv (odd, "same" padding)
    int pool = 2;          // maxpool
    int out_features = 0;  // fc
    int factor = 2;        // upsample
    double rate = 0.0;     // dropout, in [0,1)
};

struct Shape {
    int c = 0, h = 0, w = 0;
    size_t count() const { return static_cast<size_t>(c) * h * w; }
    bool operator==(const Shape&) const = default;
};

struct Node {
    LayerSpec spec;
    std::vector<int> inputs;  // indices of producer nodes
};

enum class ArchKind : uint8_t { rgb_cnn, ra_cnn, ram_cnn, mini_unet };

struct NetworkSpec {
    ArchKind arch = ArchKind::ram_cnn;
    int scale = 1;
    int input_res = 512;
    std::vector<Node> nodes;      // topological order
    std::vector<int> input_nodes; // in declared input order
    int output_node = -1;
    std::vector<Shape> shapes;    // filled by check_shapes
};

// Table-1 family at a uniform scale divisor s (filters and FC widths / s,
// min 1); mini_unet is the 2-level U-shaped mask network.
NetworkSpec build_network(ArchKind kind, int scale, int input_res);

// Static shape walk; throws on any incompatibility. Idempotent.
void check_shapes(NetworkSpec& spec);

ArchKind arch_from_name(const std::string& name);
const char* arch_name(ArchKind kind);

// ---- model ----

struct NodeParams {
    Tensor w, b;  // empty for parameter-free layers
};

struct Model {
    NetworkSpec spec;
    std::vector<NodeParams> params;  // one entry per node
};

Model init_model(const NetworkSpec& spec, uint64_t seed);  // He-normal

// Per-run activation cache plus layer scratch (pool argmax, dropout masks).
struct Workspace {
    std::vector<Tensor> acts;
    std::vector<std::vector<int32_t>> pool_argmax;
    std::vector<std::vector<uint8_t>> drop_mask;
};

// Forward pass; rng is consumed only by dropout in training mode.
const Tensor& forward(const Model& model, const std::vector<Tensor>& inputs, bool train,
                      std::mt19937_64* rng, Workspace& ws);

struct Gradients {
    std::vector<NodeParams> params;  // same layout as Model::params
    void accumulate(const Gradients& other);
    void scale(double s);
};

Gradients zero_gradients(const Model& model);

// Backward from d(loss)/d(output); accumulates into grads.
void backward(const Model& model, const Workspace& ws, const Tensor& d_output, Gradients& grads);

// ---- losses ----

// -log((2*sum(p*t)+eps) / (sum(p^2)+sum(t^2)+eps)), eps = 1
double dice_loss(const Tensor& pred, const Tensor& truth, Tensor* d_pred = nullptr,
                 double eps = 1.0);

// (1/N) * sum |pred - label|
double score_loss(const std::vector<double>& preds, const std::vector<double>& labels,
                  std::vector<double>* d_preds = nullptr);

// ---- optimizer ----

struct AdamConfig {
    double lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct AdamState {
    std::vector<NodeParams> m, v;
    int64_t step = 0;
};

AdamState init_adam(const Model& model);
void adam_step(Model& model, const Gradients& grads, AdamState& state, const AdamConfig& cfg);

// ---- gradient check ----

// Max relative error between analytic gradients and central finite
// differences over up to `samples` parameters.
double gradient_check(const NetworkSpec& spec, bool dice_head, uint64_t seed,
                      int samples = 64, double step = 1e-5);

// ---- training ----

struct Sample {
    std::vector<Tensor> inputs;  // one per network input column
    double label = 0.0;          // regression target
    Tensor target_mask;          // for dice training
};

struct TrainConfig {
    AdamConfig adam;
    int batch_size = 16;
    int epochs = 30;
    uint64_t seed = 1;
    int threads = 1;
    bool dice = false;  // score loss otherwise
};

struct TrainResult {
    Model model;
    std::vector<double> loss_curve;  // one entry per optimizer step
};

TrainResult train(const NetworkSpec& spec, const std::vector<Sample>& data,
                  const TrainConfig& cfg);

double predict_score(const Model& model, const std::vector<Tensor>& inputs);  // clamped [0,300]
Tensor predict_mask(const Model& model, const std::vector<Tensor>& inputs);

// ---- checkpoints ----
// Format: magic "HSCN", version, arch/scale/res, layer table, float32 blob,
// adler32 checksum.
void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

}  // namespace histoscore::net
