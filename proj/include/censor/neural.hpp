#pragma once

#include "censor/numerics.hpp"
#include "censor/rng.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace censor {

enum class Activation { identity, relu, tanh, softmax };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Layer widths input -> hidden... -> output with one activation per layer.
// Softmax is only valid on the output layer.
struct NetSpec {
    int input = 0;
    std::vector<int> widths;
    std::vector<Activation> acts;

    int output() const { return widths.back(); }
    int layer_count() const { return static_cast<int>(widths.size()); }
    void validate() const;

    // input -> hidden (relu) ... -> output (identity).
    static NetSpec mlp(int input, const std::vector<int>& hidden, int output,
                       Activation output_act = Activation::identity);
};

// Flat parameter vector with a per-layer layout map and a mirrored gradient
// accumulator. Layer l stores W (out x in, row-major) then b (out).
struct ParamStore {
    std::vector<double> values;
    std::vector<double> grads;
    std::vector<std::size_t> offsets;  // per layer, into values
    NetSpec spec;

    static ParamStore init(const NetSpec& spec, Rng& rng);

    std::size_t size() const { return values.size(); }
    void zero_grads();
    double* w(int layer);
    const double* w(int layer) const;
    double* b(int layer);
    const double* b(int layer) const;
    double* gw(int layer);
    double* gb(int layer);
};

// Activations recorded by forward; enough for exact reverse-mode gradients.
struct Tape {
    Mat input;
    std::vector<Mat> post;  // post-activation per layer
};

struct ForwardResult {
    Mat out;
    Tape tape;
};

ForwardResult forward(const ParamStore& params, const Mat& x);

// Vector-Jacobian product: accumulates parameter gradients into params.grads
// and returns the gradient with respect to the input batch.
Mat backward(ParamStore& params, const Tape& tape, const Mat& cotangents);

// Inverse-class-proportion weights, normalized to sum 1.
Vec class_weights(const std::vector<int>& counts);

// (1/N) sum_i C * w_{y_i} * (-log probs[i][y_i]), probabilities floored at 1e-12
// so a balanced batch under uniform weights reproduces plain mean CE.
double weighted_ce(const Mat& probs, const std::vector<int>& y, const Vec& w);

// d(weighted_ce)/d(probs); nonzero only at the true-label entries.
Mat weighted_ce_grad(const Mat& probs, const std::vector<int>& y, const Vec& w);

// Decoupled-weight-decay adaptive-moment optimizer state.
struct OptimState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
    double lr = 1e-3;           // base rate alpha_1
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    static OptimState init(std::size_t n, double lr, double weight_decay = 0.01);
};

// One update at effective rate lr / sqrt(epoch); epoch is 1-based.
void optim_step(ParamStore& params, OptimState& opt, int epoch);

// Model + optimizer bundle used by the trainer and the checkpoint container.
struct ModelBundle {
    ParamStore params;
    OptimState opt;

    static ModelBundle make(const NetSpec& spec, Rng& rng, double lr, double weight_decay = 0.01);
};

// Versioned binary checkpoint holding named (NetSpec, params, optimizer state)
// sections; round-trips bit-exactly.
void save_checkpoint(std::ostream& os, const std::vector<std::pair<std::string, const ModelBundle*>>& models);
std::vector<std::pair<std::string, ModelBundle>> load_checkpoint(std::istream& is);
void save_checkpoint_file(const std::string& path, const std::vector<std::pair<std::string, const ModelBundle*>>& models);
std::vector<std::pair<std::string, ModelBundle>> load_checkpoint_file(const std::string& path);

}  // namespace censor
