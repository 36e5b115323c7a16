#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgnn/autodiff.hpp"

namespace pgnn::nn {

enum class Activation { Tanh, Relu };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

// Fully connected network: hidden layers with a shared activation, linear
// output layer.
struct MlpSpec {
    int input_dim = 0;
    int output_dim = 1;
    std::vector<int> hidden;
    Activation hidden_activation = Activation::Tanh;

    int layer_count() const { return static_cast<int>(hidden.size()) + 1; }
    int layer_in(int layer) const { return layer == 0 ? input_dim : hidden[layer - 1]; }
    int layer_out(int layer) const {
        return layer == static_cast<int>(hidden.size()) ? output_dim : hidden[layer];
    }
};

inline constexpr int kMaxHiddenDepth = 4;  // search-space bound

void validate(const MlpSpec& spec);  // throws std::invalid_argument

struct MlpParams {
    std::vector<std::vector<double>> weights;  // [layer], row-major out x in
    std::vector<std::vector<double>> biases;   // [layer][out]
};

// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
MlpParams init_params(const MlpSpec& spec, std::uint64_t seed);

std::size_t param_count(const MlpSpec& spec);
std::vector<double> flatten(const MlpParams& params);
MlpParams unflatten(const MlpSpec& spec, std::span<const double> flat);

// Plain forward pass.
std::vector<double> forward(const MlpSpec& spec, const MlpParams& params,
                            std::span<const double> x);

// Parameters lifted onto a tape for one training step. Layers below
// trainable_from are lifted as constants, which freezes them exactly.
struct TapeParams {
    std::vector<std::vector<ad::Var>> weights;
    std::vector<std::vector<ad::Var>> biases;
};

TapeParams lift(ad::Tape& tape, const MlpSpec& spec, const MlpParams& params,
                int trainable_from = 0);

std::vector<ad::Var> forward(const MlpSpec& spec, const TapeParams& params,
                             std::span<const double> x);
std::vector<ad::Var> forward(const MlpSpec& spec, const TapeParams& params,
                             std::span<const ad::Var> x);

// Mean squared error; rejects empty batches.
double mse_loss(std::span<const double> predictions, std::span<const double> targets);
ad::Var mse_loss(ad::Tape& tape, std::span<const ad::Var> predictions,
                 std::span<const double> targets);
ad::Var mse_loss(ad::Tape& tape, std::span<const ad::Var> predictions,
                 std::span<const ad::Var> targets);

// Gradients of a backward pass arranged in canonical flat order (w0, b0, w1,
// b1, ...); frozen leaves yield zeros.
std::vector<double> gradients_flat(const ad::Tape& tape, const ad::GradientMap& grads,
                                   const TapeParams& params);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    long step_count = 0;

    static AdamState zeros(std::size_t n) {
        return AdamState{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
    }
};

// Bias-corrected Adam update in place. Throws std::domain_error on non-finite
// gradients; the step is refused and state stays untouched.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& config);

}  // namespace pgnn::nn
