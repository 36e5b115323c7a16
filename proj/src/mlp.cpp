#include "pgnn/mlp.hpp"

#include <cmath>

#include "pgnn/rng.hpp"

namespace pgnn::nn {

const char* activation_name(Activation a) {
    return a == Activation::Tanh ? "tanh" : "relu";
}

Activation parse_activation(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::Relu;
    throw std::invalid_argument("unknown activation: " + name);
}

void validate(const MlpSpec& spec) {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("mlp spec: ") + what);
    };
    require(spec.input_dim >= 1, "input_dim must be >= 1");
    require(spec.output_dim >= 1, "output_dim must be >= 1");
    require(static_cast<int>(spec.hidden.size()) <= kMaxHiddenDepth,
            "at most 4 hidden layers");
    for (int w : spec.hidden) require(w >= 1, "hidden widths must be >= 1");
}

MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
    validate(spec);
    rng::Stream rs(seed);
    MlpParams p;
    p.weights.resize(spec.layer_count());
    p.biases.resize(spec.layer_count());
    for (int l = 0; l < spec.layer_count(); ++l) {
        const int fan_in = spec.layer_in(l);
        const int fan_out = spec.layer_out(l);
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        p.weights[l].resize(static_cast<std::size_t>(fan_in) * fan_out);
        for (double& w : p.weights[l]) w = rs.uniform(-bound, bound);
        p.biases[l].assign(fan_out, 0.0);
    }
    return p;
}

std::size_t param_count(const MlpSpec& spec) {
    std::size_t n = 0;
    for (int l = 0; l < spec.layer_count(); ++l)
        n += static_cast<std::size_t>(spec.layer_in(l)) * spec.layer_out(l) + spec.layer_out(l);
    return n;
}

std::vector<double> flatten(const MlpParams& params) {
    std::vector<double> flat;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        flat.insert(flat.end(), params.weights[l].begin(), params.weights[l].end());
        flat.insert(flat.end(), params.biases[l].begin(), params.biases[l].end());
    }
    return flat;
}

MlpParams unflatten(const MlpSpec& spec, std::span<const double> flat) {
    if (flat.size() != param_count(spec))
        throw std::invalid_argument("mlp params: flat size does not match spec");
    MlpParams p;
    p.weights.resize(spec.layer_count());
    p.biases.resize(spec.layer_count());
    std::size_t at = 0;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const std::size_t nw = static_cast<std::size_t>(spec.layer_in(l)) * spec.layer_out(l);
        const std::size_t nb = spec.layer_out(l);
        p.weights[l].assign(flat.begin() + at, flat.begin() + at + nw);
        at += nw;
        p.biases[l].assign(flat.begin() + at, flat.begin() + at + nb);
        at += nb;
    }
    return p;
}

namespace {

// One implementation for double and tape arithmetic. SX is the sample scalar
// type; the parameter accessor returns either doubles or Vars.
template <class SOut, class Weights, class SX>
std::vector<SOut> forward_impl(const MlpSpec& spec, const Weights& w, std::span<const SX> x) {
    if (static_cast<int>(x.size()) != spec.input_dim)
        throw std::invalid_argument("mlp forward: input dimension mismatch");

    std::vector<SOut> current;
    std::vector<SOut> next;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const int n_in = spec.layer_in(l);
        const int n_out = spec.layer_out(l);
        const bool last = l == spec.layer_count() - 1;
        next.clear();
        next.reserve(n_out);
        for (int j = 0; j < n_out; ++j) {
            SOut acc = w.bias(l, j);
            if (l == 0) {
                for (int i = 0; i < n_in; ++i) acc = w.accumulate(acc, l, j, i, x[i]);
            } else {
                for (int i = 0; i < n_in; ++i) acc = w.accumulate(acc, l, j, i, current[i]);
            }
            if (!last) {
                acc = spec.hidden_activation == Activation::Tanh ? ad::tanh(acc) : ad::relu(acc);
            }
            next.push_back(acc);
        }
        current.swap(next);
    }
    return current;
}

struct DoubleWeights {
    const MlpSpec& spec;
    const MlpParams& p;
    double bias(int l, int j) const { return p.biases[l][j]; }
    double accumulate(double acc, int l, int j, int i, double xi) const {
        return acc + p.weights[l][static_cast<std::size_t>(j) * spec.layer_in(l) + i] * xi;
    }
};

struct TapeWeights {
    const MlpSpec& spec;
    const TapeParams& p;
    ad::Var bias(int l, int j) const { return p.biases[l][j]; }
    // constant input: fused add_scaled keeps one node per term
    ad::Var accumulate(ad::Var acc, int l, int j, int i, double xi) const {
        return ad::add_scaled(acc, p.weights[l][static_cast<std::size_t>(j) * spec.layer_in(l) + i], xi);
    }
    ad::Var accumulate(ad::Var acc, int l, int j, int i, ad::Var xi) const {
        return acc + p.weights[l][static_cast<std::size_t>(j) * spec.layer_in(l) + i] * xi;
    }
};

}  // namespace

std::vector<double> forward(const MlpSpec& spec, const MlpParams& params,
                            std::span<const double> x) {
    return forward_impl<double>(spec, DoubleWeights{spec, params}, x);
}

std::vector<ad::Var> forward(const MlpSpec& spec, const TapeParams& params,
                             std::span<const double> x) {
    return forward_impl<ad::Var>(spec, TapeWeights{spec, params}, x);
}

std::vector<ad::Var> forward(const MlpSpec& spec, const TapeParams& params,
                             std::span<const ad::Var> x) {
    return forward_impl<ad::Var>(spec, TapeWeights{spec, params}, x);
}

TapeParams lift(ad::Tape& tape, const MlpSpec& spec, const MlpParams& params,
                int trainable_from) {
    if (params.weights.size() != static_cast<std::size_t>(spec.layer_count()))
        throw std::invalid_argument("mlp lift: params do not match spec");
    TapeParams lifted;
    lifted.weights.resize(params.weights.size());
    lifted.biases.resize(params.biases.size());
    for (int l = 0; l < spec.layer_count(); ++l) {
        const bool trainable = l >= trainable_from;
        lifted.weights[l].reserve(params.weights[l].size());
        for (double w : params.weights[l]) lifted.weights[l].push_back(tape.leaf(w, trainable));
        lifted.biases[l].reserve(params.biases[l].size());
        for (double b : params.biases[l]) lifted.biases[l].push_back(tape.leaf(b, trainable));
    }
    return lifted;
}

double mse_loss(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.empty() || predictions.size() != targets.size())
        throw std::invalid_argument("mse_loss: empty batch or length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - targets[i];
        sum += d * d;
    }
    return sum / static_cast<double>(predictions.size());
}

ad::Var mse_loss(ad::Tape& tape, std::span<const ad::Var> predictions,
                 std::span<const double> targets) {
    if (predictions.empty() || predictions.size() != targets.size())
        throw std::invalid_argument("mse_loss: empty batch or length mismatch");
    ad::Var sum = tape.constant(0.0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        ad::Var d = predictions[i] - targets[i];
        sum = sum + d * d;
    }
    return sum * (1.0 / static_cast<double>(predictions.size()));
}

ad::Var mse_loss(ad::Tape& tape, std::span<const ad::Var> predictions,
                 std::span<const ad::Var> targets) {
    if (predictions.empty() || predictions.size() != targets.size())
        throw std::invalid_argument("mse_loss: empty batch or length mismatch");
    ad::Var sum = tape.constant(0.0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        ad::Var d = predictions[i] - targets[i];
        sum = sum + d * d;
    }
    return sum * (1.0 / static_cast<double>(predictions.size()));
}

std::vector<double> gradients_flat(const ad::Tape& tape, const ad::GradientMap& grads,
                                   const TapeParams& params) {
    std::vector<double> flat;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        for (ad::Var w : params.weights[l])
            flat.push_back(tape.trainable(w) ? grads.at(w) : 0.0);
        for (ad::Var b : params.biases[l])
            flat.push_back(tape.trainable(b) ? grads.at(b) : 0.0);
    }
    return flat;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& config) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: size mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw std::domain_error("adam_step: non-finite gradient, step refused");

    state.step_count += 1;
    const double b1 = config.beta1, b2 = config.beta2;
    const double b1_corr = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double b2_corr = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = b1 * m + (1.0 - b1) * grads[i];
        v = b2 * v + (1.0 - b2) * grads[i] * grads[i];
        const double m_hat = m / b1_corr;
        const double v_hat = v / b2_corr;
        params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

}  // namespace pgnn::nn
