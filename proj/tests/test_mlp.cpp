#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pgnn/mlp.hpp"
#include "pgnn/rng.hpp"

using namespace pgnn;
using nn::MlpParams;
using nn::MlpSpec;

namespace {

MlpSpec spec_1_2_1() {
    MlpSpec s;
    s.input_dim = 1;
    s.output_dim = 1;
    s.hidden = {2};
    return s;
}

}  // namespace

TEST_CASE("spec validation") {
    MlpSpec s = spec_1_2_1();
    CHECK_NOTHROW(nn::validate(s));
    s.hidden = {2, 2, 2, 2, 2};
    CHECK_THROWS_AS(nn::validate(s), std::invalid_argument);
    s.hidden = {0};
    CHECK_THROWS_AS(nn::validate(s), std::invalid_argument);
    s.input_dim = 0;
    CHECK_THROWS_AS(nn::validate(s), std::invalid_argument);
}

TEST_CASE("init is deterministic per seed with zero biases") {
    MlpSpec s;
    s.input_dim = 3;
    s.output_dim = 2;
    s.hidden = {4, 4};
    auto a = nn::init_params(s, 99);
    auto b = nn::init_params(s, 99);
    CHECK(nn::flatten(a) == nn::flatten(b));
    auto c = nn::init_params(s, 100);
    CHECK(nn::flatten(a) != nn::flatten(c));
    for (const auto& layer : a.biases)
        for (double bias : layer) CHECK(bias == 0.0);
}

TEST_CASE("glorot bound for a 2x3 layer is sqrt(6/5)") {
    const double bound = std::sqrt(6.0 / 5.0);
    CHECK(bound == doctest::Approx(1.0954451150103321).epsilon(1e-15));

    MlpSpec s;
    s.input_dim = 2;
    s.output_dim = 3;
    s.hidden = {};
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto p = nn::init_params(s, seed);
        for (double w : p.weights[0]) {
            CHECK(w <= bound);
            CHECK(w >= -bound);
        }
    }
    // the full bound range is actually used
    double widest = 0.0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto p = nn::init_params(s, seed);
        for (double w : p.weights[0]) widest = std::max(widest, std::abs(w));
    }
    CHECK(widest > 0.9 * bound);
}

TEST_CASE("forward with zero weights returns the output bias") {
    MlpSpec s;
    s.input_dim = 3;
    s.output_dim = 1;
    s.hidden = {4};
    auto p = nn::init_params(s, 1);
    for (auto& layer : p.weights) std::fill(layer.begin(), layer.end(), 0.0);
    p.biases[1][0] = 0.37;
    const double x[3] = {1.0, -2.0, 5.0};
    auto y = nn::forward(s, p, x);
    CHECK(y.size() == 1);
    CHECK(y[0] == 0.37);
}

TEST_CASE("tanh identity layer maps zero to zero") {
    MlpSpec s;
    s.input_dim = 2;
    s.output_dim = 2;
    s.hidden = {2};
    MlpParams p;
    p.weights = {{1.0, 0.0, 0.0, 1.0}, {1.0, 0.0, 0.0, 1.0}};
    p.biases = {{0.0, 0.0}, {0.0, 0.0}};
    const double x[2] = {0.0, 0.0};
    auto y = nn::forward(s, p, x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
}

TEST_CASE("hand-built 1-2-1 net matches pencil-and-paper arithmetic") {
    MlpSpec s = spec_1_2_1();
    MlpParams p;
    p.weights = {{0.5, -1.0}, {2.0, 3.0}};
    p.biases = {{0.1, 0.2}, {0.4}};
    const double x = 0.8;

    const double h0 = std::tanh(0.5 * x + 0.1);
    const double h1 = std::tanh(-1.0 * x + 0.2);
    const double expected = 2.0 * h0 + 3.0 * h1 + 0.4;

    const double in[1] = {x};
    auto y = nn::forward(s, p, in);
    CHECK(y[0] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("forward rejects dimension mismatches") {
    MlpSpec s = spec_1_2_1();
    auto p = nn::init_params(s, 7);
    const double xs[2] = {1.0, 2.0};
    CHECK_THROWS_AS(nn::forward(s, p, xs), std::invalid_argument);
}

TEST_CASE("mse anchors") {
    const double a1[1] = {1.5};
    CHECK(nn::mse_loss(a1, a1) == 0.0);
    const double p1[1] = {0.0}, t1[1] = {2.0};
    CHECK(nn::mse_loss(p1, t1) == 4.0);
    const double p2[2] = {1.0, 3.0}, t2[2] = {0.0, 0.0};
    CHECK(nn::mse_loss(p2, t2) == 5.0);
    CHECK_THROWS_AS(nn::mse_loss(std::span<const double>{}, std::span<const double>{}),
                    std::invalid_argument);
}

TEST_CASE("loss is permutation-invariant over the batch") {
    rng::Stream rs(4242);
    std::vector<double> pred(31), tgt(31);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = rs.uniform(-3.0, 3.0);
        tgt[i] = rs.uniform(-3.0, 3.0);
    }
    const double base = nn::mse_loss(pred, tgt);
    std::vector<std::size_t> idx(pred.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::reverse(idx.begin(), idx.end());
    std::vector<double> pperm, tperm;
    for (auto i : idx) {
        pperm.push_back(pred[i]);
        tperm.push_back(tgt[i]);
    }
    CHECK(nn::mse_loss(pperm, tperm) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    std::vector<double> params = {1.0, -2.0, 0.5};
    std::vector<double> grads(3, 0.0);
    auto state = nn::AdamState::zeros(3);
    nn::AdamConfig cfg;
    auto before = params;
    for (int i = 0; i < 5; ++i) nn::adam_step(params, grads, state, cfg);
    CHECK(params == before);
    CHECK(state.step_count == 5);
}

TEST_CASE("first adam step moves by about the learning rate") {
    std::vector<double> params = {1.0};
    std::vector<double> grads = {0.37};
    auto state = nn::AdamState::zeros(1);
    nn::AdamConfig cfg;
    cfg.learning_rate = 0.01;
    nn::adam_step(params, grads, state, cfg);
    CHECK(std::abs(1.0 - params[0]) == doctest::Approx(cfg.learning_rate).epsilon(1e-6));
    CHECK(params[0] < 1.0);  // moved against the gradient
}

TEST_CASE("two adam steps match a hand-computed trajectory") {
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double g = 0.5;

    // step 1
    double m = (1 - b1) * g;
    double v = (1 - b2) * g * g;
    double p_hand = 1.0 - lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
    // step 2 (same gradient)
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    p_hand -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);

    std::vector<double> params = {1.0};
    std::vector<double> grads = {g};
    auto state = nn::AdamState::zeros(1);
    nn::AdamConfig cfg;
    cfg.learning_rate = lr;
    nn::adam_step(params, grads, state, cfg);
    nn::adam_step(params, grads, state, cfg);
    CHECK(params[0] == doctest::Approx(p_hand).epsilon(1e-15));
}

TEST_CASE("adam refuses non-finite gradients") {
    std::vector<double> params = {1.0};
    std::vector<double> grads = {std::numeric_limits<double>::quiet_NaN()};
    auto state = nn::AdamState::zeros(1);
    nn::AdamConfig cfg;
    CHECK_THROWS_AS(nn::adam_step(params, grads, state, cfg), std::domain_error);
    CHECK(params[0] == 1.0);
    CHECK(state.step_count == 0);
}

TEST_CASE("network gradients match central finite differences") {
    MlpSpec s;
    s.input_dim = 2;
    s.output_dim = 1;
    s.hidden = {3, 3, 2};  // three hidden layers
    auto params = nn::init_params(s, 510);
    const auto flat = nn::flatten(params);

    rng::Stream rs(88);
    std::vector<std::array<double, 2>> xs(4);
    std::vector<double> ys(4);
    for (int i = 0; i < 4; ++i) {
        xs[i] = {rs.uniform(-1.0, 1.0), rs.uniform(-1.0, 1.0)};
        ys[i] = rs.uniform(-1.0, 1.0);
    }

    const double err = ad::finite_difference_check(
        [&](ad::Tape& tape, std::span<const ad::Var> leaves) {
            MlpParams shadow = nn::unflatten(s, std::vector<double>(leaves.size(), 0.0));
            nn::TapeParams lifted;
            lifted.weights.resize(s.layer_count());
            lifted.biases.resize(s.layer_count());
            std::size_t at = 0;
            for (int l = 0; l < s.layer_count(); ++l) {
                const std::size_t nw = shadow.weights[l].size();
                const std::size_t nb = shadow.biases[l].size();
                for (std::size_t k = 0; k < nw; ++k) lifted.weights[l].push_back(leaves[at++]);
                for (std::size_t k = 0; k < nb; ++k) lifted.biases[l].push_back(leaves[at++]);
            }
            std::vector<ad::Var> preds;
            for (const auto& x : xs) preds.push_back(nn::forward(s, lifted, x)[0]);
            return nn::mse_loss(tape, preds, ys);
        },
        flat, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("frozen layers receive zero gradients") {
    MlpSpec s;
    s.input_dim = 2;
    s.output_dim = 1;
    s.hidden = {3};
    auto params = nn::init_params(s, 3);

    ad::Tape tape;
    auto lifted = nn::lift(tape, s, params, /*trainable_from=*/1);
    const double x[2] = {0.3, -0.4};
    auto pred = nn::forward(s, lifted, x);
    std::vector<double> tgt = {1.0};
    auto loss = nn::mse_loss(tape, pred, tgt);
    auto grads = tape.backward(loss);
    auto flat = nn::gradients_flat(tape, grads, lifted);

    const std::size_t frozen = params.weights[0].size() + params.biases[0].size();
    for (std::size_t i = 0; i < frozen; ++i) CHECK(flat[i] == 0.0);
    double tail = 0.0;
    for (std::size_t i = frozen; i < flat.size(); ++i) tail += std::abs(flat[i]);
    CHECK(tail > 0.0);
}

TEST_CASE("training y = 2x + 1 reaches small loss and is bit-reproducible") {
    MlpSpec s;
    s.input_dim = 1;
    s.output_dim = 1;
    s.hidden = {8};

    std::vector<double> xs(20), ys(20);
    for (int i = 0; i < 20; ++i) {
        xs[i] = -1.0 + 2.0 * i / 19.0;
        ys[i] = 2.0 * xs[i] + 1.0;
    }

    auto train = [&](std::uint64_t seed) {
        auto params = nn::init_params(s, seed);
        auto flat = nn::flatten(params);
        auto state = nn::AdamState::zeros(flat.size());
        nn::AdamConfig cfg;
        cfg.learning_rate = 0.02;
        ad::Tape tape;
        for (int step = 0; step < 2000; ++step) {
            tape.reset();
            auto lifted = nn::lift(tape, s, params);
            std::vector<ad::Var> preds;
            preds.reserve(xs.size());
            for (double x : xs) {
                const double in[1] = {x};
                preds.push_back(nn::forward(s, lifted, in)[0]);
            }
            auto loss = nn::mse_loss(tape, preds, ys);
            auto grads = tape.backward(loss);
            auto g = nn::gradients_flat(tape, grads, lifted);
            nn::adam_step(flat, g, state, cfg);
            params = nn::unflatten(s, flat);
        }
        std::vector<double> preds;
        for (double x : xs) {
            const double in[1] = {x};
            preds.push_back(nn::forward(s, params, in)[0]);
        }
        return std::pair<double, std::vector<double>>{nn::mse_loss(preds, ys), nn::flatten(params)};
    };

    auto [final_loss, weights] = train(12345);
    CHECK(final_loss < 1e-3);

    auto [loss2, weights2] = train(12345);
    CHECK(final_loss == loss2);
    CHECK(weights == weights2);
}
