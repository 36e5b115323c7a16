#include "pgnn/couplings.hpp"

#include <algorithm>
#include <cmath>

#include "pgnn/rng.hpp"

namespace pgnn::couple {

const char* kind_name(CouplingKind kind) {
    switch (kind) {
        case CouplingKind::ProcessOnly: return "process-only";
        case CouplingKind::Naive: return "naive";
        case CouplingKind::BiasCorrection: return "bias-correction";
        case CouplingKind::ParallelPhysics: return "parallel-physics";
        case CouplingKind::PhysicsRegularisation: return "physics-regularisation";
        case CouplingKind::PhysicsEmbedding: return "physics-embedding";
        case CouplingKind::DomainAdaptation: return "domain-adaptation";
    }
    return "?";
}

CouplingKind parse_kind(const std::string& name) {
    for (CouplingKind k : kAllKinds)
        if (name == kind_name(k)) return k;
    throw std::invalid_argument("unknown coupling kind '" + name + "'");
}

bool uses_network(CouplingKind kind) { return kind != CouplingKind::ProcessOnly; }

bool uses_pm(CouplingKind kind) {
    return kind != CouplingKind::Naive && kind != CouplingKind::DomainAdaptation;
}

bool uses_lambda(CouplingKind kind) {
    return kind == CouplingKind::PhysicsRegularisation || kind == CouplingKind::PhysicsEmbedding;
}

std::array<double, 5> raw_covariates(const preles::DriverRecord& d) {
    return {d.t_air, d.vpd, d.par, d.precip, d.fapar};
}

FeatureStats fit_feature_stats(std::span<const preles::DriverRecord> drivers,
                               std::span<const preles::ModelOutput> pm_outputs) {
    if (drivers.empty()) throw std::invalid_argument("fit_feature_stats: no rows");
    FeatureStats stats;
    auto fit_column = [](std::span<const double> column, const char* name) {
        auto s = data::fit_stats(column);
        if (!(s.sd > 0.0))
            throw std::invalid_argument(std::string("fit_feature_stats: zero standard deviation "
                                                    "for variable '") + name + "'");
        return s;
    };
    std::vector<double> column(drivers.size());
    for (int v = 0; v < 5; ++v) {
        for (std::size_t i = 0; i < drivers.size(); ++i) column[i] = raw_covariates(drivers[i])[v];
        stats.covariates[v] = fit_column(column, data::kClimateVars[v]);
    }
    if (!pm_outputs.empty()) {
        static constexpr std::array<const char*, 3> kPmNames = {"pm_gpp", "pm_et", "pm_soil_water"};
        std::vector<double> pm_col(pm_outputs.size());
        for (int v = 0; v < 3; ++v) {
            for (std::size_t i = 0; i < pm_outputs.size(); ++i) {
                const auto& o = pm_outputs[i];
                pm_col[i] = v == 0 ? o.gpp : (v == 1 ? o.et : o.soil_water);
            }
            stats.pm_outputs[v] = fit_column(pm_col, kPmNames[v]);
        }
    }
    return stats;
}

std::vector<double> features_for(CouplingKind kind, const preles::DriverRecord& d,
                                 const FeatureStats& stats,
                                 const preles::ModelOutput* pm_output) {
    if (kind == CouplingKind::ProcessOnly)
        throw std::invalid_argument("features_for: the process model takes no feature vector");
    if (kind == CouplingKind::BiasCorrection) {
        if (!pm_output)
            throw std::invalid_argument("features_for: bias correction needs process-model outputs");
        std::vector<double> f(kPmFeatureCount);
        f[0] = data::zscore(pm_output->gpp, stats.pm_outputs[0]);
        f[1] = data::zscore(pm_output->et, stats.pm_outputs[1]);
        f[2] = data::zscore(pm_output->soil_water, stats.pm_outputs[2]);
        return f;
    }
    if (pm_output != nullptr)
        throw std::invalid_argument("features_for: unexpected process-model outputs for this kind");
    std::vector<double> f(kDriverFeatureCount);
    const auto raw = raw_covariates(d);
    for (int v = 0; v < 5; ++v) f[v] = data::zscore(raw[v], stats.covariates[v]);
    const auto [s, c] = data::encode_doy(d.doy);
    f[5] = s;
    f[6] = c;
    return f;
}

// ---------------------------------------------------------------------------
// Model container
// ---------------------------------------------------------------------------

nn::MlpSpec spec_for(CouplingKind kind, const std::vector<int>& hidden) {
    nn::MlpSpec spec;
    spec.input_dim = kind == CouplingKind::BiasCorrection || kind == CouplingKind::PhysicsEmbedding
                         ? kPmFeatureCount
                         : kDriverFeatureCount;
    spec.output_dim = 1;
    spec.hidden = hidden;
    return spec;
}

nn::MlpSpec embedding_param_net_spec(const std::vector<int>& hidden) {
    nn::MlpSpec spec;
    spec.input_dim = kDriverFeatureCount;
    spec.output_dim = preles::kParamCount;
    spec.hidden = hidden;
    return spec;
}

void validate(const CoupledModel& model) {
    preles::validate(model.pm_params);
    if (uses_lambda(model.kind)) {
        if (!(model.lambda > 0.0 && model.lambda <= 1.0))
            throw std::invalid_argument("coupled model: lambda must be in (0, 1]");
    } else if (model.lambda != 0.0) {
        throw std::invalid_argument("coupled model: lambda set for a kind that has none");
    }
    if (uses_network(model.kind)) {
        nn::validate(model.nn_spec);
        const int expected = model.kind == CouplingKind::BiasCorrection ||
                                     model.kind == CouplingKind::PhysicsEmbedding
                                 ? kPmFeatureCount
                                 : kDriverFeatureCount;
        if (model.nn_spec.input_dim != expected || model.nn_spec.output_dim != 1)
            throw std::invalid_argument("coupled model: network dimensions do not match the kind");
        if (nn::flatten(model.nn_params).size() != nn::param_count(model.nn_spec))
            throw std::invalid_argument("coupled model: network parameters do not match the spec");
    }
    if (model.kind == CouplingKind::PhysicsEmbedding) {
        nn::validate(model.param_net_spec);
        if (model.param_net_spec.input_dim != kDriverFeatureCount ||
            model.param_net_spec.output_dim != preles::kParamCount)
            throw std::invalid_argument("coupled model: param net must map 7 features to 13 parameters");
        for (int i = 0; i < preles::kParamCount; ++i)
            if (!(model.embed_prior.lo[i] < model.embed_prior.hi[i]))
                throw std::invalid_argument("coupled model: embedding prior box is degenerate");
    }
    if (model.frozen_layers != 0) {
        if (model.kind != CouplingKind::DomainAdaptation)
            throw std::invalid_argument("coupled model: frozen layers only apply to domain adaptation");
        if (model.frozen_layers < 0 || model.frozen_layers >= model.nn_spec.layer_count())
            throw std::invalid_argument("coupled model: frozen layer count out of range");
    }
}

CoupledModel make_model(CouplingKind kind, const std::vector<int>& hidden, double lambda,
                        const preles::PrelesParams& pm, std::uint64_t seed) {
    CoupledModel m;
    m.kind = kind;
    m.pm_params = pm;
    m.lambda = uses_lambda(kind) ? lambda : 0.0;
    if (uses_network(kind)) {
        m.nn_spec = spec_for(kind, hidden);
        m.nn_params = nn::init_params(m.nn_spec, rng::child_seed(seed, 1));
    }
    if (kind == CouplingKind::PhysicsEmbedding) {
        m.param_net_spec = embedding_param_net_spec(hidden);
        m.param_net_params = nn::init_params(m.param_net_spec, rng::child_seed(seed, 2));
        m.embed_prior = data::default_prior();
    }
    return m;
}

double squash_to_box(double raw, double lo, double hi) {
    // final clamp absorbs the one-ulp overshoot of the affine map at saturation
    return std::clamp((std::tanh(raw * 0.5) + 1.0) * (0.5 * (hi - lo)) + lo, lo, hi);
}

ad::Var squash_to_box(ad::Var raw, double lo, double hi) {
    return ad::clamp((ad::tanh(raw * 0.5) + 1.0) * (0.5 * (hi - lo)) + lo, lo, hi);
}

// ---------------------------------------------------------------------------
// Embedding rollout, shared between plain and tape arithmetic
// ---------------------------------------------------------------------------

namespace {

template <class NetParams>
struct EmbedRun {
    using S = typename decltype(nn::forward(std::declval<const nn::MlpSpec&>(),
                                            std::declval<const NetParams&>(),
                                            std::declval<std::span<const double>>()))::value_type;
    std::vector<S> predictions;
    std::vector<S> phy_gpp;
    std::vector<preles::OutputT<S>> pm_outputs;
    std::vector<preles::StateT<S>> states_before;
};

template <class NetParams>
EmbedRun<NetParams> embedding_rollout(const CoupledModel& m, const NetParams& param_net,
                                      const NetParams& residual_net,
                                      std::span<const preles::DriverRecord> drivers) {
    using S = typename EmbedRun<NetParams>::S;
    if (drivers.empty()) throw std::invalid_argument("embedding: empty driver sequence");

    EmbedRun<NetParams> run;
    run.predictions.reserve(drivers.size());
    run.phy_gpp.reserve(drivers.size());
    run.pm_outputs.reserve(drivers.size());
    run.states_before.reserve(drivers.size());

    const auto& prior = m.embed_prior;
    bool have_state = false;
    preles::StateT<S> state{};

    for (std::size_t k = 0; k < drivers.size(); ++k) {
        const auto& d = drivers[k];
        const auto feats = features_for(CouplingKind::PhysicsEmbedding, d, m.stats);
        auto raw = nn::forward(m.param_net_spec, param_net, std::span<const double>(feats));

        std::array<S, preles::kParamCount> squashed{};
        for (int i = 0; i < preles::kParamCount; ++i)
            squashed[i] = squash_to_box(raw[i], prior.lo[i], prior.hi[i]);
        preles::ParamsT<S> params;
        S* fields[preles::kParamCount] = {
            &params.beta, &params.x0, &params.gamma, &params.kappa, &params.alpha,
            &params.chi, &params.tau, &params.soil_capacity, &params.drainage_rate,
            &params.snow_melt_coeff, &params.wilting_fraction, &params.et_shape, &params.smax};
        for (int i = 0; i < preles::kParamCount; ++i) *fields[i] = squashed[i];

        if (!have_state) {
            state = preles::initial_state(params, d);
            have_state = true;
        }
        run.states_before.push_back(state);
        auto day = preles::step_day(params, d, state);
        state = day.next;

        std::array<S, 3> zfeat = {
            (day.output.gpp - m.stats.pm_outputs[0].mean) * (1.0 / m.stats.pm_outputs[0].sd),
            (day.output.et - m.stats.pm_outputs[1].mean) * (1.0 / m.stats.pm_outputs[1].sd),
            (day.output.soil_water - m.stats.pm_outputs[2].mean) * (1.0 / m.stats.pm_outputs[2].sd)};
        auto pred = nn::forward(m.nn_spec, residual_net, std::span<const S>(zfeat));

        run.predictions.push_back(pred[0]);
        run.phy_gpp.push_back(day.output.gpp);
        run.pm_outputs.push_back(day.output);
    }
    return run;
}

}  // namespace

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

SequenceEval evaluate_sequence(const CoupledModel& model,
                               std::span<const preles::DriverRecord> drivers) {
    validate(model);
    SequenceEval eval;

    switch (model.kind) {
        case CouplingKind::ProcessOnly: {
            auto outputs = preles::simulate_with_states(model.pm_params, drivers, &eval.pm_states);
            for (const auto& o : outputs) eval.predictions.push_back(o.gpp);
            eval.pm_outputs = std::move(outputs);
            break;
        }
        case CouplingKind::Naive:
        case CouplingKind::DomainAdaptation: {
            for (const auto& d : drivers) {
                const auto f = features_for(model.kind, d, model.stats);
                eval.predictions.push_back(nn::forward(model.nn_spec, model.nn_params, f)[0]);
            }
            break;
        }
        case CouplingKind::BiasCorrection: {
            eval.pm_outputs = preles::simulate_with_states(model.pm_params, drivers, &eval.pm_states);
            for (std::size_t i = 0; i < drivers.size(); ++i) {
                const auto f =
                    features_for(model.kind, drivers[i], model.stats, &eval.pm_outputs[i]);
                eval.predictions.push_back(nn::forward(model.nn_spec, model.nn_params, f)[0]);
            }
            break;
        }
        case CouplingKind::ParallelPhysics: {
            eval.pm_outputs = preles::simulate_with_states(model.pm_params, drivers, &eval.pm_states);
            for (std::size_t i = 0; i < drivers.size(); ++i) {
                const auto f = features_for(model.kind, drivers[i], model.stats);
                eval.predictions.push_back(nn::forward(model.nn_spec, model.nn_params, f)[0] +
                                           eval.pm_outputs[i].gpp);
            }
            break;
        }
        case CouplingKind::PhysicsRegularisation: {
            // the PM is a training-time device only; prediction is the net alone
            eval.pm_outputs = preles::simulate_with_states(model.pm_params, drivers, &eval.pm_states);
            for (const auto& d : drivers) {
                const auto f = features_for(model.kind, d, model.stats);
                eval.predictions.push_back(nn::forward(model.nn_spec, model.nn_params, f)[0]);
            }
            break;
        }
        case CouplingKind::PhysicsEmbedding: {
            auto run = embedding_rollout(model, model.param_net_params, model.nn_params, drivers);
            eval.predictions = std::move(run.predictions);
            eval.pm_outputs = std::move(run.pm_outputs);
            eval.pm_states = std::move(run.states_before);
            break;
        }
    }
    return eval;
}

std::vector<double> predict(const CoupledModel& model,
                            std::span<const preles::DriverRecord> drivers) {
    return evaluate_sequence(model, drivers).predictions;
}

double predict_single_frozen(const CoupledModel& model, const preles::DriverRecord& d,
                             const preles::ModelState& state_before) {
    switch (model.kind) {
        case CouplingKind::ProcessOnly:
            return preles::step_day(model.pm_params, d, state_before).output.gpp;
        case CouplingKind::Naive:
        case CouplingKind::DomainAdaptation:
        case CouplingKind::PhysicsRegularisation: {
            const auto f = features_for(model.kind, d, model.stats);
            return nn::forward(model.nn_spec, model.nn_params, f)[0];
        }
        case CouplingKind::BiasCorrection: {
            const auto day = preles::step_day(model.pm_params, d, state_before);
            const auto f = features_for(model.kind, d, model.stats, &day.output);
            return nn::forward(model.nn_spec, model.nn_params, f)[0];
        }
        case CouplingKind::ParallelPhysics: {
            const auto day = preles::step_day(model.pm_params, d, state_before);
            const auto f = features_for(model.kind, d, model.stats);
            return nn::forward(model.nn_spec, model.nn_params, f)[0] + day.output.gpp;
        }
        case CouplingKind::PhysicsEmbedding: {
            const auto feats = features_for(model.kind, d, model.stats);
            auto raw = nn::forward(model.param_net_spec, model.param_net_params, feats);
            std::array<double, preles::kParamCount> flat{};
            for (int i = 0; i < preles::kParamCount; ++i)
                flat[i] = squash_to_box(raw[i], model.embed_prior.lo[i], model.embed_prior.hi[i]);
            const auto params = preles::unflatten(flat);
            const auto day = preles::step_day(params, d, state_before);
            const std::array<double, 3> zfeat = {
                data::zscore(day.output.gpp, model.stats.pm_outputs[0]),
                data::zscore(day.output.et, model.stats.pm_outputs[1]),
                data::zscore(day.output.soil_water, model.stats.pm_outputs[2])};
            return nn::forward(model.nn_spec, model.nn_params, zfeat)[0];
        }
    }
    throw std::logic_error("predict_single_frozen: unreachable");
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

SupervisedData build_supervised(const CoupledModel& model,
                                std::span<const preles::DriverRecord> drivers,
                                std::span<const double> targets,
                                std::span<const preles::ModelOutput> pm_outputs) {
    if (model.kind == CouplingKind::PhysicsEmbedding || model.kind == CouplingKind::ProcessOnly)
        throw std::invalid_argument("build_supervised: kind is not feature-based");
    if (drivers.size() != targets.size())
        throw std::invalid_argument("build_supervised: drivers/targets length mismatch");
    const bool needs_pm = uses_pm(model.kind);
    if (needs_pm && pm_outputs.size() != drivers.size())
        throw std::invalid_argument("build_supervised: process-model outputs required");

    SupervisedData rows;
    rows.features.reserve(drivers.size());
    rows.targets.assign(targets.begin(), targets.end());
    for (std::size_t i = 0; i < drivers.size(); ++i) {
        const preles::ModelOutput* pm =
            model.kind == CouplingKind::BiasCorrection ? &pm_outputs[i] : nullptr;
        rows.features.push_back(features_for(model.kind, drivers[i], model.stats, pm));
    }
    if (model.kind == CouplingKind::ParallelPhysics ||
        model.kind == CouplingKind::PhysicsRegularisation) {
        rows.pm_gpp.reserve(drivers.size());
        for (const auto& o : pm_outputs) rows.pm_gpp.push_back(o.gpp);
    }
    return rows;
}

namespace {

ad::Var batch_loss(ad::Tape& tape, CouplingKind kind, double lambda, const nn::MlpSpec& spec,
                   const nn::TapeParams& lifted, const SupervisedData& rows, std::size_t begin,
                   std::size_t end) {
    ad::Var se = tape.constant(0.0);
    ad::Var se_phy = tape.constant(0.0);
    const bool regularised = kind == CouplingKind::PhysicsRegularisation;
    for (std::size_t r = begin; r < end; ++r) {
        const auto out = nn::forward(spec, lifted, rows.features[r])[0];
        ad::Var pred = kind == CouplingKind::ParallelPhysics ? out + rows.pm_gpp[r] : out;
        ad::Var dy = pred - rows.targets[r];
        se = se + dy * dy;
        if (regularised) {
            ad::Var dphy = out - rows.pm_gpp[r];
            se_phy = se_phy + dphy * dphy;
        }
    }
    const double inv = 1.0 / static_cast<double>(end - begin);
    ad::Var loss = se * inv;
    if (regularised) loss = loss + se_phy * (lambda * inv);
    return loss;
}

}  // namespace

double loss_value(const CoupledModel& model, const SupervisedData& rows) {
    if (rows.features.empty()) throw std::invalid_argument("loss_value: empty rows");
    double se = 0.0, se_phy = 0.0;
    for (std::size_t r = 0; r < rows.features.size(); ++r) {
        const double out = nn::forward(model.nn_spec, model.nn_params, rows.features[r])[0];
        const double pred =
            model.kind == CouplingKind::ParallelPhysics ? out + rows.pm_gpp[r] : out;
        const double dy = pred - rows.targets[r];
        se += dy * dy;
        if (model.kind == CouplingKind::PhysicsRegularisation) {
            const double dphy = out - rows.pm_gpp[r];
            se_phy += dphy * dphy;
        }
    }
    const double inv = 1.0 / static_cast<double>(rows.features.size());
    double loss = se * inv;
    if (model.kind == CouplingKind::PhysicsRegularisation) loss += model.lambda * se_phy * inv;
    return loss;
}

TrainTrace train_supervised(CoupledModel& model, const SupervisedData& train,
                            const SupervisedData* val, const TrainOptions& options) {
    validate(model);
    if (!uses_network(model.kind) || model.kind == CouplingKind::PhysicsEmbedding)
        throw std::invalid_argument("train_supervised: kind is not feature-based");
    const std::size_t n = train.features.size();
    if (n == 0) throw std::invalid_argument("train_supervised: empty training set");
    const bool needs_phy = model.kind == CouplingKind::ParallelPhysics ||
                           model.kind == CouplingKind::PhysicsRegularisation;
    if (needs_phy && train.pm_gpp.size() != n)
        throw std::invalid_argument("train_supervised: missing process-model predictions");

    const std::size_t bs = options.batch_size < 1 ? n : static_cast<std::size_t>(options.batch_size);
    auto flat = nn::flatten(model.nn_params);
    auto adam = nn::AdamState::zeros(flat.size());
    nn::AdamConfig cfg;
    cfg.learning_rate = options.learning_rate;

    ad::Tape tape;
    tape.reserve(4 * flat.size() + 64 * bs);

    TrainTrace trace;
    trace.train_loss.reserve(options.epochs);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        double weighted = 0.0;
        std::size_t counted = 0;
        for (std::size_t b = 0; b < n; b += bs) {
            const std::size_t e = std::min(n, b + bs);
            tape.reset();
            try {
                const auto lifted =
                    nn::lift(tape, model.nn_spec, model.nn_params, model.frozen_layers);
                const ad::Var loss =
                    batch_loss(tape, model.kind, model.lambda, model.nn_spec, lifted, train, b, e);
                if (!std::isfinite(loss.value())) throw std::domain_error("non-finite loss");
                const auto grads = tape.backward(loss);
                const auto g = nn::gradients_flat(tape, grads, lifted);
                nn::adam_step(flat, g, adam, cfg);
                weighted += loss.value() * static_cast<double>(e - b);
            } catch (const std::domain_error&) {
                trace.diverged = true;
                trace.diverged_epoch = epoch;
                return trace;
            }
            model.nn_params = nn::unflatten(model.nn_spec, flat);
            counted += e - b;
        }
        trace.train_loss.push_back(weighted / static_cast<double>(counted));
        if (val) trace.val_loss.push_back(loss_value(model, *val));
    }
    return trace;
}

namespace {

std::vector<double> concat_params(const CoupledModel& m) {
    auto flat = nn::flatten(m.param_net_params);
    const auto tail = nn::flatten(m.nn_params);
    flat.insert(flat.end(), tail.begin(), tail.end());
    return flat;
}

void split_params(CoupledModel& m, std::span<const double> flat) {
    const std::size_t head = nn::param_count(m.param_net_spec);
    m.param_net_params = nn::unflatten(m.param_net_spec, flat.subspan(0, head));
    m.nn_params = nn::unflatten(m.nn_spec, flat.subspan(head));
}

double embedding_loss_value(const CoupledModel& model, const EmbeddingData& d, bool validation) {
    double se = 0.0, se_phy = 0.0;
    std::size_t n = 0;
    for (const auto& site : d.sites) {
        const auto& days = validation ? site.val_days : site.train_days;
        if (days.empty()) continue;
        auto run = embedding_rollout(model, model.param_net_params, model.nn_params,
                                     std::span<const preles::DriverRecord>(site.drivers));
        for (int k : days) {
            const double dy = run.predictions[k] - site.targets[k];
            se += dy * dy;
            const double dphy = run.predictions[k] - run.phy_gpp[k];
            se_phy += dphy * dphy;
            ++n;
        }
    }
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    return (se + model.lambda * se_phy) / static_cast<double>(n);
}

}  // namespace

TrainTrace train_embedding(CoupledModel& model, const EmbeddingData& d,
                           const TrainOptions& options) {
    validate(model);
    if (model.kind != CouplingKind::PhysicsEmbedding)
        throw std::invalid_argument("train_embedding: wrong kind");
    std::size_t n_train = 0;
    bool any_val = false;
    for (const auto& site : d.sites) {
        if (site.drivers.size() != site.targets.size())
            throw std::invalid_argument("train_embedding: drivers/targets length mismatch");
        for (int k : site.train_days)
            if (k < 0 || k >= static_cast<int>(site.drivers.size()))
                throw std::invalid_argument("train_embedding: train day out of range");
        n_train += site.train_days.size();
        any_val = any_val || !site.val_days.empty();
    }
    if (n_train == 0) throw std::invalid_argument("train_embedding: no training days");

    auto flat = concat_params(model);
    auto adam = nn::AdamState::zeros(flat.size());
    nn::AdamConfig cfg;
    cfg.learning_rate = options.learning_rate;

    ad::Tape tape;
    TrainTrace trace;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        tape.reset();
        double loss_value_epoch = 0.0;
        try {
            const auto param_net = nn::lift(tape, model.param_net_spec, model.param_net_params);
            const auto residual_net = nn::lift(tape, model.nn_spec, model.nn_params);

            ad::Var se = tape.constant(0.0);
            ad::Var se_phy = tape.constant(0.0);
            for (const auto& site : d.sites) {
                if (site.train_days.empty()) continue;
                auto run = embedding_rollout(model, param_net, residual_net,
                                             std::span<const preles::DriverRecord>(site.drivers));
                for (int k : site.train_days) {
                    ad::Var dy = run.predictions[k] - site.targets[k];
                    se = se + dy * dy;
                    ad::Var dphy = run.predictions[k] - run.phy_gpp[k];
                    se_phy = se_phy + dphy * dphy;
                }
            }
            const double inv = 1.0 / static_cast<double>(n_train);
            const ad::Var loss = se * inv + se_phy * (model.lambda * inv);
            if (!std::isfinite(loss.value())) throw std::domain_error("non-finite loss");

            const auto grads = tape.backward(loss);
            auto g = nn::gradients_flat(tape, grads, param_net);
            const auto g_tail = nn::gradients_flat(tape, grads, residual_net);
            g.insert(g.end(), g_tail.begin(), g_tail.end());
            nn::adam_step(flat, g, adam, cfg);
            loss_value_epoch = loss.value();
        } catch (const std::domain_error&) {
            trace.diverged = true;
            trace.diverged_epoch = epoch;
            return trace;
        }
        split_params(model, flat);
        trace.train_loss.push_back(loss_value_epoch);
        if (any_val) trace.val_loss.push_back(embedding_loss_value(model, d, true));
    }
    return trace;
}

TrainTrace pretrain(CoupledModel& model, const data::Dataset& simulated,
                    const TrainOptions& options) {
    if (model.kind != CouplingKind::DomainAdaptation)
        throw std::invalid_argument("pretrain: model kind must be domain-adaptation");
    std::vector<preles::DriverRecord> drivers;
    std::vector<double> targets;
    for (const auto& site : simulated.sites)
        for (const auto& r : site.records) {
            drivers.push_back(r.driver);
            targets.push_back(r.gpp);
        }
    if (drivers.empty()) throw std::invalid_argument("pretrain: empty simulated corpus");

    // the pre-training scales stay authoritative through fine-tuning; frozen
    // layers assume a fixed feature mapping
    model.stats = fit_feature_stats(drivers, {});
    model.frozen_layers = 0;
    const auto rows = build_supervised(model, drivers, targets, {});
    return train_supervised(model, rows, nullptr, options);
}

TrainTrace finetune(CoupledModel& model, const SupervisedData& train, const SupervisedData* val,
                    int last_k_layers, const TrainOptions& options) {
    if (model.kind != CouplingKind::DomainAdaptation)
        throw std::invalid_argument("finetune: model kind must be domain-adaptation");
    const int layers = model.nn_spec.layer_count();
    if (last_k_layers < 1 || last_k_layers >= layers)
        throw std::invalid_argument("finetune: last_k_layers must be in [1, layer_count - 1]");
    model.frozen_layers = layers - last_k_layers;
    return train_supervised(model, train, val, options);
}

}  // namespace pgnn::couple
