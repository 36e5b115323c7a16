#pragma once

#include <array>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgnn/data.hpp"
#include "pgnn/mlp.hpp"
#include "pgnn/preles.hpp"

namespace pgnn::couple {

// The seven model variants: both references plus the five process-guided
// designs.
enum class CouplingKind {
    ProcessOnly,
    Naive,
    BiasCorrection,
    ParallelPhysics,
    PhysicsRegularisation,
    PhysicsEmbedding,
    DomainAdaptation,
};

inline constexpr std::array<CouplingKind, 7> kAllKinds = {
    CouplingKind::ProcessOnly,          CouplingKind::Naive,
    CouplingKind::BiasCorrection,       CouplingKind::ParallelPhysics,
    CouplingKind::PhysicsRegularisation, CouplingKind::PhysicsEmbedding,
    CouplingKind::DomainAdaptation,
};

const char* kind_name(CouplingKind kind);
CouplingKind parse_kind(const std::string& name);

bool uses_network(CouplingKind kind);  // everything but ProcessOnly
bool uses_pm(CouplingKind kind);       // everything but Naive and DomainAdaptation
bool uses_lambda(CouplingKind kind);   // regularisation and embedding

// Feature schema: 5 z-scored covariates + cyclic DOY for driver-fed networks,
// 3 z-scored process-model outputs for the bias-correction network.
inline constexpr int kDriverFeatureCount = 7;
inline constexpr int kPmFeatureCount = 3;

struct FeatureStats {
    std::array<data::NormStats, 5> covariates;  // tair, vpd, par, precip, fapar
    std::array<data::NormStats, 3> pm_outputs;  // gpp, et, soil_water
};

std::array<double, 5> raw_covariates(const preles::DriverRecord& d);

// Training-split statistics; pm_outputs may be empty when the kind never
// consumes process-model features.
FeatureStats fit_feature_stats(std::span<const preles::DriverRecord> drivers,
                               std::span<const preles::ModelOutput> pm_outputs);

std::vector<double> features_for(CouplingKind kind, const preles::DriverRecord& d,
                                 const FeatureStats& stats,
                                 const preles::ModelOutput* pm_output = nullptr);

// ---------------------------------------------------------------------------
// Model container
// ---------------------------------------------------------------------------

struct CoupledModel {
    CouplingKind kind = CouplingKind::ProcessOnly;

    // the trainable network: the regression net for driver-fed kinds, the
    // residual net for the embedding
    nn::MlpSpec nn_spec;
    nn::MlpParams nn_params;

    preles::PrelesParams pm_params = preles::default_params();

    double lambda = 0.0;  // (0, 1] for regularisation and embedding

    // embedding: covariates -> 13 parameters, squashed into the prior box
    nn::MlpSpec param_net_spec;
    nn::MlpParams param_net_params;
    data::ParameterPrior embed_prior;

    int frozen_layers = 0;  // leading layers frozen during fine-tuning

    FeatureStats stats{};
};

void validate(const CoupledModel& model);

// Network shapes for a hidden-layer stack under the given kind.
nn::MlpSpec spec_for(CouplingKind kind, const std::vector<int>& hidden);
nn::MlpSpec embedding_param_net_spec(const std::vector<int>& hidden);

// Fresh model with seeded parameter init; hidden is ignored for ProcessOnly.
CoupledModel make_model(CouplingKind kind, const std::vector<int>& hidden, double lambda,
                        const preles::PrelesParams& pm, std::uint64_t seed);

// Bounded bijection from the param net's raw outputs into the prior box:
// lo + (hi - lo) * sigmoid(raw). Raw 0 maps to the box midpoint.
double squash_to_box(double raw, double lo, double hi);
ad::Var squash_to_box(ad::Var raw, double lo, double hi);

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

// GPP prediction over a contiguous driver sequence.
std::vector<double> predict(const CoupledModel& model,
                            std::span<const preles::DriverRecord> drivers);

// Cached evaluation of one sequence: predictions plus, for process-backed
// kinds, the PM outputs and start-of-day states (frozen-state ICE replays
// single days from these).
struct SequenceEval {
    std::vector<double> predictions;
    std::vector<preles::ModelOutput> pm_outputs;  // empty unless uses_pm
    std::vector<preles::ModelState> pm_states;    // start-of-day, empty unless uses_pm
};

SequenceEval evaluate_sequence(const CoupledModel& model,
                               std::span<const preles::DriverRecord> drivers);

// Single-day prediction holding the process state frozen at state_before.
double predict_single_frozen(const CoupledModel& model, const preles::DriverRecord& d,
                             const preles::ModelState& state_before);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Precomputed rows for the feature-based kinds (everything but the
// embedding): the process model, when present, is fixed, so its outputs are
// plain numbers here and gradients can never reach its parameters.
struct SupervisedData {
    std::vector<std::vector<double>> features;
    std::vector<double> targets;
    std::vector<double> pm_gpp;  // parallel-physics offset / regularisation anchor
};

SupervisedData build_supervised(const CoupledModel& model,
                                std::span<const preles::DriverRecord> drivers,
                                std::span<const double> targets,
                                std::span<const preles::ModelOutput> pm_outputs);

// Full sequences for the embedding, whose loss rolls the PM on the tape.
struct EmbeddingData {
    struct Site {
        std::vector<preles::DriverRecord> drivers;  // contiguous
        std::vector<double> targets;                // aligned to drivers
        std::vector<int> train_days;
        std::vector<int> val_days;
    };
    std::vector<Site> sites;
};

struct TrainOptions {
    int epochs = 5000;
    double learning_rate = 1e-3;
    int batch_size = 32;
    std::uint64_t seed = 0;  // reserved for future shuffling; batches are contiguous
};

struct TrainTrace {
    std::vector<double> train_loss;  // per-epoch mean of batch losses
    std::vector<double> val_loss;    // the kind's own loss form on validation rows
    bool diverged = false;
    int diverged_epoch = -1;

    double final_val_loss() const {
        return val_loss.empty() ? std::numeric_limits<double>::quiet_NaN() : val_loss.back();
    }
};

// Mini-batch Adam on the network parameters; contiguous batches in temporal
// order, per-batch tape rebuild. Divergence (non-finite loss or gradients)
// stops the run and is reported on the trace instead of thrown.
TrainTrace train_supervised(CoupledModel& model, const SupervisedData& train,
                            const SupervisedData* val, const TrainOptions& options);

// Full-sequence Adam steps for the embedding; both nets update together.
// batch_size is ignored: the recurrent state makes windowed batches
// ill-defined.
TrainTrace train_embedding(CoupledModel& model, const EmbeddingData& d,
                           const TrainOptions& options);

// The kind's loss form evaluated without a tape (validation/reporting).
double loss_value(const CoupledModel& model, const SupervisedData& rows);

// Domain adaptation stage one: fit normalization stats from the simulated
// corpus and train the full network against the simulated GPP.
TrainTrace pretrain(CoupledModel& model, const data::Dataset& simulated,
                    const TrainOptions& options);

// Domain adaptation stage two: re-fit only the last k layers (the leading
// layers are lifted as constants). k must be in [1, layer_count - 1].
TrainTrace finetune(CoupledModel& model, const SupervisedData& train, const SupervisedData* val,
                    int last_k_layers, const TrainOptions& options);

}  // namespace pgnn::couple
