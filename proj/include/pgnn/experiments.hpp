#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgnn/couplings.hpp"

namespace pgnn::expt {

// ---------------------------------------------------------------------------
// Dataset view and splits
// ---------------------------------------------------------------------------

// Site-major flattened row index over a dataset; rows keep temporal order
// within each site.
struct DataView {
    const data::Dataset* dataset = nullptr;

    struct Row {
        int site;
        int day;  // index into the site's record vector
    };
    std::vector<Row> rows;

    static DataView over(const data::Dataset& ds);

    std::size_t size() const { return rows.size(); }
    const preles::DriverRecord& driver(std::size_t row) const;
    double target(std::size_t row) const;
    int year(std::size_t row) const;
};

enum class SplitScheme { TemporalBlocked, LeaveSiteOut };

struct Fold {
    std::vector<int> train;
    std::vector<int> val;
};

struct SplitPlan {
    SplitScheme scheme = SplitScheme::TemporalBlocked;
    std::vector<Fold> folds;
    std::vector<int> test;
};

// Last year held out as test, each of the first n_folds remaining years is a
// validation block once; within-fold day order preserved.
SplitPlan temporal_block_split(const DataView& view, int n_folds);

// Last site held out as test; every remaining site is the validation site of
// exactly one fold. Needs at least three sites.
SplitPlan leave_site_out_split(const DataView& view);

// ---------------------------------------------------------------------------
// Candidate selection
// ---------------------------------------------------------------------------

// (mean^2 + population standard deviation) / 2 over fold validation losses.
double selection_index(std::span<const double> losses);

struct HyperParams {
    double learning_rate = 1e-3;
    int batch_size = 32;
    double lambda = 0.0;  // regularisation / embedding kinds only
};

struct SearchSpace {
    int max_depth = nn::kMaxHiddenDepth;
    std::vector<int> widths = {2, 4, 8, 16, 32, 64, 128, 256};
    double lr_lo = 1e-4;
    double lr_hi = 1e-1;
    std::vector<int> batch_sizes = {2, 4, 8, 16, 32, 64};
    double lambda_lo = 1e-3;
    double lambda_hi = 1.0;
};

struct Candidate {
    std::vector<int> hidden;
    HyperParams hyper;
};

Candidate sample_candidate(const SearchSpace& space, couple::CouplingKind kind,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainSetup {
    couple::CouplingKind kind = couple::CouplingKind::Naive;
    std::vector<int> hidden = {16};
    HyperParams hyper;
    int epochs = 5000;
    std::uint64_t seed = 0;
    preles::PrelesParams pm = preles::default_params();
    // domain adaptation: fine-tune the last k layers of a pretrained start
    const couple::CoupledModel* warm_start = nullptr;
    int finetune_last_k = 1;
};

struct TrainedFold {
    couple::CoupledModel model;
    couple::TrainTrace trace;
};

// Trains one coupled model on one fold. Normalization statistics come from
// the fold's training rows only; the fixed process model runs over each full
// site sequence so its state threads correctly across split boundaries.
TrainedFold train_model(const DataView& view, const Fold& fold, const TrainSetup& setup);

// Mean absolute error of GPP predictions over the given rows.
double evaluate_mae(const couple::CoupledModel& model, const DataView& view,
                    std::span<const int> rows);

// ---------------------------------------------------------------------------
// Random architecture + hyperparameter search
// ---------------------------------------------------------------------------

struct CandidateResult {
    int ordinal = 0;
    Candidate candidate;
    std::vector<double> fold_losses;
    double index = 0.0;
    bool failed = false;
};

struct SearchResult {
    std::vector<CandidateResult> ranked;  // ascending index, ties by ordinal
    const CandidateResult& best() const { return ranked.front(); }
};

// Samples `budget` candidates and scores each by the selection index over a
// two-fold temporal cross-validation of the given rows (first/second half of
// each site). Failed candidates rank last; throws when every candidate fails.
SearchResult random_search(couple::CouplingKind kind, const DataView& view,
                           std::span<const int> rows, const SearchSpace& space, int budget,
                           int epochs, std::uint64_t seed, int threads,
                           const preles::PrelesParams& pm,
                           const couple::CoupledModel* warm_start = nullptr);

// ---------------------------------------------------------------------------
// Gradient calibration of the process model
// ---------------------------------------------------------------------------

// Adam descent on MSE(observed GPP, simulated GPP) over all 13 parameters,
// box-projected into the prior after every step. Stands in for the sampling
// calibration used upstream; requires the differentiable model.
preles::PrelesParams calibrate_pm_gradient(const DataView& view, std::span<const int> rows,
                                           const preles::PrelesParams& initial,
                                           const data::ParameterPrior& prior, int steps,
                                           double learning_rate);

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

enum class Scenario { OnSiteFull, OnSiteSparse, MultiSiteFull, MultiSiteSparse };

const char* scenario_name(Scenario s);
Scenario parse_scenario(const std::string& name);

struct ExperimentConfig {
    couple::CouplingKind kind = couple::CouplingKind::Naive;
    Scenario scenario = Scenario::OnSiteFull;
    std::string site;  // on-site scenarios; empty = first site

    int search_budget = 0;  // 0 = use `hidden`/`hyper` as given
    std::vector<int> hidden = {16, 16};
    HyperParams hyper{1e-3, 32, 0.5};
    SearchSpace space;

    int epochs = 5000;
    int search_epochs = 0;  // 0 = same as epochs
    std::uint64_t seed = 0;
    int threads = 1;

    bool calibrate_pm = false;
    int calibration_steps = 200;
    double calibration_lr = 0.02;

    // domain adaptation corpus and schedule
    int pretrain_samples = 16;
    int pretrain_days = 365;
    int pretrain_epochs = 100;
    int finetune_last_k = 1;
};

struct FoldReport {
    int fold = 0;
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;
    double test_mae = 0.0;
};

struct ExperimentReport {
    couple::CouplingKind kind;
    Scenario scenario;
    std::vector<FoldReport> folds;
    double mae_mean = 0.0;
    double mae_std = 0.0;  // population std over folds
    std::optional<SearchResult> search;
    couple::CoupledModel best_model;  // fold with the smallest validation loss
    int best_fold = 0;
    std::uint64_t train_fingerprint = 0;
    std::vector<std::vector<double>> fold_train_traces;
    std::vector<std::vector<double>> fold_val_traces;
};

// Split -> (optional search) -> per-fold training -> test evaluation.
ExperimentReport run_experiment(const data::Dataset& ds, const ExperimentConfig& config);

}  // namespace pgnn::expt
