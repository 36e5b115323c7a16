#include "pgnn/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "pgnn/parallel.hpp"
#include "pgnn/rng.hpp"

namespace pgnn::expt {

// ---------------------------------------------------------------------------
// DataView
// ---------------------------------------------------------------------------

DataView DataView::over(const data::Dataset& ds) {
    data::validate(ds);
    DataView view;
    view.dataset = &ds;
    for (int s = 0; s < static_cast<int>(ds.sites.size()); ++s)
        for (int d = 0; d < static_cast<int>(ds.sites[s].records.size()); ++d)
            view.rows.push_back(Row{s, d});
    return view;
}

const preles::DriverRecord& DataView::driver(std::size_t row) const {
    const Row& r = rows[row];
    return dataset->sites[r.site].records[r.day].driver;
}

double DataView::target(std::size_t row) const {
    const Row& r = rows[row];
    return dataset->sites[r.site].records[r.day].gpp;
}

int DataView::year(std::size_t row) const {
    const Row& r = rows[row];
    return dataset->sites[r.site].records[r.day].date.year;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

SplitPlan temporal_block_split(const DataView& view, int n_folds) {
    if (n_folds < 1) throw std::invalid_argument("temporal_block_split: need >= 1 fold");
    std::set<int> year_set;
    for (std::size_t i = 0; i < view.size(); ++i) year_set.insert(view.year(i));
    const std::vector<int> years(year_set.begin(), year_set.end());
    if (static_cast<int>(years.size()) < n_folds + 1)
        throw std::invalid_argument("temporal_block_split: dataset must span >= n_folds + 1 years");

    const int test_year = years.back();
    std::vector<int> val_years(years.begin(), years.begin() + n_folds);

    SplitPlan plan;
    plan.scheme = SplitScheme::TemporalBlocked;
    plan.folds.resize(val_years.size());
    for (std::size_t i = 0; i < view.size(); ++i) {
        const int y = view.year(i);
        if (y == test_year) {
            plan.test.push_back(static_cast<int>(i));
            continue;
        }
        for (std::size_t f = 0; f < val_years.size(); ++f) {
            if (y == val_years[f])
                plan.folds[f].val.push_back(static_cast<int>(i));
            else
                plan.folds[f].train.push_back(static_cast<int>(i));
        }
    }
    return plan;
}

SplitPlan leave_site_out_split(const DataView& view) {
    const int n_sites = static_cast<int>(view.dataset->sites.size());
    if (n_sites < 3) throw std::invalid_argument("leave_site_out_split: need >= 3 sites");

    const int test_site = n_sites - 1;
    SplitPlan plan;
    plan.scheme = SplitScheme::LeaveSiteOut;
    plan.folds.resize(static_cast<std::size_t>(n_sites) - 1);
    for (std::size_t i = 0; i < view.size(); ++i) {
        const int s = view.rows[i].site;
        if (s == test_site) {
            plan.test.push_back(static_cast<int>(i));
            continue;
        }
        for (int f = 0; f < n_sites - 1; ++f) {
            if (s == f)
                plan.folds[f].val.push_back(static_cast<int>(i));
            else
                plan.folds[f].train.push_back(static_cast<int>(i));
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Selection index and candidate sampling
// ---------------------------------------------------------------------------

double selection_index(std::span<const double> losses) {
    if (losses.empty()) throw std::invalid_argument("selection_index: empty loss list");
    double mean = 0.0;
    for (double l : losses) {
        if (!(l >= 0.0)) throw std::invalid_argument("selection_index: losses must be >= 0");
        mean += l;
    }
    mean /= static_cast<double>(losses.size());
    double var = 0.0;
    for (double l : losses) var += (l - mean) * (l - mean);
    var /= static_cast<double>(losses.size());
    return (mean * mean + std::sqrt(var)) / 2.0;
}

Candidate sample_candidate(const SearchSpace& space, couple::CouplingKind kind,
                           std::uint64_t seed) {
    if (space.widths.empty() || space.batch_sizes.empty())
        throw std::invalid_argument("sample_candidate: empty search space");
    rng::Stream rs(seed);
    Candidate c;
    const int depth = rs.uniform_int(1, space.max_depth);
    for (int l = 0; l < depth; ++l)
        c.hidden.push_back(space.widths[rs.uniform_int(0, static_cast<int>(space.widths.size()) - 1)]);
    c.hyper.learning_rate = rs.log_uniform(space.lr_lo, space.lr_hi);
    c.hyper.batch_size =
        space.batch_sizes[rs.uniform_int(0, static_cast<int>(space.batch_sizes.size()) - 1)];
    c.hyper.lambda =
        couple::uses_lambda(kind) ? rs.uniform(space.lambda_lo, space.lambda_hi) : 0.0;
    return c;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct SiteRows {
    int site = 0;
    std::vector<int> days;  // record indices within the site
};

std::vector<SiteRows> group_by_site(const DataView& view, std::span<const int> rows) {
    std::map<int, SiteRows> by_site;
    for (int r : rows) {
        const auto& row = view.rows[static_cast<std::size_t>(r)];
        auto& bucket = by_site[row.site];
        bucket.site = row.site;
        bucket.days.push_back(row.day);
    }
    std::vector<SiteRows> out;
    out.reserve(by_site.size());
    for (auto& [site, bucket] : by_site) {
        std::sort(bucket.days.begin(), bucket.days.end());
        out.push_back(std::move(bucket));
    }
    return out;
}

std::span<const preles::DriverRecord> site_drivers(const data::Dataset& ds, int site,
                                                   std::vector<std::vector<preles::DriverRecord>>& scratch) {
    if (scratch.empty()) scratch.resize(ds.sites.size());
    auto& cache = scratch[static_cast<std::size_t>(site)];
    if (cache.empty()) {
        cache.reserve(ds.sites[site].records.size());
        for (const auto& r : ds.sites[site].records) cache.push_back(r.driver);
    }
    return cache;
}

// full-sequence PM outputs per site, computed once for the fixed-PM kinds
std::vector<std::vector<preles::ModelOutput>> pm_outputs_per_site(
    const data::Dataset& ds, const preles::PrelesParams& pm,
    std::vector<std::vector<preles::DriverRecord>>& scratch) {
    std::vector<std::vector<preles::ModelOutput>> outputs(ds.sites.size());
    for (int s = 0; s < static_cast<int>(ds.sites.size()); ++s)
        outputs[s] = preles::simulate(pm, site_drivers(ds, s, scratch));
    return outputs;
}

struct GatheredRows {
    std::vector<preles::DriverRecord> drivers;
    std::vector<double> targets;
    std::vector<preles::ModelOutput> pm;
};

GatheredRows gather(const DataView& view, std::span<const int> rows,
                    const std::vector<std::vector<preles::ModelOutput>>* pm_outputs) {
    GatheredRows g;
    g.drivers.reserve(rows.size());
    g.targets.reserve(rows.size());
    for (int r : rows) {
        const auto& row = view.rows[static_cast<std::size_t>(r)];
        g.drivers.push_back(view.driver(static_cast<std::size_t>(r)));
        g.targets.push_back(view.target(static_cast<std::size_t>(r)));
        if (pm_outputs) g.pm.push_back((*pm_outputs)[row.site][row.day]);
    }
    return g;
}

}  // namespace

TrainedFold train_model(const DataView& view, const Fold& fold, const TrainSetup& setup) {
    if (fold.train.empty()) throw std::invalid_argument("train_model: empty training fold");
    const data::Dataset& ds = *view.dataset;
    std::vector<std::vector<preles::DriverRecord>> driver_scratch;

    TrainedFold result;

    if (setup.kind == couple::CouplingKind::ProcessOnly) {
        result.model = couple::make_model(setup.kind, {}, 0.0, setup.pm, setup.seed);
        return result;  // nothing trainable here
    }

    const bool needs_pm = couple::uses_pm(setup.kind);
    std::vector<std::vector<preles::ModelOutput>> pm_outputs;
    if (needs_pm) pm_outputs = pm_outputs_per_site(ds, setup.pm, driver_scratch);

    auto train_rows = gather(view, fold.train, needs_pm ? &pm_outputs : nullptr);
    auto val_rows = gather(view, fold.val, needs_pm ? &pm_outputs : nullptr);

    couple::TrainOptions opt;
    opt.epochs = setup.epochs;
    opt.learning_rate = setup.hyper.learning_rate;
    opt.batch_size = setup.hyper.batch_size;
    opt.seed = setup.seed;

    if (setup.kind == couple::CouplingKind::PhysicsEmbedding) {
        couple::CoupledModel model = couple::make_model(setup.kind, setup.hidden,
                                                        setup.hyper.lambda, setup.pm, setup.seed);
        model.stats = couple::fit_feature_stats(train_rows.drivers, train_rows.pm);

        couple::EmbeddingData ed;
        std::map<int, std::size_t> site_slot;
        auto slot_for = [&](int site_index) -> couple::EmbeddingData::Site& {
            auto it = site_slot.find(site_index);
            if (it != site_slot.end()) return ed.sites[it->second];
            couple::EmbeddingData::Site fresh;
            auto drivers = site_drivers(ds, site_index, driver_scratch);
            fresh.drivers.assign(drivers.begin(), drivers.end());
            fresh.targets.reserve(ds.sites[site_index].records.size());
            for (const auto& r : ds.sites[site_index].records) fresh.targets.push_back(r.gpp);
            site_slot[site_index] = ed.sites.size();
            ed.sites.push_back(std::move(fresh));
            return ed.sites.back();
        };
        for (const auto& bucket : group_by_site(view, fold.train))
            slot_for(bucket.site).train_days = bucket.days;
        for (const auto& bucket : group_by_site(view, fold.val))
            slot_for(bucket.site).val_days = bucket.days;

        result.trace = couple::train_embedding(model, ed, opt);
        result.model = std::move(model);
        return result;
    }

    couple::CoupledModel model;
    if (setup.warm_start) {
        if (setup.kind != couple::CouplingKind::DomainAdaptation)
            throw std::invalid_argument("train_model: warm start is a domain-adaptation device");
        model = *setup.warm_start;  // pretrained weights and stats carry over
    } else {
        model = couple::make_model(setup.kind, setup.hidden, setup.hyper.lambda, setup.pm,
                                   setup.seed);
        model.stats = couple::fit_feature_stats(train_rows.drivers, train_rows.pm);
    }

    const auto train_data = couple::build_supervised(model, train_rows.drivers, train_rows.targets,
                                                     train_rows.pm);
    couple::SupervisedData val_data;
    const bool has_val = !fold.val.empty();
    if (has_val)
        val_data = couple::build_supervised(model, val_rows.drivers, val_rows.targets, val_rows.pm);

    if (setup.warm_start) {
        result.trace = couple::finetune(model, train_data, has_val ? &val_data : nullptr,
                                        setup.finetune_last_k, opt);
    } else {
        result.trace =
            couple::train_supervised(model, train_data, has_val ? &val_data : nullptr, opt);
    }
    result.model = std::move(model);
    return result;
}

double evaluate_mae(const couple::CoupledModel& model, const DataView& view,
                    std::span<const int> rows) {
    if (rows.empty()) throw std::invalid_argument("evaluate_mae: empty row set");
    const data::Dataset& ds = *view.dataset;
    std::vector<std::vector<preles::DriverRecord>> driver_scratch;

    // predictions over each touched site's full sequence, then indexed
    std::map<int, std::vector<double>> per_site;
    for (const auto& bucket : group_by_site(view, rows))
        per_site[bucket.site] = couple::predict(model, site_drivers(ds, bucket.site, driver_scratch));

    double abs_sum = 0.0;
    for (int r : rows) {
        const auto& row = view.rows[static_cast<std::size_t>(r)];
        abs_sum += std::abs(per_site[row.site][row.day] - view.target(static_cast<std::size_t>(r)));
    }
    return abs_sum / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Random search
// ---------------------------------------------------------------------------

SearchResult random_search(couple::CouplingKind kind, const DataView& view,
                           std::span<const int> rows, const SearchSpace& space, int budget,
                           int epochs, std::uint64_t seed, int threads,
                           const preles::PrelesParams& pm,
                           const couple::CoupledModel* warm_start) {
    if (budget < 1) throw std::invalid_argument("random_search: budget must be >= 1");
    if (rows.size() < 4) throw std::invalid_argument("random_search: too few rows");

    // two-fold temporal cross-validation: first/second half of each site
    Fold half_a, half_b;
    for (const auto& bucket : group_by_site(view, rows)) {
        std::vector<int> globals;
        for (int r : rows) {
            const auto& row = view.rows[static_cast<std::size_t>(r)];
            if (row.site == bucket.site) globals.push_back(r);
        }
        const std::size_t mid = globals.size() / 2;
        for (std::size_t i = 0; i < globals.size(); ++i)
            (i < mid ? half_a : half_b).train.push_back(globals[i]);
    }
    Fold fold1{half_a.train, half_b.train};
    Fold fold2{half_b.train, half_a.train};

    std::vector<CandidateResult> results(static_cast<std::size_t>(budget));
    par::parallel_for(static_cast<std::size_t>(budget), threads, [&](std::size_t c) {
        CandidateResult& out = results[c];
        out.ordinal = static_cast<int>(c);
        out.candidate = sample_candidate(space, kind, rng::child_seed(seed, 1000 + c));
        out.failed = false;
        for (int f = 0; f < 2; ++f) {
            const Fold& fold = f == 0 ? fold1 : fold2;
            TrainSetup setup;
            setup.kind = kind;
            setup.hidden = out.candidate.hidden;
            setup.hyper = out.candidate.hyper;
            setup.epochs = epochs;
            setup.seed = rng::child_seed(seed, 2 * c + f);
            setup.pm = pm;
            setup.warm_start = warm_start;
            try {
                auto trained = train_model(view, fold, setup);
                if (trained.trace.diverged || trained.trace.val_loss.empty())
                    throw std::runtime_error("candidate diverged");
                out.fold_losses.push_back(trained.trace.val_loss.back());
            } catch (const std::exception&) {
                out.failed = true;
                break;
            }
        }
        out.index = out.failed ? std::numeric_limits<double>::infinity()
                               : selection_index(out.fold_losses);
    });

    bool any_ok = false;
    for (const auto& r : results) any_ok = any_ok || !r.failed;
    if (!any_ok) throw std::runtime_error("random_search: every candidate failed");

    std::stable_sort(results.begin(), results.end(), [](const auto& a, const auto& b) {
        if (a.index != b.index) return a.index < b.index;
        return a.ordinal < b.ordinal;
    });
    SearchResult sr;
    sr.ranked = std::move(results);
    return sr;
}

// ---------------------------------------------------------------------------
// PM calibration
// ---------------------------------------------------------------------------

preles::PrelesParams calibrate_pm_gradient(const DataView& view, std::span<const int> rows,
                                           const preles::PrelesParams& initial,
                                           const data::ParameterPrior& prior, int steps,
                                           double learning_rate) {
    if (rows.empty()) throw std::invalid_argument("calibrate_pm_gradient: empty row set");
    if (!prior.contains(initial))
        throw std::invalid_argument("calibrate_pm_gradient: initial parameters outside the prior");

    const data::Dataset& ds = *view.dataset;
    std::vector<std::vector<preles::DriverRecord>> driver_scratch;
    const auto buckets = group_by_site(view, rows);

    auto flat = preles::flatten(initial);
    auto adam = nn::AdamState::zeros(preles::kParamCount);
    nn::AdamConfig cfg;
    cfg.learning_rate = learning_rate;

    ad::Tape tape;
    for (int step = 0; step < steps; ++step) {
        tape.reset();
        const auto params = preles::lift(tape, preles::unflatten(flat), true);
        ad::Var se = tape.constant(0.0);
        std::size_t n = 0;
        for (const auto& bucket : buckets) {
            auto outputs = preles::simulate(params, site_drivers(ds, bucket.site, driver_scratch));
            for (int day : bucket.days) {
                const double y = ds.sites[bucket.site].records[day].gpp;
                ad::Var dy = outputs[day].gpp - y;
                se = se + dy * dy;
                ++n;
            }
        }
        const ad::Var loss = se * (1.0 / static_cast<double>(n));
        if (!std::isfinite(loss.value()))
            throw std::runtime_error("calibrate_pm_gradient: diverged at step " +
                                     std::to_string(step));
        const auto grads = tape.backward(loss);

        std::array<double, preles::kParamCount> g{};
        const ad::Var* leaves[preles::kParamCount] = {
            &params.beta, &params.x0, &params.gamma, &params.kappa, &params.alpha,
            &params.chi, &params.tau, &params.soil_capacity, &params.drainage_rate,
            &params.snow_melt_coeff, &params.wilting_fraction, &params.et_shape, &params.smax};
        for (int i = 0; i < preles::kParamCount; ++i) g[static_cast<std::size_t>(i)] = grads.at(*leaves[i]);

        nn::adam_step(flat, g, adam, cfg);
        for (int i = 0; i < preles::kParamCount; ++i)
            flat[i] = std::clamp(flat[i], prior.lo[i], prior.hi[i]);
    }
    return preles::unflatten(flat);
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::OnSiteFull: return "onsite-full";
        case Scenario::OnSiteSparse: return "onsite-sparse";
        case Scenario::MultiSiteFull: return "multisite-full";
        case Scenario::MultiSiteSparse: return "multisite-sparse";
    }
    return "?";
}

Scenario parse_scenario(const std::string& name) {
    for (Scenario s : {Scenario::OnSiteFull, Scenario::OnSiteSparse, Scenario::MultiSiteFull,
                       Scenario::MultiSiteSparse})
        if (name == scenario_name(s)) return s;
    throw std::invalid_argument("unknown scenario '" + name + "'");
}

namespace {

bool is_on_site(Scenario s) { return s == Scenario::OnSiteFull || s == Scenario::OnSiteSparse; }
bool is_sparse(Scenario s) { return s == Scenario::OnSiteSparse || s == Scenario::MultiSiteSparse; }

}  // namespace

ExperimentReport run_experiment(const data::Dataset& input, const ExperimentConfig& config) {
    data::validate(input);

    // scenario selection
    data::Dataset ds;
    if (is_on_site(config.scenario)) {
        const std::string wanted = config.site;
        const data::SiteDataset* site = nullptr;
        for (const auto& s : input.sites)
            if (wanted.empty() || s.site_id == wanted) {
                site = &s;
                break;
            }
        if (!site) throw std::invalid_argument("run_experiment: site '" + wanted + "' not found");
        ds.sites.push_back(*site);
    } else {
        ds = input;
    }
    if (is_sparse(config.scenario)) ds = data::thin_weekly(ds);

    const DataView view = DataView::over(ds);

    SplitPlan plan;
    if (is_on_site(config.scenario)) {
        const int years = static_cast<int>(ds.years().size());
        if (years < 3)
            throw std::invalid_argument("run_experiment: temporal split needs >= 3 years");
        plan = temporal_block_split(view, years - 1);
    } else {
        plan = leave_site_out_split(view);
    }

    // all non-test rows participate in search and calibration
    std::vector<int> pool = plan.folds.front().train;
    pool.insert(pool.end(), plan.folds.front().val.begin(), plan.folds.front().val.end());
    std::sort(pool.begin(), pool.end());

    ExperimentReport report;
    report.kind = config.kind;
    report.scenario = config.scenario;
    report.train_fingerprint = data::dataset_fingerprint(ds);

    preles::PrelesParams pm = preles::default_params();
    if (config.calibrate_pm && config.kind != couple::CouplingKind::Naive &&
        config.kind != couple::CouplingKind::DomainAdaptation)
        pm = calibrate_pm_gradient(view, pool, pm, data::default_prior(), config.calibration_steps,
                                   config.calibration_lr);

    // architecture/hyperparameter selection; domain adaptation reuses the
    // naive network's search
    std::vector<int> hidden = config.hidden;
    HyperParams hyper = config.hyper;
    const int search_epochs = config.search_epochs > 0 ? config.search_epochs : config.epochs;
    if (config.search_budget > 0 && config.kind != couple::CouplingKind::ProcessOnly) {
        const couple::CouplingKind search_kind = config.kind == couple::CouplingKind::DomainAdaptation
                                                     ? couple::CouplingKind::Naive
                                                     : config.kind;
        report.search = random_search(search_kind, view, pool, config.space, config.search_budget,
                                      search_epochs, rng::child_seed(config.seed, 11),
                                      config.threads, pm);
        hidden = report.search->best().candidate.hidden;
        hyper = report.search->best().candidate.hyper;
        if (!couple::uses_lambda(config.kind)) hyper.lambda = 0.0;
        if (couple::uses_lambda(config.kind) && hyper.lambda == 0.0) hyper.lambda = config.hyper.lambda;
    }

    // domain adaptation: one pretrained start shared by every fold
    couple::CoupledModel pretrained;
    const couple::CoupledModel* warm_start = nullptr;
    if (config.kind == couple::CouplingKind::DomainAdaptation) {
        pretrained = couple::make_model(config.kind, hidden, 0.0, pm,
                                        rng::child_seed(config.seed, 21));
        auto weather = data::default_weather_config(std::max<int>(1, ds.sites.size()),
                                                    rng::child_seed(config.seed, 22));
        auto corpus = data::generate_pretraining_set(data::default_prior(), weather,
                                                     config.pretrain_samples, config.pretrain_days,
                                                     rng::child_seed(config.seed, 23));
        couple::TrainOptions opt;
        opt.epochs = config.pretrain_epochs;
        opt.learning_rate = hyper.learning_rate;
        opt.batch_size = hyper.batch_size;
        couple::pretrain(pretrained, corpus, opt);
        warm_start = &pretrained;
    }

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<double> maes;
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        TrainSetup setup;
        setup.kind = config.kind;
        setup.hidden = hidden;
        setup.hyper = hyper;
        setup.epochs = config.epochs;
        setup.seed = rng::child_seed(config.seed, 100 + f);
        setup.pm = pm;
        setup.warm_start = warm_start;
        setup.finetune_last_k = config.finetune_last_k;

        auto trained = train_model(view, plan.folds[f], setup);
        if (trained.trace.diverged)
            throw std::runtime_error("run_experiment: fold " + std::to_string(f) +
                                     " diverged at epoch " +
                                     std::to_string(trained.trace.diverged_epoch));

        FoldReport fr;
        fr.fold = static_cast<int>(f);
        fr.final_train_loss =
            trained.trace.train_loss.empty() ? 0.0 : trained.trace.train_loss.back();
        fr.final_val_loss = trained.trace.val_loss.empty()
                                ? std::numeric_limits<double>::quiet_NaN()
                                : trained.trace.val_loss.back();
        fr.test_mae = evaluate_mae(trained.model, view, plan.test);
        maes.push_back(fr.test_mae);
        report.folds.push_back(fr);
        report.fold_train_traces.push_back(trained.trace.train_loss);
        report.fold_val_traces.push_back(trained.trace.val_loss);

        const double val_score = trained.trace.val_loss.empty()
                                     ? fr.test_mae  // process model: no training loss
                                     : trained.trace.val_loss.back();
        if (val_score < best_val) {
            best_val = val_score;
            report.best_model = trained.model;
            report.best_fold = static_cast<int>(f);
        }
    }

    double mean = 0.0;
    for (double m : maes) mean += m;
    mean /= static_cast<double>(maes.size());
    double var = 0.0;
    for (double m : maes) var += (m - mean) * (m - mean);
    var /= static_cast<double>(maes.size());
    report.mae_mean = mean;
    report.mae_std = std::sqrt(var);
    return report;
}

}  // namespace pgnn::expt
