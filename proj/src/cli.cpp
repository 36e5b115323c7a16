#include "pgnn/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pgnn/analysis.hpp"
#include "pgnn/data.hpp"
#include "pgnn/experiments.hpp"
#include "pgnn/parallel.hpp"
#include "pgnn/rng.hpp"
#include "pgnn/serialize.hpp"

namespace pgnn::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::vector<int> parse_hidden(const std::string& text) {
    std::vector<int> hidden;
    if (text.empty()) return hidden;
    std::stringstream ss(text);
    std::string token;
    while (std::getline(ss, token, ',')) {
        try {
            hidden.push_back(std::stoi(token));
        } catch (const std::exception&) {
            throw ConfigError("invalid --hidden entry '" + token + "'");
        }
    }
    return hidden;
}

std::string hidden_to_string(const std::vector<int>& hidden) {
    std::string out;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        if (i) out.push_back('-');
        out += std::to_string(hidden[i]);
    }
    return out;
}

// `--config file.json` entries become argv tokens ahead of the explicit
// flags; every option takes the last value, so flags > config > defaults.
std::vector<std::string> merge_config_tokens(const std::vector<std::string>& args) {
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (config_path.empty()) return args;

    json cfg;
    try {
        cfg = json::parse(read_file(config_path));
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + config_path + "': " + e.what());
    }
    if (!cfg.is_object()) throw ConfigError("config file must hold a JSON object");

    std::vector<std::string> merged;
    if (!args.empty()) merged.push_back(args.front());  // subcommand name first
    for (const auto& [key, value] : cfg.items()) {
        if (value.is_boolean()) {
            if (value.get<bool>()) merged.push_back("--" + key);
            continue;
        }
        merged.push_back("--" + key);
        if (value.is_string())
            merged.push_back(value.get<std::string>());
        else
            merged.push_back(value.dump());
    }
    for (std::size_t i = args.empty() ? 0 : 1; i < args.size(); ++i) merged.push_back(args[i]);
    return merged;
}

serialize::Provenance make_provenance(const json& resolved_config, std::uint64_t seed) {
    serialize::Provenance prov;
    prov.seed = seed;
    prov.config_hash = serialize::hex64(serialize::fnv1a(resolved_config.dump()));
    return prov;
}

json provenance_json(const serialize::Provenance& prov) {
    return json{{"tool", prov.tool},
                {"version", prov.version},
                {"seed", prov.seed},
                {"config_hash", prov.config_hash}};
}

void take_last_all(CLI::App& app) {
    for (auto* option : app.get_options())
        option->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string out_dir;
    std::string weather_config;
    std::string start_date = "2001-01-01";
    std::uint64_t seed = 0;
    int sites = 1;
    int days = 730;
    double noise_sd = 0.0;
    bool codata = false;
};

int cmd_simulate(const SimulateArgs& a) {
    if (a.sites < 1 || a.days < 1) throw ConfigError("simulate: need sites >= 1 and days >= 1");
    fs::create_directories(a.out_dir);

    data::WeatherSimConfig weather =
        a.weather_config.empty()
            ? data::default_weather_config(a.sites, rng::child_seed(a.seed, 1))
            : data::weather_config_from_json(read_file(a.weather_config));
    if (static_cast<int>(weather.groups.size()) < a.sites)
        throw ConfigError("simulate: weather config has fewer groups than sites");

    const auto pm = preles::default_params();
    const data::Date start = data::Date::parse(a.start_date);
    rng::Stream noise(rng::child_seed(a.seed, 2));

    data::Dataset ds;
    for (int s = 0; s < a.sites; ++s) {
        std::vector<int> doys(a.days);
        for (int i = 0; i < a.days; ++i) doys[i] = start.plus_days(i).day_of_year();
        auto drivers = data::simulate_weather(weather, doys, s,
                                              rng::child_seed(a.seed, 100 + static_cast<std::uint64_t>(s)));
        auto outputs = preles::simulate(pm, drivers);

        data::SiteDataset site;
        site.site_id = "site" + std::to_string(s);
        for (int i = 0; i < a.days; ++i) {
            double y = outputs[i].gpp;
            if (a.noise_sd > 0.0) y += noise.normal(0.0, a.noise_sd);
            site.records.push_back(data::DayRecord{start.plus_days(i), drivers[i], y});
        }
        ds.sites.push_back(std::move(site));
    }

    json resolved{{"command", "simulate"}, {"seed", a.seed},      {"sites", a.sites},
                  {"days", a.days},        {"noise_sd", a.noise_sd}, {"start_date", a.start_date},
                  {"codata", a.codata}};
    const auto prov = make_provenance(resolved, a.seed);

    const fs::path out(a.out_dir);
    data::save_csv(ds, (out / "dataset.csv").string());

    json pj;
    pj["version"] = 1;
    pj["provenance"] = provenance_json(prov);
    pj["command"] = "simulate";
    pj["rows"] = ds.total_rows();
    pj["sites"] = a.sites;
    pj["days"] = a.days;
    pj["files"] = json::array({"dataset.csv"});
    write_file(out / "provenance.json", pj.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data_path;
    std::string out_dir;
    std::string kinds = "naive";
    std::string scenario = "onsite-full";
    std::string site;
    std::string hidden = "16,16";
    double lr = 1e-3;
    int batch = 32;
    double lambda = 0.5;
    int epochs = 5000;
    int search_budget = 0;
    int search_epochs = 0;
    std::uint64_t seed = 0;
    int threads = 0;
    bool calibrate_pm = false;
    int calibration_steps = 200;
    int pretrain_samples = 16;
    int pretrain_days = 365;
    int pretrain_epochs = 100;
    int finetune_last_k = 1;
};

std::vector<couple::CouplingKind> parse_kinds(const std::string& text) {
    std::vector<couple::CouplingKind> kinds;
    if (text == "all") {
        kinds.assign(couple::kAllKinds.begin(), couple::kAllKinds.end());
        return kinds;
    }
    std::stringstream ss(text);
    std::string token;
    while (std::getline(ss, token, ',')) kinds.push_back(couple::parse_kind(token));
    if (kinds.empty()) throw ConfigError("no coupling kind given");
    return kinds;
}

expt::ExperimentConfig experiment_config(const TrainArgs& a, couple::CouplingKind kind) {
    expt::ExperimentConfig cfg;
    cfg.kind = kind;
    cfg.scenario = expt::parse_scenario(a.scenario);
    cfg.site = a.site;
    cfg.hidden = parse_hidden(a.hidden);
    cfg.hyper = {a.lr, a.batch, a.lambda};
    cfg.epochs = a.epochs;
    cfg.search_budget = a.search_budget;
    cfg.search_epochs = a.search_epochs;
    cfg.seed = a.seed;
    cfg.threads = a.threads > 0 ? a.threads : par::default_threads();
    cfg.calibrate_pm = a.calibrate_pm;
    cfg.calibration_steps = a.calibration_steps;
    cfg.pretrain_samples = a.pretrain_samples;
    cfg.pretrain_days = a.pretrain_days;
    cfg.pretrain_epochs = a.pretrain_epochs;
    cfg.finetune_last_k = a.finetune_last_k;
    return cfg;
}

json resolved_train_config(const TrainArgs& a) {
    return json{{"command", "train"},
                {"data", a.data_path},
                {"kind", a.kinds},
                {"scenario", a.scenario},
                {"site", a.site},
                {"hidden", a.hidden},
                {"lr", a.lr},
                {"batch", a.batch},
                {"lambda", a.lambda},
                {"epochs", a.epochs},
                {"search_budget", a.search_budget},
                {"search_epochs", a.search_epochs},
                {"seed", a.seed},
                {"calibrate_pm", a.calibrate_pm},
                {"pretrain_samples", a.pretrain_samples},
                {"pretrain_days", a.pretrain_days},
                {"pretrain_epochs", a.pretrain_epochs},
                {"finetune_last_k", a.finetune_last_k}};
}

int cmd_train(const TrainArgs& a) {
    const auto kinds = parse_kinds(a.kinds);
    const auto ds = data::load_csv(a.data_path);
    fs::create_directories(a.out_dir);
    const fs::path out(a.out_dir);

    const auto prov = make_provenance(resolved_train_config(a), a.seed);

    json metrics;
    metrics["version"] = 1;
    metrics["provenance"] = provenance_json(prov);
    metrics["scenario"] = a.scenario;
    json rows = json::array();

    std::string folds_csv = "# pgnn folds version=" + std::string(prov.version) +
                            " seed=" + std::to_string(prov.seed) + " config=" + prov.config_hash +
                            "\nkind,fold,final_train_loss,final_val_loss,test_mae\n";
    std::string traces_csv = "# pgnn loss traces version=" + std::string(prov.version) +
                             " seed=" + std::to_string(prov.seed) + " config=" + prov.config_hash +
                             "\nkind,fold,epoch,train_loss,val_loss\n";

    for (const auto kind : kinds) {
        const auto report = expt::run_experiment(ds, experiment_config(a, kind));

        json row;
        row["kind"] = couple::kind_name(kind);
        row["mae_mean"] = report.mae_mean;
        row["mae_std"] = report.mae_std;
        row["folds"] = report.folds.size();
        row["best_fold"] = report.best_fold;
        if (report.search) {
            const auto& best = report.search->best();
            row["search"] = json{{"architecture", hidden_to_string(best.candidate.hidden)},
                                 {"lr", best.candidate.hyper.learning_rate},
                                 {"batch_size", best.candidate.hyper.batch_size},
                                 {"lambda", best.candidate.hyper.lambda},
                                 {"index", best.index}};
        }
        rows.push_back(std::move(row));

        for (const auto& fr : report.folds) {
            folds_csv += std::string(couple::kind_name(kind)) + "," + std::to_string(fr.fold) +
                         "," + data::format_double(fr.final_train_loss) + "," +
                         data::format_double(fr.final_val_loss) + "," +
                         data::format_double(fr.test_mae) + "\n";
        }
        for (std::size_t f = 0; f < report.fold_train_traces.size(); ++f) {
            const auto& train_trace = report.fold_train_traces[f];
            const auto& val_trace = report.fold_val_traces[f];
            for (std::size_t e = 0; e < train_trace.size(); ++e) {
                traces_csv += std::string(couple::kind_name(kind)) + "," + std::to_string(f) +
                              "," + std::to_string(e) + "," + data::format_double(train_trace[e]) +
                              "," +
                              (e < val_trace.size() ? data::format_double(val_trace[e]) : "") +
                              "\n";
            }
        }

        const std::string bundle =
            serialize::bundle_to_json(report.best_model, prov, report.train_fingerprint);
        const std::string name =
            kinds.size() == 1 ? "bundle.json"
                              : "bundle-" + std::string(couple::kind_name(kind)) + ".json";
        write_file(out / name, bundle);
    }

    metrics["rows"] = std::move(rows);
    write_file(out / "metrics.json", metrics.dump(2) + "\n");
    write_file(out / "folds.csv", folds_csv);
    write_file(out / "loss_traces.csv", traces_csv);
    return 0;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

struct SearchArgs {
    std::string data_path;
    std::string out_dir;
    std::string kind = "naive";
    std::string scenario = "onsite-full";
    std::string site;
    int budget = 32;
    int epochs = 200;
    std::uint64_t seed = 0;
    int threads = 0;
};

int cmd_search(const SearchArgs& a) {
    if (a.budget < 1) throw ConfigError("search: budget must be >= 1");
    const auto kind = couple::parse_kind(a.kind);
    if (kind == couple::CouplingKind::ProcessOnly)
        throw ConfigError("search: the process model has no architecture to search");
    auto ds = data::load_csv(a.data_path);
    fs::create_directories(a.out_dir);
    const fs::path out(a.out_dir);

    const auto scenario = expt::parse_scenario(a.scenario);
    expt::ExperimentConfig scen_cfg;
    scen_cfg.scenario = scenario;
    scen_cfg.site = a.site;

    // scenario selection mirrors run_experiment: on-site keeps one site,
    // sparse thins; the search pool is every non-test row
    data::Dataset selected;
    if (scenario == expt::Scenario::OnSiteFull || scenario == expt::Scenario::OnSiteSparse) {
        const data::SiteDataset* site = nullptr;
        for (const auto& s : ds.sites)
            if (a.site.empty() || s.site_id == a.site) {
                site = &s;
                break;
            }
        if (!site) throw ConfigError("search: site '" + a.site + "' not found");
        selected.sites.push_back(*site);
    } else {
        selected = ds;
    }
    if (scenario == expt::Scenario::OnSiteSparse || scenario == expt::Scenario::MultiSiteSparse)
        selected = data::thin_weekly(selected);

    const auto view = expt::DataView::over(selected);
    expt::SplitPlan plan;
    if (scenario == expt::Scenario::OnSiteFull || scenario == expt::Scenario::OnSiteSparse) {
        const int years = static_cast<int>(selected.years().size());
        if (years < 3) throw ConfigError("search: temporal split needs >= 3 years");
        plan = expt::temporal_block_split(view, years - 1);
    } else {
        plan = expt::leave_site_out_split(view);
    }
    std::vector<int> pool = plan.folds.front().train;
    pool.insert(pool.end(), plan.folds.front().val.begin(), plan.folds.front().val.end());
    std::sort(pool.begin(), pool.end());

    json resolved{{"command", "search"}, {"data", a.data_path}, {"kind", a.kind},
                  {"scenario", a.scenario}, {"budget", a.budget}, {"epochs", a.epochs},
                  {"seed", a.seed}};
    const auto prov = make_provenance(resolved, a.seed);

    const int threads = a.threads > 0 ? a.threads : par::default_threads();
    const auto result =
        expt::random_search(kind, view, pool, expt::SearchSpace{}, a.budget, a.epochs,
                            rng::child_seed(a.seed, 11), threads, preles::default_params());

    std::string csv = "# pgnn search version=" + std::string(prov.version) +
                      " seed=" + std::to_string(prov.seed) + " config=" + prov.config_hash +
                      "\narchitecture,lr,batch_size,lambda,index\n";
    for (const auto& cand : result.ranked) {
        csv += hidden_to_string(cand.candidate.hidden);
        csv += ",";
        csv += data::format_double(cand.candidate.hyper.learning_rate);
        csv += ",";
        csv += std::to_string(cand.candidate.hyper.batch_size);
        csv += ",";
        if (couple::uses_lambda(kind)) csv += data::format_double(cand.candidate.hyper.lambda);
        csv += ",";
        csv += cand.failed ? "failed" : data::format_double(cand.index);
        csv += "\n";
    }
    write_file(out / "search.csv", csv);

    json sj;
    sj["version"] = 1;
    sj["provenance"] = provenance_json(prov);
    sj["kind"] = a.kind;
    sj["budget"] = a.budget;
    const auto& best = result.best();
    sj["best"] = json{{"architecture", hidden_to_string(best.candidate.hidden)},
                      {"lr", best.candidate.hyper.learning_rate},
                      {"batch_size", best.candidate.hyper.batch_size},
                      {"lambda", best.candidate.hyper.lambda},
                      {"index", best.index}};
    write_file(out / "search.json", sj.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string bundle_path;
    std::string data_path;
    std::string out_dir;
    bool allow_leakage = false;
    std::uint64_t seed = 0;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const std::string bundle_text = read_file(a.bundle_path);
    const auto bundle = serialize::bundle_from_json(bundle_text);
    const auto ds = data::load_csv(a.data_path);

    const std::uint64_t data_fp = data::dataset_fingerprint(ds);
    if (data_fp == bundle.train_fingerprint && !a.allow_leakage)
        throw ConfigError(
            "evaluate: this bundle was trained on exactly this dataset; pass --allow-leakage to "
            "evaluate anyway");

    fs::create_directories(a.out_dir);
    const fs::path out(a.out_dir);

    json resolved{{"command", "evaluate"}, {"bundle", a.bundle_path}, {"data", a.data_path},
                  {"allow_leakage", a.allow_leakage}, {"seed", a.seed}};
    const auto prov = make_provenance(resolved, a.seed);

    const auto view = expt::DataView::over(ds);
    std::vector<int> all_rows(view.size());
    for (std::size_t i = 0; i < view.size(); ++i) all_rows[i] = static_cast<int>(i);
    const double mae = expt::evaluate_mae(bundle.model, view, all_rows);

    // spread across years, matching the reporting convention
    std::vector<double> year_maes;
    for (int year : ds.years()) {
        std::vector<int> rows;
        for (std::size_t i = 0; i < view.size(); ++i)
            if (view.year(i) == year) rows.push_back(static_cast<int>(i));
        if (!rows.empty()) year_maes.push_back(expt::evaluate_mae(bundle.model, view, rows));
    }
    double mean = 0.0;
    for (double m : year_maes) mean += m;
    mean /= static_cast<double>(year_maes.size());
    double var = 0.0;
    for (double m : year_maes) var += (m - mean) * (m - mean);
    var /= static_cast<double>(year_maes.size());

    json ej;
    ej["version"] = 1;
    ej["provenance"] = provenance_json(prov);
    ej["bundle_hash"] = serialize::hex64(serialize::fnv1a(bundle_text));
    ej["kind"] = couple::kind_name(bundle.model.kind);
    ej["rows"] = all_rows.size();
    ej["mae"] = mae;
    ej["mae_std_across_years"] = std::sqrt(var);
    json per_site = json::array();
    for (const auto& site : ds.sites) {
        std::vector<int> rows;
        for (std::size_t i = 0; i < view.size(); ++i)
            if (ds.sites[view.rows[i].site].site_id == site.site_id)
                rows.push_back(static_cast<int>(i));
        per_site.push_back(json{{"site", site.site_id},
                                {"mae", expt::evaluate_mae(bundle.model, view, rows)},
                                {"rows", rows.size()}});
    }
    ej["per_site"] = std::move(per_site);
    write_file(out / "evaluation.json", ej.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// ice
// ---------------------------------------------------------------------------

struct IceArgs {
    std::string bundle_path;
    std::string data_path;
    std::string out_dir;
    std::string variable;  // empty = all five
    std::string mode = "resimulate";
    std::string site;
    int year = 0;  // 0 = last covered year
    int grid_points = 50;
    std::uint64_t seed = 0;
    int threads = 0;
};

int cmd_ice(const IceArgs& a) {
    const auto bundle = serialize::bundle_from_json(read_file(a.bundle_path));
    const auto ds = data::load_csv(a.data_path);

    const data::SiteDataset* site = nullptr;
    for (const auto& s : ds.sites)
        if (a.site.empty() || s.site_id == a.site) {
            site = &s;
            break;
        }
    if (!site) throw ConfigError("ice: site '" + a.site + "' not found");
    const int year = a.year > 0 ? a.year : site->years().back();

    std::vector<ice::SweepVariable> variables;
    if (a.variable.empty())
        variables.assign(ice::kAllVariables.begin(), ice::kAllVariables.end());
    else
        variables.push_back(ice::parse_variable(a.variable));
    const auto mode = ice::parse_mode(a.mode);

    json resolved{{"command", "ice"},   {"bundle", a.bundle_path}, {"data", a.data_path},
                  {"variable", a.variable}, {"mode", a.mode},       {"year", year},
                  {"grid_points", a.grid_points}, {"seed", a.seed}};
    const auto prov = make_provenance(resolved, a.seed);

    const int threads = a.threads > 0 ? a.threads : par::default_threads();
    const auto windows = ice::seasonal_windows(*site, year);

    std::vector<ice::IceResult> results;
    for (const auto variable : variables) {
        const auto grid = ice::default_grid(*site, variable, a.grid_points);
        for (const auto& window : windows) {
            if (window.day_indices.empty()) continue;
            ice::IceRequest req;
            req.variable = variable;
            req.grid = grid;
            req.window = window;
            req.mode = mode;
            results.push_back(ice::ice_curves(bundle.model, *site, req, threads));
        }
    }

    fs::create_directories(a.out_dir);
    const fs::path out(a.out_dir);
    ice::export_report(results, (out / "ice.csv").string(), (out / "ice.json").string(), prov);
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args) {
    CLI::App app{"process-guided neural network toolbox"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    simulate->add_option("--out", sim.out_dir, "output directory")->required();
    simulate->add_option("--seed", sim.seed, "random seed")->envname("PGNN_SEED");
    simulate->add_option("--sites", sim.sites, "number of sites");
    simulate->add_option("--days", sim.days, "days per site");
    simulate->add_option("--noise-sd", sim.noise_sd, "observation noise (gC m^-2 d^-1)");
    simulate->add_option("--weather-config", sim.weather_config, "weather simulator JSON");
    simulate->add_option("--start-date", sim.start_date, "first day (YYYY-MM-DD)");
    simulate->add_flag("--codata", sim.codata, "use standard physical constants");
    simulate->add_option("--config", "JSON config file (flags win)");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "train a coupled model");
    train->add_option("--data", tr.data_path, "dataset CSV")->required();
    train->add_option("--out", tr.out_dir, "output directory")->required();
    train->add_option("--kind", tr.kinds, "coupling kind(s), comma list or 'all'");
    train->add_option("--scenario", tr.scenario,
                      "onsite-full | onsite-sparse | multisite-full | multisite-sparse");
    train->add_option("--site", tr.site, "site id for on-site scenarios");
    train->add_option("--hidden", tr.hidden, "hidden widths, e.g. 16,16");
    train->add_option("--lr", tr.lr, "learning rate");
    train->add_option("--batch", tr.batch, "batch size");
    train->add_option("--lambda", tr.lambda, "regularisation weight (0,1]");
    train->add_option("--epochs", tr.epochs, "training epochs");
    train->add_option("--search-budget", tr.search_budget, "candidates to search (0 = off)");
    train->add_option("--search-epochs", tr.search_epochs, "epochs per candidate (0 = epochs)");
    train->add_option("--seed", tr.seed, "random seed")->envname("PGNN_SEED");
    train->add_option("--threads", tr.threads, "worker threads (0 = cores)")->envname("PGNN_THREADS");
    train->add_flag("--calibrate-pm", tr.calibrate_pm, "gradient-calibrate the process model");
    train->add_option("--calibration-steps", tr.calibration_steps, "calibration Adam steps");
    train->add_option("--pretrain-samples", tr.pretrain_samples, "LHS samples (domain adaptation)");
    train->add_option("--pretrain-days", tr.pretrain_days, "days per simulated sample");
    train->add_option("--pretrain-epochs", tr.pretrain_epochs, "pre-training epochs");
    train->add_option("--finetune-last-k", tr.finetune_last_k, "layers re-fit during fine-tuning");
    train->add_option("--config", "JSON config file (flags win)");

    SearchArgs se;
    auto* search = app.add_subcommand("search", "architecture + hyperparameter random search");
    search->add_option("--data", se.data_path, "dataset CSV")->required();
    search->add_option("--out", se.out_dir, "output directory")->required();
    search->add_option("--kind", se.kind, "coupling kind");
    search->add_option("--scenario", se.scenario, "data scenario");
    search->add_option("--site", se.site, "site id for on-site scenarios");
    search->add_option("--budget", se.budget, "number of candidates");
    search->add_option("--epochs", se.epochs, "epochs per candidate fold");
    search->add_option("--seed", se.seed, "random seed")->envname("PGNN_SEED");
    search->add_option("--threads", se.threads, "worker threads (0 = cores)")->envname("PGNN_THREADS");
    search->add_option("--config", "JSON config file (flags win)");

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "evaluate a model bundle on a dataset");
    evaluate->add_option("--bundle", ev.bundle_path, "model bundle JSON")->required();
    evaluate->add_option("--data", ev.data_path, "dataset CSV")->required();
    evaluate->add_option("--out", ev.out_dir, "output directory")->required();
    evaluate->add_flag("--allow-leakage", ev.allow_leakage,
                       "evaluate even on the bundle's own training data");
    evaluate->add_option("--seed", ev.seed, "random seed")->envname("PGNN_SEED");
    evaluate->add_option("--config", "JSON config file (flags win)");

    IceArgs ic;
    auto* ice_cmd = app.add_subcommand("ice", "individual conditional expectation export");
    ice_cmd->add_option("--bundle", ic.bundle_path, "model bundle JSON")->required();
    ice_cmd->add_option("--data", ic.data_path, "dataset CSV")->required();
    ice_cmd->add_option("--out", ic.out_dir, "output directory")->required();
    ice_cmd->add_option("--variable", ic.variable, "tair|vpd|par|precip|fapar (default: all)");
    ice_cmd->add_option("--mode", ic.mode, "resimulate | frozen-state");
    ice_cmd->add_option("--site", ic.site, "site id (default: first)");
    ice_cmd->add_option("--year", ic.year, "analysis year (default: last)");
    ice_cmd->add_option("--grid-points", ic.grid_points, "grid resolution");
    ice_cmd->add_option("--seed", ic.seed, "random seed")->envname("PGNN_SEED");
    ice_cmd->add_option("--threads", ic.threads, "worker threads (0 = cores)")->envname("PGNN_THREADS");
    ice_cmd->add_option("--config", "JSON config file (flags win)");

    for (auto* sub : {simulate, train, search, evaluate, ice_cmd}) take_last_all(*sub);

    try {
        auto merged = merge_config_tokens(args);
        std::reverse(merged.begin(), merged.end());  // CLI11 consumes reversed args
        app.parse(std::move(merged));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (simulate->parsed()) return cmd_simulate(sim);
        if (train->parsed()) return cmd_train(tr);
        if (search->parsed()) return cmd_search(se);
        if (evaluate->parsed()) return cmd_evaluate(ev);
        if (ice_cmd->parsed()) return cmd_ice(ic);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace pgnn::cli
