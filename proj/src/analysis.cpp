#include "pgnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pgnn/parallel.hpp"

namespace pgnn::ice {

using json = nlohmann::ordered_json;

const char* variable_name(SweepVariable v) {
    switch (v) {
        case SweepVariable::TAir: return "tair";
        case SweepVariable::Vpd: return "vpd";
        case SweepVariable::Par: return "par";
        case SweepVariable::Precip: return "precip";
        case SweepVariable::Fapar: return "fapar";
    }
    return "?";
}

SweepVariable parse_variable(const std::string& name) {
    for (SweepVariable v : kAllVariables)
        if (name == variable_name(v)) return v;
    throw std::invalid_argument("unknown sweep variable '" + name + "'");
}

const char* mode_name(SweepMode m) {
    return m == SweepMode::Resimulate ? "resimulate" : "frozen-state";
}

SweepMode parse_mode(const std::string& name) {
    if (name == "resimulate") return SweepMode::Resimulate;
    if (name == "frozen-state") return SweepMode::FrozenState;
    throw std::invalid_argument("unknown sweep mode '" + name + "'");
}

namespace {

double get_variable(const preles::DriverRecord& d, SweepVariable v) {
    switch (v) {
        case SweepVariable::TAir: return d.t_air;
        case SweepVariable::Vpd: return d.vpd;
        case SweepVariable::Par: return d.par;
        case SweepVariable::Precip: return d.precip;
        case SweepVariable::Fapar: return d.fapar;
    }
    return 0.0;
}

void set_variable(preles::DriverRecord& d, SweepVariable v, double value) {
    switch (v) {
        case SweepVariable::TAir: d.t_air = value; break;
        case SweepVariable::Vpd: d.vpd = value; break;
        case SweepVariable::Par: d.par = value; break;
        case SweepVariable::Precip: d.precip = value; break;
        case SweepVariable::Fapar: d.fapar = value; break;
    }
}

}  // namespace

std::vector<Window> seasonal_windows(const data::SiteDataset& site, int year) {
    const std::array<std::pair<const char*, data::Date>, 4> records = {{
        {"spring", data::Date{year, 3, 20}},
        {"summer", data::Date{year, 6, 21}},
        {"autumn", data::Date{year, 9, 20}},
        {"winter", data::Date{year, 12, 21}},
    }};

    bool covers_year = false;
    for (const auto& r : site.records) covers_year = covers_year || r.date.year == year;
    if (!covers_year)
        throw std::invalid_argument("seasonal_windows: dataset does not cover year " +
                                    std::to_string(year));

    std::vector<Window> windows;
    for (const auto& [name, record_day] : records) {
        Window w;
        w.name = name;
        w.record_doy = record_day.day_of_year();
        const long lo = record_day.serial() - 7;
        const long hi = record_day.serial() + 7;
        for (int i = 0; i < static_cast<int>(site.records.size()); ++i) {
            const long s = site.records[i].date.serial();
            if (s >= lo && s <= hi) w.day_indices.push_back(i);
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

std::vector<double> default_grid(const data::SiteDataset& site, SweepVariable variable,
                                 int points) {
    if (points < 1) throw std::invalid_argument("default_grid: need >= 1 point");
    if (site.records.empty()) throw std::invalid_argument("default_grid: empty site");
    double lo = get_variable(site.records.front().driver, variable);
    double hi = lo;
    for (const auto& r : site.records) {
        const double v = get_variable(r.driver, variable);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (lo == hi || points == 1) return {lo};
    std::vector<double> grid(points);
    for (int i = 0; i < points; ++i)
        grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    grid.front() = lo;
    grid.back() = hi;  // exact endpoints regardless of rounding
    return grid;
}

namespace {

double percentile(std::vector<double> sorted, double p) {
    // linear interpolation between order statistics (R type 7)
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = p * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

void summarize_ice(IceResult& result) {
    const std::size_t g = result.grid.size();
    const std::size_t days = result.curves.size();
    if (days == 0) throw std::invalid_argument("summarize_ice: no curves");
    result.mean.assign(g, 0.0);
    result.lower95.assign(g, 0.0);
    result.upper95.assign(g, 0.0);
    std::vector<double> column(days);
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t d = 0; d < days; ++d) column[d] = result.curves[d][i];
        double mean = 0.0;
        for (double v : column) mean += v;
        result.mean[i] = mean / static_cast<double>(days);
        std::vector<double> sorted = column;
        std::sort(sorted.begin(), sorted.end());
        result.lower95[i] = percentile(sorted, 0.025);
        result.upper95[i] = percentile(sorted, 0.975);
    }
}

IceResult ice_curves(const couple::CoupledModel& model, const data::SiteDataset& site,
                     const IceRequest& request, int threads) {
    if (request.grid.empty()) throw std::invalid_argument("ice_curves: empty grid");
    for (std::size_t i = 1; i < request.grid.size(); ++i)
        if (!(request.grid[i] > request.grid[i - 1]))
            throw std::invalid_argument("ice_curves: grid must be strictly increasing");
    if (request.window.day_indices.empty())
        throw std::invalid_argument("ice_curves: empty window");
    for (int k : request.window.day_indices)
        if (k < 0 || k >= static_cast<int>(site.records.size()))
            throw std::invalid_argument("ice_curves: window day out of range");

    std::vector<preles::DriverRecord> drivers;
    drivers.reserve(site.records.size());
    for (const auto& r : site.records) drivers.push_back(r.driver);

    // observed run; frozen mode replays single days from these states
    const auto observed = couple::evaluate_sequence(model, drivers);

    IceResult result;
    result.model_kind = couple::kind_name(model.kind);
    result.variable = request.variable;
    result.window_name = request.window.name;
    result.mode = request.mode;
    result.grid = request.grid;
    result.curves.assign(request.window.day_indices.size(),
                         std::vector<double>(request.grid.size(), 0.0));

    par::parallel_for(request.window.day_indices.size(), threads, [&](std::size_t slot) {
        const int k = request.window.day_indices[slot];
        auto& curve = result.curves[slot];
        if (request.mode == SweepMode::Resimulate) {
            std::vector<preles::DriverRecord> modified = drivers;
            for (std::size_t gi = 0; gi < request.grid.size(); ++gi) {
                set_variable(modified[static_cast<std::size_t>(k)], request.variable,
                             request.grid[gi]);
                curve[gi] = couple::predict(model, modified)[static_cast<std::size_t>(k)];
            }
        } else {
            const preles::ModelState state = couple::uses_pm(model.kind)
                                                 ? observed.pm_states[static_cast<std::size_t>(k)]
                                                 : preles::ModelState{0.0, 0.0, 0.0, 0.0};
            preles::DriverRecord d = drivers[static_cast<std::size_t>(k)];
            for (std::size_t gi = 0; gi < request.grid.size(); ++gi) {
                set_variable(d, request.variable, request.grid[gi]);
                curve[gi] = couple::predict_single_frozen(model, d, state);
            }
        }
    });

    summarize_ice(result);
    return result;
}

std::string ice_to_csv(std::span<const IceResult> results, const serialize::Provenance& prov) {
    std::string out = "# pgnn ice export version=" + std::string(prov.version) +
                      " seed=" + std::to_string(prov.seed) + " config=" + prov.config_hash + "\n";
    out += "model,variable,window,mode,grid_value,mean,lower95,upper95,n_days\n";
    for (const auto& r : results) {
        for (std::size_t i = 0; i < r.grid.size(); ++i) {
            out += r.model_kind;
            out.push_back(',');
            out += variable_name(r.variable);
            out.push_back(',');
            out += r.window_name;
            out.push_back(',');
            out += mode_name(r.mode);
            for (double v : {r.grid[i], r.mean[i], r.lower95[i], r.upper95[i]}) {
                out.push_back(',');
                out += data::format_double(v);
            }
            out.push_back(',');
            out += std::to_string(r.curves.size());
            out.push_back('\n');
        }
    }
    return out;
}

std::string ice_to_json(std::span<const IceResult> results, const serialize::Provenance& prov) {
    json j;
    j["version"] = 1;
    j["provenance"] = {{"tool", prov.tool},
                       {"version", prov.version},
                       {"seed", prov.seed},
                       {"config_hash", prov.config_hash}};
    json rows = json::array();
    for (const auto& r : results) {
        json jr;
        jr["model"] = r.model_kind;
        jr["variable"] = variable_name(r.variable);
        jr["window"] = r.window_name;
        jr["mode"] = mode_name(r.mode);
        jr["grid_points"] = r.grid.size();
        jr["days"] = r.curves.size();
        rows.push_back(std::move(jr));
    }
    j["results"] = std::move(rows);
    return j.dump(2) + "\n";
}

void export_report(std::span<const IceResult> results, const std::string& csv_path,
                   const std::string& json_path, const serialize::Provenance& prov) {
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write '" + csv_path + "'");
    csv << ice_to_csv(results, prov);
    if (!csv) throw std::runtime_error("write failed for '" + csv_path + "'");
    std::ofstream js(json_path, std::ios::binary);
    if (!js) throw std::runtime_error("cannot write '" + json_path + "'");
    js << ice_to_json(results, prov);
    if (!js) throw std::runtime_error("write failed for '" + json_path + "'");
}

}  // namespace pgnn::ice
