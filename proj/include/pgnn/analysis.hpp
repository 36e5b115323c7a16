#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "pgnn/couplings.hpp"
#include "pgnn/serialize.hpp"

namespace pgnn::ice {

enum class SweepVariable { TAir, Vpd, Par, Precip, Fapar };

inline constexpr std::array<SweepVariable, 5> kAllVariables = {
    SweepVariable::TAir, SweepVariable::Vpd, SweepVariable::Par, SweepVariable::Precip,
    SweepVariable::Fapar};

const char* variable_name(SweepVariable v);
SweepVariable parse_variable(const std::string& name);

// Resimulate reruns the model over the whole sequence per grid point;
// FrozenState replays the single day from the observed start-of-day state.
// Both curves agree at the swept day itself, since the substitution cannot
// reach back in time; the mode is recorded in the output metadata.
enum class SweepMode { Resimulate, FrozenState };

const char* mode_name(SweepMode m);
SweepMode parse_mode(const std::string& name);

struct Window {
    std::string name;
    int record_doy = 0;
    std::vector<int> day_indices;  // record indices into the site dataset
};

// The four seasonal windows around Mar 20, Jun 21, Sep 20, Dec 21: record
// day +/- 7 days (15 days when the data covers them).
std::vector<Window> seasonal_windows(const data::SiteDataset& site, int year);

// Evenly spaced grid over the observed range of the variable.
std::vector<double> default_grid(const data::SiteDataset& site, SweepVariable variable,
                                 int points = 50);

struct IceRequest {
    SweepVariable variable = SweepVariable::TAir;
    std::vector<double> grid;  // strictly increasing
    Window window;
    SweepMode mode = SweepMode::Resimulate;
};

struct IceResult {
    std::string model_kind;
    SweepVariable variable = SweepVariable::TAir;
    std::string window_name;
    SweepMode mode = SweepMode::Resimulate;
    std::vector<double> grid;
    std::vector<std::vector<double>> curves;  // one per window day
    // per grid point, across the window's days
    std::vector<double> mean;
    std::vector<double> lower95;
    std::vector<double> upper95;
};

// Per-day curves: the chosen variable sweeps the grid in raw units while
// everything else stays at that day's observed values; normalization applies
// after substitution.
IceResult ice_curves(const couple::CoupledModel& model, const data::SiteDataset& site,
                     const IceRequest& request, int threads = 1);

// Mean plus empirical 2.5/97.5 percentiles (linear interpolation between
// order statistics); a single curve degenerates to a zero-width interval.
void summarize_ice(IceResult& result);

std::string ice_to_csv(std::span<const IceResult> results, const serialize::Provenance& prov);
std::string ice_to_json(std::span<const IceResult> results, const serialize::Provenance& prov);
void export_report(std::span<const IceResult> results, const std::string& csv_path,
                   const std::string& json_path, const serialize::Provenance& prov);

}  // namespace pgnn::ice
