#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pgnn/preles.hpp"

namespace pgnn::data {

// ---------------------------------------------------------------------------
// Calendar
// ---------------------------------------------------------------------------

bool is_leap(int year);

struct Date {
    int year = 2000;
    int month = 1;
    int day = 1;

    static Date parse(const std::string& iso);  // strict YYYY-MM-DD
    std::string iso() const;
    int day_of_year() const;
    long serial() const;  // days since 1970-01-01
    Date plus_days(long n) const;

    auto operator<=>(const Date&) const = default;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct DayRecord {
    Date date;
    preles::DriverRecord driver;
    double gpp = 0.0;  // observed target, gC / m^2 / day
};

struct SiteDataset {
    std::string site_id;
    std::vector<DayRecord> records;  // strictly increasing dates

    std::vector<int> years() const;
};

struct Dataset {
    std::vector<SiteDataset> sites;

    std::size_t total_rows() const;
    std::vector<int> years() const;  // union across sites, ascending
};

void validate(const Dataset& ds);  // invariants; throws std::invalid_argument

// ---------------------------------------------------------------------------
// Unit conversions
// ---------------------------------------------------------------------------

// The paper profile keeps the source's stated constants verbatim, including
// an Avogadro number of 6.602e23 and a 220 nm wavelength; the codata profile
// swaps in standard values (and a 550 nm PAR-band wavelength).
struct PhysicalConstants {
    double planck_h;           // J s
    double light_speed;        // m / s
    double wavelength;         // m
    double avogadro;           // 1 / mol
    double carbon_molar_mass;  // g / mol

    static PhysicalConstants paper();
    static PhysicalConstants codata();
};

// E = h c / lambda, the energy of one photon.
double photon_energy(const PhysicalConstants& c);

// Global radiation in J cm^-2 day^-1 to photon irradiance in mol m^-2 day^-1.
double convert_radiation(double j_cm2_day, const PhysicalConstants& c = PhysicalConstants::paper());

// Mean flux in umol CO2 m^-2 s^-1 integrated over `seconds` to gC m^-2 day^-1.
double convert_gpp(double umol_m2_s, double seconds = 86400.0,
                   const PhysicalConstants& c = PhysicalConstants::paper());

// 8-day fAPAR slots to a daily series. Interior gap runs take the mean of the
// flanking values; leading/trailing gaps take the nearest value. Each slot
// value is held constant over its eight days; the result is truncated to
// n_days when given (otherwise 8 * slots).
std::vector<double> fill_fapar(std::span<const std::optional<double>> slots, int n_days = -1);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct NormStats {
    double mean = 0.0;
    double sd = 1.0;
};

NormStats fit_stats(std::span<const double> xs);  // population standard deviation
double zscore(double x, const NormStats& s);
double denormalize(double z, const NormStats& s);
// Throws when sd <= 0, naming the variable.
std::vector<double> zscore_series(std::span<const double> xs, const NormStats& s,
                                  const std::string& variable_name);

// Cyclic DOY encoding (sin, cos) with divisor 365 even in leap years.
std::pair<double, double> encode_doy(int doy);

// Keeps record indices 0, 7, 14, ... of each site.
Dataset thin_weekly(const Dataset& ds);

// ---------------------------------------------------------------------------
// Synthetic weather
// ---------------------------------------------------------------------------

// Truncated Fourier series on day of year: cyclic by construction. Stands in
// for externally fitted smooths; coefficients can be injected via the config.
struct HarmonicCurve {
    double intercept = 0.0;
    std::vector<double> sin_amp;
    std::vector<double> cos_amp;

    double operator()(int doy) const;
};

// Variable order used everywhere (curves, covariance rows, feature vectors).
inline constexpr std::array<const char*, 5> kClimateVars = {"tair", "vpd", "par", "precip", "fapar"};

struct WeatherGroup {
    std::string name;
    std::array<HarmonicCurve, 5> curves;
};

struct WeatherSimConfig {
    int version = 1;
    double co2_ppm = 380.0;
    std::vector<WeatherGroup> groups;        // one per site or year group
    std::array<double, 25> noise_cov{};      // row-major 5x5, order kClimateVars
};

// Plausible temperate seasonal curves with per-group variation and a
// correlated noise covariance.
WeatherSimConfig default_weather_config(int n_groups, std::uint64_t seed);

std::string weather_config_to_json(const WeatherSimConfig& cfg);
WeatherSimConfig weather_config_from_json(const std::string& text);

// Lower-triangular Cholesky factor of a symmetric PSD 5x5 matrix (row-major);
// tolerates semidefinite inputs, throws std::invalid_argument otherwise.
std::array<double, 25> cholesky5(const std::array<double, 25>& cov);

// One multivariate normal noise draw per day, shared across the five
// variables; physical clamps applied (par, vpd, precip >= 0, fapar in [0,1]).
std::vector<preles::DriverRecord> simulate_weather(const WeatherSimConfig& cfg,
                                                   std::span<const int> doys, int group,
                                                   std::uint64_t seed);
std::vector<preles::DriverRecord> simulate_weather(const WeatherSimConfig& cfg, int n_days,
                                                   int group, std::uint64_t seed,
                                                   int start_doy = 1);

// ---------------------------------------------------------------------------
// Parameter priors and sampling
// ---------------------------------------------------------------------------

struct ParameterPrior {
    std::array<double, preles::kParamCount> lo{};
    std::array<double, preles::kParamCount> hi{};

    bool contains(const preles::PrelesParams& p) const;
    preles::PrelesParams project(const preles::PrelesParams& p) const;  // box clamp
};

// Narrow boxes around the default calibration.
ParameterPrior default_prior();

std::string prior_to_json(const ParameterPrior& prior);
ParameterPrior prior_from_json(const std::string& text);

// Indices (canonical order) of the five sampled parameters: beta, x0, gamma,
// alpha, chi. The rest stay at their defaults.
inline constexpr std::array<int, 5> kLhsParamIndices = {0, 1, 2, 4, 5};

// Latin hypercube over the five sampled parameters: for each dimension the n
// values occupy n distinct equal-width strata, jittered within.
std::vector<preles::PrelesParams> sample_parameters_lhs(const ParameterPrior& prior, int n,
                                                        std::uint64_t seed);

// Simulated pre-training corpus: per LHS parameter vector, simulated weather
// plus the process model's GPP as the target. One synthetic site per sample.
Dataset generate_pretraining_set(const ParameterPrior& prior, const WeatherSimConfig& weather,
                                 int n_samples, int days, std::uint64_t seed);

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

// Column schema (header mandatory, UTF-8, '.' decimal separator):
//   site,date,tair_c,vpd_kpa,par_molm2d,precip_mm,co2_ppm,fapar,gpp_gcm2d
extern const char* const kCsvHeader;

Dataset load_csv(const std::string& path);
Dataset parse_csv(std::istream& in, const std::string& source_label);
std::string to_csv(const Dataset& ds);
void save_csv(const Dataset& ds, const std::string& path);

// Shortest text that round-trips a double exactly (%.17g trimmed).
std::string format_double(double x);

// FNV-1a hash of the dataset's (site, date, target) rows; used by the
// evaluate command's leakage guard.
std::uint64_t dataset_fingerprint(const Dataset& ds);

}  // namespace pgnn::data
