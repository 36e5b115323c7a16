#include "pgnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pgnn/rng.hpp"

namespace pgnn::data {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Calendar
// ---------------------------------------------------------------------------

bool is_leap(int year) {
    return (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
}

namespace {

// Howard Hinnant's civil calendar algorithms.
long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

Date civil_from_days(long z) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long y = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

const std::array<int, 13> kDaysInMonth = {0, 31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};

int days_in_month(int year, int month) {
    if (month == 2 && is_leap(year)) return 29;
    return kDaysInMonth[month];
}

}  // namespace

Date Date::parse(const std::string& iso) {
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-')
        throw std::invalid_argument("invalid date '" + iso + "' (expected YYYY-MM-DD)");
    auto number = [&](int from, int count) {
        int value = 0;
        auto [p, ec] = std::from_chars(iso.data() + from, iso.data() + from + count, value);
        if (ec != std::errc() || p != iso.data() + from + count)
            throw std::invalid_argument("invalid date '" + iso + "'");
        return value;
    };
    Date d{number(0, 4), number(5, 2), number(8, 2)};
    if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month))
        throw std::invalid_argument("invalid date '" + iso + "'");
    return d;
}

std::string Date::iso() const {
    char buffer[16];
    std::snprintf(buffer, sizeof buffer, "%04d-%02d-%02d", year, month, day);
    return buffer;
}

int Date::day_of_year() const {
    return static_cast<int>(serial() - days_from_civil(year, 1, 1)) + 1;
}

long Date::serial() const { return days_from_civil(year, month, day); }

Date Date::plus_days(long n) const { return civil_from_days(serial() + n); }

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

std::vector<int> SiteDataset::years() const {
    std::vector<int> ys;
    for (const auto& r : records) ys.push_back(r.date.year);
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    return ys;
}

std::size_t Dataset::total_rows() const {
    std::size_t n = 0;
    for (const auto& s : sites) n += s.records.size();
    return n;
}

std::vector<int> Dataset::years() const {
    std::set<int> ys;
    for (const auto& s : sites)
        for (int y : s.years()) ys.insert(y);
    return {ys.begin(), ys.end()};
}

void validate(const Dataset& ds) {
    std::set<std::string> seen;
    for (const auto& site : ds.sites) {
        if (site.site_id.empty()) throw std::invalid_argument("dataset: empty site id");
        if (!seen.insert(site.site_id).second)
            throw std::invalid_argument("dataset: duplicate site id '" + site.site_id + "'");
        const DayRecord* prev = nullptr;
        for (const auto& r : site.records) {
            if (prev && r.date.serial() <= prev->date.serial())
                throw std::invalid_argument("dataset: site '" + site.site_id +
                                            "' dates not strictly increasing at " + r.date.iso());
            if (!std::isfinite(r.gpp))
                throw std::invalid_argument("dataset: non-finite target at " + r.date.iso());
            preles::validate(r.driver);
            prev = &r;
        }
    }
}

// ---------------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------------

PhysicalConstants PhysicalConstants::paper() {
    return {6.63e-34, 2.99792458e8, 2.2e-7, 6.602e23, 12.011};
}

PhysicalConstants PhysicalConstants::codata() {
    return {6.62607015e-34, 2.99792458e8, 5.5e-7, 6.02214076e23, 12.011};
}

double photon_energy(const PhysicalConstants& c) {
    return c.planck_h * c.light_speed / c.wavelength;
}

double convert_radiation(double j_cm2_day, const PhysicalConstants& c) {
    if (j_cm2_day < 0.0) throw std::invalid_argument("convert_radiation: negative radiation");
    const double j_m2_day = j_cm2_day * 1e4;
    return j_m2_day / (photon_energy(c) * c.avogadro);
}

double convert_gpp(double umol_m2_s, double seconds, const PhysicalConstants& c) {
    if (umol_m2_s < 0.0) throw std::invalid_argument("convert_gpp: negative flux");
    return umol_m2_s * seconds * c.carbon_molar_mass * 1e-6;
}

std::vector<double> fill_fapar(std::span<const std::optional<double>> slots, int n_days) {
    if (slots.empty()) throw std::invalid_argument("fill_fapar: empty series");
    const int n = static_cast<int>(slots.size());
    std::vector<double> filled(n);

    int first_known = -1;
    for (int i = 0; i < n; ++i)
        if (slots[i]) {
            if (*slots[i] < 0.0 || *slots[i] > 1.0)
                throw std::invalid_argument("fill_fapar: value outside [0, 1]");
            if (first_known < 0) first_known = i;
        }
    if (first_known < 0) throw std::invalid_argument("fill_fapar: all values missing");

    for (int i = 0; i < n; ++i) {
        if (slots[i]) {
            filled[i] = *slots[i];
            continue;
        }
        int before = i - 1;
        while (before >= 0 && !slots[before]) --before;
        int after = i + 1;
        while (after < n && !slots[after]) ++after;
        if (before < 0)
            filled[i] = *slots[after];  // leading gap: nearest value
        else if (after >= n)
            filled[i] = *slots[before];  // trailing gap
        else
            filled[i] = 0.5 * (*slots[before] + *slots[after]);
    }

    const int days = n_days < 0 ? 8 * n : n_days;
    if (days > 8 * n) throw std::invalid_argument("fill_fapar: n_days exceeds the slot coverage");
    std::vector<double> daily(days);
    for (int d = 0; d < days; ++d) daily[d] = filled[d / 8];
    return daily;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

NormStats fit_stats(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("fit_stats: empty series");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return NormStats{mean, std::sqrt(var)};
}

double zscore(double x, const NormStats& s) { return (x - s.mean) / s.sd; }

double denormalize(double z, const NormStats& s) { return s.mean + s.sd * z; }

std::vector<double> zscore_series(std::span<const double> xs, const NormStats& s,
                                  const std::string& variable_name) {
    if (!(s.sd > 0.0))
        throw std::invalid_argument("zscore: zero standard deviation for variable '" +
                                    variable_name + "'");
    std::vector<double> out;
    out.reserve(xs.size());
    for (double x : xs) out.push_back(zscore(x, s));
    return out;
}

std::pair<double, double> encode_doy(int doy) {
    if (doy < 1 || doy > 366) throw std::invalid_argument("encode_doy: doy outside [1, 366]");
    constexpr double two_pi = 2.0 * 3.14159265358979323846;
    const double angle = static_cast<double>(doy) * two_pi / 365.0;
    return {std::sin(angle), std::cos(angle)};
}

Dataset thin_weekly(const Dataset& ds) {
    if (ds.sites.empty()) throw std::invalid_argument("thin_weekly: empty dataset");
    Dataset out;
    out.sites.reserve(ds.sites.size());
    for (const auto& site : ds.sites) {
        SiteDataset thin;
        thin.site_id = site.site_id;
        for (std::size_t i = 0; i < site.records.size(); i += 7)
            thin.records.push_back(site.records[i]);
        out.sites.push_back(std::move(thin));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weather simulation
// ---------------------------------------------------------------------------

double HarmonicCurve::operator()(int doy) const {
    constexpr double two_pi = 2.0 * 3.14159265358979323846;
    const double base = static_cast<double>(doy) * two_pi / 365.0;
    double y = intercept;
    for (std::size_t h = 0; h < sin_amp.size(); ++h)
        y += sin_amp[h] * std::sin(static_cast<double>(h + 1) * base);
    for (std::size_t h = 0; h < cos_amp.size(); ++h)
        y += cos_amp[h] * std::cos(static_cast<double>(h + 1) * base);
    return y;
}

WeatherSimConfig default_weather_config(int n_groups, std::uint64_t seed) {
    if (n_groups < 1) throw std::invalid_argument("default_weather_config: need >= 1 group");
    WeatherSimConfig cfg;

    // base temperate-climate seasonal shapes; cos leads so the minimum falls
    // around the turn of the year
    const std::array<double, 5> intercept = {7.5, 0.55, 18.0, 2.2, 0.62};
    const std::array<double, 5> cos1 = {-9.5, -0.34, -14.0, -0.4, -0.21};
    const std::array<double, 5> sin1 = {-2.0, -0.05, -2.5, 0.15, -0.05};

    for (int g = 0; g < n_groups; ++g) {
        rng::Stream rs(rng::child_seed(seed, 0x57AA + static_cast<std::uint64_t>(g)));
        WeatherGroup group;
        group.name = "group" + std::to_string(g);
        for (int v = 0; v < 5; ++v) {
            HarmonicCurve c;
            const double jitter = rs.uniform(0.88, 1.12);
            c.intercept = intercept[v] * jitter;
            c.sin_amp = {sin1[v] * rs.uniform(0.85, 1.15), 0.12 * cos1[v] * rs.uniform(-1.0, 1.0),
                         0.04 * cos1[v] * rs.uniform(-1.0, 1.0)};
            c.cos_amp = {cos1[v] * rs.uniform(0.9, 1.1), 0.1 * cos1[v] * rs.uniform(-1.0, 1.0),
                         0.03 * cos1[v] * rs.uniform(-1.0, 1.0)};
            group.curves[v] = std::move(c);
        }
        cfg.groups.push_back(std::move(group));
    }

    // covariance assembled as L * L^T so it is PSD by construction
    const std::array<double, 5> sd = {1.8, 0.16, 3.6, 2.6, 0.035};
    std::array<double, 25> lower{};
    const double corr[5][5] = {
        {1.0, 0.0, 0.0, 0.0, 0.0},
        {0.35, 0.94, 0.0, 0.0, 0.0},
        {0.3, 0.25, 0.92, 0.0, 0.0},
        {-0.2, -0.3, -0.35, 0.86, 0.0},
        {0.1, 0.05, 0.1, 0.0, 0.99},
    };
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j <= i; ++j) lower[i * 5 + j] = sd[i] * corr[i][j];
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 5; ++k) acc += lower[i * 5 + k] * lower[j * 5 + k];
            cfg.noise_cov[i * 5 + j] = acc;
        }
    return cfg;
}

std::array<double, 25> cholesky5(const std::array<double, 25>& cov) {
    constexpr int n = 5;
    double scale = 0.0;
    for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(cov[i * n + i]));
    const double tol = 1e-10 * std::max(1.0, scale);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j)
            if (std::abs(cov[i * n + j] - cov[j * n + i]) > tol)
                throw std::invalid_argument("noise covariance is not symmetric");

    std::array<double, 25> L{};
    for (int j = 0; j < n; ++j) {
        double diag = cov[j * n + j];
        for (int k = 0; k < j; ++k) diag -= L[j * n + k] * L[j * n + k];
        if (diag < -tol) throw std::invalid_argument("noise covariance is not positive semidefinite");
        diag = diag > 0.0 ? std::sqrt(diag) : 0.0;
        L[j * n + j] = diag;
        for (int i = j + 1; i < n; ++i) {
            double off = cov[i * n + j];
            for (int k = 0; k < j; ++k) off -= L[i * n + k] * L[j * n + k];
            if (diag > 0.0) {
                L[i * n + j] = off / diag;
            } else if (std::abs(off) > tol) {
                throw std::invalid_argument("noise covariance is not positive semidefinite");
            }
        }
    }

    // residual check catches indefinite matrices that slipped through
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) acc += L[i * n + k] * L[j * n + k];
            if (std::abs(acc - cov[i * n + j]) > 1e-8 * std::max(1.0, scale))
                throw std::invalid_argument("noise covariance is not positive semidefinite");
        }
    return L;
}

std::vector<preles::DriverRecord> simulate_weather(const WeatherSimConfig& cfg,
                                                   std::span<const int> doys, int group,
                                                   std::uint64_t seed) {
    if (cfg.groups.empty()) throw std::invalid_argument("simulate_weather: no groups configured");
    if (group < 0 || group >= static_cast<int>(cfg.groups.size()))
        throw std::invalid_argument("simulate_weather: group index out of range");
    const auto L = cholesky5(cfg.noise_cov);
    const auto& curves = cfg.groups[group].curves;

    rng::Stream rs(seed);
    std::vector<preles::DriverRecord> out;
    out.reserve(doys.size());
    for (int doy : doys) {
        if (doy < 1 || doy > 366) throw std::invalid_argument("simulate_weather: doy outside [1, 366]");
        std::array<double, 5> z;
        for (double& v : z) v = rs.normal();
        std::array<double, 5> noise{};
        for (int i = 0; i < 5; ++i)
            for (int k = 0; k <= i; ++k) noise[i] += L[i * 5 + k] * z[k];

        preles::DriverRecord d;
        d.t_air = curves[0](doy) + noise[0];
        d.vpd = std::max(0.0, curves[1](doy) + noise[1]);
        d.par = std::max(0.0, curves[2](doy) + noise[2]);
        d.precip = std::max(0.0, curves[3](doy) + noise[3]);
        d.fapar = std::clamp(curves[4](doy) + noise[4], 0.0, 1.0);
        d.co2 = cfg.co2_ppm;
        d.doy = doy;
        out.push_back(d);
    }
    return out;
}

std::vector<preles::DriverRecord> simulate_weather(const WeatherSimConfig& cfg, int n_days,
                                                   int group, std::uint64_t seed, int start_doy) {
    if (n_days < 1) throw std::invalid_argument("simulate_weather: need >= 1 day");
    std::vector<int> doys(n_days);
    for (int i = 0; i < n_days; ++i) doys[i] = 1 + (start_doy - 1 + i) % 365;
    return simulate_weather(cfg, doys, group, seed);
}

// ---------------------------------------------------------------------------
// Weather config JSON
// ---------------------------------------------------------------------------

namespace {

json curve_to_json(const HarmonicCurve& c) {
    return json{{"intercept", c.intercept}, {"sin", c.sin_amp}, {"cos", c.cos_amp}};
}

HarmonicCurve curve_from_json(const json& j) {
    HarmonicCurve c;
    c.intercept = j.at("intercept").get<double>();
    c.sin_amp = j.at("sin").get<std::vector<double>>();
    c.cos_amp = j.at("cos").get<std::vector<double>>();
    return c;
}

}  // namespace

std::string weather_config_to_json(const WeatherSimConfig& cfg) {
    json j;
    j["version"] = cfg.version;
    j["co2_ppm"] = cfg.co2_ppm;
    j["variables"] = kClimateVars;
    json groups = json::array();
    for (const auto& g : cfg.groups) {
        json jg;
        jg["name"] = g.name;
        for (int v = 0; v < 5; ++v) jg[kClimateVars[v]] = curve_to_json(g.curves[v]);
        groups.push_back(std::move(jg));
    }
    j["groups"] = std::move(groups);
    j["noise_cov"] = cfg.noise_cov;
    return j.dump(2) + "\n";
}

WeatherSimConfig weather_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (!j.contains("version")) throw std::invalid_argument("weather config: missing version");
    WeatherSimConfig cfg;
    cfg.version = j.at("version").get<int>();
    if (cfg.version != 1) throw std::invalid_argument("weather config: unsupported version");
    cfg.co2_ppm = j.value("co2_ppm", 380.0);
    for (const auto& jg : j.at("groups")) {
        WeatherGroup g;
        g.name = jg.at("name").get<std::string>();
        for (int v = 0; v < 5; ++v) g.curves[v] = curve_from_json(jg.at(kClimateVars[v]));
        cfg.groups.push_back(std::move(g));
    }
    const auto cov = j.at("noise_cov").get<std::vector<double>>();
    if (cov.size() != 25) throw std::invalid_argument("weather config: noise_cov must have 25 entries");
    std::copy(cov.begin(), cov.end(), cfg.noise_cov.begin());
    return cfg;
}

// ---------------------------------------------------------------------------
// Priors and Latin hypercube sampling
// ---------------------------------------------------------------------------

bool ParameterPrior::contains(const preles::PrelesParams& p) const {
    const auto flat = preles::flatten(p);
    for (int i = 0; i < preles::kParamCount; ++i)
        if (flat[i] < lo[i] || flat[i] > hi[i]) return false;
    return true;
}

preles::PrelesParams ParameterPrior::project(const preles::PrelesParams& p) const {
    auto flat = preles::flatten(p);
    for (int i = 0; i < preles::kParamCount; ++i) flat[i] = std::clamp(flat[i], lo[i], hi[i]);
    return preles::unflatten(flat);
}

ParameterPrior default_prior() {
    ParameterPrior prior;
    const std::array<std::pair<double, double>, preles::kParamCount> boxes = {{
        {0.5, 1.0},      // beta
        {-3.0, 1.0},     // x0
        {0.02, 0.08},    // gamma
        {-0.35, -0.05},  // kappa
        {0.03, 0.3},     // alpha
        {0.05, 0.3},     // chi
        {2.0, 20.0},     // tau
        {100.0, 300.0},  // soil_capacity
        {0.1, 0.6},      // drainage_rate
        {1.0, 6.0},      // snow_melt_coeff
        {0.05, 0.25},    // wilting_fraction
        {0.2, 0.7},      // et_shape
        {8.0, 18.0},     // smax
    }};
    for (int i = 0; i < preles::kParamCount; ++i) {
        prior.lo[i] = boxes[i].first;
        prior.hi[i] = boxes[i].second;
    }
    return prior;
}

std::string prior_to_json(const ParameterPrior& prior) {
    json j;
    j["version"] = 1;
    for (int i = 0; i < preles::kParamCount; ++i)
        j[preles::kParamNames[i]] = json::array({prior.lo[i], prior.hi[i]});
    return j.dump(2) + "\n";
}

ParameterPrior prior_from_json(const std::string& text) {
    const json j = json::parse(text);
    ParameterPrior prior;
    for (int i = 0; i < preles::kParamCount; ++i) {
        const auto& box = j.at(preles::kParamNames[i]);
        prior.lo[i] = box.at(0).get<double>();
        prior.hi[i] = box.at(1).get<double>();
        if (!(prior.lo[i] < prior.hi[i]))
            throw std::invalid_argument(std::string("prior: lo must be < hi for ") +
                                        preles::kParamNames[i]);
    }
    return prior;
}

std::vector<preles::PrelesParams> sample_parameters_lhs(const ParameterPrior& prior, int n,
                                                        std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_parameters_lhs: need n >= 1");
    for (int i = 0; i < preles::kParamCount; ++i)
        if (!(prior.lo[i] < prior.hi[i]))
            throw std::invalid_argument("sample_parameters_lhs: invalid prior box");

    rng::Stream rs(seed);
    const auto defaults = preles::flatten(preles::default_params());

    // one jittered stratum permutation per sampled dimension
    std::vector<std::array<double, 5>> draws(static_cast<std::size_t>(n));
    for (int dim = 0; dim < 5; ++dim) {
        std::vector<int> strata(n);
        for (int i = 0; i < n; ++i) strata[i] = i;
        for (int i = n - 1; i > 0; --i) std::swap(strata[i], strata[rs.uniform_int(0, i)]);
        const int p = kLhsParamIndices[dim];
        const double width = (prior.hi[p] - prior.lo[p]) / static_cast<double>(n);
        for (int i = 0; i < n; ++i)
            draws[i][dim] = prior.lo[p] + (static_cast<double>(strata[i]) + rs.uniform()) * width;
    }

    std::vector<preles::PrelesParams> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto flat = defaults;
        for (int dim = 0; dim < 5; ++dim) flat[kLhsParamIndices[dim]] = draws[i][dim];
        out.push_back(preles::unflatten(flat));
    }
    return out;
}

Dataset generate_pretraining_set(const ParameterPrior& prior, const WeatherSimConfig& weather,
                                 int n_samples, int days, std::uint64_t seed) {
    if (n_samples < 1 || days < 1)
        throw std::invalid_argument("generate_pretraining_set: need samples >= 1 and days >= 1");
    const auto params = sample_parameters_lhs(prior, n_samples, rng::child_seed(seed, 1));

    Dataset ds;
    ds.sites.reserve(static_cast<std::size_t>(n_samples));
    const Date start{2001, 1, 1};
    std::vector<int> doys(days);
    for (int i = 0; i < days; ++i) doys[i] = start.plus_days(i).day_of_year();
    for (int s = 0; s < n_samples; ++s) {
        auto drivers = simulate_weather(weather, doys, s % static_cast<int>(weather.groups.size()),
                                        rng::child_seed(seed, 100 + static_cast<std::uint64_t>(s)));
        auto outputs = preles::simulate(params[s], drivers);

        SiteDataset site;
        site.site_id = "sim" + std::to_string(s);
        site.records.reserve(static_cast<std::size_t>(days));
        for (int i = 0; i < days; ++i)
            site.records.push_back(DayRecord{start.plus_days(i), drivers[i], outputs[i].gpp});
        ds.sites.push_back(std::move(site));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

const char* const kCsvHeader = "site,date,tair_c,vpd_kpa,par_molm2d,precip_mm,co2_ppm,fapar,gpp_gcm2d";

std::string format_double(double x) {
    char buffer[40];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buffer, sizeof buffer, "%.*g", precision, x);
        if (std::strtod(buffer, nullptr) == x) return buffer;
    }
    return buffer;
}

namespace {

double parse_number(const std::string& token, const std::string& where) {
    double value = 0.0;
    const char* begin = token.data();
    const char* end = token.data() + token.size();
    auto [p, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || p != end)
        throw std::runtime_error(where + ": unparseable number '" + token + "'");
    return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    fields.push_back(field);
    return fields;
}

}  // namespace

Dataset parse_csv(std::istream& in, const std::string& source_label) {
    std::string line;
    int line_no = 0;
    bool header_seen = false;

    std::vector<std::string> site_order;
    std::map<std::string, SiteDataset> sites;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') continue;  // provenance/comment lines
        const std::string where = source_label + ":" + std::to_string(line_no);

        if (!header_seen) {
            if (line != kCsvHeader)
                throw std::runtime_error(where + ": expected header '" + std::string(kCsvHeader) + "'");
            header_seen = true;
            continue;
        }

        const auto fields = split_csv_line(line);
        if (fields.size() != 9)
            throw std::runtime_error(where + ": expected 9 columns, got " +
                                     std::to_string(fields.size()));

        DayRecord r;
        try {
            r.date = Date::parse(fields[1]);
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
        r.driver.t_air = parse_number(fields[2], where);
        r.driver.vpd = parse_number(fields[3], where);
        r.driver.par = parse_number(fields[4], where);
        r.driver.precip = parse_number(fields[5], where);
        r.driver.co2 = parse_number(fields[6], where);
        r.driver.fapar = parse_number(fields[7], where);
        r.driver.doy = r.date.day_of_year();
        r.gpp = parse_number(fields[8], where);

        try {
            preles::validate(r.driver);
            if (!std::isfinite(r.gpp)) throw std::invalid_argument("non-finite gpp target");
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }

        const std::string& site_id = fields[0];
        if (site_id.empty()) throw std::runtime_error(where + ": empty site id");
        auto [it, inserted] = sites.try_emplace(site_id);
        if (inserted) {
            it->second.site_id = site_id;
            site_order.push_back(site_id);
        }
        auto& records = it->second.records;
        if (!records.empty()) {
            const long prev = records.back().date.serial();
            if (r.date.serial() == prev)
                throw std::runtime_error(where + ": duplicate date " + r.date.iso() + " for site '" +
                                         site_id + "'");
            if (r.date.serial() < prev)
                throw std::runtime_error(where + ": dates not increasing at " + r.date.iso());
        }
        records.push_back(r);
    }

    if (!header_seen) throw std::runtime_error(source_label + ": empty file");
    Dataset ds;
    for (const auto& id : site_order) ds.sites.push_back(std::move(sites.at(id)));
    if (ds.total_rows() == 0) throw std::runtime_error(source_label + ": no data rows");
    return ds;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return parse_csv(in, path);
}

std::string to_csv(const Dataset& ds) {
    std::string out = kCsvHeader;
    out.push_back('\n');
    for (const auto& site : ds.sites) {
        for (const auto& r : site.records) {
            out += site.site_id;
            out.push_back(',');
            out += r.date.iso();
            for (double v : {r.driver.t_air, r.driver.vpd, r.driver.par, r.driver.precip,
                             r.driver.co2, r.driver.fapar, r.gpp}) {
                out.push_back(',');
                out += format_double(v);
            }
            out.push_back('\n');
        }
    }
    return out;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << to_csv(ds);
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::uint64_t dataset_fingerprint(const Dataset& ds) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= '\n';
        h *= 1099511628211ULL;
    };
    for (const auto& site : ds.sites)
        for (const auto& r : site.records)
            mix(site.site_id + "|" + r.date.iso() + "|" + format_double(r.gpp));
    return h;
}

}  // namespace pgnn::data
