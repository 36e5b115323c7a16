#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgnn/autodiff.hpp"

namespace pgnn::preles {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

inline constexpr int kParamCount = 13;

// Canonical parameter order for flattening and serialization.
inline constexpr std::array<const char*, kParamCount> kParamNames = {
    "beta", "x0", "gamma", "kappa", "alpha", "chi", "tau",
    "soil_capacity", "drainage_rate", "snow_melt_coeff",
    "wilting_fraction", "et_shape", "smax"};

template <class S>
struct ParamsT {
    S beta;              // potential light-use efficiency (gC / mol photons)
    S x0;                // acclimation threshold (degC)
    S gamma;             // light saturation coefficient
    S kappa;             // VPD response coefficient (1/kPa, <= 0)
    S alpha;             // transpiration coefficient
    S chi;               // evaporation coefficient
    S tau;               // acclimation time constant (days, >= 1)
    S soil_capacity;     // mm
    S drainage_rate;     // fraction of surface excess drained per day
    S snow_melt_coeff;   // mm / degC / day
    S wilting_fraction;  // fraction of capacity below which GPP shuts down
    S et_shape;          // fraction of capacity at which soil evaporation saturates
    S smax;              // acclimation saturation (degC, > x0)
};

using PrelesParams = ParamsT<double>;

PrelesParams default_params();
void validate(const PrelesParams& p);  // throws std::invalid_argument
std::array<double, kParamCount> flatten(const PrelesParams& p);
PrelesParams unflatten(std::span<const double> values);

// Lifts a parameter vector onto a tape, one leaf per parameter in canonical
// order.
ParamsT<ad::Var> lift(ad::Tape& tape, const PrelesParams& p, bool trainable);

// ---------------------------------------------------------------------------
// Drivers, state, outputs
// ---------------------------------------------------------------------------

template <class S>
struct DriverT {
    S t_air = 0.0;    // mean air temperature (degC)
    S vpd = 0.0;      // vapour pressure deficit (kPa)
    S par = 0.0;      // photon irradiance (mol / m^2 / day)
    S precip = 0.0;   // precipitation (mm)
    S fapar = 0.0;    // fraction of absorbed PAR, in [0, 1]
    S co2 = 380.0;    // ppm; carried for schema fidelity, unused by the default forms
    int doy = 1;      // day of year, 1..366
};

using DriverRecord = DriverT<double>;

void validate(const DriverRecord& d);  // throws std::invalid_argument

template <class S>
struct StateT {
    S soil_water;     // mm, <= soil_capacity
    S surface_water;  // mm
    S snow;           // mm water equivalent
    S acclim;         // delayed temperature state (degC)
};

using ModelState = StateT<double>;

template <class S>
struct OutputT {
    S gpp;         // gC / m^2 / day
    S et;          // mm / day (realized, never exceeds available soil water)
    S soil_water;  // mm, end of day
};

using ModelOutput = OutputT<double>;

// The soil-water GPP modifier ramps from 0 at the wilting point to 1 at
// wilting + kSoilRampFraction * (capacity - wilting).
inline constexpr double kSoilRampFraction = 0.6;

// ---------------------------------------------------------------------------
// Modifiers. All stay in [0, 1] and are differentiable on the tape (kinks
// only from clamp/min with the pinned subgradients).
// ---------------------------------------------------------------------------

// Hyperbolic light saturation 1 / (gamma * par + 1).
template <class SD, class S>
auto modifier_light(SD par, S gamma) {
    return 1.0 / (gamma * par + 1.0);
}

// Exponential VPD decline exp(kappa * vpd) with kappa <= 0.
template <class SD, class S>
auto modifier_vpd(SD vpd, S kappa) {
    return ad::exp(kappa * vpd);
}

// Clamped linear ramp above the wilting point.
template <class S, class SP>
auto modifier_soil_water(S soil_water, const ParamsT<SP>& p) {
    auto wilt = p.wilting_fraction * p.soil_capacity;
    auto top = wilt + kSoilRampFraction * (p.soil_capacity - wilt);
    return ad::clamp_unit((soil_water - wilt) / (top - wilt));
}

// Clamped linear ramp between the acclimation threshold and saturation.
template <class S, class SP>
auto modifier_acclimation(S acclim, SP x0, SP smax) {
    return ad::clamp_unit((acclim - x0) / (smax - x0));
}

// ---------------------------------------------------------------------------
// Daily step
// ---------------------------------------------------------------------------

// GPP for one day: beta * par * fapar * product of modifiers. The state must
// carry the acclimation value already updated for this day.
template <class SP, class SD, class SS>
auto gpp_step(const DriverT<SD>& d, const StateT<SS>& state, const ParamsT<SP>& p) {
    auto f_light = modifier_light(d.par, p.gamma);
    auto f_vpd = modifier_vpd(d.vpd, p.kappa);
    auto f_soil = modifier_soil_water(state.soil_water, p);
    auto f_accl = modifier_acclimation(state.acclim, p.x0, p.smax);
    return p.beta * d.par * d.fapar * f_light * f_vpd * f_soil * f_accl;
}

// Evapotranspiration demand: transpiration coupled to GPP and VPD plus
// radiation-driven soil evaporation damped by available soil water. Stand-in
// form; the reference model's E equations are outside this artifact.
template <class SG, class SP, class SD, class SS>
auto et_step(SG gpp, const DriverT<SD>& d, const StateT<SS>& state, const ParamsT<SP>& p) {
    auto f_soil_evap = ad::clamp_unit(state.soil_water / (p.et_shape * p.soil_capacity));
    return p.alpha * gpp * d.vpd + p.chi * d.par * f_soil_evap;
}

template <class S>
struct WaterStep {
    StateT<S> next;
    S et_actual;  // demand limited by available soil water
    S drainage;
};

// Pool update: rain/snow partition (snow when t_air < 0), degree-day melt,
// infiltration up to capacity, drainage of the surface excess, ET withdrawal
// floored at zero. Mass balance: delta(stored) = precip - et_actual - drainage.
template <class SP, class SD, class SE>
WaterStep<SP> water_balance_step(const DriverT<SD>& d, const StateT<SP>& state, SE et_demand,
                                 const ParamsT<SP>& p) {
    const bool freezing = ad::value(d.t_air) < 0.0;

    auto snow_holding = freezing ? state.snow + d.precip : state.snow + 0.0;
    auto melt = ad::min(snow_holding, p.snow_melt_coeff * ad::max(d.t_air, 0.0));
    auto surface = freezing ? state.surface_water + melt
                            : state.surface_water + d.precip + melt;

    auto headroom = p.soil_capacity - state.soil_water;
    auto infiltration = ad::min(surface, headroom);
    auto soil_full = state.soil_water + infiltration;
    auto surface_excess = surface - infiltration;

    auto drainage = p.drainage_rate * surface_excess;
    auto et_actual = ad::min(et_demand, soil_full);

    WaterStep<SP> out;
    out.next.soil_water = soil_full - et_actual;
    out.next.surface_water = surface_excess - drainage;
    out.next.snow = snow_holding - melt;
    out.next.acclim = state.acclim;  // advanced by the caller
    out.et_actual = et_actual;
    out.drainage = drainage;
    return out;
}

template <class S>
struct DayResult {
    OutputT<S> output;
    StateT<S> next;
    S drainage;
};

// One full day: acclimation EMA update with the current day's temperature,
// then GPP, ET demand, and the water balance.
template <class SP, class SD>
DayResult<SP> step_day(const ParamsT<SP>& p, const DriverT<SD>& d, const StateT<SP>& state) {
    StateT<SP> today = state;
    today.acclim = state.acclim + (d.t_air - state.acclim) / p.tau;

    auto gpp = gpp_step(d, today, p);
    auto demand = et_step(gpp, d, today, p);
    auto water = water_balance_step(d, today, demand, p);
    water.next.acclim = today.acclim;

    DayResult<SP> r;
    r.output = OutputT<SP>{gpp, water.et_actual, water.next.soil_water};
    r.next = water.next;
    r.drainage = water.drainage;
    return r;
}

struct SimOptions {
    // Number of times the first year (first <= 365 days) of drivers is
    // replayed before the recorded run, to settle the state pools.
    int spinup_years = 0;
};

// Initial state: soil at capacity, empty surface/snow pools, acclimation at
// the first day's air temperature.
template <class SP>
StateT<SP> initial_state(const ParamsT<SP>& p, const DriverRecord& first_day) {
    StateT<SP> s;
    s.soil_water = p.soil_capacity * 1.0;
    s.surface_water = p.soil_capacity * 0.0;
    s.snow = p.soil_capacity * 0.0;
    s.acclim = p.soil_capacity * 0.0 + first_day.t_air;
    return s;
}

// As simulate(), but also records the state at the start of each day (after
// spin-up); the ICE frozen-state mode replays single days from those.
template <class SP>
std::vector<OutputT<SP>> simulate_with_states(const ParamsT<SP>& p,
                                              std::span<const DriverRecord> drivers,
                                              std::vector<StateT<SP>>* states_before,
                                              const SimOptions& options = {}) {
    if (drivers.empty()) throw std::invalid_argument("simulate: empty driver sequence");
    for (std::size_t i = 0; i < drivers.size(); ++i) {
        try {
            validate(drivers[i]);
        } catch (const std::exception& e) {
            throw std::invalid_argument("simulate: day " + std::to_string(i) + ": " + e.what());
        }
    }

    StateT<SP> state = initial_state(p, drivers.front());

    if (options.spinup_years > 0) {
        const std::size_t year = std::min<std::size_t>(drivers.size(), 365);
        for (int r = 0; r < options.spinup_years; ++r)
            for (std::size_t i = 0; i < year; ++i)
                state = step_day(p, drivers[i], state).next;
    }

    std::vector<OutputT<SP>> outputs;
    outputs.reserve(drivers.size());
    if (states_before) {
        states_before->clear();
        states_before->reserve(drivers.size());
    }
    for (std::size_t i = 0; i < drivers.size(); ++i) {
        if (states_before) states_before->push_back(state);
        try {
            auto r = step_day(p, drivers[i], state);
            if (!std::isfinite(ad::value(r.output.gpp)) || !std::isfinite(ad::value(r.output.et)) ||
                !std::isfinite(ad::value(r.output.soil_water)))
                throw std::domain_error("non-finite model output");
            outputs.push_back(r.output);
            state = r.next;
        } catch (const std::exception& e) {
            throw std::runtime_error("simulate: day " + std::to_string(i) + ": " + e.what());
        }
    }
    return outputs;
}

// Runs the model over a driver sequence, threading state day to day. With
// SP = ad::Var the full unrolled recurrence lives on the tape, so gradients
// flow back through every day.
template <class SP>
std::vector<OutputT<SP>> simulate(const ParamsT<SP>& p, std::span<const DriverRecord> drivers,
                                  const SimOptions& options = {}) {
    return simulate_with_states(p, drivers, static_cast<std::vector<StateT<SP>>*>(nullptr), options);
}

}  // namespace pgnn::preles
