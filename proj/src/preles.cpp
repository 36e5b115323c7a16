#include "pgnn/preles.hpp"

#include <cmath>

namespace pgnn::preles {

PrelesParams default_params() {
    PrelesParams p;
    p.beta = 0.75;
    p.x0 = -1.0;
    p.gamma = 0.04;
    p.kappa = -0.18;
    p.alpha = 0.1;
    p.chi = 0.15;
    p.tau = 8.0;
    p.soil_capacity = 200.0;
    p.drainage_rate = 0.3;
    p.snow_melt_coeff = 3.0;
    p.wilting_fraction = 0.12;
    p.et_shape = 0.4;
    p.smax = 12.0;
    return p;
}

void validate(const PrelesParams& p) {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("preles params: ") + what);
    };
    for (double v : flatten(p)) require(std::isfinite(v), "non-finite parameter");
    require(p.beta > 0.0, "beta must be > 0");
    require(p.gamma > 0.0, "gamma must be > 0");
    require(p.kappa <= 0.0, "kappa must be <= 0");
    require(p.alpha >= 0.0, "alpha must be >= 0");
    require(p.chi >= 0.0, "chi must be >= 0");
    require(p.tau >= 1.0, "tau must be >= 1");
    require(p.soil_capacity > 0.0, "soil_capacity must be > 0");
    require(p.drainage_rate >= 0.0 && p.drainage_rate <= 1.0, "drainage_rate must be in [0, 1]");
    require(p.snow_melt_coeff >= 0.0, "snow_melt_coeff must be >= 0");
    require(p.wilting_fraction >= 0.0 && p.wilting_fraction < 1.0, "wilting_fraction must be in [0, 1)");
    require(p.et_shape > 0.0, "et_shape must be > 0");
    require(p.smax > p.x0, "smax must exceed x0");
}

std::array<double, kParamCount> flatten(const PrelesParams& p) {
    return {p.beta, p.x0, p.gamma, p.kappa, p.alpha, p.chi, p.tau,
            p.soil_capacity, p.drainage_rate, p.snow_melt_coeff,
            p.wilting_fraction, p.et_shape, p.smax};
}

PrelesParams unflatten(std::span<const double> v) {
    if (v.size() != kParamCount) throw std::invalid_argument("preles params: expected 13 values");
    PrelesParams p;
    p.beta = v[0];
    p.x0 = v[1];
    p.gamma = v[2];
    p.kappa = v[3];
    p.alpha = v[4];
    p.chi = v[5];
    p.tau = v[6];
    p.soil_capacity = v[7];
    p.drainage_rate = v[8];
    p.snow_melt_coeff = v[9];
    p.wilting_fraction = v[10];
    p.et_shape = v[11];
    p.smax = v[12];
    return p;
}

ParamsT<ad::Var> lift(ad::Tape& tape, const PrelesParams& p, bool trainable) {
    const auto flat = flatten(p);
    ParamsT<ad::Var> out;
    ad::Var* fields[kParamCount] = {&out.beta, &out.x0, &out.gamma, &out.kappa, &out.alpha,
                                    &out.chi, &out.tau, &out.soil_capacity, &out.drainage_rate,
                                    &out.snow_melt_coeff, &out.wilting_fraction, &out.et_shape,
                                    &out.smax};
    for (int i = 0; i < kParamCount; ++i) *fields[i] = tape.leaf(flat[i], trainable);
    return out;
}

void validate(const DriverRecord& d) {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("driver record: ") + what);
    };
    for (double v : {d.t_air, d.vpd, d.par, d.precip, d.fapar, d.co2})
        require(std::isfinite(v), "non-finite field");
    require(d.fapar >= 0.0 && d.fapar <= 1.0, "fapar must be in [0, 1]");
    require(d.par >= 0.0, "par must be >= 0");
    require(d.precip >= 0.0, "precip must be >= 0");
    require(d.vpd >= 0.0, "vpd must be >= 0");
    require(d.co2 > 0.0, "co2 must be > 0");
    require(d.doy >= 1 && d.doy <= 366, "doy must be in [1, 366]");
}

}  // namespace pgnn::preles
