#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "pgnn/preles.hpp"
#include "pgnn/rng.hpp"

using namespace pgnn;
using preles::DriverRecord;
using preles::ModelState;
using preles::PrelesParams;

namespace {

DriverRecord benign_day(int doy = 150) {
    DriverRecord d;
    d.t_air = 15.0;
    d.vpd = 0.5;
    d.par = 20.0;
    d.precip = 2.0;
    d.fapar = 0.7;
    d.doy = doy;
    return d;
}

std::vector<DriverRecord> random_drivers(int n, std::uint64_t seed) {
    rng::Stream rs(seed);
    std::vector<DriverRecord> days;
    days.reserve(n);
    for (int i = 0; i < n; ++i) {
        DriverRecord d;
        d.t_air = rs.uniform(-8.0, 25.0);
        d.vpd = rs.uniform(0.0, 2.5);
        d.par = rs.uniform(0.0, 45.0);
        d.precip = rs.uniform() < 0.4 ? rs.uniform(0.0, 12.0) : 0.0;
        d.fapar = rs.uniform(0.1, 0.95);
        d.doy = 1 + i % 365;
        days.push_back(d);
    }
    return days;
}

}  // namespace

TEST_CASE("parameter flatten/unflatten round-trips in canonical order") {
    auto p = preles::default_params();
    auto flat = preles::flatten(p);
    auto q = preles::unflatten(flat);
    CHECK(preles::flatten(q) == flat);
    CHECK(preles::kParamNames[0] == std::string("beta"));
    CHECK(preles::kParamNames[12] == std::string("smax"));
    CHECK_NOTHROW(preles::validate(p));

    auto bad = p;
    bad.kappa = 0.2;
    CHECK_THROWS_AS(preles::validate(bad), std::invalid_argument);
    bad = p;
    bad.wilting_fraction = 1.0;
    CHECK_THROWS_AS(preles::validate(bad), std::invalid_argument);
}

TEST_CASE("light modifier") {
    CHECK(preles::modifier_light(0.0, 0.04) == 1.0);
    CHECK(preles::modifier_light(10.0, 0.1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(preles::modifier_light(1e9, 0.1) < 1e-7);
    double prev = 1.0;
    for (double par = 0.0; par <= 60.0; par += 5.0) {
        double f = preles::modifier_light(par, 0.04);
        CHECK(f <= prev);
        prev = f;
    }
}

TEST_CASE("vpd modifier") {
    CHECK(preles::modifier_vpd(0.0, -0.5) == 1.0);
    CHECK(preles::modifier_vpd(3.0, 0.0) == 1.0);
    CHECK(preles::modifier_vpd(1.0, -0.5) == doctest::Approx(0.6065306597126334).epsilon(1e-15));
    CHECK(preles::modifier_vpd(2.0, -0.5) < preles::modifier_vpd(1.0, -0.5));
}

TEST_CASE("soil water modifier ramp") {
    auto p = preles::default_params();
    const double wilt = p.wilting_fraction * p.soil_capacity;
    const double top = wilt + preles::kSoilRampFraction * (p.soil_capacity - wilt);
    CHECK(preles::modifier_soil_water(p.soil_capacity, p) == 1.0);
    CHECK(preles::modifier_soil_water(wilt, p) == 0.0);
    CHECK(preles::modifier_soil_water(0.5 * wilt, p) == 0.0);
    CHECK(preles::modifier_soil_water(0.5 * (wilt + top), p) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(preles::modifier_soil_water(top, p) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("acclimation modifier ramp") {
    auto p = preles::default_params();
    CHECK(preles::modifier_acclimation(p.x0, p.x0, p.smax) == 0.0);
    CHECK(preles::modifier_acclimation(p.smax, p.x0, p.smax) == 1.0);
    CHECK(preles::modifier_acclimation(0.5 * (p.x0 + p.smax), p.x0, p.smax) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(preles::modifier_acclimation(p.x0 - 5.0, p.x0, p.smax) == 0.0);
    CHECK(preles::modifier_acclimation(p.smax + 5.0, p.x0, p.smax) == 1.0);
}

TEST_CASE("gpp_step basics") {
    auto p = preles::default_params();
    ModelState s{p.soil_capacity, 0.0, 0.0, 10.0};

    SUBCASE("zero fapar gives zero gpp") {
        auto d = benign_day();
        d.fapar = 0.0;
        CHECK(preles::gpp_step(d, s, p) == 0.0);
    }

    SUBCASE("all modifiers forced to one gives the bare product") {
        PrelesParams q = p;
        q.beta = 0.8;
        q.gamma = 1e-300;  // 1/(gamma*par+1) rounds to exactly 1
        q.kappa = 0.0;
        DriverRecord d;
        d.par = 10.0;
        d.fapar = 0.5;
        d.vpd = 1.0;
        ModelState wet{q.soil_capacity, 0.0, 0.0, q.smax};
        CHECK(preles::gpp_step(d, wet, q) == 4.0);
    }

    SUBCASE("gpp is exactly linear in beta and fapar") {
        auto d = benign_day();
        const double g1 = preles::gpp_step(d, s, p);
        PrelesParams doubled = p;
        doubled.beta = 2.0 * p.beta;
        CHECK(preles::gpp_step(d, s, doubled) == 2.0 * g1);
        auto d2 = d;
        d2.fapar = 0.35;  // exactly half of 0.7
        CHECK(preles::gpp_step(d2, s, p) == 0.5 * g1);
    }
}

TEST_CASE("et_step basics") {
    auto p = preles::default_params();
    auto d = benign_day();
    ModelState s{p.soil_capacity, 0.0, 0.0, 10.0};

    PrelesParams no_evap = p;
    no_evap.chi = 0.0;
    CHECK(preles::et_step(0.0, d, s, no_evap) == 0.0);

    PrelesParams off = p;
    off.alpha = 0.0;
    off.chi = 0.0;
    CHECK(preles::et_step(5.0, d, s, off) == 0.0);

    // transpiration term is linear in gpp
    const double base = preles::et_step(3.0, d, s, no_evap);
    CHECK(preles::et_step(6.0, d, s, no_evap) == doctest::Approx(2.0 * base).epsilon(1e-15));
}

TEST_CASE("water balance step") {
    auto p = preles::default_params();

    SUBCASE("closed system stays put") {
        ModelState s{120.0, 0.0, 0.0, 5.0};
        DriverRecord d = benign_day();
        d.precip = 0.0;
        auto w = preles::water_balance_step(d, s, 0.0, p);
        CHECK(w.next.soil_water == 120.0);
        CHECK(w.next.surface_water == 0.0);
        CHECK(w.next.snow == 0.0);
        CHECK(w.drainage == 0.0);
        CHECK(w.et_actual == 0.0);
    }

    SUBCASE("freezing precipitation lands in the snow pool") {
        ModelState s{120.0, 0.0, 1.0, -3.0};
        DriverRecord d = benign_day();
        d.t_air = -5.0;
        d.precip = 3.0;
        auto w = preles::water_balance_step(d, s, 0.0, p);
        CHECK(w.next.snow == 4.0);
        CHECK(w.next.soil_water == 120.0);
    }

    SUBCASE("overflow drains at drainage_rate and the ledger closes") {
        ModelState s{p.soil_capacity, 0.0, 0.0, 10.0};
        DriverRecord d = benign_day();
        d.precip = 10.0;
        auto w = preles::water_balance_step(d, s, 0.0, p);
        CHECK(w.drainage == doctest::Approx(p.drainage_rate * 10.0).epsilon(1e-15));
        const double before = s.soil_water + s.surface_water + s.snow;
        const double after = w.next.soil_water + w.next.surface_water + w.next.snow;
        CHECK(after - before == doctest::Approx(d.precip - 0.0 - w.drainage).epsilon(1e-12));
    }

    SUBCASE("ET withdrawal cannot push soil below zero") {
        ModelState s{1.5, 0.0, 0.0, 10.0};
        DriverRecord d = benign_day();
        d.precip = 0.0;
        auto w = preles::water_balance_step(d, s, 50.0, p);
        CHECK(w.et_actual == 1.5);
        CHECK(w.next.soil_water == 0.0);
    }
}

TEST_CASE("mass balance holds through a fuzzed 1000-day run") {
    auto p = preles::default_params();
    auto days = random_drivers(1000, 99173);
    ModelState state = preles::initial_state(p, days.front());
    for (const auto& d : days) {
        auto r = preles::step_day(p, d, state);
        const double before = state.soil_water + state.surface_water + state.snow;
        const double after = r.next.soil_water + r.next.surface_water + r.next.snow;
        CHECK(std::abs((after - before) - (d.precip - r.output.et - r.drainage)) < 1e-9);
        CHECK(r.next.soil_water >= 0.0);
        CHECK(r.next.surface_water >= 0.0);
        CHECK(r.next.snow >= 0.0);
        CHECK(r.next.soil_water <= p.soil_capacity);
        state = r.next;
    }
}

TEST_CASE("modifiers stay in [0,1] and gpp is bounded by beta*par*fapar") {
    rng::Stream rs(5150);
    auto days = random_drivers(400, 77001);
    for (int trial = 0; trial < 5; ++trial) {
        PrelesParams p = preles::default_params();
        p.beta = rs.uniform(0.3, 1.2);
        p.gamma = rs.uniform(0.01, 0.1);
        p.kappa = -rs.uniform(0.02, 0.4);
        p.tau = rs.uniform(2.0, 15.0);
        auto outputs = preles::simulate(p, days);
        ModelState state = preles::initial_state(p, days.front());
        for (std::size_t i = 0; i < days.size(); ++i) {
            const auto& d = days[i];
            auto r = preles::step_day(p, d, state);
            ModelState today = state;
            today.acclim = state.acclim + (d.t_air - state.acclim) / p.tau;
            const double fl = preles::modifier_light(d.par, p.gamma);
            const double fv = preles::modifier_vpd(d.vpd, p.kappa);
            const double fs = preles::modifier_soil_water(today.soil_water, p);
            const double fa = preles::modifier_acclimation(today.acclim, p.x0, p.smax);
            for (double f : {fl, fv, fs, fa}) {
                CHECK(f >= 0.0);
                CHECK(f <= 1.0);
            }
            CHECK(outputs[i].gpp <= p.beta * d.par * d.fapar + 1e-12);
            CHECK(outputs[i].gpp >= 0.0);
            CHECK(outputs[i].et >= 0.0);
            state = r.next;
        }
    }
}

TEST_CASE("single-day simulate matches gpp_step") {
    auto p = preles::default_params();
    auto d = benign_day();
    auto out = preles::simulate(p, std::span<const DriverRecord>(&d, 1));
    ModelState s0 = preles::initial_state(p, d);
    auto r = preles::step_day(p, d, s0);
    CHECK(out[0].gpp == r.output.gpp);
    CHECK(out[0].et == r.output.et);
    CHECK(out[0].soil_water == r.output.soil_water);
}

TEST_CASE("constant benign drivers reach the fixed point located by bisection") {
    auto p = preles::default_params();
    auto d = benign_day();

    // 1-D oracle: with T > 0, no snow, and soil below capacity, equilibrium
    // means precip = ET demand(soil); acclim has converged to t_air.
    auto demand_at = [&](double soil) {
        ModelState s{soil, 0.0, 0.0, d.t_air};
        const double gpp = preles::gpp_step(d, s, p);
        return preles::et_step(gpp, d, s, p);
    };
    double lo = 0.0, hi = p.soil_capacity;
    REQUIRE(demand_at(hi) > d.precip);  // interior equilibrium exists
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (demand_at(mid) - d.precip > 0.0)
            hi = mid;
        else
            lo = mid;
    }
    const double oracle = 0.5 * (lo + hi);

    std::vector<DriverRecord> days(4000, d);
    auto out = preles::simulate(p, days);
    const double settled = out.back().soil_water;
    CHECK(std::abs(out[out.size() - 2].soil_water - settled) < 1e-9);
    CHECK(settled == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("simulate is order-dependent (stateful)") {
    auto p = preles::default_params();
    auto days = random_drivers(40, 2024);
    auto forward = preles::simulate(p, days);
    auto permuted = days;
    std::reverse(permuted.begin(), permuted.end());
    auto backward = preles::simulate(p, permuted);
    std::reverse(backward.begin(), backward.end());
    bool any_different = false;
    for (std::size_t i = 0; i < days.size(); ++i)
        if (forward[i].gpp != backward[i].gpp) any_different = true;
    CHECK(any_different);
}

TEST_CASE("sum of gpp is linear in beta under wet conditions") {
    auto p = preles::default_params();
    std::vector<DriverRecord> days;
    rng::Stream rs(31337);
    for (int i = 0; i < 30; ++i) {
        auto d = benign_day(100 + i);
        d.precip = 8.0;  // keeps the soil pool on the modifier plateau
        d.t_air = rs.uniform(10.0, 20.0);
        d.par = rs.uniform(10.0, 35.0);
        d.vpd = rs.uniform(0.1, 1.2);
        d.fapar = rs.uniform(0.4, 0.9);
        days.push_back(d);
    }

    ad::Tape tape;
    auto lifted = preles::lift(tape, p, true);
    auto outputs = preles::simulate(lifted, days);
    ad::Var total = tape.constant(0.0);
    for (const auto& o : outputs) total = total + o.gpp;
    auto grads = tape.backward(total);
    CHECK(grads.at(lifted.beta) == doctest::Approx(total.value() / p.beta).epsilon(1e-12));
}

TEST_CASE("tape-mode simulate reproduces double-mode values bit-exactly") {
    auto p = preles::default_params();
    auto days = random_drivers(60, 909);
    auto direct = preles::simulate(p, days);

    ad::Tape tape;
    auto lifted = preles::lift(tape, p, true);
    auto taped = preles::simulate(lifted, days);
    for (std::size_t i = 0; i < days.size(); ++i) {
        CHECK(direct[i].gpp == taped[i].gpp.value());
        CHECK(direct[i].et == taped[i].et.value());
        CHECK(direct[i].soil_water == taped[i].soil_water.value());
    }
}

TEST_CASE("30-day gradient of total gpp matches finite differences for all parameters") {
    auto days = random_drivers(30, 660001);
    const auto flat = preles::flatten(preles::default_params());

    const double err = ad::finite_difference_check(
        [&days](ad::Tape& tape, std::span<const ad::Var> leaves) {
            preles::ParamsT<ad::Var> p;
            ad::Var* fields[preles::kParamCount] = {
                &p.beta, &p.x0, &p.gamma, &p.kappa, &p.alpha, &p.chi, &p.tau,
                &p.soil_capacity, &p.drainage_rate, &p.snow_melt_coeff,
                &p.wilting_fraction, &p.et_shape, &p.smax};
            for (int i = 0; i < preles::kParamCount; ++i) *fields[i] = leaves[i];
            auto outputs = preles::simulate(p, days);
            ad::Var total = tape.constant(0.0);
            for (const auto& o : outputs) total = total + o.gpp;
            return total;
        },
        flat, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("simulate rejects invalid inputs with the day index") {
    auto p = preles::default_params();
    CHECK_THROWS_AS(preles::simulate(p, std::span<const DriverRecord>{}), std::invalid_argument);
    std::vector<DriverRecord> days(3, benign_day());
    days[2].fapar = 1.7;
    CHECK_THROWS_WITH_AS(preles::simulate(p, days), doctest::Contains("day 2"),
                         std::invalid_argument);
}

TEST_CASE("spin-up settles the starting state") {
    auto p = preles::default_params();
    auto days = random_drivers(365, 40);
    preles::SimOptions spun;
    spun.spinup_years = 3;
    auto cold = preles::simulate(p, days);
    auto warm = preles::simulate(p, days, spun);
    CHECK(cold[0].soil_water != warm[0].soil_water);
}
