#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "pgnn/autodiff.hpp"
#include "pgnn/rng.hpp"

using namespace pgnn;
using ad::Tape;
using ad::Var;

TEST_CASE("leaf construction") {
    Tape tape;
    Var x = tape.leaf(3.0, true);
    CHECK(x.value() == 3.0);
    CHECK(tape.adjoint(x) == 0.0);
    CHECK(tape.trainable(x));

    Var c = tape.leaf(0.0, false);
    CHECK_FALSE(tape.trainable(c));

    CHECK_THROWS_AS(tape.leaf(std::numeric_limits<double>::quiet_NaN(), true), std::domain_error);
    CHECK_THROWS_AS(tape.leaf(std::numeric_limits<double>::infinity(), true), std::domain_error);
}

TEST_CASE("constant leaves are excluded from the gradient map") {
    Tape tape;
    Var x = tape.leaf(2.0, true);
    Var c = tape.leaf(5.0, false);
    Var y = x * c;
    auto g = tape.backward(y);
    CHECK(g.size() == 1);
    CHECK(g.contains(x));
    CHECK_FALSE(g.contains(c));
    CHECK(g.at(x) == 5.0);
}

TEST_CASE("basic derivative identities") {
    SUBCASE("d(x*x)/dx = 2x") {
        Tape tape;
        Var x = tape.leaf(3.0, true);
        auto g = tape.backward(x * x);
        CHECK(g.at(x) == doctest::Approx(6.0).epsilon(1e-15));
    }
    SUBCASE("d(sin x)/dx at 0 = 1") {
        Tape tape;
        Var x = tape.leaf(0.0, true);
        auto g = tape.backward(ad::sin(x));
        CHECK(g.at(x) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("exp(log(x)) is the identity") {
        Tape tape;
        Var x = tape.leaf(2.5, true);
        Var y = ad::exp(ad::log(x));
        CHECK(y.value() == doctest::Approx(2.5).epsilon(1e-15));
        auto g = tape.backward(y);
        CHECK(g.at(x) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("backward on linear and product forms") {
    Tape tape;
    Var a = tape.leaf(1.0, true);
    Var b = tape.leaf(1.0, true);
    auto g = tape.backward(2.0 * a + 3.0 * b);
    CHECK(g.at(a) == 2.0);
    CHECK(g.at(b) == 3.0);

    Tape tape2;
    Var p = tape2.leaf(4.0, true);
    Var q = tape2.leaf(5.0, true);
    auto g2 = tape2.backward(p * q);
    CHECK(g2.at(p) == 5.0);
    CHECK(g2.at(q) == 4.0);
}

TEST_CASE("30-step linear recurrence gradient matches geometric sum") {
    // oracle: s_k = 0.9 s_{k-1} + u, so ds_30/du = sum_{j=0}^{29} 0.9^j
    double expected = 0.0;
    double pw = 1.0;
    for (int j = 0; j < 30; ++j) {
        expected += pw;
        pw *= 0.9;
    }

    Tape tape;
    Var u = tape.leaf(0.3, true);
    Var s = tape.leaf(0.0, false);
    for (int k = 0; k < 30; ++k) s = 0.9 * s + u;
    auto g = tape.backward(s);
    CHECK(g.at(u) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(expected == doctest::Approx(9.576088417247836).epsilon(1e-12));
}

TEST_CASE("gradient map contains only leaves reachable from the root") {
    Tape tape;
    Var a = tape.leaf(1.0, true);
    Var b = tape.leaf(2.0, true);
    Var used = a * 3.0;
    Var unused = b * 4.0;
    (void)unused;
    auto g = tape.backward(used);
    CHECK(g.contains(a));
    CHECK_FALSE(g.contains(b));
}

TEST_CASE("adjoint linearity: gradient of a sum is the sum of gradients") {
    Tape tape;
    Var a = tape.leaf(0.7, true);
    Var b = tape.leaf(-1.2, true);
    Var r1 = ad::sin(a) * b;
    Var r2 = ad::exp(b) + a * a;
    Var sum = r1 + r2;

    auto gs = tape.backward(sum);
    auto g1 = tape.backward(r1);
    auto g2 = tape.backward(r2);
    CHECK(gs.at(a) == doctest::Approx(g1.at(a) + g2.at(a)).epsilon(1e-15));
    CHECK(gs.at(b) == doctest::Approx(g1.at(b) + g2.at(b)).epsilon(1e-15));
}

TEST_CASE("forward+backward is bit-identical across runs") {
    auto run = [](double x0, double y0) {
        Tape tape;
        Var x = tape.leaf(x0, true);
        Var y = tape.leaf(y0, true);
        Var r = ad::tanh(x * y) + ad::exp(x / 3.0) - ad::log(y + 2.0);
        auto g = tape.backward(r);
        return std::pair<double, std::pair<double, double>>{r.value(), {g.at(x), g.at(y)}};
    };
    auto a = run(0.37, 1.21);
    auto b = run(0.37, 1.21);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("tape length equals number of elementary operations") {
    Tape tape;
    Var x = tape.leaf(1.5, true);   // 1 node
    Var y = tape.leaf(2.0, false);  // 2
    Var a = x * y;                  // 3
    Var b = ad::sin(a);             // 4
    Var c = b + 1.0;                // 5 (constant folded into the op)
    (void)c;
    CHECK(tape.size() == 5);
}

TEST_CASE("domain errors carry the op and arguments") {
    Tape tape;
    Var x = tape.leaf(-1.0, true);
    CHECK_THROWS_AS(ad::log(x), std::domain_error);
    Var z = tape.leaf(0.0, false);
    Var y = tape.leaf(1.0, false);
    CHECK_THROWS_AS(y / z, std::domain_error);
    CHECK_THROWS_WITH_AS(ad::log(x), doctest::Contains("log"), std::domain_error);
}

TEST_CASE("backward rejects roots from another tape") {
    Tape t1, t2;
    Var x = t1.leaf(1.0, true);
    (void)t2.leaf(2.0, true);
    CHECK_THROWS_AS(t2.backward(x), std::invalid_argument);
}

TEST_CASE("subgradient conventions at kinks") {
    SUBCASE("max tie goes to the first argument") {
        Tape tape;
        Var a = tape.leaf(2.0, true);
        Var b = tape.leaf(2.0, true);
        auto g = tape.backward(ad::max(a, b));
        CHECK(g.at(a) == 1.0);
        CHECK(g.at(b) == 0.0);
    }
    SUBCASE("min tie goes to the first argument") {
        Tape tape;
        Var a = tape.leaf(2.0, true);
        Var b = tape.leaf(2.0, true);
        auto g = tape.backward(ad::min(a, b));
        CHECK(g.at(a) == 1.0);
        CHECK(g.at(b) == 0.0);
    }
    SUBCASE("relu derivative is 0 at exactly 0") {
        Tape tape;
        Var x = tape.leaf(0.0, true);
        auto g = tape.backward(ad::relu(x));
        CHECK(g.at(x) == 0.0);
    }
    SUBCASE("clamp matches min(max(x,lo),hi) including at the kinks") {
        for (double xv : {-1.0, 0.0, 0.4, 1.0, 2.0}) {
            Tape t1;
            Var x1 = t1.leaf(xv, true);
            Var c1 = ad::clamp(x1, 0.0, 1.0);
            auto g1 = t1.backward(c1);

            Tape t2;
            Var x2 = t2.leaf(xv, true);
            Var c2 = ad::min(ad::max(x2, 0.0), 1.0);
            auto g2 = t2.backward(c2);

            CHECK(c1.value() == c2.value());
            CHECK(g1.at(x1) == g2.at(x2));
        }
    }
}

TEST_CASE("finite differences agree for every elementary op") {
    // random in-domain points kept away from kinks so central differences
    // are valid; tolerance per double-precision calibration
    rng::Stream rs(20240817);
    const double step = 1e-6;
    const double tol = 1e-5;

    auto check1 = [&](const char* name, ad::Var (*op)(ad::Var), double lo, double hi) {
        for (int i = 0; i < 20; ++i) {
            const double x0 = rs.uniform(lo, hi);
            double p[1] = {x0};
            double err = ad::finite_difference_check(
                [&](Tape&, std::span<const Var> v) { return op(v[0]); }, p, step);
            INFO(name, " at ", x0);
            CHECK(err < tol);
        }
    };

    check1("exp", static_cast<Var (*)(Var)>(ad::exp), -3.0, 3.0);
    check1("log", static_cast<Var (*)(Var)>(ad::log), 0.05, 10.0);
    check1("sin", static_cast<Var (*)(Var)>(ad::sin), -6.0, 6.0);
    check1("cos", static_cast<Var (*)(Var)>(ad::cos), -6.0, 6.0);
    check1("tanh", static_cast<Var (*)(Var)>(ad::tanh), -4.0, 4.0);

    auto check2 = [&](const char* name, Var (*op)(Var, Var), double alo, double ahi,
                      double blo, double bhi, bool avoid_tie) {
        for (int i = 0; i < 20; ++i) {
            double a = rs.uniform(alo, ahi);
            double b = rs.uniform(blo, bhi);
            if (avoid_tie && std::abs(a - b) < 64 * step) b += 128 * step;
            double p[2] = {a, b};
            double err = ad::finite_difference_check(
                [&](Tape&, std::span<const Var> v) { return op(v[0], v[1]); }, p, step);
            INFO(name, " at ", a, ", ", b);
            CHECK(err < tol);
        }
    };

    check2("add", [](Var a, Var b) { return a + b; }, -5, 5, -5, 5, false);
    check2("sub", [](Var a, Var b) { return a - b; }, -5, 5, -5, 5, false);
    check2("mul", [](Var a, Var b) { return a * b; }, -5, 5, -5, 5, false);
    check2("div", [](Var a, Var b) { return a / b; }, -5, 5, 0.2, 5, false);
    check2("pow", static_cast<Var (*)(Var, Var)>(ad::pow), 0.2, 4, -2, 2, false);
    check2("min", static_cast<Var (*)(Var, Var)>(ad::min), -5, 5, -5, 5, true);
    check2("max", static_cast<Var (*)(Var, Var)>(ad::max), -5, 5, -5, 5, true);

    // relu / clamp away from their kinks
    for (int i = 0; i < 20; ++i) {
        double x0 = rs.uniform(0.1, 4.0) * (i % 2 == 0 ? 1.0 : -1.0);
        double p[1] = {x0};
        double err = ad::finite_difference_check(
            [](Tape&, std::span<const Var> v) { return ad::relu(v[0]); }, p, step);
        CHECK(err < tol);
        err = ad::finite_difference_check(
            [](Tape&, std::span<const Var> v) { return ad::clamp(v[0], -2.0, 2.0); }, p, step);
        CHECK(err < tol);
    }
}

TEST_CASE("finite_difference_check on a quadratic is near exact") {
    double p[1] = {3.0};
    double err = ad::finite_difference_check(
        [](Tape&, std::span<const Var> v) { return v[0] * v[0]; }, p, 1e-5);
    CHECK(err < 1e-8);
}

TEST_CASE("repeated argument accumulates both paths") {
    Tape tape;
    Var x = tape.leaf(3.0, true);
    Var y = x * x;  // both parents are x
    auto g = tape.backward(y);
    CHECK(g.at(x) == 6.0);
}

TEST_CASE("tape reset preserves capacity semantics") {
    Tape tape;
    Var x = tape.leaf(1.0, true);
    (void)(x * 2.0);
    CHECK(tape.size() == 2);
    tape.reset();
    CHECK(tape.size() == 0);
    Var y = tape.leaf(4.0, true);
    auto g = tape.backward(y * y);
    CHECK(g.at(y) == 8.0);
}
