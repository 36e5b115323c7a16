#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pgnn::ad {

enum class Op : std::uint8_t {
    Leaf, Add, Sub, Mul, Div, Pow, Exp, Log, Sin, Cos, Tanh, Min, Max, Clamp, Relu, Neg,
    AddScaled  // fused acc + w*c with constant c; keeps dot products compact
};

const char* op_name(Op op);

class Tape;

// Handle to a node on a tape. Copyable, trivially cheap; the tape owns all
// storage. A default-constructed Var is invalid.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    double value() const;
    bool valid() const { return tape != nullptr; }
};

// Gradients of a scalar root with respect to the trainable leaves reachable
// from it. Entries are sorted by leaf id, so iteration order is deterministic.
class GradientMap {
public:
    using Entry = std::pair<std::uint32_t, double>;

    explicit GradientMap(std::vector<Entry> entries) : entries_(std::move(entries)) {}
    GradientMap() = default;

    double at(Var leaf) const;                 // 0.0 when the leaf is absent
    bool contains(Var leaf) const;
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

private:
    const Entry* find(std::uint32_t id) const;
    std::vector<Entry> entries_;
};

// Reverse-mode autodiff tape over scalar nodes. Every elementary operation
// appends exactly one node; backward walks the node sequence in strict
// reverse creation order. Tapes are single-threaded; independent tapes may
// run on independent threads.
//
// Subgradient conventions at kinks (pinned, test-covered):
//   max/min: the first argument receives the derivative on exact ties
//   relu:    derivative 0 at x == 0
//   clamp:   derivative 1 on [lo, hi], 0 outside (matches min(max(x,lo),hi))
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves: constants and trainable parameters. Rejects non-finite values.
    Var leaf(double value, bool trainable);
    Var constant(double value) { return leaf(value, false); }

    std::size_t size() const { return value_.size(); }
    void reset();                       // drops all nodes, keeps capacity
    void reserve(std::size_t n);

    double value(Var v) const { return value_[check(v)]; }
    double adjoint(Var v) const;        // valid after backward()
    Op op(Var v) const { return meta_[check(v)].op; }
    bool trainable(Var v) const { return meta_[check(v)].trainable; }
    int parent_count(Var v) const { return meta_[check(v)].parents; }

    // unchecked read used by the operator layer (handles it just created)
    double raw_value(std::uint32_t id) const noexcept { return value_[id]; }

    // Reverse accumulation from a scalar root produced by this tape. Adjoints
    // are cleared first; the result holds exactly the trainable leaves
    // reachable from the root.
    GradientMap backward(Var root);

    // Node emission. Exposed for the operator overloads below; not meant to
    // be called with inconsistent local derivatives.
    Var emit_unary(Op op, Var a, double value, double da);
    Var emit_binary(Op op, Var a, Var b, double value, double da, double db);

private:
    friend struct Var;

    struct Meta {
        std::uint32_t a = 0;
        std::uint32_t b = 0;
        double da = 0.0;
        double db = 0.0;
        Op op = Op::Leaf;
        std::uint8_t parents = 0;
        bool trainable = false;
    };

    std::uint32_t check(Var v) const {
        if (v.tape != this || v.id >= value_.size())
            throw std::invalid_argument("autodiff: node handle does not belong to this tape");
        return v.id;
    }

    [[noreturn]] void raise(Op op, double a, double b, const char* what) const;
    void guard_finite(Op op, double result, double a, double b);

    std::vector<double> value_;
    std::vector<Meta> meta_;
    std::vector<double> adjoint_;       // scratch, sized during backward
    std::vector<std::uint8_t> reach_;   // scratch, sized during backward
};

inline double Var::value() const {
    if (!tape) throw std::invalid_argument("autodiff: value() on an invalid Var");
    return tape->value(*this);
}

// ---------------------------------------------------------------------------
// Elementary operations. Var/double mixes fold the constant into the local
// derivative instead of allocating a constant leaf, so tapes stay compact.
// ---------------------------------------------------------------------------

Var operator+(Var a, Var b);
Var operator+(Var a, double c);
inline Var operator+(double c, Var a) { return a + c; }
Var operator-(Var a, Var b);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator-(Var a);
Var operator*(Var a, Var b);
Var operator*(Var a, double c);
inline Var operator*(double c, Var a) { return a * c; }
Var operator/(Var a, Var b);
Var operator/(Var a, double c);
Var operator/(double c, Var a);

Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var cos(Var a);
Var tanh(Var a);
Var relu(Var a);
Var pow(Var a, Var b);
Var pow(Var a, double c);
Var min(Var a, Var b);
Var max(Var a, Var b);
Var min(Var a, double c);
Var max(Var a, double c);
inline Var min(double c, Var b) { return min(b, c); }  // note: tie goes to b
inline Var max(double c, Var b) { return max(b, c); }
Var clamp(Var x, double lo, double hi);

// acc + w*c in a single node; the workhorse of dense layers
Var add_scaled(Var acc, Var w, double c);
inline double add_scaled(double acc, double w, double c) { return acc + w * c; }

// double overloads so numeric code can be written once and instantiated for
// either plain doubles or tape nodes (qualified calls: ad::exp, ad::min, ...)
inline double exp(double a) { return std::exp(a); }
inline double log(double a) { return std::log(a); }
inline double sin(double a) { return std::sin(a); }
inline double cos(double a) { return std::cos(a); }
inline double tanh(double a) { return std::tanh(a); }
inline double relu(double a) { return a > 0.0 ? a : 0.0; }
inline double pow(double a, double b) { return std::pow(a, b); }
inline double min(double a, double b) { return a <= b ? a : b; }
inline double max(double a, double b) { return a >= b ? a : b; }
inline double clamp(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

inline double value(double x) { return x; }
inline double value(Var x) { return x.value(); }

inline Var clamp_unit(Var x) { return clamp(x, 0.0, 1.0); }
inline double clamp_unit(double x) { return clamp(x, 0.0, 1.0); }

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// A scalar function rebuilt from leaves on a caller-provided tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares reverse-mode gradients against central finite differences.
// Returns max over coordinates of |fd - grad| / max(1, |grad|).
double finite_difference_check(const ScalarFn& fn, std::span<const double> point, double step);

}  // namespace pgnn::ad
