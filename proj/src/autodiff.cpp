#include "pgnn/autodiff.hpp"

#include <algorithm>
#include <sstream>

namespace pgnn::ad {

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Pow: return "pow";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Tanh: return "tanh";
        case Op::Min: return "min";
        case Op::Max: return "max";
        case Op::Clamp: return "clamp";
        case Op::Relu: return "relu";
        case Op::Neg: return "neg";
        case Op::AddScaled: return "add_scaled";
    }
    return "?";
}

double GradientMap::at(Var leaf) const {
    const Entry* e = find(leaf.id);
    return e ? e->second : 0.0;
}

bool GradientMap::contains(Var leaf) const { return find(leaf.id) != nullptr; }

const GradientMap::Entry* GradientMap::find(std::uint32_t id) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                               [](const Entry& e, std::uint32_t key) { return e.first < key; });
    if (it == entries_.end() || it->first != id) return nullptr;
    return &*it;
}

void Tape::raise(Op op, double a, double b, const char* what) const {
    std::ostringstream msg;
    msg << "autodiff: " << what << " in op '" << op_name(op) << "' (args: " << a;
    if (op != Op::Leaf) msg << ", " << b;
    msg << ")";
    throw std::domain_error(msg.str());
}

void Tape::guard_finite(Op op, double result, double a, double b) {
    if (!std::isfinite(result)) raise(op, a, b, "non-finite result");
}

Var Tape::leaf(double value, bool trainable) {
    if (!std::isfinite(value)) raise(Op::Leaf, value, 0.0, "non-finite leaf value");
    value_.push_back(value);
    Meta m;
    m.op = Op::Leaf;
    m.trainable = trainable;
    meta_.push_back(m);
    return Var{this, static_cast<std::uint32_t>(value_.size() - 1)};
}

Var Tape::emit_unary(Op op, Var a, double value, double da) {
    guard_finite(op, value, value_[a.id], 0.0);
    value_.push_back(value);
    Meta m;
    m.a = a.id;
    m.da = da;
    m.op = op;
    m.parents = 1;
    meta_.push_back(m);
    return Var{this, static_cast<std::uint32_t>(value_.size() - 1)};
}

Var Tape::emit_binary(Op op, Var a, Var b, double value, double da, double db) {
    if (b.tape != this) throw std::invalid_argument("autodiff: operands from different tapes");
    guard_finite(op, value, value_[a.id], value_[b.id]);
    value_.push_back(value);
    Meta m;
    m.a = a.id;
    m.b = b.id;
    m.da = da;
    m.db = db;
    m.op = op;
    m.parents = 2;
    meta_.push_back(m);
    return Var{this, static_cast<std::uint32_t>(value_.size() - 1)};
}

void Tape::reset() {
    value_.clear();
    meta_.clear();
    adjoint_.clear();
    reach_.clear();
}

void Tape::reserve(std::size_t n) {
    value_.reserve(n);
    meta_.reserve(n);
}

double Tape::adjoint(Var v) const {
    const std::uint32_t id = check(v);
    if (id >= adjoint_.size()) return 0.0;
    return adjoint_[id];
}

GradientMap Tape::backward(Var root) {
    const std::uint32_t r = check(root);
    adjoint_.assign(value_.size(), 0.0);
    reach_.assign(value_.size(), 0);
    adjoint_[r] = 1.0;
    reach_[r] = 1;

    std::vector<GradientMap::Entry> grads;
    for (std::uint32_t i = r;; --i) {
        if (reach_[i]) {
            const Meta& m = meta_[i];
            const double adj = adjoint_[i];
            switch (m.parents) {
                case 0:
                    if (m.trainable) grads.emplace_back(i, adj);
                    break;
                case 2:
                    adjoint_[m.b] += adj * m.db;
                    reach_[m.b] = 1;
                    [[fallthrough]];
                case 1:
                    adjoint_[m.a] += adj * m.da;
                    reach_[m.a] = 1;
                    break;
            }
        }
        if (i == 0) break;
    }
    std::reverse(grads.begin(), grads.end());
    return GradientMap(std::move(grads));
}

// ---------------------------------------------------------------------------
// operators
// ---------------------------------------------------------------------------

namespace {
inline Tape& tape_of(Var a) { return *a.tape; }
inline double val(Var a) { return a.tape->raw_value(a.id); }
}

Var operator+(Var a, Var b) { return tape_of(a).emit_binary(Op::Add, a, b, val(a) + val(b), 1.0, 1.0); }
Var operator+(Var a, double c) { return tape_of(a).emit_unary(Op::Add, a, val(a) + c, 1.0); }
Var operator-(Var a, Var b) { return tape_of(a).emit_binary(Op::Sub, a, b, val(a) - val(b), 1.0, -1.0); }
Var operator-(Var a, double c) { return tape_of(a).emit_unary(Op::Sub, a, val(a) - c, 1.0); }
Var operator-(double c, Var a) { return tape_of(a).emit_unary(Op::Sub, a, c - val(a), -1.0); }
Var operator-(Var a) { return tape_of(a).emit_unary(Op::Neg, a, -val(a), -1.0); }

Var operator*(Var a, Var b) { return tape_of(a).emit_binary(Op::Mul, a, b, val(a) * val(b), val(b), val(a)); }
Var operator*(Var a, double c) { return tape_of(a).emit_unary(Op::Mul, a, val(a) * c, c); }

Var add_scaled(Var acc, Var w, double c) {
    return tape_of(acc).emit_binary(Op::AddScaled, acc, w, val(acc) + val(w) * c, 1.0, c);
}

Var operator/(Var a, Var b) {
    const double bv = val(b);
    if (bv == 0.0) throw std::domain_error("autodiff: division by zero in op 'div' (args: " + std::to_string(val(a)) + ", 0)");
    return tape_of(a).emit_binary(Op::Div, a, b, val(a) / bv, 1.0 / bv, -val(a) / (bv * bv));
}
Var operator/(Var a, double c) {
    if (c == 0.0) throw std::domain_error("autodiff: division by zero in op 'div' (args: " + std::to_string(val(a)) + ", 0)");
    return tape_of(a).emit_unary(Op::Div, a, val(a) / c, 1.0 / c);
}
Var operator/(double c, Var a) {
    const double av = val(a);
    if (av == 0.0) throw std::domain_error("autodiff: division by zero in op 'div' (args: " + std::to_string(c) + ", 0)");
    return tape_of(a).emit_unary(Op::Div, a, c / av, -c / (av * av));
}

Var exp(Var a) {
    const double v = std::exp(val(a));
    return tape_of(a).emit_unary(Op::Exp, a, v, v);
}
Var log(Var a) {
    const double av = val(a);
    if (av <= 0.0) throw std::domain_error("autodiff: log of non-positive value in op 'log' (arg: " + std::to_string(av) + ")");
    return tape_of(a).emit_unary(Op::Log, a, std::log(av), 1.0 / av);
}
Var sin(Var a) { return tape_of(a).emit_unary(Op::Sin, a, std::sin(val(a)), std::cos(val(a))); }
Var cos(Var a) { return tape_of(a).emit_unary(Op::Cos, a, std::cos(val(a)), -std::sin(val(a))); }
Var tanh(Var a) {
    const double t = std::tanh(val(a));
    return tape_of(a).emit_unary(Op::Tanh, a, t, 1.0 - t * t);
}
Var relu(Var a) {
    const double av = val(a);
    return tape_of(a).emit_unary(Op::Relu, a, av > 0.0 ? av : 0.0, av > 0.0 ? 1.0 : 0.0);
}

Var pow(Var a, Var b) {
    const double av = val(a), bv = val(b);
    if (av <= 0.0)
        throw std::domain_error("autodiff: pow with non-positive base in op 'pow' (args: " +
                                std::to_string(av) + ", " + std::to_string(bv) + ")");
    const double v = std::pow(av, bv);
    return tape_of(a).emit_binary(Op::Pow, a, b, v, bv * std::pow(av, bv - 1.0), v * std::log(av));
}

Var pow(Var a, double c) {
    const double av = val(a);
    if (c == 0.0) return tape_of(a).emit_unary(Op::Pow, a, 1.0, 0.0);
    const bool integral = c == std::floor(c);
    if (av == 0.0) {
        if (c < 1.0)
            throw std::domain_error("autodiff: pow(0, c) with c < 1 has no finite derivative (c=" + std::to_string(c) + ")");
        return tape_of(a).emit_unary(Op::Pow, a, 0.0, c == 1.0 ? 1.0 : 0.0);
    }
    if (av < 0.0 && !integral)
        throw std::domain_error("autodiff: pow of negative base with non-integral exponent (args: " +
                                std::to_string(av) + ", " + std::to_string(c) + ")");
    return tape_of(a).emit_unary(Op::Pow, a, std::pow(av, c), c * std::pow(av, c - 1.0));
}

Var min(Var a, Var b) {
    const bool left = val(a) <= val(b);  // tie: first argument
    return tape_of(a).emit_binary(Op::Min, a, b, left ? val(a) : val(b),
                                  left ? 1.0 : 0.0, left ? 0.0 : 1.0);
}
Var max(Var a, Var b) {
    const bool left = val(a) >= val(b);  // tie: first argument
    return tape_of(a).emit_binary(Op::Max, a, b, left ? val(a) : val(b),
                                  left ? 1.0 : 0.0, left ? 0.0 : 1.0);
}
Var min(Var a, double c) {
    const bool left = val(a) <= c;
    return tape_of(a).emit_unary(Op::Min, a, left ? val(a) : c, left ? 1.0 : 0.0);
}
Var max(Var a, double c) {
    const bool left = val(a) >= c;
    return tape_of(a).emit_unary(Op::Max, a, left ? val(a) : c, left ? 1.0 : 0.0);
}

Var clamp(Var x, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("autodiff: clamp with lo > hi");
    const double xv = val(x);
    const double v = xv < lo ? lo : (xv > hi ? hi : xv);
    const double d = (xv >= lo && xv <= hi) ? 1.0 : 0.0;
    return tape_of(x).emit_unary(Op::Clamp, x, v, d);
}

// ---------------------------------------------------------------------------

double finite_difference_check(const ScalarFn& fn, std::span<const double> point, double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be positive");

    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(point.size());
    for (double x : point) leaves.push_back(tape.leaf(x, true));
    const Var root = fn(tape, leaves);
    const GradientMap grads = tape.backward(root);

    auto eval = [&fn](std::span<const double> at) {
        Tape t;
        std::vector<Var> ls;
        ls.reserve(at.size());
        for (double x : at) ls.push_back(t.leaf(x, false));
        return fn(t, ls).value();
    };

    std::vector<double> shifted(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        shifted[i] = point[i] + step;
        const double above = eval(shifted);
        shifted[i] = point[i] - step;
        const double below = eval(shifted);
        shifted[i] = point[i];
        const double central = (above - below) / (2.0 * step);
        const double g = grads.at(leaves[i]);
        const double err = std::abs(central - g) / std::max(1.0, std::abs(g));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace pgnn::ad
