#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvi/errors.hpp"

// Reverse-mode taping over scalar operations.
//
// A Tape is a linear record of every primitive executed between input
// registration and output marking. Each record stores the op code, the slot
// ids of its arguments, the local partial derivatives at the recorded point,
// and the forward value. Slot 0 is a write-only sink used for the unused
// argument of unary ops and for constant operands, so the reverse sweep is
// branch-free. Comparisons between traced scalars read values only and are
// therefore frozen at their recorded outcome.
//
// One tape may be active per thread at a time. A tape recorded once can be
// swept many times with different output seeds; sweeps are sequential and
// bitwise deterministic.

namespace mvi::tape {

enum class Op : std::uint8_t {
  Input,
  Add,   // a + b
  Sub,   // a - b
  Mul,   // a * b
  Div,   // a / b
  AddC,  // a + c      (c in p1)
  RSubC, // c - a      (c in p1)
  MulC,  // a * c      (c in p0)
  DivC,  // a / c      (c in p1)
  RDivC, // c / a      (c in p1)
  Neg,
  Sqrt,
  Exp,
  Log,
  Sin,
  Cos,
  PowC,  // pow(a, c)  (c in p1)
  SAbs,  // sqrt(a^2 + c^2), smooth |a| with width c (c in p1)
};

struct TapeStats {
  std::size_t records = 0;
  std::size_t bytes = 0;
  std::size_t inputs = 0;
  std::size_t outputs = 0;
};

/// Scratch buffers for reverse sweeps, reusable across sweeps and tapes.
struct SweepWorkspace {
  std::vector<double> adjoint;  // slot-indexed, kept all-zero between sweeps
};

class Tape {
 public:
  /// Register an input. Returns the slot id. The i-th call corresponds to
  /// position i in gradients returned by sweeps.
  std::int32_t add_input(double value) {
    const std::int32_t id = push(Op::Input, n_inputs_, 0, 0.0, 0.0, value);
    ++n_inputs_;
    return id;
  }

  std::int32_t push(Op op, std::int32_t a0, std::int32_t a1, double p0,
                    double p1, double value) {
    op_.push_back(static_cast<std::uint8_t>(op));
    a0_.push_back(a0);
    a1_.push_back(a1);
    p0_.push_back(p0);
    p1_.push_back(p1);
    val_.push_back(value);
    return static_cast<std::int32_t>(op_.size());
  }

  void mark_output(std::int32_t id) { outputs_.push_back(id); }

  void clear_outputs() { outputs_.clear(); }

  std::size_t num_records() const { return op_.size(); }
  std::size_t num_inputs() const { return static_cast<std::size_t>(n_inputs_); }
  std::size_t num_outputs() const { return outputs_.size(); }
  const std::vector<std::int32_t>& outputs() const { return outputs_; }

  double value_at(std::int32_t id) const { return val_[static_cast<std::size_t>(id) - 1]; }

  std::size_t memory_bytes() const {
    return op_.capacity() * sizeof(std::uint8_t) +
           (a0_.capacity() + a1_.capacity()) * sizeof(std::int32_t) +
           (p0_.capacity() + p1_.capacity() + val_.capacity()) * sizeof(double) +
           outputs_.capacity() * sizeof(std::int32_t);
  }

  TapeStats stats() const {
    return {num_records(), memory_bytes(), num_inputs(), num_outputs()};
  }

  void reserve(std::size_t n) {
    op_.reserve(n);
    a0_.reserve(n);
    a1_.reserve(n);
    p0_.reserve(n);
    p1_.reserve(n);
    val_.reserve(n);
  }

  /// Reverse sweep. Seeds the marked outputs with `seed`, propagates adjoints
  /// back to the inputs and writes the input gradient (one entry per
  /// registered input, in registration order) into `grad`. The workspace
  /// adjoint buffer is restored to all-zero before returning, so repeated
  /// sweeps reuse it without clearing. An output that no input influences
  /// receives gradient 0 exactly.
  void sweep(std::span<const double> seed, SweepWorkspace& ws,
             std::span<double> grad) const {
    if (seed.size() != outputs_.size())
      throw SeedDimensionMismatchError(
          "seed has " + std::to_string(seed.size()) + " entries, tape has " +
          std::to_string(outputs_.size()) + " outputs");
    if (grad.size() != num_inputs())
      throw SeedDimensionMismatchError(
          "gradient span has " + std::to_string(grad.size()) +
          " entries, tape has " + std::to_string(num_inputs()) + " inputs");
    auto& adj = ws.adjoint;
    adj.resize(op_.size() + 1, 0.0);
    for (std::size_t k = 0; k < outputs_.size(); ++k)
      adj[static_cast<std::size_t>(outputs_[k])] += seed[k];
    const std::uint8_t* op = op_.data();
    const std::int32_t* a0 = a0_.data();
    const std::int32_t* a1 = a1_.data();
    const double* p0 = p0_.data();
    const double* p1 = p1_.data();
    double* a = adj.data();
    const std::uint8_t input_op = static_cast<std::uint8_t>(Op::Input);
    for (std::size_t i = op_.size(); i-- > 0;) {
      const double ai = a[i + 1];
      a[i + 1] = 0.0;  // self-cleaning: keeps the buffer zero for the next sweep
      if (op[i] == input_op) {
        grad[static_cast<std::size_t>(a0[i])] = ai;
        continue;
      }
      if (ai == 0.0) continue;
      a[a0[i]] += p0[i] * ai;
      a[a1[i]] += p1[i] * ai;
    }
    a[0] = 0.0;  // sink may have accumulated constant-operand noise
  }

  /// Convenience single-shot gradient.
  std::vector<double> gradient(std::span<const double> seed) const {
    SweepWorkspace ws;
    std::vector<double> grad(num_inputs(), 0.0);
    sweep(seed, ws, grad);
    return grad;
  }

  /// Re-execute the recorded program from the stored input values and compare
  /// each recomputed value with the stored one. Returns the number of records
  /// whose value does not reproduce bitwise (0 for a healthy tape). Throws
  /// UnsupportedPrimitiveError on an unknown op code.
  std::size_t replay_verify() const {
    std::vector<double> v(op_.size() + 1, 0.0);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < op_.size(); ++i) {
      const double x = v[a0_[i]];
      const double y = v[a1_[i]];
      double r;
      switch (static_cast<Op>(op_[i])) {
        case Op::Input: r = val_[i]; break;
        case Op::Add:   r = x + y; break;
        case Op::Sub:   r = x - y; break;
        case Op::Mul:   r = x * y; break;
        case Op::Div:   r = x / y; break;
        case Op::AddC:  r = x + p1_[i]; break;
        case Op::RSubC: r = p1_[i] - x; break;
        case Op::MulC:  r = x * p0_[i]; break;
        case Op::DivC:  r = x / p1_[i]; break;
        case Op::RDivC: r = p1_[i] / x; break;
        case Op::Neg:   r = -x; break;
        case Op::Sqrt:  r = std::sqrt(x); break;
        case Op::Exp:   r = std::exp(x); break;
        case Op::Log:   r = std::log(x); break;
        case Op::Sin:   r = std::sin(x); break;
        case Op::Cos:   r = std::cos(x); break;
        case Op::PowC:  r = std::pow(x, p1_[i]); break;
        case Op::SAbs:  r = std::sqrt(x * x + p1_[i] * p1_[i]); break;
        default:
          throw UnsupportedPrimitiveError("unknown op code " +
                                          std::to_string(int(op_[i])) +
                                          " at record " + std::to_string(i));
      }
      v[i + 1] = r;
      const auto bits = [](double d) {
        std::uint64_t u;
        static_assert(sizeof(u) == sizeof(d));
        __builtin_memcpy(&u, &d, sizeof(u));
        return u;
      };
      if (bits(r) != bits(val_[i])) ++mismatches;
    }
    return mismatches;
  }

 private:
  std::vector<std::uint8_t> op_;
  std::vector<std::int32_t> a0_, a1_;
  std::vector<double> p0_, p1_;
  std::vector<double> val_;
  std::vector<std::int32_t> outputs_;
  std::int32_t n_inputs_ = 0;
};

namespace detail {
inline thread_local Tape* g_active = nullptr;
}

/// Scoped activation of a tape on the current thread. Nested activation of a
/// second tape on the same thread is a usage error.
class Recording {
 public:
  explicit Recording(Tape& t) {
    if (detail::g_active != nullptr)
      throw Error("a tape is already active on this thread");
    detail::g_active = &t;
  }
  ~Recording() { detail::g_active = nullptr; }
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

  static Tape* active() { return detail::g_active; }
};

/// Traced scalar: a value plus the tape slot it came from. id 0 means
/// constant (not on the tape).
struct Var {
  double v = 0.0;
  std::int32_t id = 0;

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit by design
  Var(double value, std::int32_t id) : v(value), id(id) {}
};

/// Register an input on the active tape.
inline Var input(double value) {
  Tape* t = Recording::active();
  if (!t) throw Error("input() requires an active Recording");
  return Var(value, t->add_input(value));
}

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.v; }

// Arithmetic. Constants fold; an operation with at least one traced operand
// records one primitive.

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = Recording::active();
  const double r = a.v + b.v;
  if (!t || (a.id == 0 && b.id == 0)) return Var(r);
  if (a.id && b.id) return Var(r, t->push(Op::Add, a.id, b.id, 1.0, 1.0, r));
  if (a.id) return Var(r, t->push(Op::AddC, a.id, 0, 1.0, b.v, r));
  return Var(r, t->push(Op::AddC, b.id, 0, 1.0, a.v, r));
}

inline Var operator-(const Var& a, const Var& b) {
  Tape* t = Recording::active();
  const double r = a.v - b.v;
  if (!t || (a.id == 0 && b.id == 0)) return Var(r);
  if (a.id && b.id) return Var(r, t->push(Op::Sub, a.id, b.id, 1.0, -1.0, r));
  if (a.id) return Var(r, t->push(Op::AddC, a.id, 0, 1.0, -b.v, r));
  return Var(r, t->push(Op::RSubC, b.id, 0, -1.0, a.v, r));
}

inline Var operator*(const Var& a, const Var& b) {
  Tape* t = Recording::active();
  const double r = a.v * b.v;
  if (!t || (a.id == 0 && b.id == 0)) return Var(r);
  if (a.id && b.id) return Var(r, t->push(Op::Mul, a.id, b.id, b.v, a.v, r));
  if (a.id) return Var(r, t->push(Op::MulC, a.id, 0, b.v, 0.0, r));
  return Var(r, t->push(Op::MulC, b.id, 0, a.v, 0.0, r));
}

inline Var operator/(const Var& a, const Var& b) {
  Tape* t = Recording::active();
  const double r = a.v / b.v;
  if (!t || (a.id == 0 && b.id == 0)) return Var(r);
  if (a.id && b.id)
    return Var(r, t->push(Op::Div, a.id, b.id, 1.0 / b.v, -r / b.v, r));
  if (a.id) return Var(r, t->push(Op::DivC, a.id, 0, 1.0 / b.v, b.v, r));
  return Var(r, t->push(Op::RDivC, b.id, 0, -r / b.v, a.v, r));
}

inline Var operator-(const Var& a) {
  Tape* t = Recording::active();
  const double r = -a.v;
  if (!t || a.id == 0) return Var(r);
  return Var(r, t->push(Op::Neg, a.id, 0, -1.0, 0.0, r));
}

inline Var operator+(const Var& a) { return a; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

// Control-flow comparisons read values only; branches taken during recording
// are frozen into the tape.
inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }

inline Var sqrt(const Var& a) {
  Tape* t = Recording::active();
  const double r = std::sqrt(a.v);
  if (!t || a.id == 0) return Var(r);
  return Var(r, t->push(Op::Sqrt, a.id, 0, 0.5 / r, 0.0, r));
}

inline Var exp(const Var& a) {
  Tape* t = Recording::active();
  const double r = std::exp(a.v);
  if (!t || a.id == 0) return Var(r);
  return Var(r, t->push(Op::Exp, a.id, 0, r, 0.0, r));
}

inline Var log(const Var& a) {
  Tape* t = Recording::active();
  const double r = std::log(a.v);
  if (!t || a.id == 0) return Var(r);
  return Var(r, t->push(Op::Log, a.id, 0, 1.0 / a.v, 0.0, r));
}

inline Var sin(const Var& a) {
  Tape* t = Recording::active();
  const double r = std::sin(a.v);
  if (!t || a.id == 0) return Var(r);
  return Var(r, t->push(Op::Sin, a.id, 0, std::cos(a.v), 0.0, r));
}

inline Var cos(const Var& a) {
  Tape* t = Recording::active();
  const double r = std::cos(a.v);
  if (!t || a.id == 0) return Var(r);
  return Var(r, t->push(Op::Cos, a.id, 0, -std::sin(a.v), 0.0, r));
}

inline Var pow(const Var& a, double c) {
  Tape* t = Recording::active();
  const double r = std::pow(a.v, c);
  if (!t || a.id == 0) return Var(r);
  return Var(r, t->push(Op::PowC, a.id, 0, c * std::pow(a.v, c - 1.0), c, r));
}

/// Smooth |a|: sqrt(a^2 + width^2). Differentiable everywhere; approaches
/// |a| for |a| >> width.
inline Var sabs(const Var& a, double width) {
  Tape* t = Recording::active();
  const double r = std::sqrt(a.v * a.v + width * width);
  if (!t || a.id == 0) return Var(r);
  return Var(r, t->push(Op::SAbs, a.id, 0, a.v / r, width, r));
}

/// Smooth min/max built from primitives; width controls the blend region.
inline Var smin(const Var& a, const Var& b, double width) {
  return (a + b - sabs(a - b, width)) * 0.5;
}
inline Var smax(const Var& a, const Var& b, double width) {
  return (a + b + sabs(a - b, width)) * 0.5;
}

/// Record f over `inputs` and return (output values, tape). f receives the
/// traced inputs and returns a vector of traced outputs.
template <class F>
std::pair<std::vector<double>, Tape> record(F&& f,
                                            std::span<const double> inputs) {
  Tape t;
  std::vector<double> out_values;
  {
    Recording rec(t);
    std::vector<Var> xs;
    xs.reserve(inputs.size());
    for (double v : inputs) xs.push_back(input(v));
    std::vector<Var> ys = f(xs);
    out_values.reserve(ys.size());
    for (const Var& y : ys) {
      // An output that is a plain constant still needs a slot to seed.
      std::int32_t id = y.id;
      if (id == 0) id = t.push(Op::AddC, 0, 0, 0.0, y.v, y.v);
      t.mark_output(id);
      out_values.push_back(y.v);
    }
  }
  return {std::move(out_values), std::move(t)};
}

}  // namespace mvi::tape
