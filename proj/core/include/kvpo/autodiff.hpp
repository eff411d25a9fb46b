// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode differentiation over a flat Wengert tape.
//
// Model code is written once as templates over a scalar type S and
// instantiated with S = double for plain evaluation and S = ad::Var for
// taped evaluation. Every primitive computes its value with the same
// floating-point operations in the same order for both instantiations, so a
// taped forward pass is bit-identical to the plain one.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "kvpo/error.hpp"
#include "kvpo/params.hpp"

namespace kvpo::ad {

class Tape;

/// Scalar that records its provenance on a Tape. A Var without a tape is a
/// constant and never produces tape nodes.
class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: implicit constants are the point

  double value() const { return value_; }
  bool is_constant() const { return tape_ == nullptr; }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }

 private:
  friend class Tape;
  Var(double v, Tape* t, std::uint32_t id) : value_(v), tape_(t), id_(id) {}

  double value_ = 0.0;
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  Tape() { edge_begin_.push_back(0); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(double v);
  std::vector<Var> leaves(std::span<const double> values);

  /// Node construction: push edges for tape-bound parents, then finish.
  /// finish() returns a constant when no edge was pushed.
  void edge(const Var& parent, double partial) {
    if (parent.tape_ == nullptr) return;
    parents_.push_back(parent.id_);
    partials_.push_back(partial);
  }
  Var finish(double value);

  /// Adjoints of every node after seeding d(out)/d(out) = 1.
  std::vector<double> backward(const Var& out) const;

  std::size_t node_count() const { return values_.size(); }
  std::size_t edge_count() const { return parents_.size(); }

 private:
  std::vector<double> values_;
  std::vector<std::uint32_t> edge_begin_;
  std::vector<std::uint32_t> parents_;
  std::vector<double> partials_;
};

inline Tape* common_tape(const Var& a, const Var& b) {
  return a.tape() != nullptr ? a.tape() : b.tape();
}

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }

Var tanh(const Var& x);
Var exp(const Var& x);
Var expm1(const Var& x);
Var log(const Var& x);

// n-ary primitives; plain overloads below share the value arithmetic.
Var dot(std::span<const Var> a, std::span<const Var> b);
Var sum(std::span<const Var> a);
Var log_sum_exp(std::span<const Var> a);

double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> a);
double log_sum_exp(std::span<const double> a);

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.value(); }

template <class S>
inline constexpr bool is_taped_v = std::is_same_v<S, Var>;

template <class S>
std::vector<double> values_of(std::span<const S> xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(value(x));
  return out;
}

template <class S>
std::vector<S> lift(std::span<const double> xs) {
  return std::vector<S>(xs.begin(), xs.end());
}

}  // namespace kvpo::ad

namespace kvpo {

/// Value and exact reverse-mode gradient of a scalar objective.
struct ValueAndGrad {
  double value = 0.0;
  GradVector grad;
};

/// Reverse-mode gradient of `f` at `params`. `f` must be callable as
/// `ad::Var f(std::span<const ad::Var> theta)`. Throws NumericalError when
/// the value is non-finite or a gradient entry is non-finite; the message
/// names the offending parameter segment.
template <class F>
ValueAndGrad grad(const Params& params, F&& f) {
  check_finite(params.values, params.layout, "parameter");
  ad::Tape tape;
  const std::vector<ad::Var> theta = tape.leaves(params.values);
  const ad::Var out = f(std::span<const ad::Var>(theta));
  if (!std::isfinite(out.value())) {
    throw NumericalError("non-finite objective value");
  }
  ValueAndGrad r;
  r.value = out.value();
  r.grad.values.assign(params.size(), 0.0);
  if (!out.is_constant()) {
    const std::vector<double> adj = tape.backward(out);
    for (std::size_t i = 0; i < theta.size(); ++i) r.grad.values[i] = adj[theta[i].id()];
  }
  check_finite(r.grad.values, params.layout, "gradient");
  return r;
}

/// Central finite differences, entry i = (f(θ + h e_i) - f(θ - h e_i)) / 2h.
/// `f` must be callable as `double f(std::span<const double> theta)`.
template <class F>
GradVector fd_grad(const Params& params, F&& f, double h = 1e-5) {
  if (!(h > 0.0)) throw DomainError("finite-difference step must be positive");
  std::vector<double> theta = params.values;
  GradVector g;
  g.values.resize(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double fp = f(std::span<const double>(theta));
    theta[i] = saved - h;
    const double fm = f(std::span<const double>(theta));
    theta[i] = saved;
    g.values[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||b||, floor).
double relative_l2_error(std::span<const double> a, std::span<const double> b,
                         double floor = 1e-12);

}  // namespace kvpo
