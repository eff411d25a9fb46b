// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/autodiff.hpp"

#include <algorithm>
#include <limits>

namespace kvpo::ad {

Var Tape::leaf(double v) {
  const auto id = static_cast<std::uint32_t>(values_.size());
  values_.push_back(v);
  edge_begin_.push_back(static_cast<std::uint32_t>(parents_.size()));
  return Var(v, this, id);
}

std::vector<Var> Tape::leaves(std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(leaf(v));
  return out;
}

Var Tape::finish(double value) {
  if (parents_.size() == edge_begin_.back()) return Var(value);
  const auto id = static_cast<std::uint32_t>(values_.size());
  values_.push_back(value);
  edge_begin_.push_back(static_cast<std::uint32_t>(parents_.size()));
  return Var(value, this, id);
}

std::vector<double> Tape::backward(const Var& out) const {
  std::vector<double> adj(values_.size(), 0.0);
  if (out.tape_ != this) throw ContractError("backward() on a value from another tape");
  adj[out.id_] = 1.0;
  for (std::size_t n = values_.size(); n-- > 0;) {
    const double a = adj[n];
    if (a == 0.0) continue;
    for (std::uint32_t e = edge_begin_[n]; e < edge_begin_[n + 1]; ++e) {
      adj[parents_[e]] += a * partials_[e];
    }
  }
  return adj;
}

namespace {

Var binary(const Var& a, double da, const Var& b, double db, double value) {
  Tape* t = common_tape(a, b);
  if (t == nullptr) return Var(value);
  t->edge(a, da);
  t->edge(b, db);
  return t->finish(value);
}

Var unary(const Var& x, double dx, double value) {
  if (x.tape() == nullptr) return Var(value);
  x.tape()->edge(x, dx);
  return x.tape()->finish(value);
}

Tape* first_tape(std::span<const Var> a) {
  for (const auto& x : a) {
    if (x.tape() != nullptr) return x.tape();
  }
  return nullptr;
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  return binary(a, 1.0, b, 1.0, a.value() + b.value());
}

Var operator-(const Var& a, const Var& b) {
  return binary(a, 1.0, b, -1.0, a.value() - b.value());
}

Var operator*(const Var& a, const Var& b) {
  return binary(a, b.value(), b, a.value(), a.value() * b.value());
}

Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.value();
  const double q = a.value() / b.value();
  return binary(a, inv, b, -q * inv, q);
}

Var operator-(const Var& a) { return unary(a, -1.0, -a.value()); }

Var tanh(const Var& x) {
  const double y = std::tanh(x.value());
  return unary(x, 1.0 - y * y, y);
}

Var exp(const Var& x) {
  const double y = std::exp(x.value());
  return unary(x, y, y);
}

Var expm1(const Var& x) { return unary(x, std::exp(x.value()), std::expm1(x.value())); }

Var log(const Var& x) { return unary(x, 1.0 / x.value(), std::log(x.value())); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Var dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw ContractError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].value() * b[i].value();
  Tape* t = first_tape(a);
  if (t == nullptr) t = first_tape(b);
  if (t == nullptr) return Var(s);
  for (std::size_t i = 0; i < a.size(); ++i) {
    t->edge(a[i], b[i].value());
    t->edge(b[i], a[i].value());
  }
  return t->finish(s);
}

double sum(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x;
  return s;
}

Var sum(std::span<const Var> a) {
  double s = 0.0;
  for (const auto& x : a) s += x.value();
  Tape* t = first_tape(a);
  if (t == nullptr) return Var(s);
  for (const auto& x : a) t->edge(x, 1.0);
  return t->finish(s);
}

double log_sum_exp(std::span<const double> a) {
  if (a.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(a.begin(), a.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : a) s += std::exp(x - m);
  return m + std::log(s);
}

Var log_sum_exp(std::span<const Var> a) {
  const std::vector<double> v = values_of(a);
  const double lse = log_sum_exp(std::span<const double>(v));
  Tape* t = first_tape(a);
  if (t == nullptr || !std::isfinite(lse)) return Var(lse);
  for (std::size_t i = 0; i < a.size(); ++i) t->edge(a[i], std::exp(v[i] - lse));
  return t->finish(lse);
}

}  // namespace kvpo::ad

namespace kvpo {

double relative_l2_error(std::span<const double> a, std::span<const double> b,
                         double floor) {
  if (a.size() != b.size()) throw ContractError("relative_l2_error: length mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

}  // namespace kvpo
