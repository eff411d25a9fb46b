// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/params.hpp"

#include <cmath>
#include <random>

#include "kvpo/error.hpp"

namespace kvpo {

std::size_t ParamLayout::append(const std::string& name, std::size_t length) {
  if (length == 0) {
    throw ConfigError("parameter segment '" + name + "' has zero size");
  }
  if (find(name)) {
    throw ConfigError("duplicate parameter segment '" + name + "'");
  }
  const std::size_t offset = total_;
  segments_.push_back({name, offset, length});
  total_ += length;
  return offset;
}

const Segment& ParamLayout::at(const std::string& name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  throw ContractError("unknown parameter segment '" + name + "'");
}

std::optional<Segment> ParamLayout::find(const std::string& name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  return std::nullopt;
}

const Segment& ParamLayout::segment_of(std::size_t i) const {
  for (const auto& s : segments_) {
    if (i >= s.offset && i < s.offset + s.length) return s;
  }
  throw ContractError("index " + std::to_string(i) + " outside parameter layout");
}

std::span<const double> Params::segment(const std::string& name) const {
  const auto& s = layout.at(name);
  return std::span<const double>(values).subspan(s.offset, s.length);
}

std::span<double> Params::segment(const std::string& name) {
  const auto& s = layout.at(name);
  return std::span<double>(values).subspan(s.offset, s.length);
}

double GradVector::norm() const {
  double sq = 0.0;
  for (double g : values) sq += g * g;
  return std::sqrt(sq);
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.rows * s.cols;
  return n;
}

Params param_init(const NetworkSpec& spec, std::uint64_t seed) {
  Params p;
  for (const auto& s : spec.segments) {
    p.layout.append(s.name, s.rows * s.cols);
  }
  p.values.resize(p.layout.size());

  std::mt19937_64 rng(seed);
  for (const auto& s : spec.segments) {
    const auto& seg = p.layout.at(s.name);
    if (s.stddev == 0.0) continue;
    std::normal_distribution<double> dist(0.0, s.stddev);
    for (std::size_t i = 0; i < seg.length; ++i) {
      p.values[seg.offset + i] = dist(rng);
    }
  }
  return p;
}

void check_finite(std::span<const double> values, const ParamLayout& layout,
                  const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::string seg = "<unmapped>";
      if (i < layout.size()) seg = layout.segment_of(i).name;
      throw NumericalError("non-finite " + what + " in segment '" + seg + "' (index " +
                           std::to_string(i) + ")");
    }
  }
}

}  // namespace kvpo
