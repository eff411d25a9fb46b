// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kvpo {

/// A named contiguous slice of the flat parameter vector.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

/// Ordered segment map. Segments are appended back to back, so they are
/// disjoint and cover [0, size()) by construction.
class ParamLayout {
 public:
  ParamLayout() = default;

  /// Appends a segment and returns its offset. Throws ConfigError on a
  /// zero-length or duplicate segment.
  std::size_t append(const std::string& name, std::size_t length);

  std::size_t size() const { return total_; }
  const std::vector<Segment>& segments() const { return segments_; }

  const Segment& at(const std::string& name) const;
  std::optional<Segment> find(const std::string& name) const;

  /// Segment containing flat index `i`.
  const Segment& segment_of(std::size_t i) const;

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

/// Flat real parameter vector plus its layout.
struct Params {
  std::vector<double> values;
  ParamLayout layout;

  std::size_t size() const { return values.size(); }
  std::span<const double> segment(const std::string& name) const;
  std::span<double> segment(const std::string& name);

  bool operator==(const Params&) const = default;
};

/// Gradient with the same layout as the Params it differentiates.
struct GradVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double norm() const;
};

/// One segment of a network-shape description. Entries are drawn from
/// N(0, stddev^2); stddev == 0 yields a zero-initialized segment.
struct SegmentSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 1;
  double stddev = 0.0;
};

struct NetworkSpec {
  std::vector<SegmentSpec> segments;

  std::size_t parameter_count() const;
};

/// Deterministic initialization: one mt19937_64 stream seeded with `seed`,
/// consumed segment by segment in declaration order.
Params param_init(const NetworkSpec& spec, std::uint64_t seed);

/// Throws NumericalError naming the first segment holding a non-finite entry.
void check_finite(std::span<const double> values, const ParamLayout& layout,
                  const std::string& what);

}  // namespace kvpo
