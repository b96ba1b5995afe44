// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sci::diag {

/// Uniform sample of `cap` indices out of `n` without replacement, returned
/// in ascending order. Deterministic for a given seed on every platform
/// (raw mt19937 outputs, no library distributions). n <= cap returns 0..n-1.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t cap, std::uint32_t seed);

template <typename T>
std::vector<T> sample_records(const std::vector<T>& records, std::size_t cap,
                              std::uint32_t seed) {
  if (records.size() <= cap) return records;
  std::vector<T> out;
  out.reserve(cap);
  for (std::size_t index : sample_indices(records.size(), cap, seed)) {
    out.push_back(records[index]);
  }
  return out;
}

/// Joint 2D projection of report and reasoning point clouds sharing one PCA
/// basis, with explained-variance fractions for the two components.
struct ProjectionSet {
  std::string attack;
  std::string condition;
  std::vector<std::array<double, 2>> report_points;
  std::vector<std::array<double, 2>> reasoning_points;
  std::array<double, 2> explained_variance{0.0, 0.0};
};

/// Mean-centers the union of both clouds, eigendecomposes the covariance and
/// projects onto the top-2 components. Component signs are fixed by making
/// each component's largest-magnitude coordinate positive (first such index
/// on ties). Throws Error{DegenerateInput} when the union has zero variance,
/// Error{InvalidInput} on dimension mismatches or union size < 2.
ProjectionSet pca_joint_2d(const std::vector<std::vector<double>>& report_vectors,
                           const std::vector<std::vector<double>>& reasoning_vectors);

/// CSV with columns (attack, condition, kind, x, y); kind is "report" or
/// "reasoning". Row order: sets in input order, report points before
/// reasoning points, each in index order.
std::string projection_to_csv(const std::vector<ProjectionSet>& sets);

/// Atomic CSV export of projection_to_csv.
void export_projection(const std::vector<ProjectionSet>& sets,
                       const std::filesystem::path& path);

}  // namespace sci::diag
