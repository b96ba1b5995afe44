// SPDX-License-Identifier: Apache-2.0
#include "sci/diag.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "sci/core.hpp"

namespace sci::diag {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t cap, std::uint32_t seed) {
  if (cap < 1) {
    throw Error(ErrorCode::InvalidInput, "sample_indices: cap must be >= 1");
  }
  std::vector<std::size_t> indices(n);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  if (n <= cap) return indices;

  // Partial Fisher-Yates over raw generator words. std::uniform_int_distribution
  // is implementation-defined, so it stays out of anything seed-reproducible.
  std::mt19937 gen(seed);
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(gen()) % (n - i);
    std::swap(indices[i], indices[j]);
  }
  indices.resize(cap);
  std::sort(indices.begin(), indices.end());
  return indices;
}

ProjectionSet pca_joint_2d(const std::vector<std::vector<double>>& report_vectors,
                           const std::vector<std::vector<double>>& reasoning_vectors) {
  const std::size_t n_report = report_vectors.size();
  const std::size_t n_total = n_report + reasoning_vectors.size();
  if (n_total < 2) {
    throw Error(ErrorCode::InvalidInput, "pca_joint_2d: need at least 2 vectors");
  }
  const std::size_t dim =
      n_report > 0 ? report_vectors.front().size() : reasoning_vectors.front().size();
  if (dim < 2) {
    throw Error(ErrorCode::InvalidInput, "pca_joint_2d: dimension must be >= 2");
  }

  Eigen::MatrixXd data(static_cast<Eigen::Index>(n_total), static_cast<Eigen::Index>(dim));
  Eigen::Index row = 0;
  for (const auto* cloud : {&report_vectors, &reasoning_vectors}) {
    for (const auto& v : *cloud) {
      if (v.size() != dim) {
        throw Error(ErrorCode::InvalidInput, "pca_joint_2d: dimension mismatch");
      }
      for (std::size_t c = 0; c < dim; ++c) data(row, static_cast<Eigen::Index>(c)) = v[c];
      ++row;
    }
  }

  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;

  const Eigen::MatrixXd covariance =
      (data.transpose() * data) / static_cast<double>(n_total);
  const double total_variance = covariance.trace();
  if (!(total_variance > 0.0)) {
    throw Error(ErrorCode::DegenerateInput, "pca_joint_2d: zero total variance");
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::DegenerateInput, "pca_joint_2d: eigendecomposition failed");
  }

  // Eigenvalues come back ascending; take the top two and fix signs.
  const Eigen::Index last = covariance.rows() - 1;
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(dim), 2);
  std::array<double, 2> explained{};
  for (int component = 0; component < 2; ++component) {
    Eigen::VectorXd v = solver.eigenvectors().col(last - component);
    Eigen::Index arg_max = 0;
    v.cwiseAbs().maxCoeff(&arg_max);
    if (v(arg_max) < 0.0) v = -v;
    basis.col(component) = v;
    const double eigenvalue = std::max(0.0, solver.eigenvalues()(last - component));
    explained[static_cast<std::size_t>(component)] = eigenvalue / total_variance;
  }

  const Eigen::MatrixXd projected = data * basis;

  ProjectionSet out;
  out.explained_variance = explained;
  out.report_points.reserve(n_report);
  out.reasoning_points.reserve(reasoning_vectors.size());
  for (Eigen::Index r = 0; r < projected.rows(); ++r) {
    const std::array<double, 2> point{projected(r, 0), projected(r, 1)};
    if (static_cast<std::size_t>(r) < n_report) {
      out.report_points.push_back(point);
    } else {
      out.reasoning_points.push_back(point);
    }
  }
  return out;
}

namespace {

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string format_coord(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", value);
  return buf;
}

}  // namespace

std::string projection_to_csv(const std::vector<ProjectionSet>& sets) {
  std::ostringstream out;
  out << "attack,condition,kind,x,y\n";
  for (const auto& set : sets) {
    for (const auto* points : {&set.report_points, &set.reasoning_points}) {
      const char* kind = points == &set.report_points ? "report" : "reasoning";
      for (const auto& p : *points) {
        out << csv_escape(set.attack) << ',' << csv_escape(set.condition) << ',' << kind << ','
            << format_coord(p[0]) << ',' << format_coord(p[1]) << '\n';
      }
    }
  }
  return out.str();
}

void export_projection(const std::vector<ProjectionSet>& sets,
                       const std::filesystem::path& path) {
  if (sets.empty()) {
    throw Error(ErrorCode::InvalidInput, "export_projection: no projection sets");
  }
  write_file_atomic(path, projection_to_csv(sets));
}

}  // namespace sci::diag
