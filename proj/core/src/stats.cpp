// SPDX-License-Identifier: Apache-2.0
#include "sci/stats.hpp"

#include <cmath>

#include "sci/core.hpp"

namespace sci::stats {
namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double incomplete_beta_cf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;

  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;

  for (int m = 1; m <= 500; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;

    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0) || std::isnan(x)) {
    throw Error(ErrorCode::InvalidInput, "regularized_incomplete_beta: bad parameters");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;

  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * incomplete_beta_cf(a, b, x) / a;
  }
  return 1.0 - std::exp(log_front) * incomplete_beta_cf(b, a, 1.0 - x) / b;
}

double t_tail(double t, int df) {
  if (df < 1) {
    throw Error(ErrorCode::InvalidInput, "t_tail: df must be >= 1");
  }
  if (std::isinf(t)) return 0.0;
  const double v = static_cast<double>(df);
  const double x = v / (v + t * t);
  return regularized_incomplete_beta(v / 2.0, 0.5, x);
}

PairedTestResult paired_t_test(std::span<const double> before, std::span<const double> after) {
  if (before.size() != after.size()) {
    throw Error(ErrorCode::InvalidInput, "paired_t_test: length mismatch");
  }
  const std::size_t n = before.size();
  if (n < 2) {
    throw Error(ErrorCode::InvalidInput, "paired_t_test: need at least 2 pairs");
  }

  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += after[i] - before[i];
  mean /= static_cast<double>(n);

  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dev = (after[i] - before[i]) - mean;
    ss += dev * dev;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    throw Error(ErrorCode::DegenerateSample, "paired_t_test: differences are constant");
  }

  PairedTestResult result;
  result.n = n;
  result.d_z = mean / sd;
  result.t = result.d_z * std::sqrt(static_cast<double>(n));
  result.p = t_tail(result.t, static_cast<int>(n) - 1);
  return result;
}

}  // namespace sci::stats
