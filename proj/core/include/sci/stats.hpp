// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace sci::stats {

struct PairedTestResult {
  std::size_t n = 0;
  double t = 0.0;    // signed
  double p = 1.0;    // two-sided
  double d_z = 0.0;  // mean(diff)/std(diff), signed; report |d_z| alongside t
};

/// Regularized incomplete beta function I_x(a, b), continued-fraction
/// evaluation, accurate to ~1e-12 for the parameter range used here.
double regularized_incomplete_beta(double a, double b, double x);

/// Two-sided tail probability of Student's t with df degrees of freedom:
/// p = I_{df/(df+t^2)}(df/2, 1/2).
double t_tail(double t, int df);

/// Paired t-test on diff = after - before with the sample (n-1) standard
/// deviation. Requires equal lengths, n >= 2 and non-constant differences.
PairedTestResult paired_t_test(std::span<const double> before, std::span<const double> after);

}  // namespace sci::stats
