// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "sci/stats.hpp"
#include "support/test_util.hpp"

using namespace sci;
using sci::test::code_of;

namespace {

double t_pdf(double x, double df) {
  const double v = df;
  return std::exp(std::lgamma((v + 1.0) / 2.0) - std::lgamma(v / 2.0)) /
         std::sqrt(v * M_PI) * std::pow(1.0 + x * x / v, -(v + 1.0) / 2.0);
}

// Independent oracle: two-sided tail by Simpson integration of the t density
// over [-|t|, |t|] with a fixed large panel count.
double t_tail_simpson(double t, int df, int panels = 200000) {
  const double a = -std::fabs(t);
  const double b = std::fabs(t);
  if (a == b) return 1.0;
  const double h = (b - a) / panels;
  double sum = t_pdf(a, df) + t_pdf(b, df);
  for (int i = 1; i < panels; ++i) {
    sum += t_pdf(a + i * h, df) * ((i % 2 == 1) ? 4.0 : 2.0);
  }
  const double inner = sum * h / 3.0;
  return 1.0 - inner;
}

}  // namespace

TEST_CASE("t_tail agrees with the Simpson oracle to 1e-8") {
  const double ts[] = {0.5, 1.0, 2.0, 2.776, 4.24264068711928, 6.0};
  const int dfs[] = {1, 2, 4, 9, 30};
  for (double t : ts) {
    for (int df : dfs) {
      const double expected = t_tail_simpson(t, df);
      CHECK(std::fabs(stats::t_tail(t, df) - expected) < 1e-8);
    }
  }
}

TEST_CASE("t_tail basics") {
  CHECK(stats::t_tail(0.0, 1) == doctest::Approx(1.0));
  CHECK(stats::t_tail(0.0, 17) == doctest::Approx(1.0));
  // 95% critical value for df=4.
  CHECK(std::fabs(stats::t_tail(2.776, 4) - 0.0500) < 5e-4);
  // Monotone decreasing in |t|.
  double prev = 1.0;
  for (double t = 0.0; t < 30.0; t += 0.25) {
    const double p = stats::t_tail(t, 4);
    CHECK(p <= prev + 1e-15);
    prev = p;
  }
  CHECK(stats::t_tail(1e9, 4) < 1e-12);
  CHECK(code_of([] { stats::t_tail(1.0, 0); }) == ErrorCode::InvalidInput);
}

TEST_CASE("regularized incomplete beta sanity") {
  CHECK(stats::regularized_incomplete_beta(1.0, 1.0, 0.25) == doctest::Approx(0.25));
  CHECK(stats::regularized_incomplete_beta(2.0, 1.0, 0.5) == doctest::Approx(0.25));
  CHECK(stats::regularized_incomplete_beta(0.5, 0.5, 0.5) == doctest::Approx(0.5));
  CHECK(stats::regularized_incomplete_beta(3.0, 2.0, 0.0) == 0.0);
  CHECK(stats::regularized_incomplete_beta(3.0, 2.0, 1.0) == 1.0);
}

TEST_CASE("paired t-test reproduces the frozen fixture") {
  const std::vector<double> before(5, 0.0);
  const std::vector<double> after{1.0, 2.0, 3.0, 4.0, 5.0};
  const auto result = stats::paired_t_test(before, after);
  CHECK(result.n == 5);
  CHECK(std::fabs(result.t - 4.24264068711928) < 1e-5);
  CHECK(std::fabs(result.d_z - 1.89736659610103) < 1e-5);
  CHECK(std::fabs(result.p - 0.01324) < 1e-4);
  // df = n-1 = 4 drives the p-value.
  CHECK(result.p == doctest::Approx(stats::t_tail(result.t, 4)));
}

TEST_CASE("paired t-test rejects degenerate input") {
  const std::vector<double> a{1.0, 2.0, 3.0};
  const std::vector<double> b{1.0, 2.0};
  const std::vector<double> single_a{1.0};
  const std::vector<double> single_b{2.0};
  CHECK(code_of([&] { stats::paired_t_test(a, b); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { stats::paired_t_test(single_a, single_b); }) == ErrorCode::InvalidInput);
  // before == after (nonconstant): constant zero differences.
  CHECK(code_of([&] { stats::paired_t_test(a, a); }) == ErrorCode::DegenerateSample);
}

TEST_CASE("symmetric differences give t=0, p=1, d_z=0") {
  const std::vector<double> before{0.0, 0.0};
  const std::vector<double> after{1.0, -1.0};
  const auto result = stats::paired_t_test(before, after);
  CHECK(result.t == doctest::Approx(0.0));
  CHECK(result.p == doctest::Approx(1.0));
  CHECK(result.d_z == doctest::Approx(0.0));
}

TEST_CASE("swap and scale invariance over random fixtures") {
  std::mt19937 gen(123);
  auto uniform = [&gen](double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(gen()) /
                             static_cast<double>(std::mt19937::max()));
  };
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t n = 2 + gen() % 9;
    std::vector<double> before(n);
    std::vector<double> after(n);
    for (std::size_t i = 0; i < n; ++i) {
      before[i] = uniform(-5.0, 5.0);
      after[i] = uniform(-5.0, 5.0);
    }
    stats::PairedTestResult base;
    try {
      base = stats::paired_t_test(before, after);
    } catch (const Error&) {
      continue;  // degenerate random draw
    }

    // Swapping negates t and d_z, p unchanged.
    const auto swapped = stats::paired_t_test(after, before);
    CHECK(swapped.t == doctest::Approx(-base.t).epsilon(1e-9));
    CHECK(swapped.d_z == doctest::Approx(-base.d_z).epsilon(1e-9));
    CHECK(swapped.p == doctest::Approx(base.p).epsilon(1e-9));

    // Scaling all diffs by c > 0 leaves everything unchanged: scale both
    // series around zero.
    const double c = uniform(0.1, 7.0);
    std::vector<double> before_scaled(n);
    std::vector<double> after_scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
      before_scaled[i] = c * before[i];
      after_scaled[i] = c * after[i];
    }
    const auto scaled = stats::paired_t_test(before_scaled, after_scaled);
    CHECK(scaled.t == doctest::Approx(base.t).epsilon(1e-9));
    CHECK(scaled.p == doctest::Approx(base.p).epsilon(1e-9));
    CHECK(scaled.d_z == doctest::Approx(base.d_z).epsilon(1e-9));
  }
}

TEST_CASE("five-family fixtures use df=4") {
  // Shape of the paper-style comparison: one value per attack family.
  const std::vector<double> before{0.87, 0.75, 0.97, 0.98, 0.97};
  const std::vector<double> after{0.21, 0.14, 0.58, 0.65, 0.69};
  const auto result = stats::paired_t_test(before, after);
  CHECK(result.n == 5);
  CHECK(result.p == doctest::Approx(stats::t_tail(result.t, 4)));
  CHECK(result.t < 0.0);       // defended values dropped
  CHECK(result.d_z < 0.0);     // signed effect follows t
}
