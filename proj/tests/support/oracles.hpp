#pragma once

/**
 * Independent reference computations for the test suites.
 *
 * Nothing here reuses library code paths: softmax and least squares run in
 * 50-digit arithmetic on the raw (unconditioned) basis, and the statistical
 * tests come straight from Boost.Math distributions.
 */

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Real = boost::multiprecision::cpp_bin_float_50;

inline std::vector<double> softmax(std::span<const double> logits, double temp) {
  std::vector<Real> e;
  Real z = 0;
  for (double l : logits) {
    e.push_back(boost::multiprecision::exp(Real(l) / Real(temp)));
    z += e.back();
  }
  std::vector<double> out;
  for (const auto& v : e) out.push_back(static_cast<double>(v / z));
  return out;
}

/// Least-squares coefficients c0..c(degree) on the raw basis by Gaussian elimination in 50 digits.
inline std::vector<double> least_squares(std::span<const std::pair<double, double>> xy, int degree) {
  const std::size_t n = static_cast<std::size_t>(degree) + 1;
  std::vector<std::vector<Real>> a(n, std::vector<Real>(n + 1, Real(0)));
  for (const auto& [x, y] : xy) {
    std::vector<Real> pw(2 * n, Real(1));
    for (std::size_t i = 1; i < pw.size(); ++i) pw[i] = pw[i - 1] * Real(x);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) a[i][j] += pw[i + j];
      a[i][n] += pw[i] * Real(y);
    }
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (abs(a[r][col]) > abs(a[piv][col])) piv = r;
    }
    std::swap(a[col], a[piv]);
    if (a[col][col] == 0) throw std::runtime_error("singular oracle system");
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const Real f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= n; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<double>(a[i][n] / a[i][i]));
  return out;
}

/// Upper-tail p-value of Pearson's chi-squared statistic.
inline double chi_squared_p(std::span<const double> observed, std::span<const double> expected_prob, double n) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = expected_prob[i] * n;
    stat += (observed[i] - e) * (observed[i] - e) / e;
  }
  const boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

/// One-sided sign test: P(X >= successes) for X ~ Binomial(trials, 1/2).
inline double sign_test_p(std::size_t successes, std::size_t trials) {
  if (successes == 0) return 1.0;
  const boost::math::binomial dist(static_cast<double>(trials), 0.5);
  return boost::math::cdf(boost::math::complement(dist, static_cast<double>(successes - 1)));
}

} // namespace oracle
