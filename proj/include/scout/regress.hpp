#pragma once

/**
 * Polynomial model of normalized probability as a function of auxiliary
 * temperature.
 *
 * fit_poly solves the least-squares normal equations in a conditioned basis
 * (temperatures mapped affinely onto [-1, 1]) and returns coefficients in the
 * raw temperature basis: p(t) = c0 + c1 t + c2 t^2 + c3 t^3.
 *
 * The response is either the normalized probability itself or its log
 * (FitScale::LogProbability); a log-scale fit predicts exp(p(t)).
 *
 * invert picks the temperature whose prediction is closest to a requested
 * probability, considering every real root of p(t) = target inside the
 * bounds plus both bounds; ties go to the lowest temperature.
 */

#include "error.hpp"
#include "prob.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace scout {

struct FitPoint {
  double aux_temp = 0.0;
  double norm_prob = 0.0;
};

using FitDataset = std::vector<FitPoint>;

enum class FitScale { Probability, LogProbability };

struct PolyFit {
  std::array<double, 4> coefficients{};  // c0..c3, raw temperature basis
  int degree = 0;
  double temp_min = 0.0;
  double temp_max = 0.0;
  FitScale scale = FitScale::Probability;
};

struct Prediction {
  double value = 0.0;
  bool temp_clamped = false;   // temperature outside (0, temp_max]
  bool value_clamped = false;  // raw polynomial outside [0, 1]
};

namespace detail {

// Solves the n x n system in place with partial pivoting.
template <std::size_t N>
std::array<double, N> solve_dense(std::array<std::array<double, N>, N> a, std::array<double, N> b,
                                  std::size_t n) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (a[pivot][col] == 0.0) {
      throw Error(ErrorKind::DegenerateData, "singular normal equations");
    }
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::array<double, N> x{};
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

inline std::size_t distinct_temps(const FitDataset& data) {
  std::vector<double> temps;
  temps.reserve(data.size());
  for (const auto& p : data) temps.push_back(p.aux_temp);
  std::sort(temps.begin(), temps.end());
  return static_cast<std::size_t>(std::unique(temps.begin(), temps.end()) - temps.begin());
}

} // namespace detail

/// The quantity the polynomial models for a given probability.
inline double response(FitScale scale, double prob) {
  return scale == FitScale::LogProbability ? detail::safe_log(prob) : prob;
}

/// Raw polynomial value (Horner), no clamping.
inline double evaluate(const PolyFit& fit, double t) {
  const auto& c = fit.coefficients;
  return ((c[3] * t + c[2]) * t + c[1]) * t + c[0];
}

/**
 * Least-squares polynomial of the requested degree (at most 3). With fewer
 * distinct temperatures than degree + 1 the degree drops to
 * distinct - 1; fewer than two distinct temperatures is degenerate.
 *
 * The domain defaults to the data's temperature range.
 */
inline PolyFit fit_poly(const FitDataset& data, int degree = 3,
                        std::optional<std::pair<double, double>> domain = std::nullopt,
                        FitScale response_scale = FitScale::Probability) {
  if (degree < 0 || degree > 3) {
    throw Error(ErrorKind::InvalidParameter, "polynomial degree must be in [0, 3]");
  }
  for (const auto& p : data) {
    if (!std::isfinite(p.aux_temp) || !std::isfinite(p.norm_prob)) {
      throw Error(ErrorKind::InvalidInput, "non-finite fit point");
    }
  }
  const std::size_t distinct = detail::distinct_temps(data);
  if (distinct < 2) {
    throw Error(ErrorKind::DegenerateData, "need at least two distinct auxiliary temperatures");
  }
  const int m = std::min<int>(degree, static_cast<int>(distinct) - 1);
  const std::size_t n = static_cast<std::size_t>(m) + 1;

  auto [min_it, max_it] = std::minmax_element(data.begin(), data.end(), [](const FitPoint& a, const FitPoint& b) {
    return a.aux_temp < b.aux_temp;
  });
  const double lo = min_it->aux_temp;
  const double hi = max_it->aux_temp;
  // z = scale * t + shift maps [lo, hi] onto [-1, 1]
  const double scale = 2.0 / (hi - lo);
  const double shift = -1.0 - scale * lo;

  std::array<std::array<double, 4>, 4> ata{};
  std::array<double, 4> aty{};
  for (const auto& p : data) {
    const double z = scale * p.aux_temp + shift;
    std::array<double, 4> pow{1.0, z, z * z, z * z * z};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) ata[i][j] += pow[i] * pow[j];
      aty[i] += pow[i] * response(response_scale, p.norm_prob);
    }
  }
  const auto d = detail::solve_dense<4>(ata, aty, n);

  // Expand sum_j d_j (scale t + shift)^j into the raw basis.
  PolyFit fit;
  constexpr int binom[4][4] = {{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0}, {1, 3, 3, 1}};
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i <= j; ++i) {
      fit.coefficients[i] += d[j] * binom[j][i] * std::pow(scale, static_cast<double>(i)) *
                             std::pow(shift, static_cast<double>(j - i));
    }
  }
  fit.degree = m;
  fit.scale = response_scale;
  if (domain) {
    fit.temp_min = domain->first;
    fit.temp_max = domain->second;
  } else {
    fit.temp_min = lo;
    fit.temp_max = hi;
  }
  return fit;
}

/// Residual sum of squares on the fit's own scale.
inline double residual_sum_squares(const PolyFit& fit, const FitDataset& data) {
  double rss = 0.0;
  for (const auto& p : data) {
    const double r = evaluate(fit, p.aux_temp) - response(fit.scale, p.norm_prob);
    rss += r * r;
  }
  return rss;
}

/// Prediction (exp'd for log-scale fits) clamped to [0, 1]; temperatures outside (0, temp_max] are clamped first.
inline Prediction predict_checked(const PolyFit& fit, double aux_temp) {
  Prediction out;
  double t = aux_temp;
  if (!(t > 0.0)) {
    t = fit.temp_min > 0.0 ? fit.temp_min : std::numeric_limits<double>::min();
    out.temp_clamped = true;
  } else if (t > fit.temp_max) {
    t = fit.temp_max;
    out.temp_clamped = true;
  }
  double raw = evaluate(fit, t);
  if (fit.scale == FitScale::LogProbability) raw = std::exp(raw);
  out.value = std::clamp(raw, 0.0, 1.0);
  out.value_clamped = out.value != raw;
  return out;
}

inline double predict(const PolyFit& fit, double aux_temp) { return predict_checked(fit, aux_temp).value; }

// ============================================================================
// Root finding
// ============================================================================

namespace roots {

/// Real roots of a3 x^3 + a2 x^2 + a1 x + a0 (a3 != 0) by the depressed-cubic method.
inline std::vector<double> cubic_closed_form(double a3, double a2, double a1, double a0) {
  const double b = a2 / a3;
  const double c = a1 / a3;
  const double d = a0 / a3;
  // x = y - b/3  =>  y^3 + p y + q = 0
  const double p = c - b * b / 3.0;
  const double q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
  const double disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);

  std::vector<double> ys;
  if (disc > 0.0) {
    const double s = std::sqrt(disc);
    ys.push_back(std::cbrt(-q / 2.0 + s) + std::cbrt(-q / 2.0 - s));
  } else if (p == 0.0) {
    ys.push_back(0.0);
  } else {
    const double r = 2.0 * std::sqrt(-p / 3.0);
    const double arg = std::clamp(3.0 * q / (2.0 * p) * std::sqrt(-3.0 / p), -1.0, 1.0);
    const double phi = std::acos(arg) / 3.0;
    for (int k = 0; k < 3; ++k) {
      ys.push_back(r * std::cos(phi - 2.0 * std::numbers::pi * k / 3.0));
    }
  }

  std::vector<double> xs;
  for (double y : ys) {
    double x = y - b / 3.0;
    // Newton polish on the original polynomial.
    for (int it = 0; it < 3; ++it) {
      const double f = ((a3 * x + a2) * x + a1) * x + a0;
      const double df = (3.0 * a3 * x + 2.0 * a2) * x + a1;
      if (df == 0.0) break;
      const double next = x - f / df;
      if (!std::isfinite(next)) break;
      x = next;
    }
    xs.push_back(x);
  }
  std::sort(xs.begin(), xs.end());
  return xs;
}

/// Real roots of a2 x^2 + a1 x + a0, degree-aware.
inline std::vector<double> quadratic(double a2, double a1, double a0) {
  if (a2 == 0.0) {
    if (a1 == 0.0) return {};
    return {-a0 / a1};
  }
  const double disc = a1 * a1 - 4.0 * a2 * a0;
  if (disc < 0.0) return {};
  const double s = std::sqrt(disc);
  const double q = -0.5 * (a1 + std::copysign(s, a1));
  std::vector<double> out;
  if (q != 0.0) {
    out = {q / a2, a0 / q};
  } else {
    out = {0.0};
  }
  std::sort(out.begin(), out.end());
  return out;
}

/**
 * Roots of the cubic inside [lo, hi] by splitting at critical points into
 * monotone pieces and bisecting every sign change.
 */
inline std::vector<double> bisection(const std::array<double, 4>& c, double lo, double hi) {
  auto f = [&](double x) { return ((c[3] * x + c[2]) * x + c[1]) * x + c[0]; };
  std::vector<double> cuts{lo};
  for (double x : quadratic(3.0 * c[3], 2.0 * c[2], c[1])) {
    if (x > lo && x < hi) cuts.push_back(x);
  }
  cuts.push_back(hi);

  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double a = cuts[i];
    double b = cuts[i + 1];
    double fa = f(a);
    const double fb = f(b);
    if (fa == 0.0) {
      out.push_back(a);
      continue;
    }
    if (fb == 0.0) {
      out.push_back(b);
      continue;
    }
    if ((fa < 0.0) == (fb < 0.0)) continue;
    for (int it = 0; it < 200 && b - a > 0.0; ++it) {
      const double mid = 0.5 * (a + b);
      if (mid <= a || mid >= b) break;
      const double fm = f(mid);
      if (fm == 0.0) {
        a = b = mid;
        break;
      }
      if ((fm < 0.0) == (fa < 0.0)) {
        a = mid;
        fa = fm;
      } else {
        b = mid;
      }
    }
    out.push_back(0.5 * (a + b));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline bool near_degenerate_cubic(const std::array<double, 4>& c) {
  const double scale = std::max({1.0, std::abs(c[0]), std::abs(c[1]), std::abs(c[2])});
  return std::abs(c[3]) < 1e-12 * scale;
}

/// Real roots of c0 + c1 x + c2 x^2 + c3 x^3 inside [lo, hi].
inline std::vector<double> in_interval(const std::array<double, 4>& c, double lo, double hi) {
  if (near_degenerate_cubic(c)) {
    return bisection(c, lo, hi);
  }
  std::vector<double> out;
  for (double x : cubic_closed_form(c[3], c[2], c[1], c[0])) {
    if (x >= lo && x <= hi) out.push_back(x);
  }
  return out;
}

} // namespace roots

/// [min, max] of predict() over [low, high].
inline std::pair<double, double> predicted_range(const PolyFit& fit, double low, double high) {
  const auto& c = fit.coefficients;
  std::vector<double> points{low, high};
  for (double x : roots::quadratic(3.0 * c[3], 2.0 * c[2], c[1])) {
    if (x > low && x < high) points.push_back(x);
  }
  double lo = 1.0;
  double hi = 0.0;
  for (double x : points) {
    const double v = predict(fit, x);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

/**
 * Temperature in [low, high] whose prediction is closest to target_prob,
 * over the real roots of p(t) = target_prob in the bounds and the bounds
 * themselves. Near-ties (within 1e-12) resolve to the smallest temperature.
 */
inline double invert(const PolyFit& fit, double target_prob, double low, double high) {
  if (!(low > 0.0) || !(high >= low) || !std::isfinite(high)) {
    throw Error(ErrorKind::InvalidParameter, "inversion bounds must satisfy 0 < low <= high");
  }
  auto shifted = fit.coefficients;
  shifted[0] -= response(fit.scale, target_prob);

  std::vector<double> candidates = roots::in_interval(shifted, low, high);
  candidates.push_back(low);
  candidates.push_back(high);
  std::sort(candidates.begin(), candidates.end());

  constexpr double kTie = 1e-12;
  double best_t = candidates.front();
  double best_err = std::abs(predict(fit, best_t) - target_prob);
  for (double t : candidates) {
    const double err = std::abs(predict(fit, t) - target_prob);
    if (err < best_err - kTie) {
      best_err = err;
      best_t = t;
    }
  }
  return best_t;
}

} // namespace scout
