#pragma once

/**
 * Target distributions over normalized probability.
 *
 * A target is Uniform(0,1) or Beta(alpha, beta) on [0,1]. Matching between
 * observed normalized probabilities and a target is quantified with the
 * one-sample Kolmogorov-Smirnov statistic, both against the raw target and
 * against the target conditioned on the observed range [min, max]. A model
 * can only produce normalized probabilities in some feasible sub-interval,
 * which the conditioned variant accounts for.
 *
 * Text syntax: "uniform" or "beta:A,B" (e.g. "beta:1,10").
 */

#include "error.hpp"
#include "prob.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scout {

enum class TargetKind { Uniform, Beta };

struct TargetSpec {
  TargetKind kind = TargetKind::Uniform;
  double alpha = 1.0;
  double beta = 1.0;

  static TargetSpec uniform() { return {}; }
  static TargetSpec beta_dist(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
      throw Error(ErrorKind::InvalidParameter, "beta parameters must be positive and finite");
    }
    return {TargetKind::Beta, a, b};
  }

  bool operator==(const TargetSpec& o) const {
    if (kind != o.kind) return false;
    return kind == TargetKind::Uniform || (alpha == o.alpha && beta == o.beta);
  }
};

namespace detail {

// Shortest text that round-trips, e.g. 10 -> "10", 0.5 -> "0.5".
inline std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

} // namespace detail

inline std::string to_string(const TargetSpec& spec) {
  if (spec.kind == TargetKind::Uniform) return "uniform";
  return "beta:" + detail::shortest(spec.alpha) + "," + detail::shortest(spec.beta);
}

inline TargetSpec parse_target(std::string_view text) {
  if (text == "uniform") return TargetSpec::uniform();
  constexpr std::string_view prefix = "beta:";
  if (text.substr(0, prefix.size()) == prefix) {
    const std::string body(text.substr(prefix.size()));
    const auto comma = body.find(',');
    if (comma != std::string::npos) {
      try {
        std::size_t used_a = 0, used_b = 0;
        const std::string a_text = body.substr(0, comma);
        const std::string b_text = body.substr(comma + 1);
        const double a = std::stod(a_text, &used_a);
        const double b = std::stod(b_text, &used_b);
        if (used_a == a_text.size() && used_b == b_text.size()) {
          return TargetSpec::beta_dist(a, b);
        }
      } catch (const std::logic_error&) {
      } catch (const Error& e) {
        throw Error(ErrorKind::Config, e.what());
      }
    }
  }
  throw Error(ErrorKind::Config, "target must be 'uniform' or 'beta:A,B', got '" + std::string(text) + "'");
}

inline double inverse_cdf(const TargetSpec& spec, double u) {
  u = std::clamp(u, 0.0, 1.0);
  if (spec.kind == TargetKind::Uniform) return u;
  if (spec.alpha == 1.0) {
    // F(x) = 1 - (1-x)^beta
    return -std::expm1(std::log1p(-u) / spec.beta);
  }
  if (u == 0.0) return 0.0;
  if (u == 1.0) return 1.0;
  return boost::math::ibeta_inv(spec.alpha, spec.beta, u);
}

/// Deterministic given the generator state.
template <class Rng>
double sample_target(const TargetSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (spec.kind == TargetKind::Uniform) return unit(rng);
  if (spec.alpha == 1.0) return inverse_cdf(spec, unit(rng));
  std::gamma_distribution<double> ga(spec.alpha, 1.0);
  std::gamma_distribution<double> gb(spec.beta, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

inline Clamped cdf_checked(const TargetSpec& spec, double x) {
  Clamped out;
  if (x < 0.0 || x > 1.0 || std::isnan(x)) {
    out.clamped = true;
    x = std::isnan(x) ? 0.0 : std::clamp(x, 0.0, 1.0);
  }
  if (spec.kind == TargetKind::Uniform) {
    out.value = x;
  } else if (x <= 0.0) {
    out.value = 0.0;
  } else if (x >= 1.0) {
    out.value = 1.0;
  } else if (spec.alpha == 1.0) {
    out.value = -std::expm1(spec.beta * std::log1p(-x));
  } else {
    out.value = boost::math::ibeta(spec.alpha, spec.beta, x);
  }
  return out;
}

inline double cdf(const TargetSpec& spec, double x) { return cdf_checked(spec, x).value; }

namespace detail {

template <class Cdf>
double ks_sorted(std::vector<double> values, Cdf&& F) {
  if (values.empty()) {
    throw Error(ErrorKind::InvalidInput, "KS statistic of an empty sample");
  }
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double f = F(values[i]);
    const double upper = static_cast<double>(i + 1) / n - f;
    const double lower = f - static_cast<double>(i) / n;
    d = std::max({d, upper, lower});
  }
  return std::clamp(d, 0.0, 1.0);
}

} // namespace detail

/// sup |F_n - F| over the sample.
inline double ks_statistic(std::span<const double> sample, const TargetSpec& spec) {
  return detail::ks_sorted(std::vector<double>(sample.begin(), sample.end()),
                           [&](double x) { return cdf(spec, x); });
}

/// KS against the target conditioned on [lo, hi].
inline double ks_statistic_conditioned(std::span<const double> sample, const TargetSpec& spec, double lo,
                                       double hi) {
  const double f_lo = cdf(spec, lo);
  const double mass = cdf(spec, hi) - f_lo;
  if (!(mass > 0.0)) {
    // Point-mass target at the single observed value.
    return detail::ks_sorted(std::vector<double>(sample.begin(), sample.end()),
                             [&](double x) { return x < lo ? 0.0 : 1.0; });
  }
  return detail::ks_sorted(std::vector<double>(sample.begin(), sample.end()), [&](double x) {
    return std::clamp((cdf(spec, x) - f_lo) / mass, 0.0, 1.0);
  });
}

/// Conditioned KS on the sample's own [min, max].
inline double ks_statistic_conditioned(std::span<const double> sample, const TargetSpec& spec) {
  if (sample.empty()) {
    throw Error(ErrorKind::InvalidInput, "KS statistic of an empty sample");
  }
  const auto [lo, hi] = std::minmax_element(sample.begin(), sample.end());
  return ks_statistic_conditioned(sample, spec, *lo, *hi);
}

} // namespace scout
