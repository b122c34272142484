#pragma once

/**
 * Probability core
 *
 * Temperature-scaled softmax, top-k truncation and the per-sequence
 * probabilities used throughout scouting:
 *
 *   sequence probability   = prod_t p_t
 *   normalized probability = exp( (1/n) * sum_t log p_t )   (geometric mean)
 *
 * Base and auxiliary step distributions share one support: the top-k tokens
 * ranked by raw logit. Temperature only rescales logits, so the support is
 * the same for every temperature and both distributions are renormalized
 * over it.
 *
 * Everything here is a pure function.
 */

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace scout {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

/// One logit per vocabulary entry. -inf marks a token that is out of support.
using LogitVector = std::vector<double>;

inline constexpr double kOutOfSupport = -std::numeric_limits<double>::infinity();

/// Floor applied to probabilities before taking logs.
inline constexpr double kProbFloor = 1e-300;

struct StepDistribution {
  std::vector<TokenId> token_ids;
  std::vector<double> probs;
  double temperature = 1.0;

  std::size_t size() const noexcept { return token_ids.size(); }
};

/// A value that may have been clamped into its valid range.
struct Clamped {
  double value = 0.0;
  bool clamped = false;
};

enum class Termination { Eos, MaxLen };

struct SequenceTrace {
  TokenSeq tokens;
  std::vector<double> base_probs;
  std::vector<double> aux_probs;
  Termination terminated_by = Termination::MaxLen;
};

namespace detail {

inline void require_temperature(double temp) {
  if (!(temp > 0.0) || !std::isfinite(temp)) {
    throw Error(ErrorKind::InvalidParameter, "temperature must be positive and finite");
  }
}

inline double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

inline void validate_probs(std::span<const double> probs) {
  if (probs.empty()) {
    throw Error(ErrorKind::InvalidInput, "empty trace");
  }
  for (double p : probs) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw Error(ErrorKind::InvalidInput, "trace probability outside (0,1]");
    }
  }
}

} // namespace detail

/**
 * softmax(logits / temp), computed with max-subtraction.
 * Every logit must be finite; strip out-of-support entries first.
 */
inline std::vector<double> softmax_with_temperature(std::span<const double> logits, double temp) {
  detail::require_temperature(temp);
  if (logits.empty()) {
    throw Error(ErrorKind::InvalidInput, "empty logit vector");
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double l : logits) {
    if (!std::isfinite(l)) {
      throw Error(ErrorKind::InvalidInput, "non-finite logit");
    }
    max_logit = std::max(max_logit, l);
  }

  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - max_logit) / temp);
    z += out[i];
  }
  for (double& v : out) {
    v /= z;
  }
  return out;
}

/**
 * The min(k, #in-support) token ids with the largest logits, ordered by
 * descending logit with ties broken by ascending id. -inf entries are never
 * selected; NaN or +inf is rejected.
 */
inline std::vector<TokenId> apply_top_k(std::span<const double> logits, std::size_t k) {
  if (k == 0) {
    throw Error(ErrorKind::InvalidParameter, "top-k must be at least 1");
  }
  std::vector<std::pair<double, TokenId>> ranked;
  ranked.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double l = logits[i];
    if (std::isnan(l) || l == std::numeric_limits<double>::infinity()) {
      throw Error(ErrorKind::InvalidInput, "logit is NaN or +inf");
    }
    if (l != kOutOfSupport) {
      ranked.emplace_back(l, static_cast<TokenId>(i));
    }
  }
  auto by_rank = [](const std::pair<double, TokenId>& a, const std::pair<double, TokenId>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  if (ranked.size() > k) {
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(), by_rank);
    ranked.resize(k);
  } else {
    std::sort(ranked.begin(), ranked.end(), by_rank);
  }
  std::vector<TokenId> ids;
  ids.reserve(ranked.size());
  for (const auto& r : ranked) ids.push_back(r.second);
  return ids;
}

/// Distribution over an already selected support.
inline StepDistribution distribution_over(std::span<const double> logits,
                                          std::span<const TokenId> support, double temp) {
  std::vector<double> kept;
  kept.reserve(support.size());
  for (TokenId id : support) {
    kept.push_back(logits[id]);
  }
  StepDistribution dist;
  dist.token_ids.assign(support.begin(), support.end());
  dist.probs = softmax_with_temperature(kept, temp);
  dist.temperature = temp;
  return dist;
}

inline StepDistribution step_distribution(std::span<const double> logits, double temp, std::size_t k) {
  detail::require_temperature(temp);
  const auto support = apply_top_k(logits, k);
  if (support.empty()) {
    throw Error(ErrorKind::InvalidInput, "no token in support");
  }
  return distribution_over(logits, support, temp);
}

/// Shannon entropy in nats.
inline double entropy(const StepDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

inline double sum_log_probs(std::span<const double> probs) {
  double s = 0.0;
  for (double p : probs) {
    s += detail::safe_log(p);
  }
  return s;
}

inline double sequence_probability(std::span<const double> base_probs) {
  detail::validate_probs(base_probs);
  return std::exp(sum_log_probs(base_probs));
}

inline double normalized_probability(std::span<const double> base_probs) {
  detail::validate_probs(base_probs);
  return std::exp(sum_log_probs(base_probs) / static_cast<double>(base_probs.size()));
}

inline double sequence_probability(const SequenceTrace& trace) {
  return sequence_probability(trace.base_probs);
}

inline double normalized_probability(const SequenceTrace& trace) {
  return normalized_probability(trace.base_probs);
}

inline void validate_trace(const SequenceTrace& trace) {
  if (trace.tokens.empty()) {
    throw Error(ErrorKind::InvalidInput, "empty trace");
  }
  if (trace.base_probs.size() != trace.tokens.size() || trace.aux_probs.size() != trace.tokens.size()) {
    throw Error(ErrorKind::InvalidInput, "trace fields have mismatched lengths");
  }
  detail::validate_probs(trace.base_probs);
  detail::validate_probs(trace.aux_probs);
}

} // namespace scout
