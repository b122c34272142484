#pragma once

/**
 * Scouting engine
 *
 * generate_sequence selects every token from the auxiliary distribution
 * softmax(l / aux_temp) over the top-k support, while recording the chosen
 * token's probability under the frozen base distribution softmax(l / base_temp).
 * The record's normalized probability is therefore the probability the
 * deployed model assigns to the output, whatever temperature produced it.
 *
 * ScoutEngine drives one audit run:
 *   1. warm-up: warmup_count queries at geometrically spaced aux temperatures
 *   2. for each remaining query: refit the cubic on every (aux_temp, norm_prob)
 *      pair so far (on the log scale unless configured otherwise), draw a
 *      target probability from the target conditioned on the currently
 *      reachable interval, invert the fit to get an aux temperature,
 *      generate, append the new pair.
 *
 * A run is a pure function of (model, prompt, config, target); the only
 * randomness comes from a generator seeded with config.seed.
 */

#include "error.hpp"
#include "model.hpp"
#include "prefix_cache.hpp"
#include "prob.hpp"
#include "regress.hpp"
#include "target.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace scout {

using Rng = std::mt19937_64;

enum class Mode { Scout, Vanilla, Warmup };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Scout: return "SCOUT";
    case Mode::Vanilla: return "VANILLA";
    case Mode::Warmup: return "WARMUP";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "SCOUT") return Mode::Scout;
  if (s == "VANILLA") return Mode::Vanilla;
  if (s == "WARMUP") return Mode::Warmup;
  throw Error(ErrorKind::Parse, "unknown mode '" + std::string(s) + "'");
}

/// How each scouting query picks its target probability.
enum class Targeting {
  InverseTransform,  // draw p* from the target law
  DeficitFill,       // aim at the histogram bin furthest below its target share
};

struct ScoutConfig {
  double base_temp = 0.5;
  std::size_t top_k = 30;
  double aux_temp_low = 0.05;
  double aux_temp_high = 10.0;
  std::size_t max_len = 30;
  std::size_t warmup_count = 8;
  std::size_t budget = 1000;
  std::uint64_t seed = 0;
  FitScale fit_scale = FitScale::LogProbability;
  Targeting targeting = Targeting::InverseTransform;
  std::size_t deficit_bins = 10;

  void validate() const {
    if (!(base_temp > 0.0) || !std::isfinite(base_temp)) {
      throw Error(ErrorKind::InvalidParameter, "base_temp must be positive");
    }
    if (top_k == 0) throw Error(ErrorKind::InvalidParameter, "top_k must be at least 1");
    if (!(aux_temp_low > 0.0) || !(aux_temp_high >= aux_temp_low) || !std::isfinite(aux_temp_high)) {
      throw Error(ErrorKind::InvalidParameter, "aux temperature bounds must satisfy 0 < low <= high");
    }
    if (max_len == 0) throw Error(ErrorKind::InvalidParameter, "max_len must be at least 1");
    if (warmup_count < 2) throw Error(ErrorKind::InvalidParameter, "warmup_count must be at least 2");
    if (deficit_bins == 0) throw Error(ErrorKind::InvalidParameter, "deficit_bins must be at least 1");
  }
};

struct ScoutRecord {
  SequenceTrace trace;
  std::string text;
  double norm_prob = 0.0;
  double aux_temp_used = 0.0;
  std::size_t query_index = 0;
  Mode mode = Mode::Vanilla;
  std::string target;  // target label for scouting runs, empty for vanilla

  const TokenSeq& tokens() const noexcept { return trace.tokens; }
};

/// Model evaluations, optionally memoized through a prefix cache.
class StepSource {
public:
  explicit StepSource(ModelSource& model, PrefixCache* cache = nullptr) : model_(model), cache_(cache) {}

  const StepOutcome& at(const StepQuery& query) {
    if (cache_) return cache_->lookup_or_compute(model_, query);
    scratch_ = model_.step(query);
    return scratch_;
  }

  ModelSource& model() noexcept { return model_; }
  PrefixCache* cache() noexcept { return cache_; }

private:
  ModelSource& model_;
  PrefixCache* cache_;
  StepOutcome scratch_;
};

namespace detail {

inline std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  // Rounding left u above the cumulative total; take the last positive entry.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

inline const LogitVector& step_logits(StepSource& steps, std::span<const TokenId> prompt, const TokenSeq& prefix,
                                      bool& complete) {
  const StepOutcome& out = steps.at(StepQuery{prompt, prefix});
  complete = out.complete;
  return out.logits;
}

} // namespace detail

/// One output sequence: select under aux_temp, record base_temp probabilities.
inline ScoutRecord generate_sequence(StepSource& steps, std::span<const TokenId> prompt, double base_temp,
                                     double aux_temp, std::size_t top_k, std::size_t max_len, Rng& rng) {
  detail::require_temperature(base_temp);
  detail::require_temperature(aux_temp);
  if (top_k == 0) throw Error(ErrorKind::InvalidParameter, "top_k must be at least 1");
  if (max_len == 0) throw Error(ErrorKind::InvalidParameter, "max_len must be at least 1");

  const auto eos = steps.model().info().eos_token_id;
  ScoutRecord rec;
  SequenceTrace& trace = rec.trace;
  trace.terminated_by = Termination::MaxLen;

  while (trace.tokens.size() < max_len) {
    bool complete = false;
    const LogitVector& logits = detail::step_logits(steps, prompt, trace.tokens, complete);
    if (complete) {
      if (trace.tokens.empty()) {
        throw Error(ErrorKind::Invariant, "model reports an empty output as complete");
      }
      trace.terminated_by = Termination::Eos;
      break;
    }
    const auto support = apply_top_k(logits, top_k);
    if (support.empty()) {
      throw Error(ErrorKind::Invariant,
                  "zero-support step at position " + std::to_string(trace.tokens.size()));
    }
    const auto base = distribution_over(logits, support, base_temp);
    const auto aux = distribution_over(logits, support, aux_temp);
    const std::size_t pick = detail::sample_index(aux.probs, rng);

    const TokenId token = support[pick];
    trace.tokens.push_back(token);
    trace.base_probs.push_back(base.probs[pick]);
    trace.aux_probs.push_back(aux.probs[pick]);
    if (eos && token == *eos) {
      trace.terminated_by = Termination::Eos;
      break;
    }
  }

  rec.norm_prob = normalized_probability(trace);
  rec.aux_temp_used = aux_temp;
  rec.text = steps.model().detokenize(trace.tokens);
  return rec;
}

/// n queries at the deployed temperature.
inline std::vector<ScoutRecord> vanilla_sample(StepSource& steps, std::span<const TokenId> prompt,
                                               const ScoutConfig& config, std::size_t n, Rng& rng) {
  config.validate();
  std::vector<ScoutRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rec = generate_sequence(steps, prompt, config.base_temp, config.base_temp, config.top_k,
                                 config.max_len, rng);
    rec.mode = Mode::Vanilla;
    rec.query_index = i;
    out.push_back(std::move(rec));
  }
  return out;
}

/// Geometric progression of `count` temperatures from low to high inclusive.
inline std::vector<double> warmup_schedule(std::size_t count, double low, double high) {
  if (count < 2) throw Error(ErrorKind::InvalidParameter, "warm-up needs at least two temperatures");
  std::vector<double> temps(count);
  const double ratio = std::log(high / low);
  for (std::size_t i = 0; i < count; ++i) {
    temps[i] = low * std::exp(ratio * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  temps.front() = low;
  temps.back() = high;
  return temps;
}

struct GreedyResult {
  SequenceTrace trace;
  double seq_prob = 0.0;
};

/// Picks the least likely base token at every step (ties: ascending id).
inline GreedyResult greedy_min_sequence(StepSource& steps, std::span<const TokenId> prompt, double base_temp,
                                        std::size_t top_k, std::size_t max_len) {
  detail::require_temperature(base_temp);
  if (max_len == 0) throw Error(ErrorKind::InvalidParameter, "max_len must be at least 1");
  const auto eos = steps.model().info().eos_token_id;
  GreedyResult out;
  SequenceTrace& trace = out.trace;
  while (trace.tokens.size() < max_len) {
    bool complete = false;
    const LogitVector& logits = detail::step_logits(steps, prompt, trace.tokens, complete);
    if (complete) {
      trace.terminated_by = Termination::Eos;
      break;
    }
    const auto dist = step_distribution(logits, base_temp, top_k);
    std::size_t pick = 0;
    for (std::size_t i = 1; i < dist.size(); ++i) {
      const bool lower = dist.probs[i] < dist.probs[pick];
      const bool tie_lower_id = dist.probs[i] == dist.probs[pick] && dist.token_ids[i] < dist.token_ids[pick];
      if (lower || tie_lower_id) pick = i;
    }
    trace.tokens.push_back(dist.token_ids[pick]);
    trace.base_probs.push_back(dist.probs[pick]);
    trace.aux_probs.push_back(dist.probs[pick]);
    if (eos && dist.token_ids[pick] == *eos) {
      trace.terminated_by = Termination::Eos;
      break;
    }
  }
  out.seq_prob = sequence_probability(trace);
  return out;
}

struct EngineState {
  FitDataset dataset;
  std::optional<PolyFit> current_fit;
  std::vector<ScoutRecord> records;
  Rng rng;
};

/**
 * One scouting run against a fixed (model, prompt). Queries are inherently
 * sequential: each one depends on the fit of all earlier pairs.
 */
class ScoutEngine {
public:
  ScoutEngine(StepSource& steps, TokenSeq prompt, ScoutConfig config)
      : steps_(steps), prompt_(std::move(prompt)), config_(config) {
    config_.validate();
    state_.rng.seed(config_.seed);
    schedule_ = warmup_schedule(config_.warmup_count, config_.aux_temp_low, config_.aux_temp_high);
  }

  const EngineState& state() const noexcept { return state_; }
  const ScoutConfig& config() const noexcept { return config_; }
  const std::vector<double>& schedule() const noexcept { return schedule_; }

  /// Warm-up queries; their pairs seed the regression dataset.
  const FitDataset& warmup(std::string_view target_label = {}) {
    for (double t : schedule_) {
      run_query(t, Mode::Warmup, target_label);
    }
    return state_.dataset;
  }

  /// One targeted query after warm-up.
  const ScoutRecord& query(const TargetSpec& target, std::string_view target_label = {}) {
    double aux = 0.0;
    try {
      state_.current_fit = fit_poly(state_.dataset, 3, std::make_pair(config_.aux_temp_low, config_.aux_temp_high),
                                    config_.fit_scale);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateData) throw;
      state_.current_fit.reset();
    }
    if (state_.current_fit) {
      const double p_star = next_target_prob(target, *state_.current_fit);
      aux = invert(*state_.current_fit, p_star, config_.aux_temp_low, config_.aux_temp_high);
    } else {
      aux = schedule_[fallback_cursor_++ % schedule_.size()];
    }
    return run_query(aux, Mode::Scout, target_label);
  }

  /// Full run of config.budget queries (warm-up included).
  std::vector<ScoutRecord> run(const TargetSpec& target) {
    if (config_.budget == 0) return {};
    if (config_.budget <= config_.warmup_count) {
      throw Error(ErrorKind::InvalidParameter, "scouting budget must exceed warmup_count");
    }
    const std::string label = to_string(target);
    warmup(label);
    while (state_.records.size() < config_.budget) {
      query(target, label);
    }
    return state_.records;
  }

private:
  const ScoutRecord& run_query(double aux_temp, Mode mode, std::string_view target_label) {
    auto rec = generate_sequence(steps_, prompt_, config_.base_temp, aux_temp, config_.top_k, config_.max_len,
                                 state_.rng);
    rec.mode = mode;
    rec.query_index = state_.records.size();
    rec.target = std::string(target_label);
    state_.dataset.push_back({aux_temp, rec.norm_prob});
    state_.records.push_back(std::move(rec));
    return state_.records.back();
  }

  // Target probability for the next query: drawn from the target law
  // conditioned on the interval the run can currently reach, i.e. the fit's
  // predicted range over the bounds intersected with the observed range.
  double next_target_prob(const TargetSpec& target, const PolyFit& fit) {
    auto [lo, hi] = predicted_range(fit, config_.aux_temp_low, config_.aux_temp_high);
    const auto [min_it, max_it] = std::minmax_element(
        state_.dataset.begin(), state_.dataset.end(),
        [](const FitPoint& a, const FitPoint& b) { return a.norm_prob < b.norm_prob; });
    lo = std::max(lo, min_it->norm_prob);
    hi = std::min(hi, max_it->norm_prob);
    if (hi < lo) hi = lo;

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(state_.rng);
    const double f_lo = cdf(target, lo);
    const double f_hi = cdf(target, hi);
    if (config_.targeting == Targeting::InverseTransform) {
      if (!(f_hi > f_lo)) return lo;
      return std::clamp(inverse_cdf(target, f_lo + u * (f_hi - f_lo)), lo, hi);
    }

    // Deficit fill: equal-width bins over the reachable interval, expected
    // counts from the target conditioned on it.
    const std::size_t bins = config_.deficit_bins;
    const double width = (hi - lo) / static_cast<double>(bins);
    if (!(width > 0.0) || !(f_hi > f_lo)) return lo;
    std::vector<double> observed(bins, 0.0);
    for (const auto& p : state_.dataset) {
      if (p.norm_prob < lo || p.norm_prob > hi) continue;
      observed[std::min(bins - 1, static_cast<std::size_t>((p.norm_prob - lo) / width))] += 1.0;
    }
    double total = 0.0;
    for (double o : observed) total += o;
    std::size_t best = 0;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < bins; ++b) {
      const double b_lo = lo + width * static_cast<double>(b);
      const double b_hi = b + 1 == bins ? hi : b_lo + width;
      const double share = (cdf(target, b_hi) - cdf(target, b_lo)) / (f_hi - f_lo);
      const double deficit = (total + 1.0) * share - observed[b];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = b;
      }
    }
    return lo + width * (static_cast<double>(best) + u);
  }

  StepSource& steps_;
  TokenSeq prompt_;
  ScoutConfig config_;
  EngineState state_;
  std::vector<double> schedule_;
  std::size_t fallback_cursor_ = 0;
};

/// Convenience wrapper: one complete scouting run.
inline std::vector<ScoutRecord> scout(StepSource& steps, const TokenSeq& prompt, const ScoutConfig& config,
                                      const TargetSpec& target) {
  ScoutEngine engine(steps, prompt, config);
  return engine.run(target);
}

} // namespace scout
