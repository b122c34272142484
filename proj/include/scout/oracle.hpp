#pragma once

/**
 * Enumeration oracle
 *
 * Exhaustive depth-first traversal of a small model's output tree under the
 * same sample space as generate_sequence: a path ends when the model reports
 * completion, when EOS is chosen, or when it reaches max_len. Per-path
 * probabilities are accumulated exactly as prob-core does (left-to-right sum
 * of floored logs), so an outcome's normalized probability is bitwise equal
 * to normalized_probability() of its trace.
 *
 * for_each_outcome streams outcomes without materializing them, which makes
 * exact event probabilities over ~10^9 leaves feasible; enumerate_outcomes
 * collects and sorts them for small trees.
 */

#include "error.hpp"
#include "model.hpp"
#include "prob.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace scout {

struct EnumeratedOutcome {
  TokenSeq tokens;
  double seq_prob = 0.0;
  double norm_prob = 0.0;
  std::size_t depth = 0;
};

struct OutcomeDistribution {
  std::vector<EnumeratedOutcome> outcomes;
  double total_mass = 0.0;
};

/// Streaming view of one enumerated path.
struct OutcomeView {
  std::span<const TokenId> tokens;
  double sum_log = 0.0;  // sum of floored log base probabilities
  double seq_prob = 0.0;
  double norm_prob = 0.0;
};

struct EnumerationParams {
  double base_temp = 1.0;
  std::size_t top_k = 30;
  std::size_t max_len = 30;
  double max_leaves = 1e7;  // refuse larger estimated trees
};

struct EnumerationStats {
  std::uint64_t nodes = 0;  // every visited prefix, root included
  std::uint64_t leaves = 0;
};

/// Upper bound on leaves: min(top_k, vocab)^min(max_len, depth limit).
inline double estimated_leaves(const ModelSource& source, const EnumerationParams& params) {
  const double branching =
      static_cast<double>(std::min<std::size_t>(params.top_k, std::max<std::size_t>(source.info().vocab_size, 1)));
  std::size_t len = params.max_len;
  if (auto limit = source.depth_limit()) len = std::min(len, *limit);
  return std::pow(branching, static_cast<double>(len));
}

namespace detail {

template <class Visitor>
class Enumerator {
public:
  Enumerator(ModelSource& source, std::span<const TokenId> prompt, const EnumerationParams& params, Visitor& visit)
      : source_(source), prompt_(prompt), params_(params), visit_(visit), eos_(source.info().eos_token_id),
        depth_limit_(source.depth_limit()) {}

  EnumerationStats run() {
    prefix_.reserve(params_.max_len);
    descend(0.0);
    return stats_;
  }

private:
  void emit(double sum_log) {
    ++stats_.leaves;
    OutcomeView view;
    view.tokens = prefix_;
    view.sum_log = sum_log;
    if (prefix_.empty()) {
      view.seq_prob = 1.0;
      view.norm_prob = 1.0;
    } else {
      view.seq_prob = std::exp(sum_log);
      view.norm_prob = std::exp(sum_log / static_cast<double>(prefix_.size()));
    }
    visit_(static_cast<const OutcomeView&>(view));
  }

  void descend(double sum_log) {
    ++stats_.nodes;
    if (prefix_.size() >= params_.max_len) {
      emit(sum_log);
      return;
    }
    // A prefix at the source's depth limit cannot continue, so it is a
    // finished output without asking the source.
    if (depth_limit_ && prefix_.size() >= *depth_limit_ && !prefix_.empty()) {
      emit(sum_log);
      return;
    }
    StepOutcome step = source_.step(StepQuery{prompt_, prefix_});
    if (step.complete) {
      if (prefix_.empty()) {
        throw Error(ErrorKind::Invariant, "model reports an empty output as complete");
      }
      emit(sum_log);
      return;
    }
    const auto support = apply_top_k(step.logits, params_.top_k);
    if (support.empty()) {
      throw Error(ErrorKind::Invariant, "zero-support step during enumeration");
    }
    const auto base = distribution_over(step.logits, support, params_.base_temp);
    step.logits.clear();
    step.logits.shrink_to_fit();

    for (std::size_t i = 0; i < support.size(); ++i) {
      const double child_sum = sum_log + safe_log(base.probs[i]);
      prefix_.push_back(support[i]);
      if (eos_ && support[i] == *eos_) {
        ++stats_.nodes;
        emit(child_sum);
      } else {
        descend(child_sum);
      }
      prefix_.pop_back();
    }
  }

  ModelSource& source_;
  std::span<const TokenId> prompt_;
  const EnumerationParams& params_;
  Visitor& visit_;
  std::optional<TokenId> eos_;
  std::optional<std::size_t> depth_limit_;
  TokenSeq prefix_;
  EnumerationStats stats_;
};

} // namespace detail

/**
 * Visits every complete path in depth-first order (support order at each
 * node: descending logit, then ascending id). Throws CeilingExceeded when the
 * estimated leaf count is above params.max_leaves.
 */
template <class Visitor>
EnumerationStats for_each_outcome(ModelSource& source, std::span<const TokenId> prompt,
                                  const EnumerationParams& params, Visitor&& visit) {
  detail::require_temperature(params.base_temp);
  if (params.top_k == 0) throw Error(ErrorKind::InvalidParameter, "top_k must be at least 1");
  const double estimate = estimated_leaves(source, params);
  if (estimate > params.max_leaves) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "estimated %.6g leaves exceeds the enumeration ceiling of %.6g", estimate,
                  params.max_leaves);
    throw Error(ErrorKind::CeilingExceeded, buf);
  }
  detail::Enumerator<std::remove_reference_t<Visitor>> e(source, prompt, params, visit);
  return e.run();
}

/// Every outcome, sorted by normalized probability (descending; ties by tokens).
inline OutcomeDistribution enumerate_outcomes(ModelSource& source, std::span<const TokenId> prompt,
                                              const EnumerationParams& params) {
  OutcomeDistribution dist;
  for_each_outcome(source, prompt, params, [&](const OutcomeView& v) {
    dist.outcomes.push_back({TokenSeq(v.tokens.begin(), v.tokens.end()), v.seq_prob, v.norm_prob, v.tokens.size()});
    dist.total_mass += v.seq_prob;
  });
  std::stable_sort(dist.outcomes.begin(), dist.outcomes.end(),
                   [](const EnumeratedOutcome& a, const EnumeratedOutcome& b) {
                     if (a.norm_prob != b.norm_prob) return a.norm_prob > b.norm_prob;
                     return a.tokens < b.tokens;
                   });
  return dist;
}

template <class Predicate>
double exact_event_probability(const OutcomeDistribution& dist, Predicate&& pred) {
  double mass = 0.0;
  for (const auto& o : dist.outcomes) {
    if (pred(o)) mass += o.seq_prob;
  }
  return mass;
}

/// Streaming variant for trees too large to materialize.
template <class Predicate>
double exact_event_probability(ModelSource& source, std::span<const TokenId> prompt,
                               const EnumerationParams& params, Predicate&& pred) {
  double mass = 0.0;
  for_each_outcome(source, prompt, params, [&](const OutcomeView& v) {
    if (pred(v)) mass += v.seq_prob;
  });
  return mass;
}

using BigInt = boost::multiprecision::cpp_int;

/// sum_{i=0}^{depth} branching^i in closed form.
inline BigInt tree_node_count(std::uint64_t branching, std::uint64_t depth) {
  if (branching == 0) throw Error(ErrorKind::InvalidParameter, "branching must be at least 1");
  if (branching == 1) return BigInt(depth) + 1;
  const BigInt k(branching);
  return (boost::multiprecision::pow(k, static_cast<unsigned>(depth + 1)) - 1) / (k - 1);
}

/// Same count by explicit summation of level sizes.
inline BigInt tree_node_count_by_summation(std::uint64_t branching, std::uint64_t depth) {
  BigInt level = 1;
  BigInt total = 0;
  for (std::uint64_t i = 0; i <= depth; ++i) {
    total += level;
    level *= branching;
  }
  return total;
}

/// Tab-separated table: tokens, text, seq_prob, norm_prob.
inline void write_outcome_table(std::ostream& out, const OutcomeDistribution& dist, const ModelSource& source) {
  out << "tokens\ttext\tseq_prob\tnorm_prob\n";
  char buf[64];
  for (const auto& o : dist.outcomes) {
    std::string ids;
    for (TokenId t : o.tokens) {
      if (!ids.empty()) ids += ' ';
      ids += std::to_string(t);
    }
    out << ids << '\t' << source.detokenize(o.tokens) << '\t';
    std::snprintf(buf, sizeof buf, "%.17g", o.seq_prob);
    out << buf << '\t';
    std::snprintf(buf, sizeof buf, "%.17g", o.norm_prob);
    out << buf << '\n';
  }
}

} // namespace scout
