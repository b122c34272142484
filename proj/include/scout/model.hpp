#pragma once

/**
 * Model sources
 *
 * A ModelSource answers one question: given a prompt and a generated prefix,
 * what are the next-step logits? Two deterministic in-process sources live
 * here:
 *
 * - TreeModel: an explicit finite output tree loaded from a JSON fixture.
 *   Fixtures store per-child probabilities; logits are reference_temp * ln(p)
 *   so that softmax at the reference temperature recovers them exactly.
 * - SynthModel: a lazily generated complete tree. Each node's logits are a
 *   pure function of (seed, prefix), so trees far too large to materialize
 *   (30^6 leaves) still have a well defined, reproducible distribution.
 *
 * Tokens outside a node's support carry kOutOfSupport (-inf). A prefix that
 * ends at a tree leaf is complete: the output has ended without an EOS token.
 */

#include "error.hpp"
#include "prob.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace scout {

struct ModelInfo {
  std::size_t vocab_size = 0;
  std::optional<TokenId> eos_token_id;
  std::string name;
};

struct StepQuery {
  std::span<const TokenId> prompt_tokens;
  std::span<const TokenId> generated_prefix;
};

/// Result of one model evaluation at a prefix.
struct StepOutcome {
  bool complete = false;
  LogitVector logits;
};

class ModelSource {
public:
  virtual ~ModelSource() = default;

  virtual const ModelInfo& info() const = 0;

  /// Deterministic: the same query always yields bit-identical logits.
  virtual LogitVector next_logits(const StepQuery& query) = 0;

  /// True when the prefix is a finished output with no further step.
  virtual bool is_complete(const StepQuery& /*query*/) { return false; }

  /// One evaluation: completion status plus logits when not complete.
  virtual StepOutcome step(const StepQuery& query) {
    StepOutcome out;
    out.complete = is_complete(query);
    if (!out.complete) {
      out.logits = next_logits(query);
    }
    return out;
  }

  virtual std::string detokenize(std::span<const TokenId> tokens) const {
    std::string text;
    for (TokenId t : tokens) {
      if (!text.empty()) text += ' ';
      text += "<" + std::to_string(t) + ">";
    }
    return text;
  }

  /// Prompt tokenization. Synthetic sources are prompt-independent.
  virtual TokenSeq tokenize(std::string_view /*text*/) { return {}; }

  /// Longest possible output, when the source knows it.
  virtual std::optional<std::size_t> depth_limit() const { return std::nullopt; }
};

/// Counts evaluations that reach the wrapped source.
class CountingSource final : public ModelSource {
public:
  explicit CountingSource(ModelSource& inner) : inner_(inner) {}

  const ModelInfo& info() const override { return inner_.info(); }
  LogitVector next_logits(const StepQuery& q) override {
    ++evaluations_;
    return inner_.next_logits(q);
  }
  bool is_complete(const StepQuery& q) override { return inner_.is_complete(q); }
  StepOutcome step(const StepQuery& q) override {
    ++evaluations_;
    return inner_.step(q);
  }
  std::string detokenize(std::span<const TokenId> tokens) const override {
    return inner_.detokenize(tokens);
  }
  TokenSeq tokenize(std::string_view text) override { return inner_.tokenize(text); }
  std::optional<std::size_t> depth_limit() const override { return inner_.depth_limit(); }

  std::uint64_t evaluations() const noexcept { return evaluations_; }

private:
  ModelSource& inner_;
  std::uint64_t evaluations_ = 0;
};

// ============================================================================
// Tree model
// ============================================================================

class TreeModel final : public ModelSource {
public:
  struct Edge {
    TokenId token = 0;
    double prob = 0.0;
    double logit = 0.0;
    std::int32_t child = -1;  // -1: the edge ends the output
  };
  struct Node {
    std::vector<Edge> edges;
  };

  TreeModel(ModelInfo info, std::map<TokenId, std::string> labels, std::vector<Node> nodes,
            std::size_t max_depth, double reference_temp)
      : info_(std::move(info)), labels_(std::move(labels)), nodes_(std::move(nodes)),
        max_depth_(max_depth), reference_temp_(reference_temp) {}

  const ModelInfo& info() const override { return info_; }

  LogitVector next_logits(const StepQuery& query) override {
    const Node& node = nodes_[walk(query.generated_prefix, /*allow_leaf=*/false)];
    LogitVector logits(info_.vocab_size, kOutOfSupport);
    for (const Edge& e : node.edges) {
      logits[e.token] = e.logit;
    }
    return logits;
  }

  bool is_complete(const StepQuery& query) override {
    return walk(query.generated_prefix, /*allow_leaf=*/true) == kLeaf;
  }

  std::string detokenize(std::span<const TokenId> tokens) const override {
    std::string text;
    for (TokenId t : tokens) {
      if (!text.empty()) text += ' ';
      auto it = labels_.find(t);
      text += it != labels_.end() ? it->second : "<" + std::to_string(t) + ">";
    }
    return text;
  }

  std::optional<std::size_t> depth_limit() const override { return max_depth_; }
  std::size_t max_depth() const noexcept { return max_depth_; }
  double reference_temp() const noexcept { return reference_temp_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::map<TokenId, std::string>& labels() const noexcept { return labels_; }

  std::optional<TokenId> token_for_label(std::string_view label) const {
    for (const auto& [id, text] : labels_) {
      if (text == label) return id;
    }
    return std::nullopt;
  }

private:
  static constexpr std::size_t kLeaf = static_cast<std::size_t>(-1);

  // Node index reached by the prefix, or kLeaf when it ends on a leaf edge.
  std::size_t walk(std::span<const TokenId> prefix, bool allow_leaf) const {
    if (prefix.size() > max_depth_) {
      throw Error(ErrorKind::SequenceTooLong, "prefix longer than tree max_depth");
    }
    std::size_t index = 0;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      if (index == kLeaf) {
        throw Error(ErrorKind::SequenceTooLong, "prefix continues past a leaf");
      }
      if (prefix[i] >= info_.vocab_size) {
        throw Error(ErrorKind::InvalidToken, "token id " + std::to_string(prefix[i]) + " outside vocabulary");
      }
      const Node& node = nodes_[index];
      auto it = std::find_if(node.edges.begin(), node.edges.end(),
                             [&](const Edge& e) { return e.token == prefix[i]; });
      if (it == node.edges.end()) {
        throw Error(ErrorKind::InvalidToken,
                    "token id " + std::to_string(prefix[i]) + " not in support at depth " + std::to_string(i));
      }
      index = it->child < 0 ? kLeaf : static_cast<std::size_t>(it->child);
    }
    if (index == kLeaf && !allow_leaf) {
      throw Error(ErrorKind::SequenceTooLong, "prefix is already a complete output");
    }
    return index;
  }

  ModelInfo info_;
  std::map<TokenId, std::string> labels_;
  std::vector<Node> nodes_;  // nodes_[0] is the root
  std::size_t max_depth_;
  double reference_temp_;
};

namespace detail {

inline TokenId parse_token_key(const std::string& key, const std::string& where) {
  std::size_t used = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(key, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != key.size() || key.empty() || key[0] == '-' || key[0] == '+') {
    throw Error(ErrorKind::Parse, where + ": token id '" + key + "' is not a non-negative integer");
  }
  return static_cast<TokenId>(value);
}

class TreeBuilder {
public:
  TreeBuilder(std::size_t vocab_size, std::size_t max_depth, double reference_temp)
      : vocab_size_(vocab_size), max_depth_(max_depth), reference_temp_(reference_temp) {}

  std::int32_t build(const nlohmann::json& node, const std::string& path, std::size_t depth) {
    if (!node.is_object() || !node.contains("children")) {
      throw Error(ErrorKind::Parse, path + ": node must be an object with 'children'");
    }
    const auto& children = node.at("children");
    if (!children.is_object()) {
      throw Error(ErrorKind::Parse, path + ".children: expected an object");
    }
    if (children.empty()) {
      throw Error(ErrorKind::Invariant, path + ": node has no children (use null for a leaf)");
    }
    if (depth >= max_depth_) {
      throw Error(ErrorKind::Invariant, path + ": path deeper than max_depth " + std::to_string(max_depth_));
    }

    const auto index = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();

    std::vector<TreeModel::Edge> edges;
    double total = 0.0;
    for (const auto& [key, child] : children.items()) {
      const std::string where = path + ".children." + key;
      const TokenId token = parse_token_key(key, where);
      if (token >= vocab_size_) {
        throw Error(ErrorKind::Invariant, where + ": token id outside vocabulary");
      }
      if (!child.is_object() || !child.contains("p") || !child.at("p").is_number()) {
        throw Error(ErrorKind::Parse, where + ": expected {\"p\": number, \"node\": ...}");
      }
      const double p = child.at("p").get<double>();
      if (!(p > 0.0 && p <= 1.0)) {
        throw Error(ErrorKind::Invariant, where + ".p: probability must lie in (0,1]");
      }
      total += p;

      TreeModel::Edge edge;
      edge.token = token;
      edge.prob = p;
      edge.logit = reference_temp_ * std::log(p);
      const auto sub = child.find("node");
      if (sub != child.end() && !sub->is_null()) {
        edge.child = build(*sub, where + ".node", depth + 1);
      }
      edges.push_back(edge);
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw Error(ErrorKind::Invariant, path + ": child probabilities sum to " + std::to_string(total));
    }
    nodes_[static_cast<std::size_t>(index)].edges = std::move(edges);
    return index;
  }

  std::vector<TreeModel::Node> take() { return std::move(nodes_); }

private:
  std::size_t vocab_size_;
  std::size_t max_depth_;
  double reference_temp_;
  std::vector<TreeModel::Node> nodes_;
};

// Rejects duplicate object keys, which nlohmann would otherwise collapse.
inline nlohmann::json parse_strict(const std::string& text) {
  std::vector<std::set<std::string>> seen;
  std::vector<std::string> keys;  // current key at each open object
  std::string duplicate;
  auto callback = [&](int /*depth*/, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
    using E = nlohmann::json::parse_event_t;
    if (event == E::object_start) {
      seen.emplace_back();
      keys.emplace_back();
    } else if (event == E::object_end) {
      seen.pop_back();
      keys.pop_back();
    } else if (event == E::key) {
      const auto key = parsed.get<std::string>();
      if (!seen.back().insert(key).second && duplicate.empty()) {
        for (std::size_t i = 0; i + 1 < keys.size(); ++i) duplicate += keys[i] + ".";
        duplicate += key;
      }
      keys.back() = key;
    }
    return true;
  };
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text, callback);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, e.what());
  }
  if (!duplicate.empty()) {
    throw Error(ErrorKind::Invariant, "duplicate key '" + duplicate + "'");
  }
  return doc;
}

} // namespace detail

/**
 * Parse a tree model document:
 *
 *   { "name": "...", "vocab": {"0": "Yes", ...}, "eos_id": null | id,
 *     "max_depth": 2, "reference_temp": 1.0,
 *     "root": {"children": {"0": {"p": 0.7, "node": {...} | null}, ...}} }
 *
 * "name" and "reference_temp" are optional.
 */
inline std::unique_ptr<TreeModel> parse_tree_model(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorKind::Parse, "empty tree model document");
  }
  const auto doc = detail::parse_strict(text);
  if (!doc.is_object()) {
    throw Error(ErrorKind::Parse, "top level must be an object");
  }
  for (const char* field : {"vocab", "max_depth", "root"}) {
    if (!doc.contains(field)) {
      throw Error(ErrorKind::Parse, std::string("missing field '") + field + "'");
    }
  }

  std::map<TokenId, std::string> labels;
  if (!doc.at("vocab").is_object()) {
    throw Error(ErrorKind::Parse, "vocab: expected an object of id -> string");
  }
  for (const auto& [key, value] : doc.at("vocab").items()) {
    if (!value.is_string()) {
      throw Error(ErrorKind::Parse, "vocab." + key + ": expected a string");
    }
    labels[detail::parse_token_key(key, "vocab." + key)] = value.get<std::string>();
  }
  if (labels.empty()) {
    throw Error(ErrorKind::Parse, "vocab: must not be empty");
  }

  ModelInfo info;
  info.vocab_size = static_cast<std::size_t>(labels.rbegin()->first) + 1;
  info.name = doc.value("name", std::string("tree"));

  if (doc.contains("eos_id") && !doc.at("eos_id").is_null()) {
    if (!doc.at("eos_id").is_number_unsigned()) {
      throw Error(ErrorKind::Parse, "eos_id: expected a token id or null");
    }
    info.eos_token_id = doc.at("eos_id").get<TokenId>();
    if (*info.eos_token_id >= info.vocab_size) {
      throw Error(ErrorKind::Invariant, "eos_id outside vocabulary");
    }
  }

  if (!doc.at("max_depth").is_number_unsigned() || doc.at("max_depth").get<std::size_t>() == 0) {
    throw Error(ErrorKind::Parse, "max_depth: expected a positive integer");
  }
  const auto max_depth = doc.at("max_depth").get<std::size_t>();

  double reference_temp = 1.0;
  if (doc.contains("reference_temp")) {
    if (!doc.at("reference_temp").is_number() || !(doc.at("reference_temp").get<double>() > 0.0)) {
      throw Error(ErrorKind::Parse, "reference_temp: expected a positive number");
    }
    reference_temp = doc.at("reference_temp").get<double>();
  }

  detail::TreeBuilder builder(info.vocab_size, max_depth, reference_temp);
  builder.build(doc.at("root"), "root", 0);
  return std::make_unique<TreeModel>(std::move(info), std::move(labels), builder.take(), max_depth,
                                     reference_temp);
}

inline std::unique_ptr<TreeModel> load_tree_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::Model, "cannot open tree model '" + path + "'");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_tree_model(buffer.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

// ============================================================================
// Synthetic model
// ============================================================================

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Sequential splitmix64 stream; a valid UniformRandomBitGenerator.
class SplitMix64 {
public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

private:
  std::uint64_t state_;
};

/// Uniform on (0, 1) from the top 53 bits.
inline double open_unit(SplitMix64& gen) {
  return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

/**
 * Standard normal pairs by Box-Muller. Written out rather than using
 * std::normal_distribution, whose algorithm differs between standard
 * libraries, so synthetic models are identical on every platform.
 */
inline void fill_standard_normal(SplitMix64& gen, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const double r = std::sqrt(-2.0 * std::log(open_unit(gen)));
    const double theta = 2.0 * std::numbers::pi * open_unit(gen);
    out[i] = r * std::cos(theta);
    if (i + 1 < out.size()) out[i + 1] = r * std::sin(theta);
  }
}

} // namespace detail

struct SynthParams {
  std::uint64_t seed = 0;
  std::size_t branching = 2;
  std::size_t depth = 1;
  double concentration = 1.0;  // standard deviation of the per-node logits
};

/**
 * Complete tree of the given branching and depth. Every node has exactly
 * `branching` children (token ids 0..branching-1) and every depth-`depth`
 * path is a finished output. Logits at a node are concentration * N(0,1)
 * draws from a generator seeded by hashing (seed, prefix).
 */
class SynthModel final : public ModelSource {
public:
  explicit SynthModel(SynthParams params) : params_(params) {
    if (params.branching < 2) {
      throw Error(ErrorKind::InvalidParameter, "synthetic branching must be at least 2");
    }
    if (params.depth < 1) {
      throw Error(ErrorKind::InvalidParameter, "synthetic depth must be at least 1");
    }
    if (!(params.concentration > 0.0) || !std::isfinite(params.concentration)) {
      throw Error(ErrorKind::InvalidParameter, "synthetic concentration must be positive");
    }
    info_.vocab_size = params.branching;
    char conc[32];
    std::snprintf(conc, sizeof conc, "%g", params.concentration);
    info_.name = "synth(seed=" + std::to_string(params.seed) + ",branching=" + std::to_string(params.branching) +
                 ",depth=" + std::to_string(params.depth) + ",concentration=" + conc + ")";
  }

  const ModelInfo& info() const override { return info_; }
  std::optional<std::size_t> depth_limit() const override { return params_.depth; }
  const SynthParams& params() const noexcept { return params_; }

  LogitVector next_logits(const StepQuery& query) override {
    const auto prefix = query.generated_prefix;
    check_prefix(prefix);
    if (prefix.size() >= params_.depth) {
      throw Error(ErrorKind::SequenceTooLong, "prefix reaches synthetic depth");
    }
    std::uint64_t h = detail::splitmix64(params_.seed);
    for (TokenId t : prefix) {
      h = detail::splitmix64(h ^ (static_cast<std::uint64_t>(t) + 1));
    }
    detail::SplitMix64 gen(h);
    LogitVector logits(params_.branching);
    detail::fill_standard_normal(gen, logits);
    for (double& l : logits) {
      l *= params_.concentration;
    }
    return logits;
  }

  bool is_complete(const StepQuery& query) override {
    check_prefix(query.generated_prefix);
    return query.generated_prefix.size() == params_.depth;
  }

  std::string detokenize(std::span<const TokenId> tokens) const override {
    std::string text;
    for (TokenId t : tokens) {
      if (!text.empty()) text += ' ';
      text += "t" + std::to_string(t);
    }
    return text;
  }

private:
  void check_prefix(std::span<const TokenId> prefix) const {
    if (prefix.size() > params_.depth) {
      throw Error(ErrorKind::SequenceTooLong, "prefix longer than synthetic depth");
    }
    for (TokenId t : prefix) {
      if (t >= params_.branching) {
        throw Error(ErrorKind::InvalidToken, "token id " + std::to_string(t) + " outside vocabulary");
      }
    }
  }

  SynthParams params_;
  ModelInfo info_;
};

inline std::unique_ptr<SynthModel> synth_random_model(std::uint64_t seed, std::size_t branching, std::size_t depth,
                                                      double concentration) {
  return std::make_unique<SynthModel>(SynthParams{seed, branching, depth, concentration});
}

} // namespace scout
