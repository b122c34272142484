#pragma once

/**
 * Audit driver and report files
 *
 * An audit runs one vanilla baseline plus one scouting run per target, all
 * against the same (model, prompt) and one shared prefix cache, then
 * pre-flags records with simple text/token rules and writes the artifacts a
 * human reviewer works from:
 *
 *   records.jsonl   one JSON object per record, in generation order
 *   summary.json    config echo, per-group statistics, cache statistics
 *   histogram.csv   equal-width norm_prob bins, one count column per group
 *   review.csv      every record with a blank verdict column
 *
 * Records are grouped by (mode, target): "VANILLA", "WARMUP:<target>",
 * "SCOUT:<target>". Every statistic in the summary is recomputable from
 * records.jsonl alone; norm_prob is rounded to 9 significant digits before
 * anything is computed from it so that the written file and the in-memory
 * report agree exactly.
 */

#include "bridge.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "model.hpp"
#include "prefix_cache.hpp"
#include "prob.hpp"
#include "target.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace scout {

// ============================================================================
// Records
// ============================================================================

/// One report row: a ScoutRecord reduced to what is written to disk.
struct AuditRecord {
  std::size_t query_index = 0;
  Mode mode = Mode::Vanilla;
  std::string target;
  double aux_temp_used = 0.0;
  double norm_prob = 0.0;
  TokenSeq tokens;
  std::string text;
  std::vector<std::string> flags;

  bool operator==(const AuditRecord&) const = default;
};

/// Rounds to 9 significant digits (the record file precision).
inline double round_sig9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline AuditRecord to_audit_record(const ScoutRecord& rec) {
  AuditRecord out;
  out.query_index = rec.query_index;
  out.mode = rec.mode;
  out.target = rec.target;
  out.aux_temp_used = rec.aux_temp_used;
  out.norm_prob = round_sig9(rec.norm_prob);
  out.tokens = rec.tokens();
  out.text = rec.text;
  return out;
}

/// "VANILLA" for the baseline, "SCOUT:<target>" for a scouting run including its warm-up.
inline std::string group_label(const AuditRecord& rec) {
  if (rec.mode == Mode::Vanilla) return std::string(to_string(Mode::Vanilla));
  return std::string(to_string(Mode::Scout)) + ":" + rec.target;
}

// ============================================================================
// Flag rules
// ============================================================================

enum class FlagKind { TextPrefix, TextRegex, FirstTokenId };

inline std::string_view to_string(FlagKind k) {
  switch (k) {
    case FlagKind::TextPrefix: return "TEXT_PREFIX";
    case FlagKind::TextRegex: return "TEXT_REGEX";
    case FlagKind::FirstTokenId: return "FIRST_TOKEN_ID";
  }
  return "?";
}

/// Pre-screening pattern. Matches never replace human review.
class FlagRule {
public:
  static FlagRule text_prefix(std::string prefix, std::string label = {}) {
    if (prefix.empty()) throw Error(ErrorKind::Config, "flag prefix must be non-empty");
    FlagRule r(FlagKind::TextPrefix, std::move(prefix), std::move(label));
    return r;
  }

  static FlagRule text_regex(std::string pattern, std::string label = {}) {
    if (pattern.empty()) throw Error(ErrorKind::Config, "flag regex must be non-empty");
    FlagRule r(FlagKind::TextRegex, pattern, std::move(label));
    try {
      r.regex_ = std::make_shared<const std::regex>(pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw Error(ErrorKind::Config, "flag regex '" + pattern + "' does not compile: " + e.what());
    }
    return r;
  }

  static FlagRule first_token(TokenId id, std::string label = {}) {
    FlagRule r(FlagKind::FirstTokenId, std::to_string(id), std::move(label));
    r.token_ = id;
    return r;
  }

  FlagKind kind() const noexcept { return kind_; }
  const std::string& pattern() const noexcept { return pattern_; }
  const std::string& label() const noexcept { return label_; }

  bool matches(const AuditRecord& rec) const {
    switch (kind_) {
      case FlagKind::TextPrefix: return rec.text.compare(0, pattern_.size(), pattern_) == 0;
      case FlagKind::TextRegex: return std::regex_search(rec.text, *regex_);
      case FlagKind::FirstTokenId: return !rec.tokens.empty() && rec.tokens.front() == token_;
    }
    return false;
  }

private:
  FlagRule(FlagKind kind, std::string pattern, std::string label)
      : kind_(kind), pattern_(std::move(pattern)), label_(std::move(label)) {
    if (label_.empty()) {
      const char* prefix = kind_ == FlagKind::TextPrefix ? "prefix:" : kind_ == FlagKind::TextRegex ? "regex:" : "token:";
      label_ = prefix + pattern_;
    }
  }

  FlagKind kind_;
  std::string pattern_;
  std::string label_;
  TokenId token_ = 0;
  std::shared_ptr<const std::regex> regex_;
};

struct Flagged {
  std::size_t index = 0;  // position in the record list
  std::vector<std::string> labels;
};

/// Records matched by at least one rule, in record order, with every matching label.
inline std::vector<Flagged> flag_responses(std::span<const AuditRecord> records, std::span<const FlagRule> rules) {
  std::vector<Flagged> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    Flagged f{i, {}};
    for (const auto& rule : rules) {
      if (rule.matches(records[i])) f.labels.push_back(rule.label());
    }
    if (!f.labels.empty()) out.push_back(std::move(f));
  }
  return out;
}

/// Replaces every record's flags with the rules' verdicts.
inline std::size_t apply_flags(std::vector<AuditRecord>& records, std::span<const FlagRule> rules) {
  for (auto& r : records) r.flags.clear();
  const auto flagged = flag_responses(records, rules);
  for (const auto& f : flagged) records[f.index].flags = f.labels;
  return flagged.size();
}

// ============================================================================
// Summary and histogram
// ============================================================================

struct TargetMatch {
  std::string target;
  double ks_raw = 0.0;
  double ks_conditioned = 0.0;

  bool operator==(const TargetMatch&) const = default;
};

struct GroupSummary {
  std::string group;
  std::size_t count = 0;
  std::size_t flagged = 0;
  std::optional<double> mean_norm_prob_flagged;
  double mean_norm_prob = 0.0;
  double min_norm_prob = 0.0;
  double max_norm_prob = 0.0;
  std::vector<TargetMatch> ks;

  bool operator==(const GroupSummary&) const = default;
};

struct AuditSummary {
  std::size_t total_records = 0;
  std::size_t total_flagged = 0;
  std::vector<GroupSummary> groups;

  bool operator==(const AuditSummary&) const = default;
};

namespace detail {

inline std::vector<std::string> groups_in_order(std::span<const AuditRecord> records) {
  std::vector<std::string> groups;
  for (const auto& r : records) {
    const auto g = group_label(r);
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  return groups;
}

// "uniform" plus every distinct target label in the records.
inline std::vector<std::string> targets_in_records(std::span<const AuditRecord> records) {
  std::vector<std::string> out{"uniform"};
  for (const auto& r : records) {
    if (r.target.empty()) continue;
    const auto canonical = to_string(parse_target(r.target));
    if (std::find(out.begin(), out.end(), canonical) == out.end()) out.push_back(canonical);
  }
  return out;
}

} // namespace detail

/// Per-group statistics, KS against every target present in the records.
inline AuditSummary summarize(std::span<const AuditRecord> records) {
  AuditSummary s;
  s.total_records = records.size();
  const auto targets = detail::targets_in_records(records);
  for (const auto& group : detail::groups_in_order(records)) {
    GroupSummary g;
    g.group = group;
    std::vector<double> values;
    double flagged_sum = 0.0;
    for (const auto& r : records) {
      if (group_label(r) != group) continue;
      values.push_back(r.norm_prob);
      if (!r.flags.empty()) {
        ++g.flagged;
        flagged_sum += r.norm_prob;
      }
    }
    g.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    g.mean_norm_prob = sum / static_cast<double>(values.size());
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    g.min_norm_prob = *lo;
    g.max_norm_prob = *hi;
    if (g.flagged > 0) g.mean_norm_prob_flagged = flagged_sum / static_cast<double>(g.flagged);
    for (const auto& t : targets) {
      const auto spec = parse_target(t);
      g.ks.push_back({t, ks_statistic(values, spec), ks_statistic_conditioned(values, spec)});
    }
    s.total_flagged += g.flagged;
    s.groups.push_back(std::move(g));
  }
  return s;
}

struct Histogram {
  std::size_t bins = 0;
  std::vector<std::string> groups;
  std::vector<std::vector<std::size_t>> counts;  // [group][bin]
};

/// Equal-width bins over [0, 1]; a value of exactly 1.0 lands in the top bin.
inline std::size_t histogram_bin(double value, std::size_t bins) {
  if (!(value > 0.0)) return 0;
  return std::min(bins - 1, static_cast<std::size_t>(value * static_cast<double>(bins)));
}

inline Histogram emit_histogram(std::span<const AuditRecord> records, std::size_t bin_count) {
  if (bin_count == 0) throw Error(ErrorKind::InvalidParameter, "histogram needs at least one bin");
  Histogram h;
  h.bins = bin_count;
  h.groups = detail::groups_in_order(records);
  h.counts.assign(h.groups.size(), std::vector<std::size_t>(bin_count, 0));
  for (const auto& r : records) {
    const auto g = static_cast<std::size_t>(
        std::find(h.groups.begin(), h.groups.end(), group_label(r)) - h.groups.begin());
    ++h.counts[g][histogram_bin(r.norm_prob, bin_count)];
  }
  return h;
}

// ============================================================================
// Audit configuration and execution
// ============================================================================

struct TargetShare {
  TargetSpec target;
  std::size_t budget = 0;
};

struct AuditConfig {
  std::string model_ref;
  std::string prompt;                     // text, tokenized by the model
  std::optional<TokenSeq> prompt_tokens;  // explicit ids; takes precedence
  ScoutConfig scout;
  std::vector<TargetShare> targets;
  std::size_t baseline_budget = 0;
  std::vector<FlagRule> flag_rules;
  std::string output_dir;
  std::size_t histogram_bins = 10;
  bool use_cache = true;
  std::chrono::milliseconds bridge_timeout{120000};

  std::size_t scouting_budget() const {
    std::size_t total = 0;
    for (const auto& t : targets) total += t.budget;
    return total;
  }

  void validate() const {
    try {
      scout.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, e.what());
    }
    if (baseline_budget == 0 && scouting_budget() == 0) {
      throw Error(ErrorKind::Config, "baseline and scouting budgets are both zero");
    }
    for (const auto& t : targets) {
      if (t.budget != 0 && t.budget <= scout.warmup_count) {
        throw Error(ErrorKind::Config, "budget " + std::to_string(t.budget) + " for target " + to_string(t.target) +
                                           " does not exceed the " + std::to_string(scout.warmup_count) +
                                           " warm-up queries");
      }
    }
    if (histogram_bins == 0) throw Error(ErrorKind::Config, "histogram needs at least one bin");
  }
};

/**
 * Splits `total` queries by relative weights (largest remainder; ties go to
 * the earlier entry). Equal weights divide the budget evenly.
 */
inline std::vector<std::size_t> split_budget(std::size_t total, std::span<const double> weights) {
  if (weights.empty()) {
    if (total != 0) throw Error(ErrorKind::Config, "scouting budget given without a target");
    return {};
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw Error(ErrorKind::Config, "target shares must be positive");
    sum += w;
  }
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[remainders[k % remainders.size()].second];
  return out;
}

/// Independent per-run seed: stream 0 is the baseline, stream i the i-th target.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return detail::splitmix64(detail::splitmix64(seed) + stream);
}

struct AuditReport {
  AuditConfig config;
  std::string model_name;
  TokenSeq prompt_tokens;
  std::vector<AuditRecord> records;
  AuditSummary summary;
  Histogram histogram;
  bool cache_enabled = true;
  CacheStats cache;
  std::uint64_t model_evaluations = 0;

  std::vector<std::size_t> flagged_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!records[i].flags.empty()) out.push_back(i);
    }
    return out;
  }
};

/// Runs the baseline and every scouting run against an already open model.
inline AuditReport execute_audit(const AuditConfig& config, ModelSource& model) {
  config.validate();
  AuditReport report;
  report.config = config;
  report.model_name = model.info().name;
  report.prompt_tokens = config.prompt_tokens ? *config.prompt_tokens : model.tokenize(config.prompt);
  report.cache_enabled = config.use_cache;

  CountingSource counted(model);
  PrefixCache cache(report.prompt_tokens);
  StepSource steps(counted, config.use_cache ? &cache : nullptr);

  if (config.baseline_budget > 0) {
    Rng rng(derive_seed(config.scout.seed, 0));
    for (const auto& rec : vanilla_sample(steps, report.prompt_tokens, config.scout, config.baseline_budget, rng)) {
      report.records.push_back(to_audit_record(rec));
    }
  }
  for (std::size_t i = 0; i < config.targets.size(); ++i) {
    const auto& share = config.targets[i];
    if (share.budget == 0) continue;
    ScoutConfig run_config = config.scout;
    run_config.budget = share.budget;
    run_config.seed = derive_seed(config.scout.seed, i + 1);
    for (const auto& rec : scout(steps, report.prompt_tokens, run_config, share.target)) {
      report.records.push_back(to_audit_record(rec));
    }
  }

  apply_flags(report.records, config.flag_rules);
  report.summary = summarize(report.records);
  report.histogram = emit_histogram(report.records, config.histogram_bins);
  report.cache = cache.stats();
  report.model_evaluations = counted.evaluations();
  return report;
}

// ============================================================================
// Model references
// ============================================================================

namespace detail {

inline SynthParams parse_synth_ref(std::string_view body) {
  SynthParams p;
  p.concentration = 1.5;
  bool have_seed = false, have_branching = false, have_depth = false;
  std::string rest(body);
  std::stringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, "synthetic model option '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      std::size_t used = 0;
      if (key == "seed") {
        p.seed = std::stoull(value, &used);
        have_seed = true;
      } else if (key == "branching") {
        p.branching = std::stoull(value, &used);
        have_branching = true;
      } else if (key == "depth") {
        p.depth = std::stoull(value, &used);
        have_depth = true;
      } else if (key == "concentration") {
        p.concentration = std::stod(value, &used);
      } else {
        throw Error(ErrorKind::Config, "unknown synthetic model option '" + key + "'");
      }
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::Config, "bad value for synthetic model option '" + key + "': '" + value + "'");
    }
  }
  if (!have_seed || !have_branching || !have_depth) {
    throw Error(ErrorKind::Config, "synthetic model needs seed, branching and depth");
  }
  return p;
}

} // namespace detail

/**
 * Opens a model reference:
 *   synth:seed=S,branching=K,depth=L[,concentration=C]
 *   bridge:<shell command>
 *   <path to a .tree.json file>
 */
inline std::unique_ptr<ModelSource> open_model(std::string_view ref,
                                               std::chrono::milliseconds bridge_timeout = std::chrono::milliseconds(120000)) {
  if (ref.empty()) throw Error(ErrorKind::Config, "no model given");
  if (ref.substr(0, 6) == "synth:") {
    const auto params = detail::parse_synth_ref(ref.substr(6));
    try {
      return std::make_unique<SynthModel>(params);
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, e.what());
    }
  }
  if (ref.substr(0, 7) == "bridge:") {
    BridgeOptions options;
    options.command = std::string(ref.substr(7));
    options.timeout = bridge_timeout;
    if (options.command.empty()) throw Error(ErrorKind::Config, "bridge command is empty");
    return std::make_unique<BridgeSource>(options);
  }
  try {
    return load_tree_model(std::string(ref));
  } catch (const Error& e) {
    throw Error(ErrorKind::Model, std::string(ref) + ": " + e.what());
  }
}

inline AuditReport execute_audit(const AuditConfig& config) {
  config.validate();
  auto model = open_model(config.model_ref, config.bridge_timeout);
  return execute_audit(config, *model);
}

// ============================================================================
// Report files
// ============================================================================

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string format_sig9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

} // namespace detail

inline nlohmann::ordered_json record_to_json(const AuditRecord& r) {
  nlohmann::ordered_json j;
  j["query_index"] = r.query_index;
  j["mode"] = std::string(to_string(r.mode));
  j["target"] = r.target;
  j["aux_temp_used"] = r.aux_temp_used;
  j["norm_prob"] = round_sig9(r.norm_prob);
  j["tokens"] = r.tokens;
  j["text"] = r.text;
  j["flags"] = r.flags;
  return j;
}

inline void write_records(std::ostream& out, std::span<const AuditRecord> records) {
  for (const auto& r : records) {
    out << record_to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

inline std::vector<AuditRecord> read_records(std::istream& in) {
  std::vector<AuditRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AuditRecord r;
      r.query_index = j.at("query_index").get<std::size_t>();
      r.mode = parse_mode(j.at("mode").get<std::string>());
      r.target = j.at("target").get<std::string>();
      r.aux_temp_used = j.at("aux_temp_used").get<double>();
      r.norm_prob = j.at("norm_prob").get<double>();
      r.tokens = j.at("tokens").get<TokenSeq>();
      r.text = j.at("text").get<std::string>();
      r.flags = j.at("flags").get<std::vector<std::string>>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, "records line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorKind::Parse, "records line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::ordered_json summary_to_json(const AuditSummary& s) {
  nlohmann::ordered_json j;
  j["total_records"] = s.total_records;
  j["total_flagged"] = s.total_flagged;
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : s.groups) {
    nlohmann::ordered_json gj;
    gj["group"] = g.group;
    gj["count"] = g.count;
    gj["flagged"] = g.flagged;
    gj["mean_norm_prob_flagged"] =
        g.mean_norm_prob_flagged ? nlohmann::ordered_json(*g.mean_norm_prob_flagged) : nlohmann::ordered_json();
    gj["mean_norm_prob"] = g.mean_norm_prob;
    gj["min_norm_prob"] = g.min_norm_prob;
    gj["max_norm_prob"] = g.max_norm_prob;
    gj["ks"] = nlohmann::ordered_json::array();
    for (const auto& k : g.ks) {
      gj["ks"].push_back({{"target", k.target}, {"raw", k.ks_raw}, {"conditioned", k.ks_conditioned}});
    }
    j["groups"].push_back(std::move(gj));
  }
  return j;
}

inline nlohmann::ordered_json config_to_json(const AuditReport& report) {
  const auto& c = report.config;
  nlohmann::ordered_json j;
  j["model"] = c.model_ref;
  j["model_name"] = report.model_name;
  j["prompt"] = c.prompt;
  j["prompt_tokens"] = report.prompt_tokens;
  j["base_temp"] = c.scout.base_temp;
  j["top_k"] = c.scout.top_k;
  j["max_len"] = c.scout.max_len;
  j["aux_temp_low"] = c.scout.aux_temp_low;
  j["aux_temp_high"] = c.scout.aux_temp_high;
  j["warmup_count"] = c.scout.warmup_count;
  j["fit_scale"] = c.scout.fit_scale == FitScale::LogProbability ? "log" : "raw";
  j["targeting"] = c.scout.targeting == Targeting::InverseTransform ? "inverse" : "deficit";
  j["seed"] = c.scout.seed;
  j["baseline_budget"] = c.baseline_budget;
  j["targets"] = nlohmann::ordered_json::array();
  for (const auto& t : c.targets) j["targets"].push_back({{"target", to_string(t.target)}, {"budget", t.budget}});
  j["flag_rules"] = nlohmann::ordered_json::array();
  for (const auto& r : c.flag_rules) {
    j["flag_rules"].push_back({{"kind", std::string(to_string(r.kind()))}, {"pattern", r.pattern()}, {"label", r.label()}});
  }
  j["histogram_bins"] = c.histogram_bins;
  return j;
}

inline nlohmann::ordered_json cache_to_json(const AuditReport& report) {
  nlohmann::ordered_json j;
  j["enabled"] = report.cache_enabled;
  j["hits"] = report.cache.hits;
  j["misses"] = report.cache.misses;
  j["nodes"] = report.cache.nodes;
  j["bytes_estimate"] = report.cache.bytes_estimate;
  j["evictions"] = report.cache.evictions;
  j["model_evaluations"] = report.model_evaluations;
  return j;
}

inline void write_summary(std::ostream& out, const AuditReport& report) {
  nlohmann::ordered_json j;
  j["config"] = config_to_json(report);
  j["summary"] = summary_to_json(report.summary);
  j["cache"] = cache_to_json(report);
  out << j.dump(2) << '\n';
}

inline void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "bin_lo,bin_hi";
  for (const auto& g : h.groups) out << ',' << detail::csv_field(g);
  out << '\n';
  for (std::size_t b = 0; b < h.bins; ++b) {
    out << detail::format_sig9(static_cast<double>(b) / static_cast<double>(h.bins)) << ','
        << detail::format_sig9(static_cast<double>(b + 1) / static_cast<double>(h.bins));
    for (std::size_t g = 0; g < h.groups.size(); ++g) out << ',' << h.counts[g][b];
    out << '\n';
  }
}

inline void write_review_csv(std::ostream& out, std::span<const AuditRecord> records) {
  out << "group,query_index,mode,target,norm_prob,aux_temp_used,flags,text,verdict\n";
  for (const auto& r : records) {
    out << detail::csv_field(group_label(r)) << ',' << r.query_index << ',' << to_string(r.mode) << ','
        << detail::csv_field(r.target) << ',' << detail::format_sig9(r.norm_prob) << ','
        << detail::format_sig9(r.aux_temp_used) << ',' << detail::csv_field(detail::join(r.flags, ";")) << ','
        << detail::csv_field(r.text) << ",\n";
  }
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Config, "cannot write " + path.string());
  return out;
}

} // namespace detail

/// Writes all four report files into `dir`, creating it if needed.
inline void write_report(const AuditReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Config, "cannot create output directory " + dir.string() + ": " + ec.message());
  {
    auto out = detail::open_output(dir / "records.jsonl");
    write_records(out, report.records);
  }
  {
    auto out = detail::open_output(dir / "summary.json");
    write_summary(out, report);
  }
  {
    auto out = detail::open_output(dir / "histogram.csv");
    write_histogram_csv(out, report.histogram);
  }
  {
    auto out = detail::open_output(dir / "review.csv");
    write_review_csv(out, report.records);
  }
}

/// Opens the model, runs the audit and writes the report to config.output_dir.
inline AuditReport run_audit(const AuditConfig& config) {
  auto report = execute_audit(config);
  write_report(report, config.output_dir);
  return report;
}

inline std::vector<AuditRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Config, "cannot read " + path.string());
  return read_records(in);
}

} // namespace scout
