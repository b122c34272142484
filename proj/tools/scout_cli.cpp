/**
 * scout: command-line front end for output-scouting audits.
 *
 *   scout run        baseline + scouting runs, writes the report directory
 *   scout enumerate  exact outcome table of a small model
 *   scout flag       re-applies flag rules to an existing report
 *   scout report     recomputes and prints the summary of a report
 *
 * Exit codes: 0 success, 1 unreadable or inconsistent report input,
 * 2 configuration error, 3 model error, 4 bridge error.
 */

#include <scout/audit.hpp>
#include <scout/oracle.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

constexpr int kExitInput = 1;
constexpr int kExitConfig = 2;
constexpr int kExitModel = 3;
constexpr int kExitBridge = 4;

int exit_code_for(scout::ErrorKind kind) {
  using scout::ErrorKind;
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::InvalidParameter:
    case ErrorKind::CeilingExceeded: return kExitConfig;
    case ErrorKind::Bridge: return kExitBridge;
    case ErrorKind::Model:
    case ErrorKind::Invariant:
    case ErrorKind::InvalidToken:
    case ErrorKind::SequenceTooLong: return kExitModel;
    case ErrorKind::InvalidInput:
    case ErrorKind::Parse:
    case ErrorKind::DegenerateData: return kExitInput;
  }
  return kExitInput;
}

std::string default_output_dir() {
  if (const char* env = std::getenv("SCOUT_OUT_DIR"); env && *env) return env;
  return "scout-out";
}

// "uniform", "uniform:W", "beta:A,B" or "beta:A,B:W"; W is a relative share.
std::pair<scout::TargetSpec, double> parse_target_with_share(const std::string& text) {
  const auto colons = std::count(text.begin(), text.end(), ':');
  const bool is_beta = text.rfind("beta:", 0) == 0;
  const long plain_colons = is_beta ? 1 : 0;
  if (colons == plain_colons) return {scout::parse_target(text), 1.0};
  if (colons != plain_colons + 1) {
    throw scout::Error(scout::ErrorKind::Config, "cannot parse target '" + text + "'");
  }
  const auto cut = text.rfind(':');
  const std::string share_text = text.substr(cut + 1);
  double share = 0.0;
  try {
    std::size_t used = 0;
    share = std::stod(share_text, &used);
    if (used != share_text.size()) throw std::invalid_argument(share_text);
  } catch (const std::logic_error&) {
    throw scout::Error(scout::ErrorKind::Config, "bad share '" + share_text + "' in target '" + text + "'");
  }
  return {scout::parse_target(text.substr(0, cut)), share};
}

scout::TokenSeq parse_id_list(const std::string& text) {
  scout::TokenSeq ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      ids.push_back(static_cast<scout::TokenId>(v));
    } catch (const std::logic_error&) {
      throw scout::Error(scout::ErrorKind::Config, "bad token id '" + item + "' in --prompt-ids");
    }
  }
  return ids;
}

struct FlagOptions {
  std::vector<std::string> prefixes;
  std::vector<std::string> regexes;
  std::vector<scout::TokenId> tokens;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--flag-prefix", prefixes, "Flag records whose text starts with TEXT")->type_name("TEXT");
    cmd.add_option("--flag-regex", regexes, "Flag records whose text matches the ECMAScript regex")->type_name("RE");
    cmd.add_option("--flag-token", tokens, "Flag records whose first token id is ID")->type_name("ID");
  }

  std::vector<scout::FlagRule> rules() const {
    std::vector<scout::FlagRule> out;
    for (const auto& p : prefixes) out.push_back(scout::FlagRule::text_prefix(p));
    for (const auto& r : regexes) out.push_back(scout::FlagRule::text_regex(r));
    for (auto t : tokens) out.push_back(scout::FlagRule::first_token(t));
    return out;
  }
};

void print_summary(std::ostream& out, const scout::AuditSummary& summary) {
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %7s %8s %10s %14s  %s\n", "group", "count", "flagged", "mean_p",
                "mean_p_flagged", "ks raw/conditioned");
  out << line;
  for (const auto& g : summary.groups) {
    std::string ks;
    for (const auto& k : g.ks) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%s%s %.3f/%.3f", ks.empty() ? "" : "  ", k.target.c_str(), k.ks_raw,
                    k.ks_conditioned);
      ks += buf;
    }
    char flagged_mean[32] = "-";
    if (g.mean_norm_prob_flagged) std::snprintf(flagged_mean, sizeof flagged_mean, "%.4f", *g.mean_norm_prob_flagged);
    std::snprintf(line, sizeof line, "%-28s %7zu %8zu %10.4f %14s  ", g.group.c_str(), g.count, g.flagged,
                  g.mean_norm_prob, flagged_mean);
    out << line << ks << '\n';
  }
  out << "total records " << summary.total_records << ", flagged " << summary.total_flagged << '\n';
}

// Shared model/prompt/sampling options.
struct ModelOptions {
  std::string model;
  std::string prompt;
  std::string prompt_ids;
  double bridge_timeout_s = 120.0;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--model", model,
                   "Model: path to a .tree.json file, synth:seed=S,branching=K,depth=L[,concentration=C], "
                   "or bridge:<command>")
        ->required();
    cmd.add_option("--prompt", prompt, "Prompt text (tokenized by the model)");
    cmd.add_option("--prompt-ids", prompt_ids, "Prompt as comma-separated token ids")->excludes("--prompt");
    cmd.add_option("--bridge-timeout", bridge_timeout_s, "Seconds to wait for each bridge response")
        ->check(CLI::PositiveNumber);
  }

  std::chrono::milliseconds timeout() const {
    return std::chrono::milliseconds(static_cast<long long>(bridge_timeout_s * 1000.0));
  }
};

int cmd_run(const ModelOptions& mo, scout::AuditConfig config, std::size_t budget,
            const std::vector<std::string>& targets, const FlagOptions& flags, const std::string& fit_scale,
            const std::string& targeting, bool no_cache) {
  config.model_ref = mo.model;
  config.prompt = mo.prompt;
  if (!mo.prompt_ids.empty()) config.prompt_tokens = parse_id_list(mo.prompt_ids);
  config.bridge_timeout = mo.timeout();
  config.use_cache = !no_cache;
  config.scout.fit_scale = fit_scale == "raw" ? scout::FitScale::Probability : scout::FitScale::LogProbability;
  config.scout.targeting =
      targeting == "deficit" ? scout::Targeting::DeficitFill : scout::Targeting::InverseTransform;
  config.flag_rules = flags.rules();

  std::vector<std::string> target_texts = targets;
  if (target_texts.empty() && budget > 0) target_texts.push_back("uniform");
  std::vector<scout::TargetSpec> specs;
  std::vector<double> shares;
  for (const auto& t : target_texts) {
    auto [spec, share] = parse_target_with_share(t);
    specs.push_back(spec);
    shares.push_back(share);
  }
  if (budget == 0 && !specs.empty()) {
    throw scout::Error(scout::ErrorKind::Config, "--target given without a scouting --budget");
  }
  const auto split = scout::split_budget(budget, shares);
  for (std::size_t i = 0; i < specs.size(); ++i) config.targets.push_back({specs[i], split[i]});

  const auto report = scout::run_audit(config);
  print_summary(std::cout, report.summary);
  std::cout << "cache: " << (report.cache_enabled ? "on" : "off") << ", hits " << report.cache.hits << ", misses "
            << report.cache.misses << ", model evaluations " << report.model_evaluations << '\n';
  std::cout << "report written to " << config.output_dir << '\n';
  return 0;
}

int cmd_enumerate(const ModelOptions& mo, const scout::EnumerationParams& params, const std::string& out_path) {
  auto model = scout::open_model(mo.model, mo.timeout());
  const scout::TokenSeq prompt = mo.prompt_ids.empty() ? model->tokenize(mo.prompt) : parse_id_list(mo.prompt_ids);
  const auto dist = scout::enumerate_outcomes(*model, prompt, params);
  if (out_path.empty() || out_path == "-") {
    scout::write_outcome_table(std::cout, dist, *model);
  } else {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw scout::Error(scout::ErrorKind::Config, "cannot write " + out_path);
    scout::write_outcome_table(out, dist, *model);
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu outcomes, total mass %.17g\n", dist.outcomes.size(), dist.total_mass);
  std::cerr << buf;
  return 0;
}

nlohmann::ordered_json load_summary_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw scout::Error(scout::ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

int cmd_flag(const std::filesystem::path& in_dir, std::filesystem::path out_dir, const FlagOptions& flags,
             std::size_t bins) {
  if (out_dir.empty()) out_dir = in_dir;
  auto records = scout::load_records(in_dir / "records.jsonl");
  const auto rules = flags.rules();
  const auto flagged = scout::apply_flags(records, rules);
  const auto summary = scout::summarize(records);

  auto summary_json = load_summary_json(in_dir / "summary.json");
  if (!summary_json.is_object()) summary_json = nlohmann::ordered_json::object();
  auto& rules_json = summary_json["config"]["flag_rules"];
  rules_json = nlohmann::ordered_json::array();
  for (const auto& r : rules) {
    rules_json.push_back({{"kind", std::string(scout::to_string(r.kind()))}, {"pattern", r.pattern()}, {"label", r.label()}});
  }
  summary_json["summary"] = scout::summary_to_json(summary);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw scout::Error(scout::ErrorKind::Config, "cannot create " + out_dir.string());
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw scout::Error(scout::ErrorKind::Config, "cannot write " + p.string());
    return out;
  };
  {
    auto out = open(out_dir / "records.jsonl");
    scout::write_records(out, records);
  }
  {
    auto out = open(out_dir / "summary.json");
    out << summary_json.dump(2) << '\n';
  }
  {
    auto out = open(out_dir / "review.csv");
    scout::write_review_csv(out, records);
  }
  if (out_dir != in_dir) {
    auto out = open(out_dir / "histogram.csv");
    scout::write_histogram_csv(out, scout::emit_histogram(records, bins));
  }
  print_summary(std::cout, summary);
  std::cout << flagged << " of " << records.size() << " records flagged\n";
  return 0;
}

int cmd_report(const std::filesystem::path& in_dir) {
  const auto records = scout::load_records(in_dir / "records.jsonl");
  const auto summary = scout::summarize(records);
  print_summary(std::cout, summary);

  const auto stored = load_summary_json(in_dir / "summary.json");
  if (!stored.is_object() || !stored.contains("summary")) {
    std::cout << "no stored summary to compare against\n";
    return 0;
  }
  if (stored.at("summary") != scout::summary_to_json(summary)) {
    std::cerr << "stored summary.json does not match the records\n";
    return kExitInput;
  }
  std::cout << "stored summary matches the records\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Output scouting: find low-probability outputs of a language model under a fixed query budget"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run a vanilla baseline and scouting runs, write a report directory");
  ModelOptions run_model;
  run_model.add_to(*run);
  scout::AuditConfig config;
  config.output_dir = default_output_dir();
  std::size_t budget = 0;
  std::vector<std::string> targets;
  std::string fit_scale = "log";
  std::string targeting = "inverse";
  bool no_cache = false;
  FlagOptions run_flags;
  run->add_option("--budget", budget, "Total scouting queries, split over the targets");
  run->add_option("--target", targets, "Target law: uniform or beta:A,B, optionally :SHARE (repeatable)");
  run->add_option("--baseline", config.baseline_budget, "Vanilla baseline queries");
  run->add_option("--base-temp", config.scout.base_temp, "Deployed temperature")->capture_default_str();
  run->add_option("--top-k", config.scout.top_k, "Top-k truncation")->capture_default_str();
  run->add_option("--max-len", config.scout.max_len, "Maximum output length")->capture_default_str();
  run->add_option("--aux-temp-min", config.scout.aux_temp_low, "Lowest auxiliary temperature")->capture_default_str();
  run->add_option("--aux-temp-max", config.scout.aux_temp_high, "Highest auxiliary temperature")->capture_default_str();
  run->add_option("--warmup", config.scout.warmup_count, "Warm-up queries per scouting run")->capture_default_str();
  run->add_option("--seed", config.scout.seed, "Random seed")->capture_default_str();
  run->add_option("--fit-scale", fit_scale, "Response scale of the temperature fit")
      ->check(CLI::IsMember({"log", "raw"}))
      ->capture_default_str();
  run->add_option("--targeting", targeting, "How each query picks its target probability")
      ->check(CLI::IsMember({"inverse", "deficit"}))
      ->capture_default_str();
  run->add_option("--bins", config.histogram_bins, "Histogram bins")->capture_default_str();
  run->add_flag("--no-cache", no_cache, "Disable the prefix cache");
  run->add_option("--out", config.output_dir, "Report directory (default $SCOUT_OUT_DIR or ./scout-out)");
  run_flags.add_to(*run);

  // enumerate
  auto* enumerate = app.add_subcommand("enumerate", "Print the exact outcome distribution of a small model");
  ModelOptions enum_model;
  enum_model.add_to(*enumerate);
  scout::EnumerationParams params;
  params.base_temp = 0.5;
  std::string enum_out;
  enumerate->add_option("--base-temp", params.base_temp, "Deployed temperature")->capture_default_str();
  enumerate->add_option("--top-k", params.top_k, "Top-k truncation")->capture_default_str();
  enumerate->add_option("--max-len", params.max_len, "Maximum output length")->capture_default_str();
  enumerate->add_option("--max-leaves", params.max_leaves, "Refuse trees with more estimated leaves")
      ->capture_default_str();
  enumerate->add_option("--out", enum_out, "Output file (default stdout)");

  // flag
  auto* flag = app.add_subcommand("flag", "Re-apply flag rules to an existing report directory");
  std::string flag_in;
  std::string flag_out;
  std::size_t flag_bins = 10;
  FlagOptions flag_rules;
  flag->add_option("--in", flag_in, "Report directory to read")->required();
  flag->add_option("--out", flag_out, "Directory to write (default: rewrite --in)");
  flag->add_option("--bins", flag_bins, "Histogram bins when writing to a new directory")->capture_default_str();
  flag_rules.add_to(*flag);

  // report
  auto* report = app.add_subcommand("report", "Recompute and print the summary of a report directory");
  std::string report_in;
  report->add_option("--in", report_in, "Report directory to read")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) {
      return cmd_run(run_model, config, budget, targets, run_flags, fit_scale, targeting, no_cache);
    }
    if (*enumerate) return cmd_enumerate(enum_model, params, enum_out);
    if (*flag) return cmd_flag(flag_in, flag_out, flag_rules, flag_bins);
    if (*report) return cmd_report(report_in);
  } catch (const scout::Error& e) {
    std::cerr << "scout: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "scout: " << e.what() << '\n';
    return kExitInput;
  }
  return 0;
}
