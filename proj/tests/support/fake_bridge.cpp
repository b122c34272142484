/**
 * Test double for the bridge process: serves an in-process model (tree
 * fixture or synthetic) over the line-delimited JSON protocol on
 * stdin/stdout. Failure modes can be injected to exercise the client.
 *
 *   fake_bridge --model REF [--die-after N] [--hang-after N]
 *               [--garbage-after N] [--wrong-id-after N] [--fixed-logits a,b,c]
 */

#include <scout/audit.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace {

struct Options {
  std::string model;
  long die_after = -1;
  long hang_after = -1;
  long garbage_after = -1;
  long wrong_id_after = -1;
  std::vector<double> fixed_logits;
};

Options parse_args(int argc, char** argv) {
  Options o;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string key = argv[i];
    const std::string value = argv[i + 1];
    if (key == "--model") o.model = value;
    else if (key == "--die-after") o.die_after = std::stol(value);
    else if (key == "--hang-after") o.hang_after = std::stol(value);
    else if (key == "--garbage-after") o.garbage_after = std::stol(value);
    else if (key == "--wrong-id-after") o.wrong_id_after = std::stol(value);
    else if (key == "--fixed-logits") {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) o.fixed_logits.push_back(std::stod(item));
    }
  }
  return o;
}

nlohmann::json error_reply(const nlohmann::json& id, const std::string& reason) {
  return {{"id", id}, {"ok", false}, {"error", reason}};
}

nlohmann::json logits_json(const scout::LogitVector& logits) {
  auto arr = nlohmann::json::array();
  for (double l : logits) {
    if (std::isinf(l) && l < 0) arr.push_back(nullptr);
    else arr.push_back(l);
  }
  return arr;
}

class Server {
public:
  explicit Server(Options o) : opts_(std::move(o)) {
    if (!opts_.fixed_logits.empty()) {
      info_.vocab_size = opts_.fixed_logits.size();
      info_.name = "fixed";
    } else {
      model_ = scout::open_model(opts_.model);
      info_ = model_->info();
    }
  }

  nlohmann::json handle(const nlohmann::json& req) {
    const nlohmann::json id = req.contains("id") ? req.at("id") : nlohmann::json();
    if (!req.contains("op") || !req.at("op").is_string()) return error_reply(id, "missing op");
    const auto op = req.at("op").get<std::string>();
    if (op == "INFO") {
      return {{"id", id},
              {"ok", true},
              {"vocab_size", info_.vocab_size},
              {"eos_token_id", info_.eos_token_id ? nlohmann::json(*info_.eos_token_id) : nlohmann::json()},
              {"name", info_.name}};
    }
    if (op == "LOGITS") {
      if (!opts_.fixed_logits.empty()) return {{"id", id}, {"ok", true}, {"logits", logits_json(opts_.fixed_logits)}};
      const auto prompt = req.value("prompt", scout::TokenSeq{});
      const auto prefix = req.at("prefix").get<scout::TokenSeq>();
      const scout::StepQuery q{prompt, prefix};
      const auto out = model_->step(q);
      if (out.complete) return {{"id", id}, {"ok", true}, {"terminal", true}};
      if (req.contains("top_k")) {
        const auto k = req.at("top_k").get<std::size_t>();
        const auto support = scout::apply_top_k(out.logits, k);
        std::vector<double> values;
        for (auto t : support) values.push_back(out.logits[t]);
        return {{"id", id}, {"ok", true}, {"ids", support}, {"logits", values}};
      }
      return {{"id", id}, {"ok", true}, {"logits", logits_json(out.logits)}};
    }
    if (op == "DETOKENIZE") {
      const auto tokens = req.at("tokens").get<scout::TokenSeq>();
      std::string text = model_ ? model_->detokenize(tokens) : std::string();
      return {{"id", id}, {"ok", true}, {"text", text}};
    }
    if (op == "TOKENIZE") {
      const auto text = req.at("text").get<std::string>();
      scout::TokenSeq tokens;
      std::stringstream ss(text);
      std::string word;
      while (ss >> word) {
        bool found = false;
        for (scout::TokenId t = 0; model_ && t < info_.vocab_size; ++t) {
          const scout::TokenId one[1] = {t};
          if (model_->detokenize(one) == word) {
            tokens.push_back(t);
            found = true;
            break;
          }
        }
        if (!found) return error_reply(id, "unknown word '" + word + "'");
      }
      return {{"id", id}, {"ok", true}, {"tokens", tokens}};
    }
    return error_reply(id, "unknown op '" + op + "'");
  }

  int serve() {
    std::string line;
    long count = 0;
    while (std::getline(std::cin, line)) {
      ++count;
      if (opts_.die_after >= 0 && count > opts_.die_after) return 3;
      if (opts_.hang_after >= 0 && count > opts_.hang_after) {
        std::this_thread::sleep_for(std::chrono::hours(1));
      }
      if (opts_.garbage_after >= 0 && count > opts_.garbage_after) {
        std::cout << "this is not json" << std::endl;
        continue;
      }
      nlohmann::json reply;
      nlohmann::json req;
      try {
        req = nlohmann::json::parse(line);
        if (!req.is_object()) throw std::invalid_argument("request must be a JSON object");
        if (req.value("op", std::string()) == "SHUTDOWN") {
          std::cout << nlohmann::json{{"id", req.value("id", nlohmann::json())}, {"ok", true}}.dump() << std::endl;
          return 0;
        }
        reply = handle(req);
      } catch (const std::exception& e) {
        const nlohmann::json id = req.is_object() && req.contains("id") ? req.at("id") : nlohmann::json();
        reply = error_reply(id, e.what());
      }
      if (opts_.wrong_id_after >= 0 && count > opts_.wrong_id_after) reply["id"] = 999999;
      std::cout << reply.dump() << std::endl;
    }
    return 0;
  }

private:
  Options opts_;
  std::unique_ptr<scout::ModelSource> model_;
  scout::ModelInfo info_;
};

} // namespace

int main(int argc, char** argv) {
  try {
    Server server(parse_args(argc, argv));
    return server.serve();
  } catch (const std::exception& e) {
    std::cerr << "fake_bridge: " << e.what() << '\n';
    return 1;
  }
}
