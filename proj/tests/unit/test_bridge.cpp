#include <scout/audit.hpp>
#include <scout/bridge.hpp>

#include <gtest/gtest.h>

#include <chrono>
#include <sstream>

using namespace scout;
using namespace std::chrono_literals;

namespace {

const std::string kFixture = std::string(SCOUT_DATA_DIR) + "/example31.tree.json";
const std::string kFake = FAKE_BRIDGE_PATH;

BridgeOptions fake(const std::string& args, std::chrono::milliseconds timeout = 10000ms) {
  BridgeOptions o;
  o.command = "'" + kFake + "' " + args;
  o.timeout = timeout;
  return o;
}

ErrorKind failure_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::InvalidInput;
}

} // namespace

TEST(Bridge, FixedLogitsLoopback) {
  BridgeSource src(fake("--fixed-logits 1,2,3"));
  EXPECT_EQ(src.info().vocab_size, 3u);
  EXPECT_EQ(src.info().name, "fixed");
  EXPECT_EQ(src.next_logits(StepQuery{}), (LogitVector{1, 2, 3}));
}

TEST(Bridge, ManyRequestsStayInOrder) {
  BridgeSource src(fake("--model '" + kFixture + "'"));
  auto local = load_tree_model(kFixture);
  for (int i = 0; i < 1000; ++i) {
    const TokenSeq prefix = i % 2 ? TokenSeq{static_cast<TokenId>(i % 3)} : TokenSeq{};
    const auto a = src.next_logits(StepQuery{{}, prefix});
    const auto b = local->next_logits(StepQuery{{}, prefix});
    ASSERT_EQ(a, b) << "request " << i;
  }
  EXPECT_EQ(src.requests_sent(), 1001u);
}

TEST(Bridge, CompletionAndText) {
  BridgeSource src(fake("--model '" + kFixture + "'"));
  EXPECT_TRUE(src.is_complete(StepQuery{{}, TokenSeq{1, 2}}));
  EXPECT_FALSE(src.is_complete(StepQuery{{}, TokenSeq{1}}));
  EXPECT_EQ(src.detokenize(TokenSeq{1, 2}), "token2 token3");
  EXPECT_EQ(src.tokenize("token3 token1"), (TokenSeq{2, 0}));
  EXPECT_EQ(failure_kind([&] { src.tokenize("unknown"); }), ErrorKind::Bridge);
  // An error reply leaves the bridge usable.
  EXPECT_EQ(src.detokenize(TokenSeq{0}), "token1");
}

TEST(Bridge, TopKResponses) {
  auto opts = fake("--model synth:seed=1,branching=8,depth=3");
  opts.request_top_k = 3;
  BridgeSource src(opts);
  auto local = synth_random_model(1, 8, 3, 1.5);
  const auto full = local->next_logits(StepQuery{});
  const auto truncated = src.next_logits(StepQuery{});
  ASSERT_EQ(truncated.size(), 8u);
  const auto keep = apply_top_k(full, 3);
  for (TokenId t = 0; t < 8; ++t) {
    if (std::find(keep.begin(), keep.end(), t) != keep.end()) EXPECT_EQ(truncated[t], full[t]);
    else EXPECT_EQ(truncated[t], kOutOfSupport);
  }
  EXPECT_EQ(step_distribution(truncated, 0.5, 3).probs, step_distribution(full, 0.5, 3).probs);
}

TEST(Bridge, Timeout) {
  BridgeSource src(fake("--fixed-logits 0,0 --hang-after 1", 300ms));
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(failure_kind([&] { src.next_logits(StepQuery{}); }), ErrorKind::Bridge);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(Bridge, ChildDeath) {
  BridgeSource src(fake("--fixed-logits 0,0 --die-after 2"));
  EXPECT_NO_THROW(src.next_logits(StepQuery{}));
  EXPECT_EQ(failure_kind([&] { src.next_logits(StepQuery{}); }), ErrorKind::Bridge);
}

TEST(Bridge, GarbageResponse) {
  BridgeSource src(fake("--fixed-logits 0,0 --garbage-after 1"));
  EXPECT_EQ(failure_kind([&] { src.next_logits(StepQuery{}); }), ErrorKind::Bridge);
}

TEST(Bridge, WrongId) {
  BridgeSource src(fake("--fixed-logits 0,0 --wrong-id-after 1"));
  EXPECT_EQ(failure_kind([&] { src.next_logits(StepQuery{}); }), ErrorKind::Bridge);
}

TEST(Bridge, MissingCommand) {
  EXPECT_EQ(failure_kind([] { BridgeSource src(BridgeOptions{"exit 0", 2000ms, std::nullopt}); }), ErrorKind::Bridge);
  EXPECT_EQ(failure_kind([] { open_model("bridge:"); }), ErrorKind::Config);
}

TEST(Bridge, AuditMatchesInProcess) {
  AuditConfig c;
  c.prompt_tokens = TokenSeq{};
  c.scout.base_temp = 1.0;
  c.baseline_budget = 30;
  c.targets = {{TargetSpec::uniform(), 30}};
  c.scout.seed = 4;
  c.model_ref = kFixture;
  const auto local = execute_audit(c);
  c.model_ref = "bridge:'" + kFake + "' --model '" + kFixture + "'";
  c.bridge_timeout = 10000ms;
  const auto bridged = execute_audit(c);
  std::ostringstream a, b;
  write_records(a, local.records);
  write_records(b, bridged.records);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(local.summary, bridged.summary);
}
