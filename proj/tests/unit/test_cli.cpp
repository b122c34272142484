#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const std::string kCli = SCOUT_CLI_PATH;
const std::string kFake = FAKE_BRIDGE_PATH;
const std::string kFixture = std::string(SCOUT_DATA_DIR) + "/example31.tree.json";

int run(const std::string& args) {
  const std::string cmd = "'" + kCli + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("scout_cli_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string fixture_run(const fs::path& out) {
  return "run --model '" + kFixture + "' --prompt-ids '' --base-temp 1 --baseline 30 --budget 40 --target uniform "
         "--target beta:1,10 --seed 2 --out '" + out.string() + "'";
}

} // namespace

TEST(Cli, RunWritesReport) {
  const auto out = fresh_dir("run");
  ASSERT_EQ(run(fixture_run(out) + " --flag-token 1"), 0);
  for (const char* f : {"records.jsonl", "summary.json", "histogram.csv", "review.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(summary.at("summary").at("total_records"), 70);
  EXPECT_EQ(summary.at("config").at("targets")[0].at("budget"), 20);
  EXPECT_EQ(run("report --in '" + out.string() + "'"), 0);
  fs::remove_all(out);
}

TEST(Cli, ReportDetectsTampering) {
  const auto out = fresh_dir("tamper");
  ASSERT_EQ(run(fixture_run(out)), 0);
  auto text = slurp(out / "records.jsonl");
  const auto pos = text.find("\"norm_prob\":");
  text.replace(pos, 13, "\"norm_prob\":9");
  std::ofstream(out / "records.jsonl", std::ios::binary | std::ios::trunc) << text;
  EXPECT_EQ(run("report --in '" + out.string() + "'"), 1);
  fs::remove_all(out);
}

TEST(Cli, FlagRewritesRecords) {
  const auto out = fresh_dir("flag");
  ASSERT_EQ(run(fixture_run(out)), 0);
  const auto before = slurp(out / "records.jsonl");
  EXPECT_EQ(before.find("token:"), std::string::npos);
  ASSERT_EQ(run("flag --in '" + out.string() + "' --flag-token 2"), 0);
  const auto after = slurp(out / "records.jsonl");
  EXPECT_NE(after.find("\"token:2\""), std::string::npos);
  EXPECT_EQ(run("report --in '" + out.string() + "'"), 0);
  const auto copy = fresh_dir("flag_copy");
  ASSERT_EQ(run("flag --in '" + out.string() + "' --out '" + copy.string() + "' --flag-prefix token1"), 0);
  EXPECT_TRUE(fs::exists(copy / "histogram.csv"));
  fs::remove_all(out);
  fs::remove_all(copy);
}

TEST(Cli, SameSeedSameRecords) {
  const auto a = fresh_dir("seed_a");
  const auto b = fresh_dir("seed_b");
  ASSERT_EQ(run(fixture_run(a)), 0);
  ASSERT_EQ(run(fixture_run(b) + " --no-cache"), 0);
  EXPECT_EQ(slurp(a / "records.jsonl"), slurp(b / "records.jsonl"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, Enumerate) {
  const auto dir = fresh_dir("enumerate");
  fs::create_directories(dir);
  ASSERT_EQ(run("enumerate --model '" + kFixture + "' --prompt-ids '' --base-temp 1 --out '" +
                (dir / "table.tsv").string() + "'"),
            0);
  const auto table = slurp(dir / "table.tsv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 10);
  EXPECT_EQ(run("enumerate --model synth:seed=7,branching=30,depth=6 --max-leaves 1000"), 2);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const auto out = fresh_dir("exit");
  const std::string o = " --out '" + out.string() + "'";
  EXPECT_EQ(run("run --model '" + kFixture + "' --baseline 10 --target normal --budget 20" + o), 2);
  EXPECT_EQ(run("run --model '" + kFixture + "' --baseline 0" + o), 2);
  EXPECT_EQ(run("run --model '" + kFixture + "' --budget 5 --target uniform" + o), 2);
  EXPECT_EQ(run("run --bogus-option"), 2);
  EXPECT_EQ(run("run --model /nonexistent/model.tree.json --baseline 10" + o), 3);
  EXPECT_EQ(run("run --model 'bridge:exit 0' --baseline 10" + o), 4);
  EXPECT_EQ(run("run --model \"bridge:'" + kFake + "' --fixed-logits 0,0 --die-after 1\" --baseline 10" + o), 4);
  EXPECT_EQ(run("report --in /nonexistent/dir"), 2);
  fs::remove_all(out);
}

TEST(Cli, BridgedRun) {
  const auto out = fresh_dir("bridged");
  ASSERT_EQ(run("run --model \"bridge:'" + kFake + "' --model '" + kFixture + "'\" --prompt-ids '' --base-temp 1 "
                "--baseline 20 --out '" + out.string() + "'"),
            0);
  EXPECT_TRUE(fs::exists(out / "records.jsonl"));
  fs::remove_all(out);
}
