#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "finch/artifacts.hpp"
#include "finch/summary.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Output {
  int code;
  std::string text;  // stdout and stderr interleaved
};

Output lab(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + FINCH_LAB_EXE + "' " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::string text;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) text.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

/// Reference task at reduced sizes so each run takes a fraction of a second.
const char* kSmall =
    "task.old_train_size = 400\n"
    "task.old_holdout_size = 100\n"
    "task.train_size = 400\n"
    "task.new_eval_size = 100\n"
    "pretrain.steps = 200\n";

fs::path small_config(const fs::path& dir, const std::string& extra = "", std::size_t steps = 30) {
  const fs::path p = dir / "small.cfg";
  spit(p, std::string(kSmall) + "train.steps = " + std::to_string(steps) + "\n" + extra);
  return p;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = oracle::temp_dir("cli"); }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, RunWritesArtifactsAndRefusesToClobber) {
  const auto cfg = small_config(dir_);
  const auto out = dir_ / "run";
  const auto first = lab("run --config '" + cfg.string() + "' --out '" + out.string() + "'");
  ASSERT_EQ(first.code, 0) << first.text;
  EXPECT_NE(first.text.find("0 violations"), std::string::npos) << first.text;
  for (const char* f : {finch::files::config, finch::files::steps, finch::files::checkpoints, finch::files::summary,
                        finch::files::bound_report})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const std::string steps = slurp(out / finch::files::steps);

  const auto again = lab("run --config '" + cfg.string() + "' --out '" + out.string() + "'");
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.text.find("--overwrite"), std::string::npos);

  const auto forced = lab("run --config '" + cfg.string() + "' --out '" + out.string() + "' --overwrite");
  ASSERT_EQ(forced.code, 0) << forced.text;
  EXPECT_EQ(slurp(out / finch::files::steps), steps);
}

TEST_F(Cli, SeedFlagChangesTheTrainingStream) {
  const auto cfg = small_config(dir_);
  ASSERT_EQ(lab("run --config '" + cfg.string() + "' --out '" + (dir_ / "a").string() + "' --seed 7").code, 0);
  ASSERT_EQ(lab("run --config '" + cfg.string() + "' --out '" + (dir_ / "b").string() + "' --seed 8").code, 0);
  EXPECT_NE(slurp(dir_ / "a" / finch::files::steps), slurp(dir_ / "b" / finch::files::steps));
  EXPECT_NE(slurp(dir_ / "a" / finch::files::config).find("train.seed = 7"), std::string::npos);
}

TEST_F(Cli, InvalidConfigNamesTheKey) {
  const auto cfg = small_config(dir_, "schedule.lr = -0.5\n");
  const auto r = lab("run --config '" + cfg.string() + "' --out '" + (dir_ / "x").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.text.find("schedule.lr"), std::string::npos) << r.text;
  EXPECT_FALSE(fs::exists(dir_ / "x"));
}

TEST_F(Cli, VerifyDetectsTamperingAndMissingFiles) {
  const auto cfg = small_config(dir_);
  const auto out = dir_ / "run";
  ASSERT_EQ(lab("run --config '" + cfg.string() + "' --out '" + out.string() + "'").code, 0);
  const auto ok = lab("verify '" + out.string() + "'");
  EXPECT_EQ(ok.code, 0) << ok.text;

  std::istringstream in(slurp(out / finch::files::steps));
  auto records = finch::read_step_csv(in);
  records[12].delta_old *= 2.0;
  std::ostringstream tampered;
  finch::write_step_csv(tampered, records);
  spit(out / finch::files::steps, tampered.str());
  const auto bad = lab("verify '" + out.string() + "'");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.text.find("violating step 12"), std::string::npos) << bad.text;

  fs::remove(out / finch::files::checkpoints);
  const auto missing = lab("verify '" + out.string() + "'");
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.text.find("checkpoints"), std::string::npos) << missing.text;
}

TEST_F(Cli, ZeroStepRunVerifies) {
  const auto cfg = small_config(dir_, "", 0);
  const auto out = dir_ / "zero";
  const auto r = lab("run --config '" + cfg.string() + "' --out '" + out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.text;
  EXPECT_EQ(lab("verify '" + out.string() + "'").code, 0);
}

TEST_F(Cli, GradcheckPasses) {
  const auto r = lab("gradcheck --cases 20");
  EXPECT_EQ(r.code, 0) << r.text;
  EXPECT_NE(r.text.find("mlp2: 20 cases"), std::string::npos) << r.text;
}

TEST_F(Cli, SweepWritesOneRunPerPointAndWarnsOnDuplicates) {
  const auto cfg = small_config(dir_, "schedule.kind = finch\n");
  const auto out = dir_ / "sweep";
  const auto r = lab("sweep --config '" + cfg.string() + "' --out '" + out.string() + "' --grid 0.02,0.05,0.02");
  ASSERT_EQ(r.code, 0) << r.text;
  EXPECT_NE(r.text.find("duplicate grid point 0.02"), std::string::npos) << r.text;
  EXPECT_TRUE(fs::exists(out / "00_eta_base=0.02" / finch::files::summary));
  EXPECT_TRUE(fs::exists(out / "01_eta_base=0.05" / finch::files::summary));
  EXPECT_FALSE(fs::exists(out / "02_eta_base=0.02"));
  std::istringstream csv(slurp(out / "sweep_summary.csv"));
  const auto summary = finch::read_summary_csv(csv);
  EXPECT_EQ(summary.rows.size(), 2u);
  for (const auto& row : summary.rows) EXPECT_EQ(row.status, "ok");
}

TEST_F(Cli, SweepDefaultGridHasSixPoints) {
  const auto cfg = small_config(dir_, "schedule.kind = finch\nverify.enabled = false\n", 5);
  const auto out = dir_ / "grid";
  const auto r = lab("sweep --config '" + cfg.string() + "' --out '" + out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.text;
  std::istringstream csv(slurp(out / "sweep_summary.csv"));
  EXPECT_EQ(finch::read_summary_csv(csv).rows.size(), 6u);
}

TEST_F(Cli, SweepRejectsAMismatchedParameter) {
  const auto cfg = small_config(dir_);
  const auto r = lab("sweep --config '" + cfg.string() + "' --out '" + (dir_ / "s").string() + "' --param eta_base");
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, CompareMarksIdenticalRunsBothPareto) {
  const auto cfg = small_config(dir_);
  ASSERT_EQ(lab("run --config '" + cfg.string() + "' --out '" + (dir_ / "a").string() + "'").code, 0);
  ASSERT_EQ(lab("run --config '" + cfg.string() + "' --out '" + (dir_ / "b").string() + "'").code, 0);
  const auto r = lab("compare '" + (dir_ / "a").string() + "' '" + (dir_ / "b").string() + "' --out '" +
                     (dir_ / "cmp").string() + "'");
  ASSERT_EQ(r.code, 0) << r.text;
  std::istringstream csv(slurp(dir_ / "cmp" / "comparison.csv"));
  const auto summary = finch::read_summary_csv(csv);
  ASSERT_EQ(summary.rows.size(), 2u);
  EXPECT_TRUE(summary.rows[0].pareto);
  EXPECT_TRUE(summary.rows[1].pareto);
  EXPECT_EQ(summary.rows[0].label, "a");
}

TEST_F(Cli, CompareRejectsDifferentTasks) {
  const auto cfg_a = small_config(dir_);
  ASSERT_EQ(lab("run --config '" + cfg_a.string() + "' --out '" + (dir_ / "a").string() + "'").code, 0);
  const auto cfg_b = dir_ / "other.cfg";
  spit(cfg_b, std::string(kSmall) + "train.steps = 30\ntask.data_seed = 5\n");
  ASSERT_EQ(lab("run --config '" + cfg_b.string() + "' --out '" + (dir_ / "b").string() + "'").code, 0);
  const auto r = lab("compare '" + (dir_ / "a").string() + "' '" + (dir_ / "b").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.text.find("task mismatch"), std::string::npos) << r.text;
}

TEST_F(Cli, OutputRootComesFromTheEnvironment) {
  const auto cfg = small_config(dir_, "verify.enabled = false\n");
  const auto root = dir_ / "root";
  const auto r = lab("run --config '" + cfg.string() + "'", "FINCH_LAB_OUT='" + root.string() + "'");
  ASSERT_EQ(r.code, 0) << r.text;
  EXPECT_TRUE(fs::exists(root / "small" / finch::files::summary));
}

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(lab("").code, 2);
  EXPECT_EQ(lab("frobnicate").code, 2);
  EXPECT_EQ(lab("compare only_one").code, 2);
  EXPECT_EQ(lab("verify '" + (dir_ / "nope").string() + "'").code, 2);
  EXPECT_EQ(lab("--help").code, 0);
}
