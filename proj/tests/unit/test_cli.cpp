// Drives the kser executable end to end on a small generated dataset.

#include "fixtures.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using kser::test::TempDir;

namespace {

const std::string kSmall =
    " --set dataset.synthetic.n_samples=1000 --set dataset.synthetic.n_items=300"
    " --set dataset.synthetic.n_users=50 --set dataset.min_count=1 --set model.hidden=[16,8]"
    " --set train.max_epochs=2 --set train.batch_size=64";

struct CliRun {
  int code;
  std::string output;
};

CliRun run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path log = scratch / "cli.log";
  const std::string cmd = std::string(KSER_BIN) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

}  // namespace

TEST(Cli, ValidationErrorsExitOne) {
  TempDir t("cli");
  EXPECT_EQ(run_cli("", t.path()).code, 1);
  EXPECT_EQ(run_cli("train", t.path()).code, 1);  // --out is required
  const CliRun bad = run_cli("train --out " + (t.path() / "o").string() + " --set train.nope=1", t.path());
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("train.nope"), std::string::npos) << bad.output;
  EXPECT_EQ(run_cli("train --out " + (t.path() / "o2").string() + " --set train.strategy=extractor_only", t.path()).code,
            1);
}

TEST(Cli, MissingDataFileExitsTwoAndNamesPath) {
  TempDir t("cli");
  const CliRun r = run_cli("prepare --out " + (t.path() / "o").string() +
                         " --set dataset.kind=movielens --set dataset.path=/nonexistent/ratings.tsv",
                     t.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("/nonexistent/ratings.tsv"), std::string::npos) << r.output;
}

TEST(Cli, LockedOutputDirectoryExitsTwo) {
  TempDir t("cli");
  fs::create_directories(t.path() / "o");
  std::ofstream(t.path() / "o" / ".kser.lock") << "";
  EXPECT_EQ(run_cli("gen-synth --out " + (t.path() / "o").string() + kSmall, t.path()).code, 2);
}

TEST(Cli, DivergenceExitsThree) {
  TempDir t("cli");
  const CliRun r = run_cli("train --out " + (t.path() / "o").string() + kSmall + " --set train.lr=1e300", t.path());
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST(Cli, GenSynthAndPrepareAreIdempotent) {
  TempDir t("cli");
  for (const char* d : {"a", "b"}) {
    ASSERT_EQ(run_cli("gen-synth --out " + (t.path() / "g" / d).string() + kSmall + " --seed 9", t.path()).code, 0);
    ASSERT_EQ(run_cli("prepare --out " + (t.path() / "p" / d).string() + kSmall + " --seed 9", t.path()).code, 0);
  }
  for (const char* f : {"interactions.tsv", "oracle.json", "knowledge/manifest.json", "knowledge/signal0.f32"})
    EXPECT_EQ(slurp(t.path() / "g" / "a" / f), slurp(t.path() / "g" / "b" / f)) << f;
  for (const char* f : {"train.bin", "val.bin", "test.bin", "manifest.json"})
    EXPECT_EQ(slurp(t.path() / "p" / "a" / f), slurp(t.path() / "p" / "b" / f)) << f;
  const auto manifest = nlohmann::json::parse(slurp(t.path() / "p" / "a" / "manifest.json"));
  EXPECT_EQ(manifest.dump().find("800") != std::string::npos, true) << manifest.dump();
}

TEST(Cli, TrainEvaluateDiagnosticsPipeline) {
  TempDir t("cli");
  const fs::path base = t.path() / "base", eo = t.path() / "eo";
  ASSERT_EQ(run_cli("train --out " + base.string() + kSmall, t.path()).code, 0);
  const CliRun r = run_cli("train --out " + eo.string() + kSmall + " --set train.strategy=extractor_only" +
                         " --set train.base_checkpoint=" + (base / "checkpoint").string(),
                     t.path());
  ASSERT_EQ(r.code, 0) << r.output;

  const auto report = nlohmann::json::parse(slurp(eo / "report.json"));
  for (const char* key : {"strategy", "auc", "logloss", "val_auc", "history", "seed", "wall_clock_seconds", "config",
                          "reference"})
    EXPECT_TRUE(report.contains(key)) << key;
  EXPECT_EQ(report["strategy"], "extractor_only");
  EXPECT_GT(lines(eo / "history.tsv"), 1u);

  // The echoed config reproduces the run.
  std::ofstream(t.path() / "echo.json") << report["config"].dump();
  ASSERT_EQ(run_cli("train --out " + (t.path() / "eo2").string() + " --config " + (t.path() / "echo.json").string(),
                 t.path())
                .code,
            0);
  const auto again = nlohmann::json::parse(slurp(t.path() / "eo2" / "report.json"));
  EXPECT_EQ(again["auc"], report["auc"]);
  EXPECT_EQ(again["history"], report["history"]);

  const std::string ckpt = " --set evaluate.checkpoint=" + (eo / "checkpoint").string();
  ASSERT_EQ(run_cli("evaluate --out " + (t.path() / "ev").string() + kSmall + ckpt, t.path()).code, 0);
  const auto metrics = nlohmann::json::parse(slurp(t.path() / "ev" / "metrics.json"));
  EXPECT_DOUBLE_EQ(metrics["auc"].get<double>(), report["auc"].get<double>());

  ASSERT_EQ(run_cli("diagnostics --out " + (t.path() / "d10").string() + kSmall + ckpt, t.path()).code, 0);
  EXPECT_EQ(lines(t.path() / "d10" / "gate_weights.tsv"), 1u + 10u * 2u);
  EXPECT_GT(lines(t.path() / "d10" / "attention.tsv"), 1u);

  ASSERT_EQ(run_cli("diagnostics --out " + (t.path() / "d512").string() + kSmall + ckpt +
                     " --set diagnostics.samples=512 --set evaluate.split=train",
                 t.path())
                .code,
            0);
  const std::uintmax_t bytes = 512u * 16u * 2u * 4u;
  EXPECT_EQ(fs::file_size(t.path() / "d512" / "knowledge_pre.f32"), bytes);
  EXPECT_EQ(fs::file_size(t.path() / "d512" / "knowledge_post.f32"), bytes);
  EXPECT_TRUE(fs::exists(t.path() / "d512" / "manifest.json"));

  ASSERT_EQ(run_cli("diagnostics --out " + (t.path() / "d0").string() + kSmall + ckpt + " --set diagnostics.samples=0",
                 t.path())
                .code,
            0);
  EXPECT_EQ(lines(t.path() / "d0" / "gate_weights.tsv"), 1u);

  // A base-only checkpoint has no extractor to inspect: a validation error.
  EXPECT_EQ(run_cli("diagnostics --out " + (t.path() / "dbase").string() + kSmall +
                     " --set evaluate.checkpoint=" + (base / "checkpoint").string(),
                 t.path())
                .code,
            1);
}

TEST(Cli, NoEsfnetRunHasNoGateExport) {
  TempDir t("cli");
  ASSERT_EQ(run_cli("train --out " + (t.path() / "ap").string() + kSmall +
                     " --set train.strategy=all_params --set ablation=no_esfnet",
                 t.path())
                .code,
            0);
  ASSERT_EQ(run_cli("diagnostics --out " + (t.path() / "d").string() + kSmall +
                     " --set evaluate.checkpoint=" + (t.path() / "ap" / "checkpoint").string(),
                 t.path())
                .code,
            0);
  EXPECT_FALSE(fs::exists(t.path() / "d" / "gate_weights.tsv"));
  EXPECT_TRUE(fs::exists(t.path() / "d" / "attention.tsv"));
}

TEST(Cli, AblateTableSharesBaseColumns) {
  TempDir t("cli");
  const CliRun r = run_cli("ablate --out " + (t.path() / "ab").string() + kSmall, t.path());
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(t.path() / "ab" / "ablation.tsv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("variant\tstrategy\tauc\tlogloss\tbase_auc", 0), 0u) << header;
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    rows.push_back(cols);
  }
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][0], "full");
  for (const auto& row : rows) EXPECT_EQ(row[4], rows[0][4]);
  EXPECT_TRUE(fs::exists(t.path() / "ab" / "ablation.json"));
}

TEST(Cli, AblateReportsPartialTableOnFailure) {
  TempDir t("cli");
  // Three chunks cannot divide d_k = 16, so only the variant without ESFNet trains.
  const CliRun r = run_cli("ablate --out " + (t.path() / "ab").string() + kSmall + " --set esfnet.chunks=3", t.path());
  EXPECT_NE(r.code, 0);
  std::ifstream in(t.path() / "ab" / "ablation.tsv");
  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);) rows.push_back(line);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_NE(rows[1].find("failed"), std::string::npos) << rows[1];
  EXPECT_NE(rows[2].find("\tok"), std::string::npos) << rows[2];
  EXPECT_NE(rows[3].find("failed"), std::string::npos) << rows[3];
}
