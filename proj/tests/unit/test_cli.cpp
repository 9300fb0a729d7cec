#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "evx/cli.hpp"
#include "evx/study.hpp"
#include "helpers.hpp"
#include "json.hpp"

namespace evx {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "evx");
  return cli::run(args);
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}), cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}), cli::kExitUsage);
  EXPECT_EQ(run({"scan"}), cli::kExitUsage);
  EXPECT_EQ(run({"train", "--epochs", "many"}), cli::kExitUsage);
}

TEST(Cli, HelpAndVersionExitZero) {
  EXPECT_EQ(run({"--help"}), cli::kExitOk);
  EXPECT_EQ(run({"--version"}), cli::kExitOk);
}

TEST(Cli, DataErrorsExitOne) {
  const auto out = testing::temp_dir();
  EXPECT_EQ(run({"scan", "--data", (out / "missing").string(), "--out", out.string()}),
            cli::kExitFailure);
  EXPECT_EQ(run({"evaluate", "--checkpoint", (out / "none.ckpt").string(), "--data",
                 (out / "missing").string(), "--out", out.string()}),
            cli::kExitFailure);
}

TEST(Cli, ScanWritesManifestAndRunRecord) {
  const auto out = testing::temp_dir();
  ASSERT_EQ(run({"make-toy", "--per-class", "4", "--size", "16", "--out", out.string()}), 0);
  ASSERT_TRUE(fs::exists(out / "toy" / "boxes.json"));
  ASSERT_EQ(run({"scan", "--data", (out / "toy").string(), "--seed", "5", "--out", out.string()}),
            0);
  const json manifest = read_json(out / "manifest.json");
  EXPECT_EQ(manifest.at("seed"), 5);
  const json record = read_json(out / "run.json");
  EXPECT_EQ(record.at("subcommand"), "scan");
  EXPECT_EQ(record.at("seed"), 5);
  EXPECT_TRUE(record.at("versions").contains("opencv"));
  EXPECT_TRUE(record.at("versions").contains("evx"));
  EXPECT_EQ(record.at("argv").back(), out.string());
}

TEST(Cli, OutputDirFromEnvironment) {
  const auto base = testing::temp_dir();
  ASSERT_EQ(run({"make-toy", "--per-class", "2", "--size", "16", "--out", base.string()}), 0);
  ::setenv("EVX_OUTPUT_DIR", (base / "env").string().c_str(), 1);
  const int rc = run({"scan", "--data", (base / "toy").string()});
  // An explicit --out still wins.
  const int rc2 = run({"scan", "--data", (base / "toy").string(), "--out", (base / "flag").string()});
  ::unsetenv("EVX_OUTPUT_DIR");
  EXPECT_EQ(rc, 0);
  EXPECT_EQ(rc2, 0);
  EXPECT_TRUE(fs::exists(base / "env" / "manifest.json"));
  EXPECT_TRUE(fs::exists(base / "flag" / "manifest.json"));
  EXPECT_FALSE(fs::exists(base / "env" / "flag"));
}

TEST(Cli, TrainEvaluateExplainPipeline) {
  const auto out = testing::temp_dir();
  const std::string o = out.string();
  ASSERT_EQ(run({"make-toy", "--per-class", "6", "--size", "16", "--out", o}), 0);
  const std::string toy = (out / "toy").string();
  EXPECT_EQ(run({"train", "--data", toy, "--classes", "4", "--backbone", "evnet-scratch",
                 "--input-size", "16", "--out", o}),
            cli::kExitFailure);
  ASSERT_EQ(run({"train", "--data", toy, "--classes", "3", "--backbone", "evnet-scratch",
                 "--input-size", "16", "--epochs", "1", "--batch-size", "4", "--lr-backbone",
                 "1e-4", "--lr-head", "1e-2", "--out", o}),
            0);
  ASSERT_TRUE(fs::exists(out / "model.ckpt"));
  std::ifstream log(out / "train_log.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  EXPECT_EQ(json::parse(line).at("epoch"), 1);

  const std::string ckpt = (out / "model.ckpt").string();
  ASSERT_EQ(run({"evaluate", "--checkpoint", ckpt, "--manifest", (out / "manifest.json").string(),
                 "--split", "test", "--out", o}),
            0);
  const json report = read_json(out / "report.json");
  EXPECT_EQ(report.at("class_names").size(), 3u);
  std::ifstream table(out / "report.txt");
  const std::string text((std::istreambuf_iterator<char>(table)), {});
  EXPECT_NE(text.find("Weighted Average"), std::string::npos);

  const fs::path ex = out / "explain";
  ASSERT_EQ(run({"explain", "--checkpoint", ckpt, "--manifest", (out / "manifest.json").string(),
                 "--split", "test", "--out", ex.string()}),
            0);
  EXPECT_TRUE(fs::exists(ex / "gallery.html"));
  EXPECT_TRUE(fs::exists(ex / "overlays" / "circle"));

  const fs::path single = out / "single";
  const std::string image = (out / "toy" / "square" / "square_000.png").string();
  ASSERT_EQ(run({"explain", "--checkpoint", ckpt, "--image", image, "--class-name", "square",
                 "--method", "cam", "--out", single.string()}),
            0);
  EXPECT_TRUE(fs::exists(single / "square_000_overlay.png"));
  EXPECT_TRUE(fs::exists(single / "square_000_cam.png"));
  EXPECT_EQ(read_json(single / "square_000_cam.json").at("method"), "cam");
  EXPECT_EQ(run({"explain", "--checkpoint", ckpt, "--image", image, "--class-name", "hexagon",
                 "--out", single.string()}),
            cli::kExitFailure);
  EXPECT_EQ(run({"explain", "--checkpoint", ckpt, "--image", image, "--alpha", "0", "--out",
                 single.string()}),
            cli::kExitFailure);
}

TEST(Cli, StudyReportFromState) {
  const auto out = testing::temp_dir();
  std::string id;
  {
    StudyService svc(out / "state");
    const auto report = build_report({{"a/1.png", 0, 0, 0.9}}, {"a", "b"});
    id = svc.create_study(report, "/img", [](const std::string&) {
      return std::optional<fs::path>("/o.png");
    }, 1);
    svc.register_annotator("x");
    svc.submit_vote(id, "x", "a/1.png", 1);
  }
  ASSERT_EQ(run({"study-report", "--state", (out / "state").string(), "--study", id, "--out",
                 out.string()}),
            0);
  EXPECT_DOUBLE_EQ(read_json(out / "study_report.json").at("weighted_average").get<double>(), 1.0);
  EXPECT_EQ(run({"study-report", "--state", (out / "state").string(), "--study", "study-0042",
                 "--out", out.string()}),
            cli::kExitFailure);
}

}  // namespace
}  // namespace evx
