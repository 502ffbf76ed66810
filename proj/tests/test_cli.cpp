#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "lidarlabel/io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using lidarlabel::testing::scratch_dir;

namespace {

struct RunResult {
  int code = -1;
  std::string output;  // stdout and stderr
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(LIDARLABEL_CLI) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

fs::path small_spec(const fs::path& dir, int frames = 3) {
  const auto p = dir / "spec.json";
  std::ofstream(p) << nlohmann::json{{"num_frames", frames}, {"random_objects", 5}, {"background_points", 200}}.dump();
  return p;
}

}  // namespace

TEST(Cli, Version) {
  const auto r = run("--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("0.1.0"), std::string::npos);
}

TEST(Cli, SynthUpgEval) {
  const auto dir = scratch_dir("cli_flow");
  const auto spec = small_spec(dir);
  ASSERT_EQ(run("synth --spec " + spec.string() + " --seed 3 --out " + (dir / "data").string()).code, 0);
  ASSERT_EQ(run("--workers 2 upg --frames " + (dir / "data/frames").string() + " --detections " +
                (dir / "data/detections").string() + " --out " + (dir / "labels").string())
                .code,
            0);
  const auto r = run("eval --pred " + (dir / "labels").string() + " --gt " + (dir / "data/gt").string() + " --out " +
                     (dir / "eval").string());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("100.00"), std::string::npos) << r.output;
  const auto report = nlohmann::json::parse(slurp(dir / "eval/report.json"));
  EXPECT_EQ(report.at("mAP"), 1.0);
  const auto manifest = nlohmann::json::parse(slurp(dir / "labels/manifest.json"));
  EXPECT_EQ(manifest.at("command"), "upg");
  EXPECT_EQ(manifest.at("tool_version"), "0.1.0");
}

TEST(Cli, AllBackgroundPredictionsScoreZero) {
  const auto dir = scratch_dir("cli_bg");
  ASSERT_EQ(run("synth --spec " + small_spec(dir).string() + " --out " + (dir / "data").string()).code, 0);
  fs::create_directories(dir / "none");
  ASSERT_EQ(run("upg --frames " + (dir / "data/frames").string() + " --detections " + (dir / "none").string() +
                " --out " + (dir / "labels").string())
                .code,
            0);
  ASSERT_EQ(run("eval --pred " + (dir / "labels").string() + " --gt " + (dir / "data/gt").string() + " --out " +
                (dir / "eval").string())
                .code,
            0);
  const auto report = nlohmann::json::parse(slurp(dir / "eval/report.json"));
  EXPECT_EQ(report.at("mAP"), 0.0);
}

TEST(Cli, CorruptFrameExitsWithPath) {
  const auto dir = scratch_dir("cli_corrupt");
  ASSERT_EQ(run("synth --spec " + small_spec(dir).string() + " --out " + (dir / "data").string()).code, 0);
  const auto victim = dir / "data/frames/frame_000002.alf";
  std::ofstream(victim, std::ios::binary | std::ios::trunc) << "ALF1";
  const auto r = run("upg --frames " + (dir / "data/frames").string() + " --detections " +
                     (dir / "data/detections").string() + " --out " + (dir / "labels").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find(victim.string()), std::string::npos) << r.output;
}

TEST(Cli, RefineIdentities) {
  const auto dir = scratch_dir("cli_refine");
  ASSERT_EQ(run("synth --spec " + small_spec(dir, 4).string() + " --out " + (dir / "data").string()).code, 0);
  const std::string frames = (dir / "data/frames").string();
  ASSERT_EQ(run("upg --frames " + frames + " --detections " + (dir / "data/detections").string() + " --out " +
                (dir / "labels").string())
                .code,
            0);
  std::ofstream(dir / "zero.json") << R"({"ofr_frames": 0})";
  ASSERT_EQ(run("--config " + (dir / "zero.json").string() + " refine --labels " + (dir / "labels").string() +
                " --frames " + frames + " --out " + (dir / "off").string())
                .code,
            0);
  EXPECT_EQ(tree(dir / "off"), tree(dir / "labels"));

  fs::create_directories(dir / "scores");
  for (const auto& e : fs::directory_iterator(dir / "data/frames")) {
    const auto f = lidarlabel::read_frame(e.path());
    lidarlabel::write_scores(dir / "scores" / (e.path().stem().string() + ".als"),
                             lidarlabel::ScoreMatrix::Constant(static_cast<Eigen::Index>(f.points.size()), 3, 1.0 / 3));
  }
  ASSERT_EQ(run("refine --mode online --labels " + (dir / "labels").string() + " --frames " + frames + " --scores " +
                (dir / "scores").string() + " --out " + (dir / "on").string())
                .code,
            0);
  EXPECT_EQ(tree(dir / "on"), tree(dir / "labels"));

  const auto missing = run("refine --mode online --labels " + (dir / "labels").string() + " --frames " + frames +
                           " --out " + (dir / "x").string());
  EXPECT_EQ(missing.code, 1);
}

TEST(Cli, SynthDeterministicAndEdgeCases) {
  const auto dir = scratch_dir("cli_synth");
  ASSERT_EQ(run("synth --seed 7 --out " + (dir / "a").string()).code, 0);
  ASSERT_EQ(run("synth --seed 7 --out " + (dir / "b").string()).code, 0);
  EXPECT_EQ(tree(dir / "a"), tree(dir / "b"));
  EXPECT_EQ(slurp(dir / "a/manifest.json").find("config_hash") != std::string::npos, true);

  ASSERT_EQ(run("synth --spec " + small_spec(dir, 0).string() + " --out " + (dir / "empty").string()).code, 0);
  EXPECT_TRUE(fs::is_empty(dir / "empty/frames"));

  std::ofstream(dir / "bad.json") << "{\"num_frames\": ";
  EXPECT_NE(run("synth --spec " + (dir / "bad.json").string() + " --out " + (dir / "c").string()).code, 0);
  std::ofstream(dir / "unknown.json") << R"({"frames": 3})";
  EXPECT_NE(run("synth --spec " + (dir / "unknown.json").string() + " --out " + (dir / "d").string()).code, 0);
}

TEST(Cli, SeedFromEnvironment) {
  const auto dir = scratch_dir("cli_env");
  ASSERT_EQ(run("synth --spec " + small_spec(dir, 1).string() + " --seed 11 --out " + (dir / "flag").string()).code,
            0);
  const std::string env_cmd = "ALISE_SEED=11 " + std::string(LIDARLABEL_CLI) + " synth --spec " +
                              small_spec(dir, 1).string() + " --out " + (dir / "env").string();
  ASSERT_EQ(std::system(env_cmd.c_str()), 0);
  EXPECT_EQ(tree(dir / "flag"), tree(dir / "env"));
}

TEST(Cli, BadConfigIsInputError) {
  const auto dir = scratch_dir("cli_config");
  std::ofstream(dir / "cfg.json") << R"({"voxel_sise": 0.3})";
  fs::create_directories(dir / "f");
  const auto r = run("--config " + (dir / "cfg.json").string() + " upg --frames " + (dir / "f").string() +
                     " --detections " + (dir / "f").string() + " --out " + (dir / "o").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("voxel_sise"), std::string::npos) << r.output;
}

TEST(Cli, LossesCheck) {
  const auto dir = scratch_dir("cli_losses");
  const auto ok = run("losses-check --out " + dir.string());
  EXPECT_EQ(ok.code, 0) << ok.output;
  const auto report = nlohmann::json::parse(slurp(dir / "gradcheck.json"));
  EXPECT_TRUE(report.at("passed").get<bool>());
  EXPECT_EQ(report.at("trials"), 50);
  std::set<std::string> names;
  for (const auto& k : report.at("kernels")) names.insert(k.at("kernel").get<std::string>());
  EXPECT_EQ(names.size(), 7U);
  EXPECT_TRUE(names.contains("pcl_loss"));

  const auto bad = run("losses-check --trials 3 --inject-fault pcl_loss");
  EXPECT_NE(bad.code, 0);

  const auto one = run("losses-check --trials 1 --seed 5 --out " + (dir / "one").string());
  EXPECT_EQ(one.code, 0);
  const auto single = nlohmann::json::parse(slurp(dir / "one/gradcheck.json"));
  EXPECT_EQ(single.at("trials"), 1);
  for (const auto& k : single.at("kernels")) EXPECT_EQ(k.at("trials"), 1);
}
