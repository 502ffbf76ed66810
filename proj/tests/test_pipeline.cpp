#include <fstream>

#include <gtest/gtest.h>

#include "lidarlabel/io.hpp"
#include "lidarlabel/pipeline.hpp"
#include "lidarlabel/synth.hpp"
#include "support.hpp"

using namespace lidarlabel;
namespace fs = std::filesystem;
using lidarlabel::testing::scratch_dir;

namespace {

SceneSpec spec_with(std::uint64_t seed, std::uint32_t frames = 4) {
  SceneSpec spec;
  spec.seed = seed;
  spec.num_frames = frames;
  spec.random_objects = 6;
  spec.background_points = 300;
  return spec;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Relative path -> contents of every regular file except manifests.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

}  // namespace

TEST(Pipeline, SynthUpgEvalClosure) {
  const auto dir = scratch_dir("pipe_closure");
  run_synth(spec_with(2), dir / "data");
  const PipelineConfig cfg;
  const auto m = run_upg(dir / "data/frames", dir / "data/detections", cfg, dir / "labels");
  EXPECT_EQ(m.command, "upg");
  EXPECT_EQ(m.config_hash, config_hash(cfg));
  EXPECT_EQ(m.outputs.size(), 4U);
  EXPECT_TRUE(fs::exists(dir / "labels/manifest.json"));
  const auto report = run_eval(dir / "labels", dir / "data/gt", cfg, dir / "eval");
  EXPECT_DOUBLE_EQ(report.ap.mean_ap, 1.0);
  EXPECT_DOUBLE_EQ(report.iou.mean_iou, 1.0);
  EXPECT_TRUE(fs::exists(dir / "eval/report.json"));
  EXPECT_TRUE(fs::exists(dir / "eval/report.txt"));
}

TEST(Pipeline, WorkerCountDoesNotChangeOutput) {
  const auto dir = scratch_dir("pipe_workers");
  auto spec = spec_with(3, 5);
  spec.noise = {0.2, 0.1, 1, 0.05, 0.3};
  run_synth(spec, dir / "data");
  const PipelineConfig cfg;
  run_upg(dir / "data/frames", dir / "data/detections", cfg, dir / "one", {1});
  run_upg(dir / "data/frames", dir / "data/detections", cfg, dir / "many", {8});
  EXPECT_EQ(tree(dir / "one"), tree(dir / "many"));
  run_refine(dir / "one", dir / "data/frames", cfg, RefineMode::Offline, std::nullopt, dir / "r1", {1});
  run_refine(dir / "one", dir / "data/frames", cfg, RefineMode::Offline, std::nullopt, dir / "r8", {8});
  EXPECT_EQ(tree(dir / "r1"), tree(dir / "r8"));
}

TEST(Pipeline, MissingDetectionsMeansBackground) {
  const auto dir = scratch_dir("pipe_nodets");
  run_synth(spec_with(4, 2), dir / "data");
  fs::create_directories(dir / "empty");
  run_upg(dir / "data/frames", dir / "empty", PipelineConfig{}, dir / "labels");
  for (const auto& stem : list_stems(dir / "labels", ".all")) {
    const auto l = read_labels(dir / "labels" / (stem + ".all"));
    EXPECT_TRUE(std::ranges::all_of(l.class_id, [](int c) { return c == -1; }));
  }
}

TEST(Pipeline, CorruptFrameNamesFile) {
  const auto dir = scratch_dir("pipe_corrupt");
  run_synth(spec_with(5, 2), dir / "data");
  const auto victim = dir / "data/frames/frame_000001.alf";
  auto bytes = slurp(victim);
  bytes.resize(bytes.size() / 2);
  std::ofstream(victim, std::ios::binary | std::ios::trunc) << bytes;
  try {
    run_upg(dir / "data/frames", dir / "data/detections", PipelineConfig{}, dir / "labels");
    FAIL() << "expected an input error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(victim.string()), std::string::npos) << e.what();
  }
}

TEST(Pipeline, MissingDirectoryThrows) {
  const auto dir = scratch_dir("pipe_missing");
  EXPECT_THROW(list_stems(dir / "nope", ".alf"), InputError);
}

TEST(Pipeline, RefineIdentities) {
  const auto dir = scratch_dir("pipe_refine_id");
  run_synth(spec_with(6, 4), dir / "data");
  PipelineConfig cfg;
  run_upg(dir / "data/frames", dir / "data/detections", cfg, dir / "labels");

  auto none = cfg;
  none.ofr_frames = 0;
  run_refine(dir / "labels", dir / "data/frames", none, RefineMode::Offline, std::nullopt, dir / "off0");
  EXPECT_EQ(tree(dir / "off0"), tree(dir / "labels"));

  // Uniform teacher rows never pass T_s = 0.4 with three classes.
  fs::create_directories(dir / "scores");
  for (const auto& stem : list_stems(dir / "data/frames", ".alf")) {
    const auto f = read_frame(dir / "data/frames" / (stem + ".alf"));
    write_scores(dir / "scores" / (stem + ".als"),
                 ScoreMatrix::Constant(static_cast<Eigen::Index>(f.points.size()), 3, 1.0 / 3.0));
  }
  run_refine(dir / "labels", dir / "data/frames", cfg, RefineMode::Online, dir / "scores", dir / "on");
  EXPECT_EQ(tree(dir / "on"), tree(dir / "labels"));

  EXPECT_THROW(run_refine(dir / "labels", dir / "data/frames", cfg, RefineMode::Online, std::nullopt, dir / "x"),
               InputError);
}

TEST(Pipeline, EvalFrameSetMismatch) {
  const auto dir = scratch_dir("pipe_eval_mismatch");
  run_synth(spec_with(7, 3), dir / "data");
  fs::create_directories(dir / "pred");
  fs::copy_file(dir / "data/gt/frame_000000.all", dir / "pred/frame_000000.all");
  EXPECT_THROW(run_eval(dir / "pred", dir / "data/gt", PipelineConfig{}, dir / "eval"), InputError);
}

TEST(Pipeline, SynthTwiceIsIdentical) {
  const auto dir = scratch_dir("pipe_synth_twice");
  const auto a = run_synth(spec_with(7), dir / "a");
  const auto b = run_synth(spec_with(7), dir / "b");
  EXPECT_EQ(tree(dir / "a"), tree(dir / "b"));
  EXPECT_EQ(a.config_hash, b.config_hash);
  EXPECT_NE(run_synth(spec_with(8), dir / "c").config_hash, a.config_hash);
}

TEST(Pipeline, ZeroFrameSynth) {
  const auto dir = scratch_dir("pipe_synth_zero");
  run_synth(spec_with(1, 0), dir);
  for (const auto* sub : {"frames", "detections", "gt"}) {
    ASSERT_TRUE(fs::is_directory(dir / sub));
    EXPECT_TRUE(fs::is_empty(dir / sub));
  }
}

TEST(Pipeline, ManifestJson) {
  RunManifest m;
  m.command = "upg";
  m.config_hash = "abc";
  m.inputs = {{"frames", "/x"}};
  m.outputs = {"/y/a.all"};
  m.timings = {{"upg", 1.5}};
  const auto j = m.to_json();
  EXPECT_EQ(j.at("tool_version"), kToolVersion);
  EXPECT_EQ(j.at("config_hash"), "abc");
  EXPECT_EQ(j.at("timings_ms")[0].at("stage"), "upg");
  EXPECT_EQ(j.at("timings_ms")[0].at("ms"), 1.5);
}
