#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lidarlabel/config.hpp"
#include "lidarlabel/gradcheck.hpp"
#include "lidarlabel/io.hpp"
#include "lidarlabel/pipeline.hpp"

namespace {

using namespace lidarlabel;

constexpr int kExitInput = 1;
constexpr int kExitInvariant = 2;

PipelineConfig config_from(const std::string& path) { return path.empty() ? PipelineConfig{} : load_config(path); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-label generation and refinement for LiDAR sequences"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);

  std::string config_path;
  std::size_t workers = 1;
  std::string log_level = "info";
  app.add_option("--config", config_path, "Pipeline config JSON")->envname("ALISE_CONFIG");
  app.add_option("--workers", workers, "Frame worker threads")->envname("ALISE_WORKERS")->check(CLI::PositiveNumber);
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->envname("ALISE_LOG_LEVEL");

  std::string frames_dir;
  std::string detections_dir;
  std::string labels_dir;
  std::string scores_dir;
  std::string pred_dir;
  std::string gt_dir;
  std::string spec_path;
  std::string out_dir;
  std::string mode = "offline";
  std::uint64_t seed = 0;
  std::size_t trials = 50;
  std::string inject_fault;

  auto* upg = app.add_subcommand("upg", "Lift 2D detections to per-point pseudo-labels");
  upg->add_option("--frames", frames_dir, "Frame directory (*.alf)")->required();
  upg->add_option("--detections", detections_dir, "Detection directory (*.json)")->required();
  upg->add_option("--out", out_dir, "Output label directory")->required()->envname("ALISE_OUT");

  auto* refine = app.add_subcommand("refine", "Temporal voting refinement of labels");
  refine->add_option("--labels", labels_dir, "Input label directory (*.all)")->required();
  refine->add_option("--frames", frames_dir, "Frame directory (*.alf)")->required();
  refine->add_option("--mode", mode, "offline|online")
      ->check(CLI::IsMember({"offline", "online"}))
      ->envname("ALISE_MODE");
  refine->add_option("--scores", scores_dir, "Teacher score directory (*.als), online mode");
  refine->add_option("--out", out_dir, "Output label directory")->required()->envname("ALISE_OUT");

  auto* eval = app.add_subcommand("eval", "Evaluate predicted labels against ground truth");
  eval->add_option("--pred", pred_dir, "Predicted label directory")->required();
  eval->add_option("--gt", gt_dir, "Ground-truth label directory")->required();
  eval->add_option("--out", out_dir, "Report directory")->required()->envname("ALISE_OUT");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic sequence");
  synth->add_option("--spec", spec_path, "Scene spec JSON (defaults when omitted)");
  synth->add_option("--seed", seed, "Overrides the spec seed")->envname("ALISE_SEED");
  synth->add_option("--out", out_dir, "Dataset directory")->required()->envname("ALISE_OUT");

  auto* losses = app.add_subcommand("losses-check", "Finite-difference checks of every loss gradient");
  losses->add_option("--seed", seed, "Random seed")->envname("ALISE_SEED");
  losses->add_option("--trials", trials, "Trials per kernel")->check(CLI::PositiveNumber);
  losses->add_option("--out", out_dir, "Write the report JSON here as well")->envname("ALISE_OUT");
  losses->add_option("--inject-fault", inject_fault, "Negate one kernel's gradient")->group("");

  CLI11_PARSE(app, argc, argv);

  auto logger = spdlog::stderr_color_mt("lidarlabel");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    const RunOptions opts{workers};
    if (upg->parsed()) {
      run_upg(frames_dir, detections_dir, config_from(config_path), out_dir, opts);
    } else if (refine->parsed()) {
      std::optional<std::filesystem::path> scores;
      if (!scores_dir.empty()) scores = scores_dir;
      run_refine(labels_dir, frames_dir, config_from(config_path),
                 mode == "online" ? RefineMode::Online : RefineMode::Offline, scores, out_dir, opts);
    } else if (eval->parsed()) {
      const auto report = run_eval(pred_dir, gt_dir, config_from(config_path), out_dir);
      std::cout << report.to_table();
    } else if (synth->parsed()) {
      auto spec = spec_path.empty() ? SceneSpec{} : load_scene_spec(spec_path);
      if (synth->count("--seed") > 0) spec.seed = seed;
      run_synth(spec, out_dir);
    } else if (losses->parsed()) {
      std::optional<std::string> fault;
      if (!inject_fault.empty()) fault = inject_fault;
      const auto report = run_gradient_checks(seed, trials, fault);
      const auto text = report.to_json().dump(2) + "\n";
      std::cout << text;
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_bytes(std::filesystem::path(out_dir) / "gradcheck.json",
                    std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
      }
      for (const auto& k : report.kernels) {
        if (!k.passed) spdlog::error("{}: max relative error {:.3e}", k.kernel, k.max_relative_error);
      }
      return report.passed ? 0 : kExitInvariant;
    }
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  } catch (const InvariantError& e) {
    spdlog::error("invariant violated: {}", e.what());
    return kExitInvariant;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  }
  return 0;
}
