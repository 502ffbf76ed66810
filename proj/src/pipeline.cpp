#include "lidarlabel/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <functional>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "lidarlabel/io.hpp"
#include "lidarlabel/upg.hpp"
#include "lidarlabel/vsv.hpp"

namespace lidarlabel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Stopwatch {
 public:
  double lap_ms() {
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - last_).count();
    last_ = now;
    return ms;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// Runs job(i) for i in [0, n) on a small pool. The first failure by index is
// rethrown once every worker has stopped.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t count = std::max<std::size_t>(1, std::min(workers, n));
  if (count == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < count; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::vector<Frame> load_frames(const fs::path& dir, const std::vector<std::string>& stems) {
  std::vector<Frame> frames;
  frames.reserve(stems.size());
  for (const auto& s : stems) {
    const auto path = dir / (s + ".alf");
    auto frame = read_frame(path);
    if (auto v = validate_frame(frame); !v.empty()) throw InputError(path.string() + ": " + v.front());
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<PointLabels> load_labels(const fs::path& dir, const std::vector<std::string>& stems) {
  std::vector<PointLabels> labels;
  labels.reserve(stems.size());
  for (const auto& s : stems) {
    const auto path = dir / (s + ".all");
    if (!fs::exists(path)) throw InputError("missing labels file " + path.string());
    auto l = read_labels(path);
    if (auto v = validate_labels(l); !v.empty()) throw InputError(path.string() + ": " + v.front());
    labels.push_back(std::move(l));
  }
  return labels;
}

RunManifest start_manifest(std::string command, std::string hash, std::map<std::string, std::string> inputs) {
  RunManifest m;
  m.command = std::move(command);
  m.config_hash = std::move(hash);
  m.inputs = std::move(inputs);
  return m;
}

void check_config(const PipelineConfig& cfg) {
  if (auto v = validate_config(cfg); !v.empty()) throw InputError("config: " + v.front());
}

}  // namespace

json RunManifest::to_json() const {
  json timings_json = json::array();
  for (const auto& t : timings) timings_json.push_back({{"stage", t.stage}, {"ms", t.ms}});
  return {{"command", command},
          {"config_hash", config_hash},
          {"inputs", inputs},
          {"outputs", outputs},
          {"timings_ms", timings_json},
          {"tool_version", tool_version}};
}

void write_manifest(const fs::path& out_dir, const RunManifest& manifest) {
  const auto text = manifest.to_json().dump(2) + "\n";
  write_bytes(ensure_dir(out_dir) / "manifest.json",
              std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::string> list_stems(const fs::path& dir, const std::string& extension) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == extension) stems.push_back(entry.path().stem().string());
  }
  std::ranges::sort(stems);
  return stems;
}

RunManifest run_upg(const fs::path& frames_dir, const fs::path& detections_dir, const PipelineConfig& cfg,
                    const fs::path& out_dir, const RunOptions& opts) {
  check_config(cfg);
  auto m = start_manifest("upg", config_hash(cfg), {{"frames", frames_dir.string()}, {"detections", detections_dir.string()}});
  Stopwatch clock;
  const auto stems = list_stems(frames_dir, ".alf");
  if (!fs::is_directory(detections_dir)) throw InputError("not a directory: " + detections_dir.string());
  const auto frames = load_frames(frames_dir, stems);
  std::vector<std::vector<DetectionRecord>> dets(stems.size());
  for (std::size_t i = 0; i < stems.size(); ++i) {
    const auto path = detections_dir / (stems[i] + ".json");
    if (fs::exists(path)) dets[i] = read_detections(path);
  }
  m.timings.push_back({"load", clock.lap_ms()});

  std::vector<PointLabels> labels(stems.size());
  parallel_for(stems.size(), opts.workers, [&](std::size_t i) {
    try {
      labels[i] = generate_pseudo_labels(frames[i], dets[i], cfg);
    } catch (const InputError& e) {
      throw InputError(stems[i] + ": " + e.what());
    } catch (const InvariantError& e) {
      throw InvariantError(stems[i] + ": " + e.what());
    }
  });
  m.timings.push_back({"label", clock.lap_ms()});

  ensure_dir(out_dir);
  for (std::size_t i = 0; i < stems.size(); ++i) {
    const auto path = out_dir / (stems[i] + ".all");
    write_labels(path, labels[i]);
    m.outputs.push_back(path.string());
  }
  m.timings.push_back({"write", clock.lap_ms()});
  write_manifest(out_dir, m);
  spdlog::info("upg: labeled {} frames into {}", stems.size(), out_dir.string());
  return m;
}

RunManifest run_refine(const fs::path& labels_dir, const fs::path& frames_dir, const PipelineConfig& cfg,
                       RefineMode mode, const std::optional<fs::path>& scores_dir, const fs::path& out_dir,
                       const RunOptions& opts) {
  check_config(cfg);
  if (mode == RefineMode::Online && !scores_dir) throw InputError("online refinement requires a scores directory");
  auto m = start_manifest(mode == RefineMode::Offline ? "refine-offline" : "refine-online", config_hash(cfg),
                {{"labels", labels_dir.string()}, {"frames", frames_dir.string()}});
  if (scores_dir) m.inputs["scores"] = scores_dir->string();
  Stopwatch clock;
  const auto stems = list_stems(frames_dir, ".alf");
  const auto frames = load_frames(frames_dir, stems);
  const auto labels = load_labels(labels_dir, stems);
  for (std::size_t i = 0; i < stems.size(); ++i) {
    if (labels[i].size() != frames[i].points.size()) {
      throw InputError(fmt::format("{}: labels hold {} points, frame has {}", stems[i], labels[i].size(),
                                   frames[i].points.size()));
    }
  }
  std::vector<ScoreMatrix> scores;
  if (mode == RefineMode::Online) {
    for (std::size_t i = 0; i < stems.size(); ++i) {
      const auto path = *scores_dir / (stems[i] + ".als");
      if (!fs::exists(path)) throw InputError("missing scores file " + path.string());
      scores.push_back(read_scores(path));
      if (static_cast<std::size_t>(scores.back().rows()) != frames[i].points.size()) {
        throw InputError(path.string() + ": score rows do not match frame point count");
      }
    }
  }
  std::vector<double> timestamps;
  for (const auto& f : frames) timestamps.push_back(f.timestamp);
  m.timings.push_back({"load", clock.lap_ms()});

  const std::size_t k = std::min<std::size_t>(cfg.ofr_frames, stems.empty() ? 0 : stems.size() - 1);
  PipelineConfig local = cfg;
  local.ofr_frames = static_cast<std::uint32_t>(k);
  std::vector<PointLabels> refined(stems.size());
  parallel_for(stems.size(), opts.workers, [&](std::size_t i) {
    const auto adj = select_adjacent(timestamps, i, k);
    const LabeledFrame current{&frames[i], &labels[i]};
    if (mode == RefineMode::Offline) {
      std::vector<LabeledFrame> adjacent;
      for (const auto a : adj) adjacent.push_back({&frames[a], &labels[a]});
      refined[i] = offline_refine(current, adjacent, local);
      return;
    }
    std::vector<Vec3> points;
    Eigen::Index rows = 0;
    for (const auto a : adj) rows += scores[a].rows();
    ScoreMatrix stacked(rows, labels[i].num_classes);
    Eigen::Index at = 0;
    for (const auto a : adj) {
      const auto aligned = transform_points(frames[a].positions(), frames[a].ego_pose, frames[i].ego_pose);
      points.insert(points.end(), aligned.begin(), aligned.end());
      if (scores[a].cols() != stacked.cols() && scores[a].rows() > 0) {
        throw InputError(stems[a] + ": score columns do not match class count");
      }
      stacked.middleRows(at, scores[a].rows()) = scores[a];
      at += scores[a].rows();
    }
    refined[i] = online_refine(current, points, stacked, local);
  });
  m.timings.push_back({"refine", clock.lap_ms()});

  ensure_dir(out_dir);
  for (std::size_t i = 0; i < stems.size(); ++i) {
    const auto path = out_dir / (stems[i] + ".all");
    write_labels(path, refined[i]);
    m.outputs.push_back(path.string());
  }
  m.timings.push_back({"write", clock.lap_ms()});
  write_manifest(out_dir, m);
  spdlog::info("refine: {} frames with {} neighbours each", stems.size(), k);
  return m;
}

EvalReport run_eval(const fs::path& pred_dir, const fs::path& gt_dir, const PipelineConfig& cfg,
                    const fs::path& out_dir, RunManifest* manifest) {
  check_config(cfg);
  auto m = start_manifest("eval", config_hash(cfg), {{"pred", pred_dir.string()}, {"gt", gt_dir.string()}});
  Stopwatch clock;
  const auto pred_stems = list_stems(pred_dir, ".all");
  const auto gt_stems = list_stems(gt_dir, ".all");
  if (pred_stems != gt_stems) {
    throw InputError(fmt::format("frame sets differ: {} predicted vs {} ground-truth frames", pred_stems.size(),
                                 gt_stems.size()));
  }
  const auto preds = load_labels(pred_dir, pred_stems);
  const auto gts = load_labels(gt_dir, gt_stems);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != gts[i].size() || preds[i].num_classes != cfg.num_classes() ||
        gts[i].num_classes != cfg.num_classes()) {
      throw InputError(pred_stems[i] + ": prediction and ground truth shapes differ");
    }
  }
  m.timings.push_back({"load", clock.lap_ms()});
  auto report = evaluate_sequence(preds, gts, cfg.class_names, cfg.eval.iou_thresholds);
  m.timings.push_back({"evaluate", clock.lap_ms()});

  ensure_dir(out_dir);
  const auto report_json = report.to_json().dump(2) + "\n";
  const auto table = report.to_table();
  write_bytes(out_dir / "report.json",
              std::span(reinterpret_cast<const std::uint8_t*>(report_json.data()), report_json.size()));
  write_bytes(out_dir / "report.txt", std::span(reinterpret_cast<const std::uint8_t*>(table.data()), table.size()));
  m.outputs = {(out_dir / "report.json").string(), (out_dir / "report.txt").string()};
  write_manifest(out_dir, m);
  if (manifest != nullptr) *manifest = m;
  return report;
}

RunManifest run_synth(const SceneSpec& spec, const fs::path& out_dir) {
  if (auto v = validate_scene_spec(spec); !v.empty()) throw InputError("spec: " + v.front());
  auto m = start_manifest("synth", json_hash(json(spec)), {});
  Stopwatch clock;
  SyntheticSequence seq;
  try {
    seq = generate_sequence(spec);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  m.timings.push_back({"generate", clock.lap_ms()});
  const auto frames_dir = ensure_dir(out_dir / "frames");
  const auto dets_dir = ensure_dir(out_dir / "detections");
  const auto gt_dir = ensure_dir(out_dir / "gt");
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& stem = seq.frames[i].frame_id;
    write_frame(frames_dir / (stem + ".alf"), seq.frames[i]);
    write_detections(dets_dir / (stem + ".json"), seq.detections[i]);
    write_labels(gt_dir / (stem + ".all"), seq.ground_truth[i]);
    m.outputs.push_back((frames_dir / (stem + ".alf")).string());
  }
  m.timings.push_back({"write", clock.lap_ms()});
  write_manifest(out_dir, m);
  spdlog::info("synth: wrote {} frames to {}", seq.frames.size(), out_dir.string());
  return m;
}

}  // namespace lidarlabel
