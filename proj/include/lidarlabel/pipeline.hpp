#pragma once

// Directory-level commands shared by the CLI and the end-to-end tests.
//
// Layout: frames are `<stem>.alf`, detections `<stem>.json`, labels
// `<stem>.all`, teacher scores `<stem>.als`. Frames are processed in stem
// order; a missing detection file means no detections for that frame.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidarlabel/config.hpp"
#include "lidarlabel/eval.hpp"
#include "lidarlabel/synth.hpp"

namespace lidarlabel {

inline constexpr const char* kToolVersion = "0.1.0";

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::map<std::string, std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<StageTiming> timings;
  std::string tool_version = kToolVersion;

  [[nodiscard]] nlohmann::json to_json() const;
};

enum class RefineMode { Offline, Online };

struct RunOptions {
  std::size_t workers = 1;
};

/// Frame file stems in a directory, sorted. Throws InputError if the
/// directory is missing.
std::vector<std::string> list_stems(const std::filesystem::path& dir, const std::string& extension);

RunManifest run_upg(const std::filesystem::path& frames_dir, const std::filesystem::path& detections_dir,
                    const PipelineConfig& cfg, const std::filesystem::path& out_dir, const RunOptions& opts = {});

/// Offline mode votes with the input labels of the cfg.ofr_frames nearest
/// frames (fewer when the sequence is shorter). Online mode votes with the
/// teacher scores of those frames and requires `scores_dir`.
RunManifest run_refine(const std::filesystem::path& labels_dir, const std::filesystem::path& frames_dir,
                       const PipelineConfig& cfg, RefineMode mode,
                       const std::optional<std::filesystem::path>& scores_dir, const std::filesystem::path& out_dir,
                       const RunOptions& opts = {});

/// Writes report.json and report.txt (and the manifest) into `out_dir`.
EvalReport run_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                    const PipelineConfig& cfg, const std::filesystem::path& out_dir, RunManifest* manifest = nullptr);

/// Writes frames/, detections/ and gt/ under `out_dir`.
RunManifest run_synth(const SceneSpec& spec, const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);

}  // namespace lidarlabel
