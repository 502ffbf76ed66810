#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace lidarlabel {

enum class VoteMode { Distribution, OneHot };

struct VsvConfig {
  double T_n = 3.0;    // base point-count threshold
  double T_s = 0.4;    // mean-score threshold
  double D = 20.0;     // reference distance, meters
  VoteMode vote_mode = VoteMode::Distribution;
};

struct LossConfig {
  std::array<double, 5> alpha{100.0, 10.0, 1.0, 1.0, 1.0};
  double tau = 0.5;
  double theta = 0.9;
  double phi = 0.65;
  double T_conf = 0.4;
  double distill_temperature = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
};

struct EvalConfig {
  std::vector<double> iou_thresholds{0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
};

struct RiderMergeConfig {
  bool enabled = true;
  double horiz_tol = 0.5;  // fraction of the bicycle box width
  // Person box bottom edge must be no lower than the bicycle box vertical
  // center. This is the only rule currently implemented.
  std::string vert_rule = "bottom_above_center";
  std::string bicycle_class = "cyclist";
  std::string person_class = "pedestrian";
  std::string cyclist_class = "cyclist";
};

struct PipelineConfig {
  std::vector<std::string> class_names{"vehicle", "pedestrian", "cyclist"};
  std::map<std::string, std::string> prompt_to_class{
      {"car", "vehicle"},          {"vehicle", "vehicle"}, {"truck", "vehicle"},
      {"person", "pedestrian"},    {"pedestrian", "pedestrian"},
      {"bicycle", "cyclist"},      {"cyclist", "cyclist"}};
  double voxel_size = 0.2;
  double cluster_voxel_size = 0.3;
  double cvim_iou_threshold = 0.5;
  VsvConfig vsv;
  std::uint32_t ofr_frames = 2;
  LossConfig loss;
  EvalConfig eval;
  RiderMergeConfig rider_merge;

  [[nodiscard]] std::uint32_t num_classes() const { return static_cast<std::uint32_t>(class_names.size()); }
  /// Throws InputError for unknown names.
  [[nodiscard]] int class_index(const std::string& name) const;
  /// prompt -> class index, resolved through class_names.
  [[nodiscard]] std::map<std::string, int> prompt_class_indices() const;
};

std::vector<std::string> validate_config(const PipelineConfig& cfg);

void to_json(nlohmann::json& j, const PipelineConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, PipelineConfig& cfg);

PipelineConfig load_config(const std::string& path);
/// FNV-1a 64 over the canonical (sorted-key, compact) JSON dump.
std::string json_hash(const nlohmann::json& doc);
std::string config_hash(const PipelineConfig& cfg);

}  // namespace lidarlabel
