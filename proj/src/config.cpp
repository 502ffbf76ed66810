#include "lidarlabel/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "lidarlabel/model.hpp"
#include "json_reader.hpp"

namespace lidarlabel {

using nlohmann::json;

int PipelineConfig::class_index(const std::string& name) const {
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (class_names[i] == name) return static_cast<int>(i);
  }
  throw InputError("unknown class name '" + name + "'");
}

std::map<std::string, int> PipelineConfig::prompt_class_indices() const {
  std::map<std::string, int> out;
  for (const auto& [prompt, cls] : prompt_to_class) out[prompt] = class_index(cls);
  return out;
}

std::vector<std::string> validate_config(const PipelineConfig& cfg) {
  std::vector<std::string> v;
  auto unit = [&](double x, const char* name) {
    if (!(x >= 0.0 && x <= 1.0)) v.push_back(fmt::format("{} must lie in [0,1]", name));
  };
  auto positive = [&](double x, const char* name) {
    if (!(x > 0.0)) v.push_back(fmt::format("{} must be positive", name));
  };
  if (cfg.class_names.empty()) v.emplace_back("class_names must be nonempty");
  std::set<std::string> names(cfg.class_names.begin(), cfg.class_names.end());
  if (names.size() != cfg.class_names.size()) v.emplace_back("class_names must be unique");
  for (const auto& [prompt, cls] : cfg.prompt_to_class) {
    if (!names.contains(cls)) v.push_back(fmt::format("prompt_to_class[{}] names unknown class {}", prompt, cls));
  }
  positive(cfg.voxel_size, "voxel_size");
  positive(cfg.cluster_voxel_size, "cluster_voxel_size");
  unit(cfg.cvim_iou_threshold, "cvim_iou_threshold");
  positive(cfg.vsv.T_n, "vsv.T_n");
  unit(cfg.vsv.T_s, "vsv.T_s");
  positive(cfg.vsv.D, "vsv.D");
  for (std::size_t i = 0; i < cfg.loss.alpha.size(); ++i) {
    if (!(cfg.loss.alpha[i] >= 0.0)) v.push_back(fmt::format("loss.alpha[{}] must be >= 0", i));
  }
  positive(cfg.loss.tau, "loss.tau");
  unit(cfg.loss.theta, "loss.theta");
  unit(cfg.loss.phi, "loss.phi");
  unit(cfg.loss.T_conf, "loss.T_conf");
  positive(cfg.loss.distill_temperature, "loss.distill_temperature");
  if (!(cfg.loss.focal_gamma >= 0.0)) v.emplace_back("loss.focal_gamma must be >= 0");
  if (!(cfg.loss.focal_alpha > 0.0)) v.emplace_back("loss.focal_alpha must be positive");
  if (cfg.eval.iou_thresholds.empty()) v.emplace_back("eval.iou_thresholds must be nonempty");
  for (const double t : cfg.eval.iou_thresholds) unit(t, "eval.iou_thresholds[]");
  if (!(cfg.rider_merge.horiz_tol >= 0.0)) v.emplace_back("rider_merge.horiz_tol must be >= 0");
  if (cfg.rider_merge.vert_rule != "bottom_above_center") {
    v.push_back("rider_merge.vert_rule '" + cfg.rider_merge.vert_rule + "' is not supported");
  }
  if (cfg.rider_merge.enabled) {
    for (const auto* cls : {&cfg.rider_merge.bicycle_class, &cfg.rider_merge.person_class,
                            &cfg.rider_merge.cyclist_class}) {
      if (!names.contains(*cls)) v.push_back("rider_merge names unknown class " + *cls);
    }
  }
  return v;
}

namespace {

const char* vote_mode_name(VoteMode m) { return m == VoteMode::OneHot ? "one-hot" : "distribution"; }

VoteMode parse_vote_mode(const std::string& s) {
  if (s == "distribution") return VoteMode::Distribution;
  if (s == "one-hot") return VoteMode::OneHot;
  throw InputError("vsv.vote_mode must be 'distribution' or 'one-hot', got '" + s + "'");
}

}  // namespace

void to_json(json& j, const PipelineConfig& c) {
  j = json{
      {"class_names", c.class_names},
      {"prompt_to_class", c.prompt_to_class},
      {"voxel_size", c.voxel_size},
      {"cluster_voxel_size", c.cluster_voxel_size},
      {"cvim_iou_threshold", c.cvim_iou_threshold},
      {"vsv", {{"T_n", c.vsv.T_n}, {"T_s", c.vsv.T_s}, {"D", c.vsv.D}, {"vote_mode", vote_mode_name(c.vsv.vote_mode)}}},
      {"ofr_frames", c.ofr_frames},
      {"loss",
       {{"alpha", c.loss.alpha},
        {"tau", c.loss.tau},
        {"theta", c.loss.theta},
        {"phi", c.loss.phi},
        {"T_conf", c.loss.T_conf},
        {"distill_temperature", c.loss.distill_temperature},
        {"focal_gamma", c.loss.focal_gamma},
        {"focal_alpha", c.loss.focal_alpha}}},
      {"eval", {{"iou_thresholds", c.eval.iou_thresholds}}},
      {"rider_merge",
       {{"enabled", c.rider_merge.enabled},
        {"horiz_tol", c.rider_merge.horiz_tol},
        {"vert_rule", c.rider_merge.vert_rule},
        {"bicycle_class", c.rider_merge.bicycle_class},
        {"person_class", c.rider_merge.person_class},
        {"cyclist_class", c.rider_merge.cyclist_class}}},
  };
}

void from_json(const json& j, PipelineConfig& c) {
  detail::Reader r(j, "config");
  r.get("class_names", c.class_names);
  r.get("prompt_to_class", c.prompt_to_class);
  r.get("voxel_size", c.voxel_size);
  r.get("cluster_voxel_size", c.cluster_voxel_size);
  r.get("cvim_iou_threshold", c.cvim_iou_threshold);
  r.get("ofr_frames", c.ofr_frames);
  if (const auto* v = r.sub("vsv")) {
    detail::Reader s(*v, "config.vsv");
    s.get("T_n", c.vsv.T_n);
    s.get("T_s", c.vsv.T_s);
    s.get("D", c.vsv.D);
    std::string mode = vote_mode_name(c.vsv.vote_mode);
    s.get("vote_mode", mode);
    c.vsv.vote_mode = parse_vote_mode(mode);
    s.finish();
  }
  if (const auto* v = r.sub("loss")) {
    detail::Reader s(*v, "config.loss");
    s.get("alpha", c.loss.alpha);
    s.get("tau", c.loss.tau);
    s.get("theta", c.loss.theta);
    s.get("phi", c.loss.phi);
    s.get("T_conf", c.loss.T_conf);
    s.get("distill_temperature", c.loss.distill_temperature);
    s.get("focal_gamma", c.loss.focal_gamma);
    s.get("focal_alpha", c.loss.focal_alpha);
    s.finish();
  }
  if (const auto* v = r.sub("eval")) {
    detail::Reader s(*v, "config.eval");
    s.get("iou_thresholds", c.eval.iou_thresholds);
    s.finish();
  }
  if (const auto* v = r.sub("rider_merge")) {
    detail::Reader s(*v, "config.rider_merge");
    s.get("enabled", c.rider_merge.enabled);
    s.get("horiz_tol", c.rider_merge.horiz_tol);
    s.get("vert_rule", c.rider_merge.vert_rule);
    s.get("bicycle_class", c.rider_merge.bicycle_class);
    s.get("person_class", c.rider_merge.person_class);
    s.get("cyclist_class", c.rider_merge.cyclist_class);
    s.finish();
  }
  r.finish();
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path);
  PipelineConfig cfg;
  try {
    cfg = json::parse(in).get<PipelineConfig>();
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
  if (auto v = validate_config(cfg); !v.empty()) throw InputError(path + ": " + v.front());
  return cfg;
}

std::string json_hash(const nlohmann::json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : doc.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string config_hash(const PipelineConfig& cfg) { return json_hash(json(cfg)); }

}  // namespace lidarlabel
