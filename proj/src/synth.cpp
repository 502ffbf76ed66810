#include "lidarlabel/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <fmt/format.h>

#include "json_reader.hpp"
#include "lidarlabel/geometry.hpp"
#include "lidarlabel/upg.hpp"

namespace lidarlabel {

using nlohmann::json;

namespace {

constexpr double kSensorHeight = 1.8;  // ground plane sits at z = -kSensorHeight
constexpr double kBearingMargin = 3.0 * std::numbers::pi / 180.0;
constexpr double kBearingSlack = 1.0 * std::numbers::pi / 180.0;
constexpr double kMinRange = 14.0;
constexpr double kMaxRange = 32.0;
constexpr double kBackgroundInner = 50.0;
constexpr double kBackgroundOuter = 80.0;
constexpr double kTrueScore = 0.8;
constexpr double kSecondPromptDrop = 0.1;
constexpr double kOffScore = 0.05;

ObjectSpec class_template(const std::string& name) {
  ObjectSpec o;
  o.class_name = name;
  if (name == "vehicle" || name == "car") {
    o.extents = {4.5, 2.0, 1.6};
    o.points = 1500;
  } else if (name == "pedestrian") {
    o.extents = {0.6, 0.6, 1.8};
    o.points = 120;
  } else if (name == "cyclist") {
    o.extents = {1.8, 0.6, 1.7};
    o.points = 250;
  } else {
    o.extents = {1.0, 1.0, 1.5};
    o.points = 150;
  }
  return o;
}

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

Vec3 ego_position(const SceneSpec& spec, double frame) { return {frame * spec.ego_speed, 0.0, 0.0}; }

// Bearing interval, over every frame, of an object's box corners as seen from
// the vehicle, unwrapped around `reference`.
std::pair<double, double> bearing_interval(const SceneSpec& spec, const ObjectSpec& o, double reference) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::uint32_t f = 0; f < spec.num_frames; ++f) {
    const Vec3 c = o.center + f * o.velocity - ego_position(spec, f);
    for (int corner = 0; corner < 4; ++corner) {
      const double dx = (corner & 1 ? 0.5 : -0.5) * o.extents.x();
      const double dy = (corner & 2 ? 0.5 : -0.5) * o.extents.y();
      const double a = reference + wrap_angle(std::atan2(c.y() + dy, c.x() + dx) - reference);
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  }
  return {lo, hi};
}

// Places objects one after another around the vehicle so their bearing
// intervals never overlap; returns the end of the last interval.
double place_ring(const SceneSpec& spec, std::vector<ObjectSpec>& objects, const std::vector<double>& ranges,
                  double start, const std::vector<double>& gaps) {
  const Vec3 mid = ego_position(spec, 0.5 * (spec.num_frames - 1.0));
  double cursor = start;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    auto& o = objects[i];
    const double target = cursor + gaps[i];
    double theta = target + std::atan2(0.5 * o.extents.head<2>().norm(), ranges[i]);
    for (int iter = 0; iter < 4; ++iter) {
      o.center.head<2>() = mid.head<2>() + ranges[i] * Eigen::Vector2d(std::cos(theta), std::sin(theta));
      theta += target - bearing_interval(spec, o, theta).first;
    }
    o.center.head<2>() = mid.head<2>() + ranges[i] * Eigen::Vector2d(std::cos(theta), std::sin(theta));
    cursor = bearing_interval(spec, o, theta).second + kBearingMargin;
  }
  return cursor;
}

std::vector<ObjectSpec> place_random_objects(const SceneSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = spec.random_objects;
  std::vector<ObjectSpec> objects;
  std::vector<double> ranges;
  for (std::size_t i = 0; i < n; ++i) {
    auto o = class_template(spec.class_names[i % spec.class_names.size()]);
    o.center.z() = -kSensorHeight + 0.5 * o.extents.z();
    objects.push_back(o);
    ranges.push_back(kMinRange + (kMaxRange - kMinRange) * unit(rng));
  }
  std::shuffle(objects.begin(), objects.end(), rng);
  // Budget each object at its widest bearing, so any placement fits.
  const double full = 2.0 * std::numbers::pi;
  double budget = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto probe = objects[i];
    double widest = 0.0;
    for (int k = 0; k < 72; ++k) {
      std::vector<ObjectSpec> one{probe};
      const double a = full * k / 72.0;
      widest = std::max(widest, place_ring(spec, one, {ranges[i]}, a, {0.0}) - a);
    }
    budget += widest + kBearingSlack;
  }
  if (budget > full) {
    throw std::invalid_argument(fmt::format("scene too crowded: {} objects need {:.1f} deg of bearing", n,
                                            budget * 180.0 / std::numbers::pi));
  }
  const double start = full * unit(rng);
  std::vector<double> gaps(n);
  double total = 0.0;
  for (auto& g : gaps) total += (g = unit(rng));
  for (auto& g : gaps) g = total > 0.0 ? (full - budget) * g / total : 0.0;
  if (place_ring(spec, objects, ranges, start, gaps) - start > full) {
    throw std::invalid_argument("scene too crowded to keep object bearings apart");
  }
  return objects;
}

std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& bits, std::uint32_t w, std::uint32_t h,
                                 std::uint32_t radius) {
  if (radius == 0) return bits;
  std::vector<std::uint8_t> out(bits.size(), 0);
  const auto r = static_cast<std::int64_t>(radius);
  for (std::int64_t v = 0; v < h; ++v) {
    for (std::int64_t u = 0; u < w; ++u) {
      if (bits[static_cast<std::size_t>(v * w + u)] == 0) continue;
      for (auto dv = std::max<std::int64_t>(0, v - r); dv <= std::min<std::int64_t>(h - 1, v + r); ++dv) {
        for (auto du = std::max<std::int64_t>(0, u - r); du <= std::min<std::int64_t>(w - 1, u + r); ++du) {
          out[static_cast<std::size_t>(dv * w + du)] = 1;
        }
      }
    }
  }
  return out;
}

std::optional<Box2D> bounding_box(const std::vector<std::uint8_t>& bits, std::uint32_t w, std::uint32_t h) {
  std::optional<Box2D> box;
  for (std::uint32_t v = 0; v < h; ++v) {
    for (std::uint32_t u = 0; u < w; ++u) {
      if (bits[static_cast<std::size_t>(v) * w + u] == 0) continue;
      if (!box) box = Box2D{double(u), double(v), u + 1.0, v + 1.0};
      box->u_min = std::min(box->u_min, double(u));
      box->v_min = std::min(box->v_min, double(v));
      box->u_max = std::max(box->u_max, u + 1.0);
      box->v_max = std::max(box->v_max, v + 1.0);
    }
  }
  return box;
}

class DetectionMaker {
 public:
  DetectionMaker(const SceneSpec& spec, std::mt19937_64& rng) : spec_(spec), rng_(rng) {
    for (std::size_t c = 0; c < spec.class_names.size(); ++c) {
      for (const auto& p : spec.prompts.at(spec.class_names[c])) prompt_to_class_[p] = static_cast<int>(c);
    }
  }

  // Scores as a VFM would return them for an object shown as `shown`.
  DetectionRecord scored(const std::string& view, int shown) {
    std::normal_distribution<double> noise(0.0, spec_.noise.score_noise_sigma);
    auto draw = [&] { return spec_.noise.score_noise_sigma > 0.0 ? noise(rng_) : 0.0; };
    DetectionRecord d;
    d.view_id = view;
    for (std::size_t c = 0; c < spec_.class_names.size(); ++c) {
      const auto& prompts = spec_.prompts.at(spec_.class_names[c]);
      for (std::size_t k = 0; k < prompts.size(); ++k) {
        double s = static_cast<int>(c) == shown ? kTrueScore - kSecondPromptDrop * static_cast<double>(k) + draw()
                                                : kOffScore + std::abs(draw());
        d.prompt_scores[prompts[k]] = std::clamp(s, 0.0, 1.0);
      }
    }
    auto dist = extract_distribution(d.prompt_scores, prompt_to_class_, spec_.class_names.size());
    d.class_distribution = std::move(dist.distribution);
    d.confidence = dist.confidence;
    return d;
  }

  void finish(DetectionRecord& d, const std::vector<std::uint8_t>& bits, const CameraCalibration& cam) {
    d.mask = rle_encode(bits, cam.width, cam.height);
    d.box = *bounding_box(bits, cam.width, cam.height);
  }

 private:
  const SceneSpec& spec_;
  std::mt19937_64& rng_;
  std::map<std::string, int> prompt_to_class_;
};

int class_of(const SceneSpec& spec, const std::string& name) {
  const auto it = std::ranges::find(spec.class_names, name);
  return it == spec.class_names.end() ? -1 : static_cast<int>(it - spec.class_names.begin());
}

}  // namespace

std::vector<CameraCalibration> make_rig(const RigSpec& rig) {
  std::vector<CameraCalibration> cams;
  const double f = 0.5 * rig.width / std::tan(0.5 * rig.hfov_deg * std::numbers::pi / 180.0);
  for (std::uint32_t k = 0; k < rig.num_cameras; ++k) {
    const double yaw = 2.0 * std::numbers::pi * k / rig.num_cameras;
    const Vec3 forward(std::cos(yaw), std::sin(yaw), 0.0);
    const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
    const Vec3 down(0.0, 0.0, -1.0);
    CameraCalibration cam;
    cam.view_id = fmt::format("cam{}", k);
    cam.K << f, 0.0, 0.5 * rig.width, 0.0, f, 0.5 * rig.height, 0.0, 0.0, 1.0;
    cam.T = Mat4::Identity();
    cam.T.block<1, 3>(0, 0) = right.transpose();
    cam.T.block<1, 3>(1, 0) = down.transpose();
    cam.T.block<1, 3>(2, 0) = forward.transpose();
    cam.width = rig.width;
    cam.height = rig.height;
    cams.push_back(cam);
  }
  return cams;
}

std::vector<std::string> validate_scene_spec(const SceneSpec& spec) {
  std::vector<std::string> v;
  auto unit = [&](double x, const char* name) {
    if (!(x >= 0.0 && x <= 1.0)) v.push_back(fmt::format("noise.{} must lie in [0,1]", name));
  };
  unit(spec.noise.label_flip_prob, "label_flip_prob");
  unit(spec.noise.detection_drop_prob, "detection_drop_prob");
  unit(spec.noise.rider_split_prob, "rider_split_prob");
  if (!(spec.noise.score_noise_sigma >= 0.0)) v.emplace_back("noise.score_noise_sigma must be >= 0");
  if (!(spec.frame_interval > 0.0)) v.emplace_back("frame_interval must be positive");
  if (!std::isfinite(spec.ego_speed)) v.emplace_back("ego_speed must be finite");
  if (spec.class_names.empty()) v.emplace_back("class_names must be nonempty");
  std::set<std::string> names(spec.class_names.begin(), spec.class_names.end());
  if (names.size() != spec.class_names.size()) v.emplace_back("class_names must be unique");
  std::set<std::string> seen_prompts;
  for (const auto& c : spec.class_names) {
    const auto it = spec.prompts.find(c);
    if (it == spec.prompts.end() || it->second.empty()) {
      v.push_back("prompts missing for class " + c);
      continue;
    }
    for (const auto& p : it->second) {
      if (!seen_prompts.insert(p).second) v.push_back("prompt '" + p + "' used twice");
    }
  }
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    if (!names.contains(o.class_name)) v.push_back(fmt::format("objects[{}] has unknown class {}", i, o.class_name));
    if (!(o.extents.minCoeff() > 0.0) || !o.extents.allFinite()) {
      v.push_back(fmt::format("objects[{}] extents must be positive", i));
    }
    if (!o.center.allFinite() || !o.velocity.allFinite()) v.push_back(fmt::format("objects[{}] non-finite pose", i));
    if (o.points == 0) v.push_back(fmt::format("objects[{}] needs at least one point", i));
  }
  if (spec.noise.rider_split_prob > 0.0 && (!names.contains("cyclist") || !names.contains("pedestrian"))) {
    v.emplace_back("noise.rider_split_prob needs classes 'cyclist' and 'pedestrian'");
  }
  if (spec.rig.num_cameras == 0 || spec.rig.width == 0 || spec.rig.height == 0) {
    v.emplace_back("rig needs at least one camera with a nonzero image size");
  }
  if (!(spec.rig.hfov_deg > 0.0 && spec.rig.hfov_deg < 180.0)) v.emplace_back("rig.hfov_deg must lie in (0,180)");
  return v;
}

void to_json(json& j, const SceneSpec& s) {
  auto vec = [](const Vec3& x) { return json::array({x.x(), x.y(), x.z()}); };
  json objects = json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"class", o.class_name},
                       {"extents", vec(o.extents)},
                       {"center", vec(o.center)},
                       {"velocity", vec(o.velocity)},
                       {"points", o.points}});
  }
  j = json{{"seed", s.seed},
           {"num_frames", s.num_frames},
           {"frame_interval", s.frame_interval},
           {"ego_speed", s.ego_speed},
           {"class_names", s.class_names},
           {"prompts", s.prompts},
           {"objects", objects},
           {"random_objects", s.random_objects},
           {"background_points", s.background_points},
           {"noise",
            {{"label_flip_prob", s.noise.label_flip_prob},
             {"detection_drop_prob", s.noise.detection_drop_prob},
             {"mask_dilation", s.noise.mask_dilation},
             {"score_noise_sigma", s.noise.score_noise_sigma},
             {"rider_split_prob", s.noise.rider_split_prob}}},
           {"rig",
            {{"num_cameras", s.rig.num_cameras},
             {"width", s.rig.width},
             {"height", s.rig.height},
             {"hfov_deg", s.rig.hfov_deg}}}};
}

void from_json(const json& j, SceneSpec& s) {
  auto read_vec = [](detail::Reader& r, const char* key, Vec3& out) {
    std::array<double, 3> a{out.x(), out.y(), out.z()};
    r.get(key, a);
    out = {a[0], a[1], a[2]};
  };
  detail::Reader r(j, "spec");
  r.get("seed", s.seed);
  r.get("num_frames", s.num_frames);
  r.get("frame_interval", s.frame_interval);
  r.get("ego_speed", s.ego_speed);
  r.get("class_names", s.class_names);
  r.get("prompts", s.prompts);
  r.get("random_objects", s.random_objects);
  r.get("background_points", s.background_points);
  if (const auto* objs = r.sub("objects")) {
    if (!objs->is_array()) throw InputError("spec.objects must be an array");
    s.objects.clear();
    for (std::size_t i = 0; i < objs->size(); ++i) {
      detail::Reader o(objs->at(i), fmt::format("spec.objects[{}]", i));
      std::string cls;
      o.get("class", cls);
      auto obj = class_template(cls);
      read_vec(o, "extents", obj.extents);
      read_vec(o, "center", obj.center);
      read_vec(o, "velocity", obj.velocity);
      o.get("points", obj.points);
      o.finish();
      s.objects.push_back(obj);
    }
  }
  if (const auto* n = r.sub("noise")) {
    detail::Reader o(*n, "spec.noise");
    o.get("label_flip_prob", s.noise.label_flip_prob);
    o.get("detection_drop_prob", s.noise.detection_drop_prob);
    o.get("mask_dilation", s.noise.mask_dilation);
    o.get("score_noise_sigma", s.noise.score_noise_sigma);
    o.get("rider_split_prob", s.noise.rider_split_prob);
    o.finish();
  }
  if (const auto* g = r.sub("rig")) {
    detail::Reader o(*g, "spec.rig");
    o.get("num_cameras", s.rig.num_cameras);
    o.get("width", s.rig.width);
    o.get("height", s.rig.height);
    o.get("hfov_deg", s.rig.hfov_deg);
    o.finish();
  }
  r.finish();
}

SceneSpec load_scene_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open spec file " + path);
  SceneSpec spec;
  try {
    spec = json::parse(in).get<SceneSpec>();
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
  if (auto v = validate_scene_spec(spec); !v.empty()) throw InputError(path + ": " + v.front());
  return spec;
}

SyntheticSequence generate_sequence(const SceneSpec& spec) {
  if (auto v = validate_scene_spec(spec); !v.empty()) throw std::invalid_argument("invalid scene spec: " + v.front());
  const auto num_classes = static_cast<std::uint32_t>(spec.class_names.size());
  SyntheticSequence seq;
  {
    std::mt19937_64 layout_rng(spec.seed);
    seq.objects = spec.objects.empty() ? place_random_objects(spec, layout_rng) : spec.objects;
  }
  const auto cams = make_rig(spec.rig);
  const int cyclist = class_of(spec, "cyclist");
  const int pedestrian = class_of(spec, "pedestrian");

  for (std::uint32_t f = 0; f < spec.num_frames; ++f) {
    std::seed_seq frame_seed{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), f};
    std::mt19937_64 rng(frame_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Frame frame;
    frame.frame_id = fmt::format("frame_{:06d}", f);
    frame.timestamp = f * spec.frame_interval;
    frame.ego_pose.block<3, 1>(0, 3) = ego_position(spec, f);
    frame.cameras = cams;
    const Vec3 ego = ego_position(spec, f);

    std::vector<std::pair<std::size_t, std::size_t>> spans;  // per object [begin, end)
    for (const auto& o : seq.objects) {
      const Vec3 center = o.center + f * o.velocity - ego;
      const auto begin = frame.points.size();
      for (std::uint32_t k = 0; k < o.points; ++k) {
        const Vec3 local(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
        const Vec3 p = center + local.cwiseProduct(o.extents);
        frame.points.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()),
                                static_cast<float>(unit(rng))});
      }
      spans.emplace_back(begin, frame.points.size());
    }
    for (std::uint32_t k = 0; k < spec.background_points; ++k) {
      const double r2 = kBackgroundInner * kBackgroundInner +
                        unit(rng) * (kBackgroundOuter * kBackgroundOuter - kBackgroundInner * kBackgroundInner);
      const double a = 2.0 * std::numbers::pi * unit(rng);
      const double z = -2.0 + 7.0 * unit(rng);
      frame.points.push_back({static_cast<float>(std::sqrt(r2) * std::cos(a)),
                              static_cast<float>(std::sqrt(r2) * std::sin(a)), static_cast<float>(z),
                              static_cast<float>(unit(rng))});
    }

    PointLabels gt(frame.points.size(), num_classes);
    for (std::size_t k = 0; k < seq.objects.size(); ++k) {
      const int cls = class_of(spec, seq.objects[k].class_name);
      for (auto i = spans[k].first; i < spans[k].second; ++i) {
        gt.instance_id[i] = static_cast<std::int32_t>(k);
        gt.class_id[i] = cls;
        gt.confidence[i] = 1.0F;
        gt.row(i)[static_cast<std::size_t>(cls)] = 1.0F;
      }
    }

    // Detections: one per camera that sees the whole object.
    const auto positions = frame.positions();
    DetectionMaker maker(spec, rng);
    std::vector<DetectionRecord> dets;
    for (const auto& cam : cams) {
      for (std::size_t k = 0; k < seq.objects.size(); ++k) {
        std::vector<std::uint8_t> bits(static_cast<std::size_t>(cam.width) * cam.height, 0);
        bool visible = true;
        double v_lo = cam.height;
        double v_hi = 0.0;
        for (auto i = spans[k].first; i < spans[k].second && visible; ++i) {
          const auto pp = project_point(positions[i], cam);
          visible = pp.in_image;
          if (!visible) break;
          bits[static_cast<std::size_t>(pp.v) * cam.width + static_cast<std::size_t>(pp.u)] = 1;
          v_lo = std::min(v_lo, pp.v);
          v_hi = std::max(v_hi, pp.v);
        }
        if (!visible || spans[k].first == spans[k].second) continue;
        if (unit(rng) < spec.noise.detection_drop_prob) continue;

        const int truth = class_of(spec, seq.objects[k].class_name);
        int shown = truth;
        if (num_classes > 1 && unit(rng) < spec.noise.label_flip_prob) {
          const auto pick = static_cast<int>(unit(rng) * (num_classes - 1)) % static_cast<int>(num_classes - 1);
          shown = pick >= truth ? pick + 1 : pick;
        }
        const bool split = truth == cyclist && unit(rng) < spec.noise.rider_split_prob;
        if (!split) {
          auto d = maker.scored(cam.view_id, shown);
          maker.finish(d, dilate(bits, cam.width, cam.height, spec.noise.mask_dilation), cam);
          dets.push_back(std::move(d));
          continue;
        }
        // Rider split: the lower half reads as the bicycle, the upper as its rider.
        const auto split_row = static_cast<std::uint32_t>(0.5 * (v_lo + v_hi));
        std::vector<std::uint8_t> lower(bits.size(), 0);
        std::vector<std::uint8_t> upper(bits.size(), 0);
        for (std::size_t px = 0; px < bits.size(); ++px) {
          if (bits[px] == 0) continue;
          (px / cam.width >= split_row ? lower : upper)[px] = 1;
        }
        auto bike = maker.scored(cam.view_id, shown);
        auto rider = maker.scored(cam.view_id, pedestrian);
        const auto lower_d = dilate(lower, cam.width, cam.height, spec.noise.mask_dilation);
        const auto upper_d = dilate(upper, cam.width, cam.height, spec.noise.mask_dilation);
        if (!bounding_box(lower_d, cam.width, cam.height) || !bounding_box(upper_d, cam.width, cam.height)) {
          maker.finish(bike, dilate(bits, cam.width, cam.height, spec.noise.mask_dilation), cam);
          dets.push_back(std::move(bike));
          continue;
        }
        maker.finish(bike, lower_d, cam);
        maker.finish(rider, upper_d, cam);
        dets.push_back(std::move(bike));
        dets.push_back(std::move(rider));
      }
    }

    seq.frames.push_back(std::move(frame));
    seq.ground_truth.push_back(std::move(gt));
    seq.detections.push_back(std::move(dets));
  }
  return seq;
}

PointLabels corrupt_labels(const PointLabels& labels, double flip_prob, std::uint64_t seed) {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("corrupt_labels: flip_prob outside [0,1]");
  PointLabels out = labels;
  const auto c = static_cast<int>(labels.num_classes);
  if (c < 2) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> other(0, c - 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int old = out.class_id[i];
    if (old < 0) continue;
    if (unit(rng) >= flip_prob) continue;
    int pick = other(rng);
    if (pick >= old) ++pick;
    auto row = out.row(i);
    std::swap(row[static_cast<std::size_t>(old)], row[static_cast<std::size_t>(pick)]);
    out.class_id[i] = pick;
  }
  return out;
}

}  // namespace lidarlabel
