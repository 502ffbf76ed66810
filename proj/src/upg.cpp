#include "lidarlabel/upg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lidarlabel {

ClassDistribution extract_distribution(const std::map<std::string, double>& prompt_scores,
                                       const std::map<std::string, int>& prompt_to_class, std::size_t num_classes) {
  ClassDistribution out{std::vector<double>(num_classes, 0.0), 0.0};
  for (const auto& [prompt, score] : prompt_scores) {
    const auto it = prompt_to_class.find(prompt);
    if (it == prompt_to_class.end()) throw InputError("unknown prompt '" + prompt + "'");
    const auto c = static_cast<std::size_t>(it->second);
    if (it->second < 0 || c >= num_classes) throw InputError("prompt '" + prompt + "' maps outside the class range");
    out.distribution[c] = std::max(out.distribution[c], score);
  }
  for (const double p : out.distribution) out.confidence = std::max(out.confidence, p);
  return out;
}

namespace {

int detection_class(const DetectionRecord& d) { return argmax(std::span<const double>(d.class_distribution)); }

std::vector<double> rescale_max(std::vector<double> dist, double target) {
  const double m = dist.empty() ? 0.0 : *std::ranges::max_element(dist);
  if (m > 0.0) {
    for (auto& x : dist) x *= target / m;
  }
  return dist;
}

// Confidence-weighted mean; falls back to the plain mean when all weights are zero.
std::vector<double> weighted_mean(const std::vector<const std::vector<double>*>& rows,
                                  const std::vector<double>& weights) {
  std::vector<double> out(rows.front()->size(), 0.0);
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const bool uniform = !(total > 0.0);
  if (uniform) total = static_cast<double>(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double w = uniform ? 1.0 : weights[k];
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * (*rows[k])[c];
  }
  for (auto& x : out) x /= total;
  return out;
}

std::optional<std::vector<double>> merged_embedding(const std::vector<const std::optional<std::vector<double>>*>& embs,
                                                    const std::vector<double>& weights) {
  std::vector<const std::vector<double>*> rows;
  std::vector<double> w;
  for (std::size_t k = 0; k < embs.size(); ++k) {
    if (embs[k]->has_value()) {
      rows.push_back(&embs[k]->value());
      w.push_back(weights[k]);
    }
  }
  if (rows.empty()) return std::nullopt;
  auto mean = weighted_mean(rows, w);
  double norm = 0.0;
  for (const double x : mean) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : mean) x /= norm;
  }
  return mean;
}

RleMask mask_union(const RleMask& a, const RleMask& b) {
  if (a.width != b.width || a.height != b.height) throw InvariantError("merge_rider: masks differ in size");
  auto bits = rle_decode(a);
  const auto other = rle_decode(b);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] |= other[i];
  return rle_encode(bits, a.width, a.height);
}

DetectionRecord merge_pair(const DetectionRecord& bike, const DetectionRecord& person, int cyclist_class) {
  DetectionRecord out;
  out.view_id = bike.view_id;
  out.box = {std::min(bike.box.u_min, person.box.u_min), std::min(bike.box.v_min, person.box.v_min),
             std::max(bike.box.u_max, person.box.u_max), std::max(bike.box.v_max, person.box.v_max)};
  out.prompt_scores = bike.prompt_scores;
  for (const auto& [prompt, score] : person.prompt_scores) {
    auto [it, inserted] = out.prompt_scores.try_emplace(prompt, score);
    if (!inserted) it->second = std::max(it->second, score);
  }
  const std::vector<double> weights{bike.confidence, person.confidence};
  const double target = std::max(bike.confidence, person.confidence);
  out.class_distribution =
      rescale_max(weighted_mean({&bike.class_distribution, &person.class_distribution}, weights), target);
  // The merged detection is a cyclist: swap the top entry into the cyclist slot.
  auto& dist = out.class_distribution;
  const auto cyc = static_cast<std::size_t>(cyclist_class);
  const auto top = static_cast<std::size_t>(std::ranges::max_element(dist) - dist.begin());
  std::swap(dist[top], dist[cyc]);
  dist[cyc] = target;
  out.confidence = target;
  out.mask = mask_union(bike.mask, person.mask);
  out.embedding = merged_embedding({&bike.embedding, &person.embedding}, weights);
  return out;
}

}  // namespace

std::vector<DetectionRecord> merge_rider(const std::vector<DetectionRecord>& detections, int bicycle_class,
                                         int person_class, int cyclist_class, const RiderMergeConfig& cfg) {
  const std::size_t n = detections.size();
  std::vector<bool> consumed(n, false);
  std::vector<std::optional<DetectionRecord>> merged(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& bike = detections[b];
    if (detection_class(bike) != bicycle_class || consumed[b]) continue;
    std::optional<std::size_t> best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < n; ++p) {
      if (p == b || consumed[p] || merged[p]) continue;
      const auto& person = detections[p];
      if (detection_class(person) != person_class) continue;
      if (person.view_id != bike.view_id) continue;
      const bool above = person.box.v_max <= bike.box.center_v();
      const bool close = std::abs(person.box.center_u() - bike.box.center_u()) <= cfg.horiz_tol * bike.box.width();
      if (!above || !close) continue;
      const double d = std::hypot(person.box.center_u() - bike.box.center_u(),
                                  person.box.center_v() - bike.box.center_v());
      if (d < best_dist) {
        best_dist = d;
        best = p;
      }
    }
    if (best) {
      merged[b] = merge_pair(bike, detections[*best], cyclist_class);
      consumed[*best] = true;
    }
  }
  std::vector<DetectionRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (consumed[i]) continue;
    out.push_back(merged[i] ? *merged[i] : detections[i]);
  }
  return out;
}

std::optional<Instance3D> build_instance(std::span<const Vec3> points, std::span<const ProjectedPoint> projections,
                                         const DetectionRecord& det, double cluster_voxel_size) {
  if (projections.size() != points.size()) throw std::invalid_argument("build_instance: projection count mismatch");
  const auto bits = rle_decode(det.mask);
  IndexSet lifted;
  for (std::size_t i = 0; i < projections.size(); ++i) {
    const auto& pp = projections[i];
    if (!pp.in_image) continue;
    const auto u = static_cast<std::size_t>(pp.u);
    const auto v = static_cast<std::size_t>(pp.v);
    if (u >= det.mask.width || v >= det.mask.height) continue;
    if (bits[v * det.mask.width + u] != 0) lifted.push_back(static_cast<PointIndex>(i));
  }
  if (lifted.empty()) return std::nullopt;
  auto clusters = connected_components(lifted, points, cluster_voxel_size);
  Instance3D inst;
  inst.point_indices = std::move(clusters.front());
  inst.class_distribution = det.class_distribution;
  inst.confidence = det.confidence;
  inst.source_views = {det.view_id};
  inst.embedding = det.embedding;
  return inst;
}

std::optional<Instance3D> build_instance(const Frame& frame, const DetectionRecord& det, double cluster_voxel_size) {
  const auto* cam = frame.camera(det.view_id);
  if (cam == nullptr) throw InputError("detection view '" + det.view_id + "' not present in frame " + frame.frame_id);
  if (det.mask.width != cam->width || det.mask.height != cam->height) {
    throw InvariantError("detection mask size does not match camera " + det.view_id);
  }
  const auto pts = frame.positions();
  const auto proj = project_points(pts, *cam);
  return build_instance(pts, proj, det, cluster_voxel_size);
}

namespace {

bool views_disjoint(const std::set<std::string>& a, const std::set<std::string>& b) {
  return std::ranges::none_of(a, [&](const std::string& v) { return b.contains(v); });
}

bool instance_order(const Instance3D& a, const Instance3D& b) {
  if (a.point_indices.size() != b.point_indices.size()) return a.point_indices.size() > b.point_indices.size();
  if (a.point_indices != b.point_indices) return a.point_indices < b.point_indices;
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.source_views != b.source_views) return a.source_views < b.source_views;
  return a.class_distribution < b.class_distribution;
}

}  // namespace

std::vector<Instance3D> cross_view_merge(const std::vector<Instance3D>& instances, double iou_threshold) {
  // groups[g] lists the original instances folded into group g. Passes repeat
  // until no pair qualifies, so the output is a fixed point of the rule.
  std::vector<std::vector<std::size_t>> groups(instances.size());
  std::vector<Instance3D> current;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    groups[i] = {i};
    current.push_back(instances[i]);
  }

  bool changed = true;
  while (changed) {
    changed = false;
    const std::size_t n = current.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!views_disjoint(current[i].source_views, current[j].source_views)) continue;
        if (point_set_iou(current[i].point_indices, current[j].point_indices) > iou_threshold) {
          const auto ri = find(i);
          const auto rj = find(j);
          if (ri != rj) {
            parent[std::max(ri, rj)] = std::min(ri, rj);
            changed = true;
          }
        }
      }
    }
    if (!changed) break;

    std::vector<std::vector<std::size_t>> next_groups;
    std::vector<std::size_t> slot(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = find(i);
      if (slot[r] == n) {
        slot[r] = next_groups.size();
        next_groups.emplace_back();
      }
      auto& g = next_groups[slot[r]];
      g.insert(g.end(), groups[i].begin(), groups[i].end());
    }
    groups = std::move(next_groups);

    current.clear();
    for (auto& g : groups) {
      std::ranges::sort(g);
      Instance3D m;
      std::vector<const std::vector<double>*> dists;
      std::vector<const std::optional<std::vector<double>>*> embs;
      std::vector<double> weights;
      for (const auto k : g) {
        const auto& src = instances[k];
        m.point_indices.insert(m.point_indices.end(), src.point_indices.begin(), src.point_indices.end());
        m.source_views.insert(src.source_views.begin(), src.source_views.end());
        m.confidence = std::max(m.confidence, src.confidence);
        dists.push_back(&src.class_distribution);
        embs.push_back(&src.embedding);
        weights.push_back(src.confidence);
      }
      normalize(m.point_indices);
      m.class_distribution = g.size() == 1 ? instances[g.front()].class_distribution
                                           : rescale_max(weighted_mean(dists, weights), m.confidence);
      m.embedding = g.size() == 1 ? instances[g.front()].embedding : merged_embedding(embs, weights);
      current.push_back(std::move(m));
    }
  }

  std::ranges::sort(current, instance_order);
  for (std::size_t i = 0; i < current.size(); ++i) current[i].instance_id = static_cast<std::int32_t>(i);
  return current;
}

PointLabels assign_point_labels(const std::vector<Instance3D>& instances, std::size_t num_points,
                                std::uint32_t num_classes) {
  PointLabels labels(num_points, num_classes);
  std::vector<const Instance3D*> owner(num_points, nullptr);
  for (const auto& inst : instances) {
    if (inst.class_distribution.size() != num_classes) {
      throw InvariantError("instance distribution length does not match class count");
    }
    for (const auto idx : inst.point_indices) {
      if (idx >= num_points) throw std::out_of_range("instance point index out of range");
      const auto* cur = owner[idx];
      if (cur == nullptr || inst.confidence > cur->confidence ||
          (inst.confidence == cur->confidence && inst.instance_id < cur->instance_id)) {
        owner[idx] = &inst;
      }
    }
  }
  for (std::size_t i = 0; i < num_points; ++i) {
    const auto* inst = owner[i];
    if (inst == nullptr) continue;
    auto row = labels.row(i);
    for (std::size_t c = 0; c < num_classes; ++c) row[c] = static_cast<float>(inst->class_distribution[c]);
    labels.instance_id[i] = inst->instance_id;
    labels.class_id[i] = argmax(std::span<const float>(row));
    labels.confidence[i] = static_cast<float>(inst->confidence);
  }
  return labels;
}

PointLabels generate_pseudo_labels(const Frame& frame, const std::vector<DetectionRecord>& detections,
                                   const PipelineConfig& cfg) {
  const auto num_classes = cfg.num_classes();
  const auto pts = frame.positions();
  std::vector<Instance3D> instances;
  for (const auto& cam : frame.cameras) {
    std::vector<DetectionRecord> view_dets;
    for (const auto& d : detections) {
      if (d.view_id == cam.view_id) view_dets.push_back(d);
    }
    if (view_dets.empty()) continue;
    for (const auto& d : view_dets) {
      if (auto v = validate_detection(d, cam, num_classes); !v.empty()) {
        throw InvariantError("detection in view " + cam.view_id + ": " + v.front());
      }
    }
    if (cfg.rider_merge.enabled) {
      view_dets = merge_rider(view_dets, cfg.class_index(cfg.rider_merge.bicycle_class),
                              cfg.class_index(cfg.rider_merge.person_class),
                              cfg.class_index(cfg.rider_merge.cyclist_class), cfg.rider_merge);
    }
    const auto proj = project_points(pts, cam);
    for (const auto& d : view_dets) {
      if (auto inst = build_instance(pts, proj, d, cfg.cluster_voxel_size)) instances.push_back(std::move(*inst));
    }
  }
  for (const auto& d : detections) {
    if (frame.camera(d.view_id) == nullptr) {
      throw InputError("detection view '" + d.view_id + "' not present in frame " + frame.frame_id);
    }
  }
  return assign_point_labels(cross_view_merge(instances, cfg.cvim_iou_threshold), pts.size(), num_classes);
}

}  // namespace lidarlabel
