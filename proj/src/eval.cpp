#include "lidarlabel/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "lidarlabel/geometry.hpp"

namespace lidarlabel {

std::vector<InstanceMatch> match_instances(std::span<const InstancePrediction> preds,
                                           std::span<const InstancePrediction> gts, double iou_threshold) {
  std::vector<InstanceMatch> matches;
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t p = 0; p < preds.size(); ++p) {
    std::optional<std::size_t> best;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != preds[p].class_id) continue;
      const double iou = point_set_iou(preds[p].point_indices, gts[g].point_indices);
      if (iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best) {
      taken[*best] = true;
      matches.push_back({p, *best, best_iou});
    }
  }
  return matches;
}

namespace {

// All-point interpolation: area under the monotone precision envelope.
double area_under_pr(std::vector<std::pair<double, bool>> scored, std::size_t num_gt) {
  std::ranges::stable_sort(scored, [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> recall;
  std::vector<double> precision;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < scored.size(); ++k) {
    tp += scored[k].second ? 1 : 0;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
  }
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

}  // namespace

ApResult average_precision(std::span<const FrameInstances> frames, std::span<const double> thresholds,
                           std::size_t num_classes) {
  ApResult out;
  out.per_class_threshold.assign(num_classes, std::vector<std::optional<double>>(thresholds.size()));
  out.per_class.assign(num_classes, std::nullopt);

  std::vector<std::size_t> gt_count(num_classes, 0);
  for (const auto& f : frames) {
    for (const auto& g : f.gts) {
      if (g.class_id >= 0 && static_cast<std::size_t>(g.class_id) < num_classes) ++gt_count[static_cast<std::size_t>(g.class_id)];
    }
  }

  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    std::vector<std::vector<std::pair<double, bool>>> scored(num_classes);
    for (const auto& f : frames) {
      std::vector<std::size_t> order(f.preds.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return f.preds[a].score > f.preds[b].score; });
      std::vector<InstancePrediction> sorted;
      sorted.reserve(order.size());
      for (const auto i : order) sorted.push_back(f.preds[i]);
      std::vector<bool> is_tp(sorted.size(), false);
      for (const auto& m : match_instances(sorted, f.gts, thresholds[t])) is_tp[m.pred] = true;
      for (std::size_t p = 0; p < sorted.size(); ++p) {
        const auto c = sorted[p].class_id;
        if (c < 0 || static_cast<std::size_t>(c) >= num_classes) continue;
        scored[static_cast<std::size_t>(c)].emplace_back(sorted[p].score, is_tp[p]);
      }
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (gt_count[c] == 0) continue;
      out.per_class_threshold[c][t] = area_under_pr(std::move(scored[c]), gt_count[c]);
    }
  }

  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (gt_count[c] == 0 || thresholds.empty()) continue;
    double s = 0.0;
    for (const auto& v : out.per_class_threshold[c]) s += *v;
    out.per_class[c] = s / static_cast<double>(thresholds.size());
    sum += *out.per_class[c];
    ++present;
  }
  out.mean_ap = present == 0 ? 0.0 : sum / static_cast<double>(present);
  return out;
}

ConfusionAccumulator::ConfusionAccumulator(std::size_t num_classes)
    : num_classes_(num_classes), confusion_(num_classes + 1, std::vector<std::uint64_t>(num_classes + 1, 0)) {}

void ConfusionAccumulator::add(std::span<const std::int32_t> pred_classes, std::span<const std::int32_t> gt_classes) {
  if (pred_classes.size() != gt_classes.size()) throw std::invalid_argument("semantic_iou: length mismatch");
  auto slot = [&](std::int32_t c) {
    if (c < -1 || c >= static_cast<std::int32_t>(num_classes_)) throw std::out_of_range("semantic_iou: class id out of range");
    return c < 0 ? num_classes_ : static_cast<std::size_t>(c);
  };
  for (std::size_t i = 0; i < pred_classes.size(); ++i) ++confusion_[slot(gt_classes[i])][slot(pred_classes[i])];
}

IouResult ConfusionAccumulator::result() const {
  IouResult out;
  out.confusion = confusion_;
  out.per_class.assign(num_classes_, std::nullopt);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes_; ++c) {
    std::uint64_t tp = confusion_[c][c];
    std::uint64_t fn = 0;
    std::uint64_t fp = 0;
    for (std::size_t k = 0; k <= num_classes_; ++k) {
      if (k == c) continue;
      fn += confusion_[c][k];
      fp += confusion_[k][c];
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    out.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += *out.per_class[c];
    ++present;
  }
  out.mean_iou = present == 0 ? 0.0 : sum / static_cast<double>(present);
  return out;
}

IouResult semantic_iou(std::span<const std::int32_t> pred_classes, std::span<const std::int32_t> gt_classes,
                       std::size_t num_classes) {
  ConfusionAccumulator acc(num_classes);
  acc.add(pred_classes, gt_classes);
  return acc.result();
}

double label_accuracy(const PointLabels& labels, std::span<const std::int32_t> gt_classes) {
  if (labels.size() != gt_classes.size()) throw std::invalid_argument("label_accuracy: length mismatch");
  if (gt_classes.empty()) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < gt_classes.size(); ++i) same += labels.class_id[i] == gt_classes[i] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(gt_classes.size());
}

std::vector<InstancePrediction> instances_from_labels(const PointLabels& labels) {
  struct Acc {
    IndexSet points;
    std::map<int, std::size_t> votes;
    double confidence = 0.0;
  };
  std::map<std::int32_t, Acc> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto id = labels.instance_id[i];
    if (id < 0 || labels.class_id[i] < 0) continue;
    auto& g = groups[id];
    g.points.push_back(static_cast<PointIndex>(i));
    ++g.votes[labels.class_id[i]];
    g.confidence += labels.confidence[i];
  }
  std::vector<InstancePrediction> out;
  out.reserve(groups.size());
  for (auto& [id, g] : groups) {
    int cls = -1;
    std::size_t best = 0;
    for (const auto& [c, n] : g.votes) {
      if (n > best) {
        best = n;
        cls = c;
      }
    }
    const double score = g.confidence / static_cast<double>(g.points.size());
    out.push_back({std::move(g.points), cls, score});
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    nlohmann::json per_t = nlohmann::json::array();
    for (const auto& v : ap.per_class_threshold[c]) per_t.push_back(opt(v));
    classes.push_back({{"name", class_names[c]},
                       {"ap", opt(ap.per_class[c])},
                       {"ap_per_threshold", per_t},
                       {"iou", opt(iou.per_class[c])}});
  }
  return {{"frames", frames},
          {"iou_thresholds", iou_thresholds},
          {"mAP", ap.mean_ap},
          {"mIoU", iou.mean_iou},
          {"classes", classes},
          {"confusion", iou.confusion}};
}

std::string EvalReport::to_table() const {
  auto pct = [](const std::optional<double>& v) { return v ? fmt::format("{:.2f}", 100.0 * *v) : std::string("-"); };
  std::vector<std::string> header{"mAP"};
  std::vector<std::string> row{fmt::format("{:.2f}", 100.0 * ap.mean_ap)};
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    header.push_back("AP." + class_names[c]);
    row.push_back(pct(ap.per_class[c]));
  }
  header.emplace_back("mIoU");
  row.push_back(fmt::format("{:.3f}", 100.0 * iou.mean_iou));
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    header.push_back("IoU." + class_names[c]);
    row.push_back(iou.per_class[c] ? fmt::format("{:.3f}", 100.0 * *iou.per_class[c]) : std::string("-"));
  }
  std::string out;
  for (const auto* line : {&header, &row}) {
    for (std::size_t k = 0; k < line->size(); ++k) {
      const auto width = std::max(header[k].size(), row[k].size()) + 2;
      out += fmt::format("{:>{}}", (*line)[k], width);
    }
    out += '\n';
  }
  return out;
}

EvalReport evaluate_sequence(std::span<const PointLabels> preds, std::span<const PointLabels> gts,
                             const std::vector<std::string>& class_names, const std::vector<double>& thresholds) {
  if (preds.size() != gts.size()) throw std::invalid_argument("evaluate_sequence: frame count mismatch");
  const auto num_classes = class_names.size();
  EvalReport report;
  report.class_names = class_names;
  report.iou_thresholds = thresholds;
  report.frames = preds.size();
  ConfusionAccumulator acc(num_classes);
  std::vector<FrameInstances> frames;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    if (preds[f].size() != gts[f].size()) {
      throw std::invalid_argument(fmt::format("evaluate_sequence: frame {} point count mismatch", f));
    }
    acc.add(preds[f].class_id, gts[f].class_id);
    frames.push_back({instances_from_labels(preds[f]), instances_from_labels(gts[f])});
  }
  report.ap = average_precision(frames, thresholds, num_classes);
  report.iou = acc.result();
  return report;
}

}  // namespace lidarlabel
