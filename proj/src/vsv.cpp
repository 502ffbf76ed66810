#include "lidarlabel/vsv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lidarlabel {

double count_threshold(double dist, const VotingParams& params) {
  return (params.D / std::max(dist, params.voxel_size)) * params.T_n;
}

VoteMap build_voting_space(const VotingInput& input, const VoxelKey& ego_voxel, const VotingParams& params) {
  const auto n = static_cast<std::size_t>(input.scores.rows());
  if (input.points.size() != n) throw std::invalid_argument("build_voting_space: points/scores row mismatch");
  if (!(params.voxel_size > 0.0)) throw std::invalid_argument("build_voting_space: voxel_size must be positive");
  const auto num_classes = input.scores.cols();

  // Sort point indices by voxel key (stable, so each voxel keeps ascending
  // point order), then reduce each run of equal keys.
  std::vector<VoxelKey> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = voxel_key(input.points[i], params.voxel_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  const Vec3 ego_center = voxel_center(ego_voxel, params.voxel_size);
  VoteMap votes;
  Eigen::RowVectorXd sum(num_classes);
  for (std::size_t begin = 0; begin < n;) {
    const VoxelKey key = keys[order[begin]];
    std::size_t end = begin;
    sum.setZero();
    while (end < n && keys[order[end]] == key) {
      sum += input.scores.row(static_cast<Eigen::Index>(order[end]));
      ++end;
    }
    const auto count = static_cast<double>(end - begin);
    const Eigen::RowVectorXd mean = sum / count;
    const double dist = (voxel_center(key, params.voxel_size) - ego_center).norm();
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < num_classes; ++c) {
      if (mean(c) > mean(best)) best = c;
    }
    if (num_classes > 0 && mean(best) >= params.T_s && count >= count_threshold(dist, params)) {
      votes.set(key, static_cast<int>(best));
    }
    begin = end;
  }
  return votes;
}

PointLabels apply_votes(std::span<const Vec3> points, const PointLabels& labels, const VoteMap& votes,
                        const VotingParams& params) {
  if (points.size() != labels.size()) throw std::invalid_argument("apply_votes: points/labels length mismatch");
  PointLabels out = labels;
  if (votes.empty()) return out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int vote = votes.get(voxel_key(points[i], params.voxel_size));
    if (vote == VoteMap::kNoVote) continue;
    if (vote >= static_cast<int>(labels.num_classes)) throw InvariantError("vote class outside label class range");
    const float conf = std::max(labels.confidence[i], static_cast<float>(params.T_s));
    auto row = out.row(i);
    std::ranges::fill(row, 0.F);
    row[static_cast<std::size_t>(vote)] = conf;
    out.class_id[i] = vote;
    out.confidence[i] = conf;
  }
  return out;
}

ScoreMatrix one_hot_rows(const ScoreMatrix& scores) {
  ScoreMatrix out = ScoreMatrix::Zero(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(r, c) > scores(r, best)) best = c;
    }
    if (scores.cols() > 0 && scores(r, best) > 0.0) out(r, best) = 1.0;
  }
  return out;
}

VotingParams voting_params(const PipelineConfig& cfg) {
  return {cfg.voxel_size, cfg.vsv.T_n, cfg.vsv.T_s, cfg.vsv.D};
}

namespace {

// The ego voxel holds the origin of the current vehicle frame.
const VoxelKey kEgoVoxel{0, 0, 0};

void check_current(const LabeledFrame& current) {
  if (current.frame == nullptr || current.labels == nullptr) throw std::invalid_argument("current frame missing");
  if (current.frame->points.size() != current.labels->size()) {
    throw InvariantError("frame " + current.frame->frame_id + ": label count does not match point count");
  }
}

}  // namespace

VotingInput offline_voting_input(const Frame& current, std::span<const LabeledFrame> adjacent, VoteMode mode) {
  VotingInput input;
  std::vector<Vec3> local;
  std::vector<std::size_t> rows;
  std::size_t num_classes = 0;
  for (const auto& adj : adjacent) {
    if (adj.frame == nullptr || adj.labels == nullptr) throw InputError("adjacent frame missing");
    num_classes = std::max<std::size_t>(num_classes, adj.labels->num_classes);
  }
  std::vector<std::vector<float>> score_rows;
  for (const auto& adj : adjacent) {
    const auto& f = *adj.frame;
    const auto& l = *adj.labels;
    if (f.points.size() != l.size()) throw InvariantError("frame " + f.frame_id + ": label count mismatch");
    if (l.num_classes != num_classes) throw InvariantError("adjacent frames disagree on class count");
    local.clear();
    rows.clear();
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      if (l.class_id[i] < 0) continue;
      local.push_back(f.points[i].position());
      rows.push_back(i);
    }
    auto aligned = transform_points(local, f.ego_pose, current.ego_pose);
    input.points.insert(input.points.end(), aligned.begin(), aligned.end());
    for (const auto i : rows) {
      const auto r = l.row(i);
      score_rows.emplace_back(r.begin(), r.end());
    }
  }
  input.scores.resize(static_cast<Eigen::Index>(score_rows.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t r = 0; r < score_rows.size(); ++r) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      input.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = score_rows[r][c];
    }
  }
  if (mode == VoteMode::OneHot) input.scores = one_hot_rows(input.scores);
  return input;
}

PointLabels offline_refine(const LabeledFrame& current, std::span<const LabeledFrame> adjacent,
                           const PipelineConfig& cfg) {
  check_current(current);
  if (adjacent.size() != cfg.ofr_frames) {
    throw std::invalid_argument("offline_refine: expected " + std::to_string(cfg.ofr_frames) +
                                " adjacent frames, got " + std::to_string(adjacent.size()));
  }
  if (adjacent.empty()) return *current.labels;
  for (const auto& adj : adjacent) {
    if (adj.labels != nullptr && adj.labels->num_classes != current.labels->num_classes) {
      throw InvariantError("adjacent labels disagree with current class count");
    }
  }
  const auto params = voting_params(cfg);
  const auto input = offline_voting_input(*current.frame, adjacent, cfg.vsv.vote_mode);
  const auto votes = build_voting_space(input, kEgoVoxel, params);
  return apply_votes(current.frame->positions(), *current.labels, votes, params);
}

PointLabels online_refine(const LabeledFrame& current, std::span<const Vec3> adjacent_points,
                          const ScoreMatrix& ema_scores, const PipelineConfig& cfg) {
  check_current(current);
  if (static_cast<std::size_t>(ema_scores.rows()) != adjacent_points.size()) {
    throw InvariantError("online_refine: score rows do not match adjacent point count");
  }
  if (ema_scores.rows() > 0 && ema_scores.cols() != static_cast<Eigen::Index>(current.labels->num_classes)) {
    throw InvariantError("online_refine: score columns do not match class count");
  }
  for (Eigen::Index r = 0; r < ema_scores.rows(); ++r) {
    const auto row = ema_scores.row(r);
    if (!row.allFinite() || (row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > 1e-4) {
      throw InvariantError("online_refine: score row " + std::to_string(r) + " is not a probability vector");
    }
  }
  VotingInput input{{adjacent_points.begin(), adjacent_points.end()}, ema_scores};
  if (cfg.vsv.vote_mode == VoteMode::OneHot) input.scores = one_hot_rows(input.scores);
  const auto params = voting_params(cfg);
  const auto votes = build_voting_space(input, kEgoVoxel, params);
  return apply_votes(current.frame->positions(), *current.labels, votes, params);
}

std::vector<std::size_t> select_adjacent(std::span<const double> timestamps, std::size_t current, std::size_t k) {
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    if (i != current) others.push_back(i);
  }
  std::ranges::stable_sort(others, [&](std::size_t a, std::size_t b) {
    const double da = std::abs(timestamps[a] - timestamps[current]);
    const double db = std::abs(timestamps[b] - timestamps[current]);
    if (da != db) return da < db;
    return a < b;
  });
  others.resize(std::min(k, others.size()));
  std::ranges::sort(others);
  return others;
}

}  // namespace lidarlabel
