#pragma once

// Voxel-based semantic voting and the two temporal refinement drivers built
// on it.

#include <span>
#include <unordered_map>
#include <vector>

#include "lidarlabel/config.hpp"
#include "lidarlabel/geometry.hpp"
#include "lidarlabel/io.hpp"
#include "lidarlabel/model.hpp"

namespace lidarlabel {

/// Points that cast votes, with one score row per point.
struct VotingInput {
  std::vector<Vec3> points;
  ScoreMatrix scores;  // N' x C, entries >= 0
};

/// Voxel -> voted class. Voxels without a vote are absent.
class VoteMap {
 public:
  static constexpr int kNoVote = -1;

  void set(const VoxelKey& key, int cls) { votes_[key] = cls; }
  [[nodiscard]] int get(const VoxelKey& key) const {
    const auto it = votes_.find(key);
    return it == votes_.end() ? kNoVote : it->second;
  }
  [[nodiscard]] std::size_t size() const { return votes_.size(); }
  [[nodiscard]] bool empty() const { return votes_.empty(); }
  [[nodiscard]] const auto& entries() const { return votes_; }

  friend bool operator==(const VoteMap&, const VoteMap&) = default;

 private:
  std::unordered_map<VoxelKey, int, VoxelKeyHash> votes_;
};

struct VotingParams {
  double voxel_size = 0.2;
  double T_n = 3.0;
  double T_s = 0.4;
  double D = 20.0;
};

/// Count threshold at a given voxel distance: (D / max(dist, voxel_size)) * T_n.
double count_threshold(double dist, const VotingParams& params);

/// Votes argmax of the mean score per voxel when the mean's max reaches T_s
/// and the voxel holds at least the distance-scaled count threshold.
VoteMap build_voting_space(const VotingInput& input, const VoxelKey& ego_voxel, const VotingParams& params);

/// Overwrites the semantic label of every point whose voxel carries a vote.
/// Instance ids are kept; the distribution becomes one-hot scaled by
/// max(previous confidence, T_s).
PointLabels apply_votes(std::span<const Vec3> points, const PointLabels& labels, const VoteMap& votes,
                        const VotingParams& params);

/// Replaces each score row by a unit one-hot at its argmax (zero rows stay zero).
ScoreMatrix one_hot_rows(const ScoreMatrix& scores);

VotingParams voting_params(const PipelineConfig& cfg);

struct LabeledFrame {
  const Frame* frame = nullptr;
  const PointLabels* labels = nullptr;
};

/// Offline refinement: adjacent frames' labeled points, aligned into the
/// current frame, vote with their prior distributions. `adjacent.size()` must
/// equal cfg.ofr_frames.
PointLabels offline_refine(const LabeledFrame& current, std::span<const LabeledFrame> adjacent,
                           const PipelineConfig& cfg);

/// Builds the aligned voting input used by offline_refine.
VotingInput offline_voting_input(const Frame& current, std::span<const LabeledFrame> adjacent, VoteMode mode);

/// Online refinement: caller-aligned adjacent points vote with teacher
/// probabilities (rows on the simplex within 1e-4).
PointLabels online_refine(const LabeledFrame& current, std::span<const Vec3> adjacent_points,
                          const ScoreMatrix& ema_scores, const PipelineConfig& cfg);

/// Indices of the k frames closest in time to frames[current] (excluding
/// itself); ties go to the earlier frame. Result is sorted by frame index.
std::vector<std::size_t> select_adjacent(std::span<const double> timestamps, std::size_t current, std::size_t k);

}  // namespace lidarlabel
