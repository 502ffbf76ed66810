#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "lidarlabel/vsv.hpp"
#include "support.hpp"

using namespace lidarlabel;
using lidarlabel::testing::Gen;

namespace {

VoxelKey floor_key(const Vec3& p, double s) {
  return {static_cast<std::int32_t>(std::floor(p.x() / s)), static_cast<std::int32_t>(std::floor(p.y() / s)),
          static_cast<std::int32_t>(std::floor(p.z() / s))};
}

// Reference voting: each voxel scans every point.
std::map<VoxelKey, int> naive_votes(const VotingInput& in, const VoxelKey& ego, const VotingParams& p) {
  std::set<VoxelKey> keys;
  for (const auto& x : in.points) keys.insert(floor_key(x, p.voxel_size));
  const auto center = [&](const VoxelKey& k) {
    return Vec3((k.ix + 0.5) * p.voxel_size, (k.iy + 0.5) * p.voxel_size, (k.iz + 0.5) * p.voxel_size);
  };
  std::map<VoxelKey, int> out;
  for (const auto& k : keys) {
    std::vector<double> sum(static_cast<std::size_t>(in.scores.cols()), 0.0);
    double n = 0;
    for (std::size_t i = 0; i < in.points.size(); ++i) {
      if (!(floor_key(in.points[i], p.voxel_size) == k)) continue;
      n += 1;
      for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += in.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    }
    int best = 0;
    for (std::size_t c = 0; c < sum.size(); ++c) {
      sum[c] /= n;
      if (sum[c] > sum[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    const double dist = std::max((center(k) - center(ego)).norm(), p.voxel_size);
    if (sum[static_cast<std::size_t>(best)] >= p.T_s && n >= p.D / dist * p.T_n) out[k] = best;
  }
  return out;
}

std::map<VoxelKey, int> as_map(const VoteMap& v) { return {v.entries().begin(), v.entries().end()}; }

VotingInput random_input(Gen& gen, int n, int c, double extent) {
  VotingInput in;
  in.scores.resize(n, c);
  for (int i = 0; i < n; ++i) {
    in.points.emplace_back(gen.uniform(-extent, extent), gen.uniform(-extent, extent), gen.uniform(-1, 1));
    for (int k = 0; k < c; ++k) in.scores(i, k) = gen.uniform();
  }
  return in;
}

// n copies of one point and one score row.
VotingInput stack(const Vec3& p, std::vector<double> row, int n) {
  VotingInput in;
  in.scores.resize(n, static_cast<Eigen::Index>(row.size()));
  for (int i = 0; i < n; ++i) {
    in.points.push_back(p);
    for (std::size_t c = 0; c < row.size(); ++c) in.scores(i, static_cast<Eigen::Index>(c)) = row[c];
  }
  return in;
}

PointLabels labeled(std::size_t n, std::uint32_t c, int cls, float conf) {
  PointLabels l(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    l.class_id[i] = cls;
    l.instance_id[i] = 7;
    l.confidence[i] = conf;
    l.row(i)[static_cast<std::size_t>(cls)] = conf;
  }
  return l;
}

Frame cloud(const std::vector<Vec3>& pts, const Mat4& pose = Mat4::Identity()) {
  Frame f;
  f.frame_id = "f";
  for (const auto& p : pts) f.points.push_back({float(p.x()), float(p.y()), float(p.z()), 0.F});
  f.ego_pose = pose;
  return f;
}

}  // namespace

TEST(CountThreshold, Examples) {
  const VotingParams p{0.2, 4.0, 0.5, 20.0};
  EXPECT_DOUBLE_EQ(count_threshold(10.0, p), 8.0);
  EXPECT_DOUBLE_EQ(count_threshold(40.0, p), 2.0);
  EXPECT_DOUBLE_EQ(count_threshold(0.0, p), 20.0 / 0.2 * 4.0);
}

TEST(VotingSpace, NearVoxelNeedsMorePoints) {
  const VotingParams p{1.0, 4.0, 0.5, 20.0};
  // voxel center (10.5, 0.5, 0.5) vs ego (0.5, 0.5, 0.5): 10 m
  const auto four = stack({10.2, 0.2, 0.2}, {0.9, 0.1}, 4);
  EXPECT_TRUE(build_voting_space(four, {0, 0, 0}, p).empty());
  const auto eight = stack({10.2, 0.2, 0.2}, {0.9, 0.1}, 8);
  EXPECT_EQ(build_voting_space(eight, {0, 0, 0}, p).get({10, 0, 0}), 0);
}

TEST(VotingSpace, FarVoxelVotes) {
  const VotingParams p{1.0, 4.0, 0.5, 20.0};
  const auto three = stack({40.2, 0.2, 0.2}, {0.6, 0.4}, 3);
  const auto votes = build_voting_space(three, {0, 0, 0}, p);
  EXPECT_EQ(votes.get({40, 0, 0}), 0);
  EXPECT_EQ(as_map(votes), naive_votes(three, {0, 0, 0}, p));
}

TEST(VotingSpace, ScoreGate) {
  const VotingParams p{1.0, 1.0, 0.5, 20.0};
  EXPECT_TRUE(build_voting_space(stack({40.2, 0, 0}, {0.45, 0.45}, 500), {0, 0, 0}, p).empty());
}

TEST(VotingSpace, TieGoesToLowerClass) {
  const VotingParams p{1.0, 1.0, 0.3, 1.0};
  EXPECT_EQ(build_voting_space(stack({5.5, 0, 0}, {0.2, 0.5, 0.5}, 3), {0, 0, 0}, p).get({5, 0, 0}), 1);
}

TEST(VotingSpace, MatchesNaiveOracle) {
  Gen gen(31);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = gen.integer(0, 2000);
    const int c = gen.integer(1, 5);
    const auto in = random_input(gen, n, c, gen.uniform(1, 15));
    const VotingParams p{gen.uniform(0.3, 1.5), gen.uniform(0.1, 3), gen.uniform(0.2, 0.7), gen.uniform(1, 20)};
    const VoxelKey ego{gen.integer(-2, 2), gen.integer(-2, 2), 0};
    const auto votes = build_voting_space(in, ego, p);
    const auto oracle = naive_votes(in, ego, p);
    ASSERT_EQ(as_map(votes), oracle);

    PointLabels prior = gen.labels(static_cast<std::size_t>(n), static_cast<std::uint32_t>(c));
    const auto out = apply_votes(in.points, prior, votes, p);
    for (std::size_t i = 0; i < prior.size(); ++i) {
      const auto found = oracle.find(floor_key(in.points[i], p.voxel_size));
      const int it = found == oracle.end() ? -1 : found->second;
      if (it < 0) {
        EXPECT_EQ(out.class_id[i], prior.class_id[i]);
        EXPECT_TRUE(std::ranges::equal(out.row(i), prior.row(i)));
      } else {
        EXPECT_EQ(out.class_id[i], it);
        EXPECT_EQ(out.confidence[i], std::max(prior.confidence[i], static_cast<float>(p.T_s)));
        EXPECT_EQ(out.row(i)[static_cast<std::size_t>(it)], out.confidence[i]);
      }
      EXPECT_EQ(out.instance_id[i], prior.instance_id[i]);
    }
  }
}

TEST(VotingSpace, MonotoneGate) {
  Gen gen(32);
  for (int trial = 0; trial < 40; ++trial) {
    const auto in = random_input(gen, gen.integer(1, 800), 3, 5);
    VotingParams p{0.5, gen.uniform(0.05, 2), gen.uniform(0.2, 0.6), 10.0};
    const auto base = build_voting_space(in, {}, p).size();
    auto higher_s = p;
    higher_s.T_s += gen.uniform(0, 0.3);
    auto higher_n = p;
    higher_n.T_n += gen.uniform(0, 2);
    EXPECT_LE(build_voting_space(in, {}, higher_s).size(), base);
    EXPECT_LE(build_voting_space(in, {}, higher_n).size(), base);
  }
}

TEST(VotingSpace, OrderIndependent) {
  Gen gen(33);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = random_input(gen, 600, 4, 3);
    const VotingParams p{0.5, 0.2, 0.3, 5.0};
    const auto base = build_voting_space(in, {}, p);
    std::vector<Eigen::Index> perm(in.points.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen.engine());
    VotingInput shuffled;
    shuffled.scores.resize(in.scores.rows(), in.scores.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.points.push_back(in.points[static_cast<std::size_t>(perm[i])]);
      shuffled.scores.row(static_cast<Eigen::Index>(i)) = in.scores.row(perm[i]);
    }
    EXPECT_EQ(build_voting_space(shuffled, {}, p), base);
  }
}

TEST(ApplyVotes, Examples) {
  const std::vector<Vec3> pts{{0.1, 0.1, 0.1}, {3.1, 0.1, 0.1}};
  const auto prior = labeled(2, 2, 1, 0.3F);
  const VotingParams p{1.0, 1.0, 0.4, 1.0};
  EXPECT_EQ(apply_votes(pts, prior, VoteMap{}, p), prior);
  VoteMap votes;
  votes.set({0, 0, 0}, 0);
  const auto out = apply_votes(pts, prior, votes, p);
  EXPECT_EQ(out.class_id, (std::vector<std::int32_t>{0, 1}));
  EXPECT_EQ(out.instance_id, prior.instance_id);
  EXPECT_FLOAT_EQ(out.confidence[0], 0.4F);
  EXPECT_EQ(out.row(0)[1], 0.0F);
  EXPECT_THROW(apply_votes(std::span<const Vec3>(pts).first(1), prior, votes, p), std::invalid_argument);
}

TEST(OneHotRows, Examples) {
  ScoreMatrix s(3, 3);
  s << 0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0, 0, 0;
  ScoreMatrix want(3, 3);
  want << 0, 1, 0, 1, 0, 0, 0, 0, 0;
  EXPECT_EQ(one_hot_rows(s), want);
}

namespace {

PipelineConfig refine_cfg(std::size_t k) {
  PipelineConfig cfg;
  cfg.class_names = {"a", "b"};
  cfg.voxel_size = 1.0;
  cfg.vsv.T_n = 1.0;
  cfg.vsv.T_s = 0.4;
  cfg.vsv.D = 10.0;
  cfg.ofr_frames = k;
  return cfg;
}

}  // namespace

TEST(OfflineRefine, NoAdjacentIsIdentity) {
  const auto cur = cloud({{20.5, 0.5, 0.5}});
  const auto l = labeled(1, 2, 1, 0.7F);
  EXPECT_EQ(offline_refine({&cur, &l}, {}, refine_cfg(0)), l);
  EXPECT_THROW(offline_refine({&cur, &l}, {}, refine_cfg(2)), std::invalid_argument);
}

TEST(OfflineRefine, AdjacentMajorityFlipsCurrent) {
  // Current frame at x=1; the adjacent ones sit 1 m behind and ahead, so a
  // world point at 21.5 appears at 20.5 / 22.5 in their local coordinates.
  Mat4 cur_pose = Mat4::Identity();
  cur_pose(0, 3) = 1.0;
  Mat4 prev_pose = Mat4::Identity();
  Mat4 next_pose = Mat4::Identity();
  next_pose(0, 3) = 2.0;
  const auto cur = cloud({{20.5, 0.5, 0.5}, {-5.5, 0.5, 0.5}}, cur_pose);
  const auto prev = cloud({{21.5, 0.5, 0.5}}, prev_pose);
  const auto next = cloud({{19.5, 0.5, 0.5}}, next_pose);
  const auto cl = labeled(2, 2, 1, 0.6F);
  const auto al = labeled(1, 2, 0, 0.9F);
  const std::vector<LabeledFrame> adj{{&prev, &al}, {&next, &al}};
  // voxel (20,0,0) is 20 m out: threshold (10/20)*1 = 0.5 <= 2 points
  const auto out = offline_refine({&cur, &cl}, adj, refine_cfg(2));
  EXPECT_EQ(out.class_id, (std::vector<std::int32_t>{0, 1}));
  EXPECT_FLOAT_EQ(out.confidence[0], 0.6F);
  EXPECT_EQ(out.instance_id, cl.instance_id);
}

TEST(OfflineRefine, WeakPriorsChangeNothing) {
  const auto cur = cloud({{20.5, 0.5, 0.5}});
  const auto adjf = cloud({{20.5, 0.5, 0.5}, {20.6, 0.5, 0.5}});
  const auto cl = labeled(1, 2, 1, 0.6F);
  const auto al = labeled(2, 2, 0, 0.3F);
  const std::vector<LabeledFrame> adj{{&adjf, &al}, {&adjf, &al}};
  EXPECT_EQ(offline_refine({&cur, &cl}, adj, refine_cfg(2)), cl);
}

TEST(OfflineRefine, BackgroundNeighboursDoNotVote) {
  const auto cur = cloud({{20.5, 0.5, 0.5}});
  const auto adjf = cloud({{20.5, 0.5, 0.5}});
  const auto cl = labeled(1, 2, 1, 0.6F);
  PointLabels bg(1, 2);
  const std::vector<LabeledFrame> adj{{&adjf, &bg}};
  EXPECT_EQ(offline_refine({&cur, &cl}, adj, refine_cfg(1)), cl);
}

TEST(OnlineRefine, UniformScoresChangeNothing) {
  const auto cur = cloud({{20.5, 0.5, 0.5}, {3.5, 0.5, 0.5}});
  const auto cl = labeled(2, 2, 1, 0.6F);
  const std::vector<Vec3> adj(50, Vec3(20.5, 0.5, 0.5));
  auto cfg = refine_cfg(2);
  cfg.vsv.T_s = 0.6;
  const ScoreMatrix uniform = ScoreMatrix::Constant(50, 2, 0.5);
  EXPECT_EQ(online_refine({&cur, &cl}, adj, uniform, cfg), cl);
}

TEST(OnlineRefine, ConfidentTeacherRelabels) {
  PipelineConfig cfg = refine_cfg(2);
  cfg.class_names = {"a", "b", "c"};
  const auto cur = cloud({{20.5, 0.5, 0.5}, {20.7, 0.2, 0.9}, {-8.5, 0.5, 0.5}});
  const auto cl = labeled(3, 3, 0, 0.5F);
  const std::vector<Vec3> adj(10, Vec3(20.4, 0.4, 0.4));
  ScoreMatrix teacher = ScoreMatrix::Constant(10, 3, 0.05);
  teacher.col(2).setConstant(0.9);
  const auto out = online_refine({&cur, &cl}, adj, teacher, cfg);
  EXPECT_EQ(out.class_id, (std::vector<std::int32_t>{2, 2, 0}));
}

TEST(OnlineRefine, SparseVotersBelowCountGate) {
  auto cfg = refine_cfg(2);
  cfg.vsv.T_n = 2.0;
  cfg.vsv.D = 1.0;
  const auto cur = cloud({{0.5, 0.5, 0.5}, {5.5, 0.5, 0.5}});
  const auto cl = labeled(2, 2, 1, 0.5F);
  const std::vector<Vec3> adj{{0.5, 0.5, 0.5}, {5.5, 0.5, 0.5}};
  ScoreMatrix teacher(2, 2);
  teacher << 1, 0, 1, 0;
  // ego voxel: threshold 2; 5 m out: 0.4, so only the far voxel votes
  const auto out = online_refine({&cur, &cl}, adj, teacher, cfg);
  EXPECT_EQ(out.class_id, (std::vector<std::int32_t>{1, 0}));
}

TEST(OnlineRefine, RejectsBadRows) {
  const auto cur = cloud({{0.5, 0.5, 0.5}});
  const auto cl = labeled(1, 2, 1, 0.5F);
  const std::vector<Vec3> adj{{0.5, 0.5, 0.5}};
  ScoreMatrix bad(1, 2);
  bad << 0.7, 0.7;
  EXPECT_THROW(online_refine({&cur, &cl}, adj, bad, refine_cfg(2)), InvariantError);
  EXPECT_THROW(online_refine({&cur, &cl}, adj, ScoreMatrix::Constant(2, 2, 0.5), refine_cfg(2)), InvariantError);
}

TEST(SelectAdjacent, NearestInTime) {
  const std::vector<double> t{0.0, 0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(select_adjacent(t, 2, 2), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(select_adjacent(t, 0, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(select_adjacent(t, 2, 3), (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_EQ(select_adjacent(t, 4, 10), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_TRUE(select_adjacent(t, 2, 0).empty());
}
