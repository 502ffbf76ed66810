#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "lidarlabel/config.hpp"
#include "lidarlabel/io.hpp"
#include "lidarlabel/model.hpp"
#include "support.hpp"

using namespace lidarlabel;
using lidarlabel::testing::Gen;

TEST(Rle, AllFalse) {
  const std::vector<std::uint8_t> bits(4, 0);
  EXPECT_EQ(rle_encode(bits, 2, 2).runs, (std::vector<std::uint32_t>{4}));
}

TEST(Rle, AllTrue) {
  const std::vector<std::uint8_t> bits(4, 1);
  EXPECT_EQ(rle_encode(bits, 2, 2).runs, (std::vector<std::uint32_t>{0, 4}));
}

TEST(Rle, SingleRow) {
  const std::vector<std::uint8_t> bits{0, 1, 1, 0};
  EXPECT_EQ(rle_encode(bits, 4, 1).runs, (std::vector<std::uint32_t>{1, 2, 1}));
}

TEST(Rle, DecodeExamples) {
  EXPECT_EQ(rle_decode({2, 2, {4}}), std::vector<std::uint8_t>(4, 0));
  EXPECT_EQ(rle_decode({2, 2, {0, 4}}), std::vector<std::uint8_t>(4, 1));
}

TEST(Rle, SizeMismatchThrows) {
  const std::vector<std::uint8_t> bits(5, 0);
  EXPECT_THROW(rle_encode(bits, 2, 2), std::invalid_argument);
  EXPECT_THROW(rle_decode({2, 2, {3}}), std::invalid_argument);
}

TEST(Rle, RandomRoundtrip) {
  Gen gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint8_t> bits(256);
    const double density = gen.uniform();
    for (auto& b : bits) b = gen.coin(density) ? 1 : 0;
    const auto mask = rle_encode(bits, 16, 16);
    std::uint64_t total = 0;
    for (const auto r : mask.runs) total += r;
    EXPECT_EQ(total, 256U);
    EXPECT_EQ(rle_decode(mask), bits);
  }
}

TEST(Validation, WellFormedFrame) {
  Gen gen(1);
  EXPECT_TRUE(validate_frame(gen.frame(20, 2)).empty());
}

TEST(Validation, NonFinitePoint) {
  Gen gen(2);
  auto f = gen.frame(5, 1);
  f.points[3].y = std::numeric_limits<float>::quiet_NaN();
  const auto v = validate_frame(f);
  ASSERT_EQ(v.size(), 1U);
  EXPECT_EQ(v[0], "points[3] non-finite");
}

TEST(Validation, NonOrthonormalPose) {
  Gen gen(3);
  auto f = gen.frame(5, 1);
  f.ego_pose(0, 0) *= 1.01;
  const auto v = validate_frame(f);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v[0], "ego_pose rotation");
}

TEST(Validation, FrameNeedsCamera) {
  Gen gen(4);
  auto f = gen.frame(5, 0);
  EXPECT_FALSE(validate_frame(f).empty());
}

TEST(Validation, Camera) {
  Gen gen(5);
  auto c = gen.camera("a");
  EXPECT_TRUE(validate_camera(c).empty());
  c.K(2, 2) = 2.0;
  EXPECT_FALSE(validate_camera(c).empty());
  c = gen.camera("b");
  c.K(0, 0) = -1.0;
  EXPECT_FALSE(validate_camera(c).empty());
  c = gen.camera("c");
  c.width = 0;
  EXPECT_FALSE(validate_camera(c).empty());
}

namespace {

DetectionRecord simple_detection(const CameraCalibration& cam) {
  DetectionRecord d;
  d.view_id = cam.view_id;
  d.box = {1, 1, 5, 5};
  d.prompt_scores = {{"car", 0.7}};
  d.class_distribution = {0.7, 0.1};
  d.confidence = 0.7;
  d.mask = rle_encode(std::vector<std::uint8_t>(static_cast<std::size_t>(cam.width) * cam.height, 0), cam.width,
                      cam.height);
  return d;
}

}  // namespace

TEST(Validation, Detection) {
  Gen gen(6);
  const auto cam = gen.camera("a");
  auto d = simple_detection(cam);
  EXPECT_TRUE(validate_detection(d, cam, 2).empty());
  d.confidence = 0.69;
  EXPECT_FALSE(validate_detection(d, cam, 2).empty());
  d = simple_detection(cam);
  d.box.u_max = cam.width + 1.0;
  EXPECT_FALSE(validate_detection(d, cam, 2).empty());
  d = simple_detection(cam);
  d.mask.width += 1;
  EXPECT_FALSE(validate_detection(d, cam, 2).empty());
  d = simple_detection(cam);
  d.embedding = std::vector<double>{0.6, 0.8};
  EXPECT_TRUE(validate_detection(d, cam, 2).empty());
  d.embedding = std::vector<double>{0.6, 0.9};
  EXPECT_FALSE(validate_detection(d, cam, 2).empty());
}

TEST(Validation, Labels) {
  Gen gen(7);
  auto l = gen.labels(50, 3);
  EXPECT_TRUE(validate_labels(l).empty());
  // Background with nonzero confidence.
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (l.class_id[i] < 0) {
      l.confidence[i] = 0.5F;
      break;
    }
  }
  EXPECT_FALSE(validate_labels(l).empty());
  l = gen.labels(50, 3, 0.0);
  l.class_id[0] = (l.class_id[0] + 1) % 3;  // no longer the argmax
  EXPECT_FALSE(validate_labels(l).empty());
}

TEST(Rigid, Checks) {
  Gen gen(8);
  EXPECT_TRUE(is_rigid(gen.rigid()));
  Mat4 m = gen.rigid();
  m(3, 0) = 0.1;
  EXPECT_FALSE(is_rigid(m));
  m = gen.rigid();
  m.block<3, 3>(0, 0) *= -1.0;  // reflection
  EXPECT_FALSE(is_rigid(m));
}

TEST(Argmax, LowestIndexWins) {
  const std::vector<double> v{0.2, 0.5, 0.5};
  EXPECT_EQ(argmax<double>(v), 1);
  EXPECT_EQ(argmax<double>(std::span<const double>{}), -1);
}

TEST(Serialization, FrameRoundtrip) {
  Gen gen(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto f = gen.frame(static_cast<std::size_t>(gen.integer(0, 300)), static_cast<std::size_t>(gen.integer(1, 4)));
    const auto bytes = encode_frame(f);
    EXPECT_EQ(decode_frame(bytes), f);
    EXPECT_EQ(encode_frame(decode_frame(bytes)), bytes);
  }
}

TEST(Serialization, FrameHeaderLayout) {
  Gen gen(22);
  const auto f = gen.frame(3, 1);
  const auto bytes = encode_frame(f);
  ASSERT_GE(bytes.size(), 12U);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ALF1");
  EXPECT_EQ(bytes[4], 3);  // u32 little-endian point count
  EXPECT_EQ(bytes[8], 1);  // camera count
}

TEST(Serialization, LabelsRoundtrip) {
  Gen gen(23);
  for (int trial = 0; trial < 30; ++trial) {
    const auto l = gen.labels(static_cast<std::size_t>(gen.integer(0, 200)), static_cast<std::uint32_t>(gen.integer(1, 6)));
    const auto bytes = encode_labels(l);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ALL1");
    EXPECT_EQ(decode_labels(bytes), l);
  }
}

TEST(Serialization, ScoresRoundtrip) {
  Gen gen(24);
  ScoreMatrix s(7, 3);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = static_cast<float>(gen.uniform());
  EXPECT_EQ(decode_scores(encode_scores(s)), s);
}

TEST(Serialization, DetectionsRoundtrip) {
  Gen gen(25);
  const auto cam = gen.camera("front");
  std::vector<DetectionRecord> dets;
  for (int k = 0; k < 5; ++k) {
    auto d = simple_detection(cam);
    d.box.u_min = gen.uniform(0, 1);
    d.prompt_scores["person"] = gen.uniform();
    d.class_distribution = {gen.uniform(), gen.uniform()};
    d.confidence = std::max(d.class_distribution[0], d.class_distribution[1]);
    if (k % 2 == 0) {
      const double a = gen.uniform(0, 6.28);
      d.embedding = std::vector<double>{std::cos(a), std::sin(a)};
    }
    dets.push_back(d);
  }
  EXPECT_EQ(decode_detections(encode_detections(dets)), dets);
}

TEST(Serialization, TruncatedInputThrows) {
  Gen gen(26);
  auto bytes = encode_frame(gen.frame(10, 1));
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_frame(bytes), InputError);
  auto lb = encode_labels(gen.labels(10, 2));
  lb.push_back(0);
  EXPECT_THROW(decode_labels(lb), InputError);
  EXPECT_THROW(decode_detections("[{"), InputError);
}

TEST(Config, DefaultsValid) {
  const PipelineConfig cfg;
  EXPECT_TRUE(validate_config(cfg).empty());
  EXPECT_EQ(cfg.ofr_frames, 2U);
  EXPECT_DOUBLE_EQ(cfg.loss.alpha[0], 100.0);
  EXPECT_DOUBLE_EQ(cfg.loss.alpha[1], 10.0);
  EXPECT_DOUBLE_EQ(cfg.loss.phi, 0.65);
  EXPECT_DOUBLE_EQ(cfg.loss.T_conf, 0.4);
  EXPECT_DOUBLE_EQ(cfg.loss.theta, 0.9);
}

TEST(Config, JsonRoundtripAndHash) {
  PipelineConfig cfg;
  cfg.vsv.vote_mode = VoteMode::OneHot;
  cfg.voxel_size = 0.35;
  const auto back = nlohmann::json(cfg).get<PipelineConfig>();
  EXPECT_EQ(config_hash(back), config_hash(cfg));
  EXPECT_NE(config_hash(back), config_hash(PipelineConfig{}));
  EXPECT_EQ(config_hash(PipelineConfig{}), config_hash(PipelineConfig{}));
}

TEST(Config, RejectsUnknownKeysAndBadRanges) {
  EXPECT_THROW(nlohmann::json::parse(R"({"voxel_sise": 0.2})").get<PipelineConfig>(), InputError);
  EXPECT_THROW(nlohmann::json::parse(R"({"vsv": {"vote_mode": "majority"}})").get<PipelineConfig>(), InputError);
  auto cfg = nlohmann::json::parse(R"({"loss": {"theta": 1.5}})").get<PipelineConfig>();
  EXPECT_FALSE(validate_config(cfg).empty());
}
