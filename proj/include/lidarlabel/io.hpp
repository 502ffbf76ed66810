#pragma once

// On-disk containers. All binary payloads are little-endian.
//
// Frame file (.alf):
//   "ALF1" | u32 point_count | u32 camera_count
//   | u32 len, bytes frame_id | f64 timestamp
//   | point_count x (f32 x, f32 y, f32 z, f32 intensity)
//   | f64 x16 ego_pose (row-major)
//   | camera_count x (u32 len, bytes view_id | f64 x9 K | f64 x16 T | u32 width | u32 height)
//
// Labels file (.all):
//   "ALL1" | u32 N | u32 C | i32 xN instance_id | i32 xN class_id
//   | f32 xN confidence | f32 x(N*C) distribution (row-major)
//
// Score matrix file (.als):
//   "ALS1" | u32 N | u32 C | f32 x(N*C) (row-major)
//
// Detection file (.json): array of DetectionRecord objects.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "lidarlabel/model.hpp"

namespace lidarlabel {

using ScoreMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<std::uint8_t> encode_frame(const Frame& frame);
Frame decode_frame(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_labels(const PointLabels& labels);
PointLabels decode_labels(std::span<const std::uint8_t> bytes);

/// Scores are stored as f32; values are widened to f64 on read.
std::vector<std::uint8_t> encode_scores(const ScoreMatrix& scores);
ScoreMatrix decode_scores(std::span<const std::uint8_t> bytes);

void to_json(nlohmann::json& j, const DetectionRecord& d);
void from_json(const nlohmann::json& j, DetectionRecord& d);
std::string encode_detections(const std::vector<DetectionRecord>& dets);
std::vector<DetectionRecord> decode_detections(const std::string& text);

// File helpers wrap decode errors in InputError naming the path.
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Frame read_frame(const std::filesystem::path& path);
void write_frame(const std::filesystem::path& path, const Frame& frame);
PointLabels read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const PointLabels& labels);
ScoreMatrix read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, const ScoreMatrix& scores);
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& dets);

}  // namespace lidarlabel
