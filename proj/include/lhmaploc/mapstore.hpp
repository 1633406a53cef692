#pragma once

#include "lhmaploc/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lhm {

/// Selected points of one keyframe, lifted into the world frame at the
/// keyframe's ground-truth anchor pose.
struct KeyframeRecord {
  std::uint64_t frame_id = 0;
  Pose anchor;
  std::vector<Eigen::Vector3f> points;
  std::vector<float> scores;
  /// Optional per-point RGB in [0,1]; only persisted by the scene container.
  std::vector<Eigen::Vector3f> albedo;

  std::size_t size() const { return points.size(); }
};

struct LHMap {
  CameraModel camera;
  std::uint32_t point_budget = 0;
  std::vector<KeyframeRecord> records;

  std::size_t total_points() const;
  /// Union of all record points (no deduplication).
  PointCloud all_points() const;
};

inline constexpr std::uint32_t kDefaultPointBudget = 5000;

/// Lifts every nonzero pixel of `selected` to the world frame through its
/// pixel center. `scores` is a per-pixel grid (h*w, row-major) or empty.
KeyframeRecord lift_local_map(const DepthImage& selected, const Pose& anchor,
                              const CameraModel& cam, std::span<const float> scores,
                              std::uint64_t frame_id = 0);

/// Throws kDuplicateFrame on non-increasing frame ids and kBudgetExceeded for
/// records larger than the point budget.
LHMap build_lhmap(std::vector<KeyframeRecord> records, const CameraModel& cam,
                  std::uint32_t point_budget = kDefaultPointBudget);

/// Union of the k records whose anchors are nearest to `query`'s translation.
PointCloud query_local(const LHMap& map, const Pose& query, std::size_t k = 1);

/// One centroid per occupied voxel, ordered by first occurrence in the input.
PointCloud voxel_downsample(const PointCloud& pc, double resolution);

// Binary container. Version 1 stores LHMaps; version 2 adds a scene seed and
// per-point albedo for synthetic scenes.
inline constexpr char kMagic[4] = {'L', 'H', 'M', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kSceneFormatVersion = 2;
inline constexpr std::size_t kFileHeaderBytes = 4 + 4 + 6 * 8 + 4 + 4;
inline constexpr std::size_t kSceneExtraHeaderBytes = 8;
inline constexpr std::size_t kRecordHeaderBytes = 8 + 7 * 8 + 4;
inline constexpr std::size_t kPointBytes = 4 * 4;
inline constexpr std::size_t kScenePointBytes = kPointBytes + 3 * 4;

std::vector<std::uint8_t> encode_lhmap(const LHMap& map);
LHMap decode_lhmap(std::span<const std::uint8_t> bytes);

void save_lhmap(const LHMap& map, const std::filesystem::path& path);
LHMap load_lhmap(const std::filesystem::path& path);

/// Byte size of the version-1 encoding without encoding it.
std::size_t encoded_size(const LHMap& map);

struct MapStat {
  std::size_t records = 0;
  std::size_t total_points = 0;
  std::uintmax_t bytes = 0;
};

MapStat stat_lhmap(const std::filesystem::path& path);

struct SceneContainer {
  LHMap map;
  std::uint64_t seed = 0;
};

std::vector<std::uint8_t> encode_scene_container(const SceneContainer& scene);
SceneContainer decode_scene_container(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace lhm
