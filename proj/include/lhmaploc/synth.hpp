#pragma once

#include "lhmaploc/geometry.hpp"
#include "lhmaploc/mapstore.hpp"
#include "lhmaploc/nets.hpp"
#include "lhmaploc/offline.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lhm {

/// 128×64 pinhole camera used for desk-scale training.
CameraModel default_synth_camera();

/// A street-like world: facades with recessed windows on both sides of a
/// path, poles, and a textured ground plane, seen from a forward trajectory.
struct SyntheticScene {
  std::uint64_t seed = 0;
  CameraModel cam;
  PointCloud map{Frame::kWorld, {}};
  std::vector<Eigen::Vector3f> albedo;  // per map point, RGB in [0,1]
  std::vector<Pose> trajectory;
};

inline constexpr std::size_t kMinVisiblePoints = 500;

/// Deterministic in all arguments. Throws kInvalidArgument for n_points < 1000
/// or n_frames < 1, and kGeneration when no layout satisfies the visibility
/// requirement within 1000 attempts.
SyntheticScene gen_scene(std::uint64_t seed, std::size_t n_points = 150000, double extent = 70.0,
                         int n_frames = 50, const CameraModel& cam = default_synth_camera());

/// Albedo splats of visible points (nearest depth wins) over a gray background.
RgbImage render_rgb(const SyntheticScene& scene, const Pose& pose);

/// One sample per frame with T_init = T_gt · noise. Frames whose true-pose
/// depth has fewer than kMinValidPixels valid pixels are left out.
std::vector<OfflineSample> make_dataset(const SyntheticScene& scene, const NoiseRange& noise, std::uint64_t seed);
/// Level 0 means no perturbation; 1–3 are the standard noise levels.
std::vector<OfflineSample> make_dataset(const SyntheticScene& scene, int noise_level, std::uint64_t seed);

/// Training source over all frames: every epoch holds `draws` datasets with
/// fresh noise at `noise_level`, seeded by (seed, epoch, draw). The scene must
/// outlive the source.
SampleSource noisy_source(const SyntheticScene& scene, int noise_level, std::uint64_t seed, int draws = 1);

/// Scene container: one record per trajectory pose (the anchor); all map points
/// with albedo live in the first record.
SceneContainer scene_to_container(const SyntheticScene& scene);
SyntheticScene scene_from_container(const SceneContainer& c);
void save_scene(const SyntheticScene& scene, const std::filesystem::path& path);
SyntheticScene load_scene(const std::filesystem::path& path);

}  // namespace lhm
