#include "lhmaploc/synth.hpp"

#include "lhmaploc/error.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numbers>
#include <random>

namespace lhm {

CameraModel default_synth_camera() { return CameraModel{64.0, 64.0, 64.0, 32.0, 64, 128}; }

namespace {

constexpr double kCameraHeight = 1.7;  // ground plane at y = +1.7 (y points down)

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Points are kept at single precision so the scene container round-trips exactly.
/// The volatile stores pin the rounding: GCC 11 at -O3 has been seen to drop a
/// vectorized double→float→double pair.
Eigen::Vector3d storable(double x, double y, double z) {
  volatile float f[3] = {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
  return {f[0], f[1], f[2]};
}

/// Deterministic value in [0,1) for an integer cell of a surface.
double cell_noise(std::uint64_t surface, long a, long b) {
  const std::uint64_t h = splitmix(splitmix(surface) ^ splitmix(static_cast<std::uint64_t>(a) * 0x1f1f1f1fULL) ^
                                   static_cast<std::uint64_t>(b));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

struct Facade {
  double x, z0, z1, height;
  Eigen::Vector3d color;
};

struct Pole {
  double x, z, height;
  Eigen::Vector3d color;
};

struct Layout {
  std::vector<Facade> facades;
  std::vector<Pole> poles;
  double ground_z0, ground_z1, ground_half_width;
};

Layout make_layout(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };
  auto color = [&] { return Eigen::Vector3d(uni(0.2, 0.9), uni(0.2, 0.9), uni(0.2, 0.9)); };
  Layout l;
  for (int side : {-1, 1}) {
    double z = -10.0;
    while (z < extent) {
      Facade f;
      const double len = uni(4, 12);
      f.x = side * uni(5, 9);
      f.z0 = z;
      f.z1 = z + len;
      f.height = uni(3, 10);
      f.color = color();
      l.facades.push_back(f);
      z += len + uni(0, 3);
    }
  }
  for (int i = 0; i < 25; ++i) {
    Pole p;
    p.x = (u(rng) < 0.5 ? -1 : 1) * uni(3, 4.5);
    p.z = uni(-5, extent);
    p.height = uni(1.5, 4);
    p.color = color();
    l.poles.push_back(p);
  }
  l.ground_z0 = -10.0;
  l.ground_z1 = extent;
  l.ground_half_width = 10.0;
  return l;
}

void sample_points(const Layout& l, std::size_t n_points, std::mt19937_64& rng, SyntheticScene& s) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.02);
  auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };

  std::vector<double> areas;
  for (const auto& f : l.facades) areas.push_back((f.z1 - f.z0) * f.height);
  for (const auto& p : l.poles) areas.push_back(2.0 * p.height);
  areas.push_back((l.ground_z1 - l.ground_z0) * 2 * l.ground_half_width);
  double total = 0;
  for (double a : areas) total += a;
  std::vector<std::size_t> counts;
  std::size_t assigned = 0;
  for (double a : areas) {
    counts.push_back(static_cast<std::size_t>(std::floor(a / total * static_cast<double>(n_points))));
    assigned += counts.back();
  }
  counts.back() += n_points - assigned;

  auto clamp01 = [](Eigen::Vector3d c) { return c.cwiseMax(0.0).cwiseMin(1.0).cast<float>().eval(); };
  std::size_t k = 0;
  for (std::size_t i = 0; i < l.facades.size(); ++i, ++k) {
    const auto& f = l.facades[i];
    const double side = f.x < 0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < counts[k]; ++j) {
      const double z = uni(f.z0, f.z1);
      const double y = uni(kCameraHeight - f.height, kCameraHeight);
      // Windows: 1.2 m × 1.4 m cells on a 2.5 m grid, recessed 0.4 m, above 1.2 m.
      const double wz = std::fmod(z - f.z0, 2.5), wy = std::fmod(kCameraHeight - y, 2.5);
      const bool window = wz > 0.6 && wz < 1.8 && wy > 0.5 && wy < 1.9 && y < 0.5;
      const double x = f.x + (window ? side * 0.4 : 0.0) + jitter(rng);
      Eigen::Vector3d c = window ? Eigen::Vector3d(0.1, 0.1, 0.15) : f.color;
      const double shade = 0.75 + 0.35 * cell_noise(i, static_cast<long>(std::floor(z)),
                                                    static_cast<long>(std::floor(y)));
      s.map.points.push_back(storable(x, y, z));
      s.albedo.push_back(clamp01(c * shade + Eigen::Vector3d::Constant(jitter(rng))));
    }
  }
  for (const auto& p : l.poles) {
    for (std::size_t j = 0; j < counts[k]; ++j) {
      const double th = uni(0, 2 * std::numbers::pi);
      const double y = uni(kCameraHeight - p.height, kCameraHeight);
      s.map.points.push_back(storable(p.x + 0.25 * std::cos(th), y, p.z + 0.25 * std::sin(th)));
      s.albedo.push_back(clamp01(p.color + Eigen::Vector3d::Constant(jitter(rng))));
    }
    ++k;
  }
  for (std::size_t j = 0; j < counts[k]; ++j) {
    const double x = uni(-l.ground_half_width, l.ground_half_width);
    const double z = uni(l.ground_z0, l.ground_z1);
    const double g = 0.2 + 0.4 * cell_noise(0xfeedULL, static_cast<long>(std::floor(x / 2)),
                                            static_cast<long>(std::floor(z / 2)));
    s.map.points.push_back(storable(x, kCameraHeight, z));
    s.albedo.push_back(clamp01(Eigen::Vector3d::Constant(g + jitter(rng))));
  }
}

std::vector<Pose> make_trajectory(std::mt19937_64& rng, double extent, int n_frames) {
  std::normal_distribution<double> n(0.0, 0.02);
  const double step = std::max(0.2, (extent - 20.0) / n_frames);
  std::vector<Pose> out;
  double yaw = 0.0;
  for (int k = 0; k < n_frames; ++k) {
    yaw = 0.9 * yaw + n(rng);
    out.emplace_back(Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY())),
                     Eigen::Vector3d(0.3 * std::sin(0.2 * k), 0.0, k * step));
  }
  return out;
}

}  // namespace

SyntheticScene gen_scene(std::uint64_t seed, std::size_t n_points, double extent, int n_frames,
                         const CameraModel& cam) {
  if (n_points < 1000) throw Error(ErrorCode::kInvalidArgument, "gen_scene: n_points must be >= 1000");
  if (n_frames < 1) throw Error(ErrorCode::kInvalidArgument, "gen_scene: n_frames must be >= 1");
  if (!(extent > 0)) throw Error(ErrorCode::kInvalidArgument, "gen_scene: extent must be positive");
  cam.validate();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::mt19937_64 rng(splitmix(seed) + static_cast<std::uint64_t>(attempt));
    SyntheticScene s;
    s.seed = seed;
    s.cam = cam;
    const Layout layout = make_layout(rng, extent);
    sample_points(layout, n_points, rng, s);
    s.trajectory = make_trajectory(rng, extent, n_frames);
    const bool visible = std::all_of(s.trajectory.begin(), s.trajectory.end(), [&](const Pose& p) {
      return render_depth(s.map, p, cam).nonzero_count() >= kMinVisiblePoints;
    });
    if (visible) return s;
  }
  throw Error(ErrorCode::kGeneration, "gen_scene: no layout met the visibility requirement in 1000 attempts");
}

RgbImage render_rgb(const SyntheticScene& scene, const Pose& pose) {
  std::vector<std::int32_t> winner;
  render_depth_indexed(scene.map.points, pose, scene.cam, &winner);
  RgbImage img(scene.cam.h, scene.cam.w, 0.5f);
  for (std::size_t i = 0; i < winner.size(); ++i) {
    if (winner[i] < 0) continue;
    const auto& a = scene.albedo[static_cast<std::size_t>(winner[i])];
    for (int c = 0; c < 3; ++c) img.rgb[i * 3 + c] = a[c];
  }
  return img;
}

std::vector<OfflineSample> make_dataset(const SyntheticScene& scene, const NoiseRange& noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<OfflineSample> out;
  for (std::size_t k = 0; k < scene.trajectory.size(); ++k) {
    OfflineSample s;
    s.frame_id = k;
    s.t_gt = scene.trajectory[k];
    s.t_init = compose(s.t_gt, sample_pose_noise(noise, rng));
    s.d_gt = render_depth(scene.map, s.t_gt, scene.cam);
    if (s.d_gt.nonzero_count() < kMinValidPixels) continue;
    s.d_init = render_depth(scene.map, s.t_init, scene.cam);
    s.image = render_rgb(scene, s.t_gt);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<OfflineSample> make_dataset(const SyntheticScene& scene, int noise_level, std::uint64_t seed) {
  return make_dataset(scene, noise_level == 0 ? NoiseRange{} : noise_range(noise_level), seed);
}

SampleSource noisy_source(const SyntheticScene& scene, int noise_level, std::uint64_t seed, int draws) {
  if (draws < 1) throw Error(ErrorCode::kInvalidArgument, "noisy_source: draws must be >= 1");
  noise_range(noise_level);
  return [&scene, noise_level, seed, draws](int epoch) {
    std::vector<OfflineSample> out;
    for (int d = 0; d < draws; ++d) {
      const std::uint64_t s = splitmix(splitmix(seed) ^ (static_cast<std::uint64_t>(epoch) << 20 | static_cast<std::uint64_t>(d)));
      auto part = make_dataset(scene, noise_level, s);
      std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
  };
}

SceneContainer scene_to_container(const SyntheticScene& scene) {
  std::vector<KeyframeRecord> records;
  for (std::size_t k = 0; k < scene.trajectory.size(); ++k) {
    KeyframeRecord r;
    r.frame_id = k;
    r.anchor = scene.trajectory[k];
    if (k == 0) {
      for (std::size_t i = 0; i < scene.map.points.size(); ++i) {
        r.points.push_back(scene.map.points[i].cast<float>());
        r.scores.push_back(0.0f);
        r.albedo.push_back(scene.albedo[i]);
      }
    }
    records.push_back(std::move(r));
  }
  SceneContainer c;
  c.seed = scene.seed;
  c.map = build_lhmap(std::move(records), scene.cam, static_cast<std::uint32_t>(scene.map.points.size()));
  return c;
}

SyntheticScene scene_from_container(const SceneContainer& c) {
  SyntheticScene s;
  s.seed = c.seed;
  s.cam = c.map.camera;
  for (const auto& r : c.map.records) {
    s.trajectory.push_back(r.anchor);
    for (std::size_t i = 0; i < r.points.size(); ++i) {
      s.map.points.push_back(r.points[i].cast<double>());
      s.albedo.push_back(i < r.albedo.size() ? r.albedo[i] : Eigen::Vector3f::Constant(0.5f));
    }
  }
  return s;
}

void save_scene(const SyntheticScene& scene, const std::filesystem::path& path) {
  write_file(path, encode_scene_container(scene_to_container(scene)));
}

SyntheticScene load_scene(const std::filesystem::path& path) {
  return scene_from_container(decode_scene_container(read_file(path)));
}

}  // namespace lhm
