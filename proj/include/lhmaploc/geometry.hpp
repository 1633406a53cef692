#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace lhm {

/// Rigid transform stored as a unit quaternion plus translation. A pose maps
/// points from its local (camera) frame into the parent (world) frame:
/// apply(p) = R(q) * p + t.
struct Pose {
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Pose() = default;
  /// Normalizes q and moves it to the w >= 0 hemisphere.
  Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation);

  static Pose identity() { return {}; }
  static Pose from_translation(const Eigen::Vector3d& t);
  static Pose from_matrix(const Eigen::Matrix4d& m);

  Eigen::Matrix3d rotation() const { return q.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return q * p + t; }
};

Eigen::Quaterniond canonicalize(const Eigen::Quaterniond& q);

/// a ∘ b: maps a point through b, then through a.
Pose compose(const Pose& a, const Pose& b);
Pose invert(const Pose& p);

/// Rotation angle of q1^-1 * q2 in degrees, in [0, 180].
double quat_geodesic_deg(const Eigen::Quaterniond& q1, const Eigen::Quaterniond& q2);

struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int h = 0, w = 0;

  /// Throws kInvalidArgument when the intrinsics violate fx,fy > 0,
  /// 0 < cx < w, 0 < cy < h.
  void validate() const;
  bool operator==(const CameraModel&) const = default;
};

inline constexpr double kNearPlane = 0.05;

enum class Frame : std::uint8_t { kWorld, kCamera };

struct PointCloud {
  Frame frame = Frame::kWorld;
  std::vector<Eigen::Vector3d> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Row-major h×w grid of camera depths; 0 marks an empty pixel.
struct DepthImage {
  int h = 0, w = 0;
  std::vector<float> values;
  Pose pose;  // pose the image was rendered at

  DepthImage() = default;
  DepthImage(int height, int width, const Pose& at = {})
      : h(height), w(width), values(static_cast<std::size_t>(height) * width, 0.f), pose(at) {}

  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * w + col]; }
  float& at(int row, int col) { return values[static_cast<std::size_t>(row) * w + col]; }
  std::size_t nonzero_count() const;
};

struct Projection {
  double u = 0, v = 0, z = 0;
  int col = 0, row = 0;
};

/// Pinhole projection of a world point seen from `pose`. Empty when the point
/// is at or behind the near plane or falls outside the image.
std::optional<Projection> project_point(const Eigen::Vector3d& p_world, const Pose& pose,
                                        const CameraModel& cam);

/// Inverse of project_point for a known camera depth. Throws kInvalidDepth for z <= 0.
Eigen::Vector3d unproject(double u, double v, double z, const Pose& pose, const CameraModel& cam);

/// Z-buffer render: each pixel keeps the nearest camera depth.
DepthImage render_depth(const PointCloud& map, const Pose& pose, const CameraModel& cam);

/// Like render_depth, also reporting which input point won each pixel (-1 if none).
DepthImage render_depth_indexed(std::span<const Eigen::Vector3d> points, const Pose& pose,
                                const CameraModel& cam, std::vector<std::int32_t>* winner);

struct NoiseRange {
  double translation_m = 0;
  double rotation_deg = 0;
};

/// Per-level uniform perturbation box (level 1 coarsest).
NoiseRange noise_range(int level);

/// Intrinsic X-Y-Z Euler angles in radians.
Eigen::Quaterniond quat_from_euler_xyz(double rx, double ry, double rz);
Eigen::Vector3d euler_xyz_from_quat(const Eigen::Quaterniond& q);

Pose sample_pose_noise(const NoiseRange& range, std::mt19937_64& rng);
Pose sample_pose_noise(int level, std::mt19937_64& rng);

struct PlanePixel {
  double u = 0, v = 0;
};

/// Remaps a camera-frame point through the normalized image plane region
/// {-0.8 < x < 0.8, -0.4 < y < 0.4} onto a 768×384 canvas.
std::optional<PlanePixel> normalized_plane_remap(const Eigen::Vector3d& p_cam);

}  // namespace lhm
