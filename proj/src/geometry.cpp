#include "lhmaploc/geometry.hpp"

#include "lhmaploc/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace lhm {

Eigen::Quaterniond canonicalize(const Eigen::Quaterniond& q) {
  // Already-unit inputs are kept bit-for-bit so composing with the identity is exact.
  const bool unit = std::abs(q.squaredNorm() - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon();
  Eigen::Quaterniond out = unit ? q : q.normalized();
  if (out.w() < 0) out.coeffs() = -out.coeffs();
  return out;
}

Pose::Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation)
    : q(canonicalize(rotation)), t(translation) {}

Pose Pose::from_translation(const Eigen::Vector3d& t) {
  return Pose(Eigen::Quaterniond::Identity(), t);
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  return Pose(Eigen::Quaterniond(r), m.topRightCorner<3, 1>());
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation();
  m.topRightCorner<3, 1>() = t;
  return m;
}

Pose compose(const Pose& a, const Pose& b) { return Pose(a.q * b.q, a.t + a.q * b.t); }

Pose invert(const Pose& p) {
  Eigen::Quaterniond qi = p.q.conjugate();
  return Pose(qi, -(qi * p.t));
}

double quat_geodesic_deg(const Eigen::Quaterniond& q1, const Eigen::Quaterniond& q2) {
  Eigen::Quaterniond d = q1.conjugate() * q2;
  double s = d.vec().norm();
  double angle = 2.0 * std::atan2(s, std::abs(d.w()));
  return angle * 180.0 / std::numbers::pi;
}

void CameraModel::validate() const {
  if (!(fx > 0 && fy > 0 && w > 0 && h > 0 && cx > 0 && cx < w && cy > 0 && cy < h)) {
    throw Error(ErrorCode::kInvalidArgument,
                "camera model requires fx,fy > 0, 0 < cx < w and 0 < cy < h");
  }
}

std::size_t DepthImage::nonzero_count() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](float v) { return v != 0.f; }));
}

namespace {

std::optional<Projection> project_camera(const Eigen::Vector3d& pc, const CameraModel& cam) {
  if (!(pc.z() > kNearPlane)) return std::nullopt;
  Projection out;
  out.z = pc.z();
  out.u = cam.fx * pc.x() / pc.z() + cam.cx;
  out.v = cam.fy * pc.y() / pc.z() + cam.cy;
  if (!(out.u >= 0 && out.u < cam.w && out.v >= 0 && out.v < cam.h)) return std::nullopt;
  out.col = std::min(static_cast<int>(std::floor(out.u)), cam.w - 1);
  out.row = std::min(static_cast<int>(std::floor(out.v)), cam.h - 1);
  return out;
}

}  // namespace

std::optional<Projection> project_point(const Eigen::Vector3d& p_world, const Pose& pose,
                                        const CameraModel& cam) {
  Eigen::Vector3d pc = pose.q.conjugate() * (p_world - pose.t);
  return project_camera(pc, cam);
}

Eigen::Vector3d unproject(double u, double v, double z, const Pose& pose, const CameraModel& cam) {
  if (!(z > 0) || !std::isfinite(z)) {
    throw Error(ErrorCode::kInvalidDepth, "unproject requires a positive depth, got " +
                                              std::to_string(z));
  }
  Eigen::Vector3d pc((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
  return pose.apply(pc);
}

DepthImage render_depth_indexed(std::span<const Eigen::Vector3d> points, const Pose& pose,
                                const CameraModel& cam, std::vector<std::int32_t>* winner) {
  DepthImage img(cam.h, cam.w, pose);
  if (winner) winner->assign(img.values.size(), -1);
  const Eigen::Matrix3d rt = pose.rotation().transpose();
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto proj = project_camera(rt * (points[i] - pose.t), cam);
    if (!proj) continue;
    const auto z = static_cast<float>(proj->z);
    const std::size_t idx = static_cast<std::size_t>(proj->row) * cam.w + proj->col;
    float& cell = img.values[idx];
    // Strict comparison keeps the lowest point index among equal depths.
    if (cell == 0.f || z < cell) {
      cell = z;
      if (winner) (*winner)[idx] = static_cast<std::int32_t>(i);
    }
  }
  return img;
}

DepthImage render_depth(const PointCloud& map, const Pose& pose, const CameraModel& cam) {
  return render_depth_indexed(map.points, pose, cam, nullptr);
}

NoiseRange noise_range(int level) {
  switch (level) {
    case 1: return {2.0, 10.0};
    case 2: return {1.0, 2.0};
    case 3: return {0.6, 1.0};
    default:
      throw Error(ErrorCode::kInvalidArgument,
                  "noise level must be 1, 2 or 3, got " + std::to_string(level));
  }
}

Eigen::Quaterniond quat_from_euler_xyz(double rx, double ry, double rz) {
  return Eigen::AngleAxisd(rx, Eigen::Vector3d::UnitX()) *
         Eigen::AngleAxisd(ry, Eigen::Vector3d::UnitY()) *
         Eigen::AngleAxisd(rz, Eigen::Vector3d::UnitZ());
}

Eigen::Vector3d euler_xyz_from_quat(const Eigen::Quaterniond& q) {
  // R = Rx(a) Ry(b) Rz(c)
  const Eigen::Matrix3d r = q.toRotationMatrix();
  const double b = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
  const double a = std::atan2(-r(1, 2), r(2, 2));
  const double c = std::atan2(-r(0, 1), r(0, 0));
  return {a, b, c};
}

Pose sample_pose_noise(const NoiseRange& range, std::mt19937_64& rng) {
  auto uniform = [&rng](double half) {
    // Degenerate ranges still consume a draw so streams stay aligned across levels.
    double u = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    return half * u;
  };
  Eigen::Vector3d t;
  for (int i = 0; i < 3; ++i) t[i] = uniform(range.translation_m);
  const double to_rad = std::numbers::pi / 180.0;
  const double rx = uniform(range.rotation_deg) * to_rad;
  const double ry = uniform(range.rotation_deg) * to_rad;
  const double rz = uniform(range.rotation_deg) * to_rad;
  return Pose(quat_from_euler_xyz(rx, ry, rz), t);
}

Pose sample_pose_noise(int level, std::mt19937_64& rng) {
  return sample_pose_noise(noise_range(level), rng);
}

std::optional<PlanePixel> normalized_plane_remap(const Eigen::Vector3d& p_cam) {
  if (!(p_cam.z() > kNearPlane)) return std::nullopt;
  const double xn = p_cam.x() / p_cam.z();
  const double yn = p_cam.y() / p_cam.z();
  if (!(xn > -0.8 && xn < 0.8 && yn > -0.4 && yn < 0.4)) return std::nullopt;
  return PlanePixel{(xn + 0.8) / 1.6 * 768.0, (yn + 0.4) / 0.8 * 384.0};
}

}  // namespace lhm
