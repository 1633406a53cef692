#include "lhmaploc/losses.hpp"

#include "lhmaploc/error.hpp"

#include <cmath>
#include <string>

namespace lhm::losses {

Quat quat_mul(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Quat quat_inverse(const Quat& q) {
  return Quat(q[0], -q[1], -q[2], -q[3]) / q.squaredNorm();
}

double quat_half_angle(const Quat& q) {
  return std::atan2(q.tail<3>().norm(), std::abs(q[0]));
}

namespace {

void require_unit(const Quat& q, const char* name) {
  if (!(std::abs(q.norm() - 1.0) <= 1e-3)) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(name) + " is not a unit quaternion (norm " +
                    std::to_string(q.norm()) + ")");
  }
}

}  // namespace

double rotation_loss(const Quat& q, const Quat& q_gt) {
  require_unit(q, "q");
  require_unit(q_gt, "q_gt");
  return quat_half_angle(quat_mul(q, quat_inverse(q_gt)));
}

Graded<4> rotation_loss_grad(const Quat& q, const Quat& q_gt) {
  require_unit(q, "q");
  require_unit(q_gt, "q_gt");
  const Quat p = quat_inverse(q_gt);
  // r = q ⊗ p is linear in q; column i is e_i ⊗ p.
  Eigen::Matrix4d m;
  for (int i = 0; i < 4; ++i) m.col(i) = quat_mul(Quat::Unit(i), p);
  const Quat r = m * q;
  const double s = r.tail<3>().norm();
  const double aw = std::abs(r[0]);
  const double denom = s * s + aw * aw;

  Graded<4> out;
  out.value = std::atan2(s, aw);
  Quat dr = Quat::Zero();
  if (denom > 0) {
    // Zero subgradient at s = 0 (exact match) and at w = 0 for the |w| kink.
    if (s > 0) dr.tail<3>() = (aw / denom) * r.tail<3>() / s;
    const double sign_w = r[0] > 0 ? 1.0 : (r[0] < 0 ? -1.0 : 0.0);
    dr[0] = -s / denom * sign_w;
  }
  out.grad = m.transpose() * dr;
  return out;
}

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double translation_loss(const Eigen::Vector3d& t, const Eigen::Vector3d& t_gt) {
  double sum = 0;
  for (int i = 0; i < 3; ++i) sum += smooth_l1(t[i] - t_gt[i]);
  return sum;
}

Graded<3> translation_loss_grad(const Eigen::Vector3d& t, const Eigen::Vector3d& t_gt) {
  Graded<3> out;
  for (int i = 0; i < 3; ++i) {
    const double d = t[i] - t_gt[i];
    out.value += smooth_l1(d);
    out.grad[i] = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
  }
  return out;
}

double combine_pose_loss(double l_t, double l_q, double lambda) {
  if (!(lambda >= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "pose loss weight lambda must be >= 1, got " + std::to_string(lambda));
  }
  return l_t + lambda * l_q;
}

double pose_loss(const Eigen::Vector3d& t, const Quat& q, const Eigen::Vector3d& t_gt,
                 const Quat& q_gt, double lambda) {
  return combine_pose_loss(translation_loss(t, t_gt), rotation_loss(q, q_gt), lambda);
}

double offline_total_loss(double lp0, double lp1, double alpha, double beta) {
  if (!(std::abs(alpha + beta - 1.0) <= 1e-9)) {
    throw Error(ErrorCode::kInvalidArgument, "stage weights must satisfy alpha + beta = 1");
  }
  return alpha * lp0 + beta * lp1;
}

OnlineLoss online_total_loss(double l_t, double l_q, double w_x, double w_q) {
  const double ex = std::exp(-w_x);
  const double eq = std::exp(-w_q);
  OnlineLoss out;
  out.value = ex * l_t + w_x + eq * l_q + w_q;
  out.d_lt = ex;
  out.d_lq = eq;
  out.d_wx = 1.0 - ex * l_t;
  out.d_wq = 1.0 - eq * l_q;
  return out;
}

}  // namespace lhm::losses
