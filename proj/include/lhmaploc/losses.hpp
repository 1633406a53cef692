#pragma once

#include <Eigen/Core>

namespace lhm::losses {

/// Scalar loss value together with its gradient with respect to the
/// prediction. Training feeds `grad` back into the network.
template <int N>
struct Graded {
  double value = 0;
  Eigen::Matrix<double, N, 1> grad = Eigen::Matrix<double, N, 1>::Zero();
};

/// Quaternion components in (w, x, y, z) order.
using Quat = Eigen::Vector4d;

/// Hamilton product a ⊗ b.
Quat quat_mul(const Quat& a, const Quat& b);
Quat quat_inverse(const Quat& q);

/// D(q) = atan2(sqrt(x²+y²+z²), |w|): half the rotation angle of q, in [0, π/2].
double quat_half_angle(const Quat& q);

/// L_q = D(q ⊗ inv(q_gt)). Both inputs must be unit within 1e-3.
double rotation_loss(const Quat& q, const Quat& q_gt);
/// Gradient with respect to q (q_gt held fixed).
Graded<4> rotation_loss_grad(const Quat& q, const Quat& q_gt);

/// Smooth-L1 (threshold 1) summed over the three components of t - t_gt.
double translation_loss(const Eigen::Vector3d& t, const Eigen::Vector3d& t_gt);
Graded<3> translation_loss_grad(const Eigen::Vector3d& t, const Eigen::Vector3d& t_gt);

double smooth_l1(double d);

inline constexpr double kDefaultLambda = 10.0;
inline constexpr double kDefaultAlpha = 0.6;
inline constexpr double kDefaultBeta = 0.4;
inline constexpr double kInitialWx = 0.0;
inline constexpr double kInitialWq = -2.5;

/// L_t + λ·L_q, λ >= 1.
double pose_loss(const Eigen::Vector3d& t, const Quat& q, const Eigen::Vector3d& t_gt,
                 const Quat& q_gt, double lambda = kDefaultLambda);
double combine_pose_loss(double l_t, double l_q, double lambda);

/// α·L_p0 + β·L_p1 with α + β = 1.
double offline_total_loss(double lp0, double lp1, double alpha = kDefaultAlpha,
                          double beta = kDefaultBeta);

struct OnlineLoss {
  double value = 0;
  double d_lt = 0, d_lq = 0;  // ∂/∂L_t, ∂/∂L_q
  double d_wx = 0, d_wq = 0;  // ∂/∂w_x, ∂/∂w_q
};

/// e^{-w_x} L_t + w_x + e^{-w_q} L_q + w_q, with all partial derivatives.
OnlineLoss online_total_loss(double l_t, double l_q, double w_x, double w_q);

}  // namespace lhm::losses
