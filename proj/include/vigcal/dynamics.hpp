#pragma once

// Strapdown motion model and the reduced gyroscope error model.

#include <vigcal/errors.hpp>
#include <vigcal/geom.hpp>

#include <cmath>
#include <stdexcept>

namespace vigcal {

using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat96 = Eigen::Matrix<double, 9, 6>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

// Error-state layout of the vehicle block.
namespace nav_index {
inline constexpr int kVel = 0;
inline constexpr int kAtt = 3;
inline constexpr int kPos = 6;
inline constexpr int kDim = 9;
}  // namespace nav_index

struct NavState {
  Vec3 v = Vec3::Zero();                          // body-frame velocity
  UnitQuaternion q = UnitQuaternion::Identity();  // body -> world
  Vec3 p = Vec3::Zero();                          // world position

  bool finite() const {
    return v.allFinite() && q.coeffs().allFinite() && p.allFinite();
  }
};

struct NavStateDerivative {
  Vec3 dv = Vec3::Zero();
  Eigen::Vector4d dq = Eigen::Vector4d::Zero();  // (w, x, y, z)
  Vec3 dp = Vec3::Zero();
};

struct ImuSample {
  double t = 0.0;
  Vec3 omega = Vec3::Zero();  // measured angular rate
  Vec3 accel = Vec3::Zero();  // measured specific force
};

// Offsets, yaw-rate scale and the two yaw misalignments:
//   omega_m = M omega + b,  M = [1 0 -s_yx; 0 1 s_xy; 0 0 s_z].
struct GyroParams {
  Vec3 bias = Vec3::Zero();
  double scale_z = 1.0;
  double misalign_yx = 0.0;
  double misalign_xy = 0.0;

  static constexpr int kDim = 6;

  Vec6 to_vector() const {
    Vec6 x;
    x << bias, scale_z, misalign_yx, misalign_xy;
    return x;
  }

  static GyroParams from_vector(const Vec6& x) {
    GyroParams p;
    p.bias = x.head<3>();
    p.scale_z = x(3);
    p.misalign_yx = x(4);
    p.misalign_xy = x(5);
    return p;
  }

  Mat3 error_matrix() const {
    Mat3 m = Mat3::Identity();
    m(0, 2) = -misalign_yx;
    m(1, 2) = misalign_xy;
    m(2, 2) = scale_z;
    return m;
  }

  bool valid() const {
    return bias.allFinite() && scale_z > 0.0 && std::abs(misalign_yx) < 0.1 &&
           std::abs(misalign_xy) < 0.1;
  }
};

struct GravityModel {
  Vec3 g = Vec3(0.0, 0.0, -9.81);
};

inline Vec3 apply_gyro_error(const Vec3& omega_true, const GyroParams& params) {
  return params.error_matrix() * omega_true + params.bias;
}

inline Vec3 correct_gyro(const Vec3& omega_m, const GyroParams& params) {
  if (params.scale_z <= 1e-6) {
    throw std::invalid_argument("correct_gyro: yaw scale must be positive");
  }
  const Vec3 d = omega_m - params.bias;
  const double wz = d.z() / params.scale_z;
  return Vec3(d.x() + params.misalign_yx * wz, d.y() - params.misalign_xy * wz, wz);
}

// d(correct_gyro)/d(params), columns ordered (b_x, b_y, b_z, s_z, s_yx, s_xy).
inline Mat36 corrected_rate_jacobian(const Vec3& omega_m, const GyroParams& params) {
  const double sz = params.scale_z;
  const double syx = params.misalign_yx;
  const double sxy = params.misalign_xy;
  const double wz = (omega_m.z() - params.bias.z()) / sz;
  Mat36 j = Mat36::Zero();
  // -M^-1
  j(0, 0) = -1.0;
  j(1, 1) = -1.0;
  j(0, 2) = -syx / sz;
  j(1, 2) = sxy / sz;
  j(2, 2) = -1.0 / sz;
  // scale
  j(0, 3) = -syx * wz / sz;
  j(1, 3) = sxy * wz / sz;
  j(2, 3) = -wz / sz;
  // misalignments
  j(0, 4) = wz;
  j(1, 5) = -wz;
  return j;
}

inline NavStateDerivative nav_derivative(const NavState& s, const Vec3& omega, const Vec3& accel,
                                         const GravityModel& grav = {}) {
  const Mat3 r = quat_to_rot(s.q);
  NavStateDerivative d;
  d.dv = accel + r.transpose() * grav.g - omega.cross(s.v);
  const UnitQuaternion half_rate = s.q * UnitQuaternion(0.0, omega.x(), omega.y(), omega.z());
  d.dq << 0.5 * half_rate.w(), 0.5 * half_rate.x(), 0.5 * half_rate.y(), 0.5 * half_rate.z();
  d.dp = r * s.v;
  return d;
}

namespace detail {

inline NavState nav_axpy(const NavState& s, const NavStateDerivative& d, double h) {
  NavState out;
  out.v = s.v + h * d.dv;
  out.q = UnitQuaternion(s.q.w() + h * d.dq(0), s.q.x() + h * d.dq(1), s.q.y() + h * d.dq(2),
                         s.q.z() + h * d.dq(3));
  out.p = s.p + h * d.dp;
  return out;
}

}  // namespace detail

// One RK4 step with inputs linearly interpolated between (omega0, accel0) at
// the start and (omega1, accel1) at the end of the step. Rates must already
// be corrected.
inline NavState integrate_nav_rk4(const NavState& s, const Vec3& omega0, const Vec3& accel0,
                                  const Vec3& omega1, const Vec3& accel1, double dt,
                                  const GravityModel& grav = {}) {
  const Vec3 omega_mid = 0.5 * (omega0 + omega1);
  const Vec3 accel_mid = 0.5 * (accel0 + accel1);
  const NavStateDerivative k1 = nav_derivative(s, omega0, accel0, grav);
  const NavStateDerivative k2 = nav_derivative(detail::nav_axpy(s, k1, 0.5 * dt), omega_mid, accel_mid, grav);
  const NavStateDerivative k3 = nav_derivative(detail::nav_axpy(s, k2, 0.5 * dt), omega_mid, accel_mid, grav);
  const NavStateDerivative k4 = nav_derivative(detail::nav_axpy(s, k3, dt), omega1, accel1, grav);
  NavState out;
  out.v = s.v + dt / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
  const Eigen::Vector4d dq = dt / 6.0 * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
  out.q = UnitQuaternion(s.q.w() + dq(0), s.q.x() + dq(1), s.q.y() + dq(2), s.q.z() + dq(3));
  out.q.normalize();
  out.p = s.p + dt / 6.0 * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
  return out;
}

inline void check_step(double dt) {
  if (!(dt > 0.0) || dt > 0.1) {
    throw std::invalid_argument("propagation step must satisfy 0 < dt <= 0.1 s");
  }
}

// Zero-order-hold propagation over dt with the sample's rates corrected by params.
inline NavState propagate_nav(const NavState& s, const ImuSample& imu, const GyroParams& params,
                              double dt, const GravityModel& grav = {}) {
  check_step(dt);
  const Vec3 omega = correct_gyro(imu.omega, params);
  NavState out = integrate_nav_rk4(s, omega, imu.accel, omega, imu.accel, dt, grav);
  if (!out.finite()) throw NumericalError("propagate_nav: non-finite state");
  return out;
}

// Propagation between two consecutive samples (linear input interpolation).
inline NavState propagate_nav(const NavState& s, const ImuSample& imu0, const ImuSample& imu1,
                              const GyroParams& params, const GravityModel& grav = {}) {
  const double dt = imu1.t - imu0.t;
  check_step(dt);
  NavState out = integrate_nav_rk4(s, correct_gyro(imu0.omega, params), imu0.accel,
                                   correct_gyro(imu1.omega, params), imu1.accel, dt, grav);
  if (!out.finite()) throw NumericalError("propagate_nav: non-finite state");
  return out;
}

// Error-state Jacobian of the vehicle block, ordered (dv, dtheta, dp) with a
// world-frame attitude error. The attitude rows are zero.
inline Mat9 nav_jacobian(const NavState& s, const Vec3& omega, const GravityModel& grav = {}) {
  using namespace nav_index;
  const Mat3 r = quat_to_rot(s.q);
  Mat9 f = Mat9::Zero();
  f.block<3, 3>(kVel, kVel) = -skew(omega);
  f.block<3, 3>(kVel, kAtt) = r.transpose() * skew(grav.g);
  f.block<3, 3>(kPos, kVel) = r;
  f.block<3, 3>(kPos, kAtt) = -skew(r * s.v);
  return f;
}

// Sensitivity of the vehicle error-state derivative to the gyro parameters.
inline Mat96 nav_param_jacobian(const NavState& s, const Vec3& omega_m, const GyroParams& params) {
  using namespace nav_index;
  const Mat36 dw = corrected_rate_jacobian(omega_m, params);
  Mat96 psi = Mat96::Zero();
  psi.block<3, 6>(kVel, 0) = skew(s.v) * dw;
  psi.block<3, 6>(kAtt, 0) = quat_to_rot(s.q) * dw;
  return psi;
}

// Error between two vehicle states in the error-state layout.
inline Vec9 nav_boxminus(const NavState& a, const NavState& b) {
  Vec9 e;
  e.segment<3>(nav_index::kVel) = a.v - b.v;
  e.segment<3>(nav_index::kAtt) = so3_log(a.q * b.q.conjugate());
  e.segment<3>(nav_index::kPos) = a.p - b.p;
  return e;
}

inline NavState nav_boxplus(const NavState& s, const Vec9& dx) {
  NavState out;
  out.v = s.v + dx.segment<3>(nav_index::kVel);
  out.q = quat_mul(so3_exp(dx.segment<3>(nav_index::kAtt)), s.q);
  out.p = s.p + dx.segment<3>(nav_index::kPos);
  return out;
}

}  // namespace vigcal
