#pragma once

// Rotation and unit-sphere algebra.
//
// Conventions used throughout the library:
//  * Hamilton quaternions, stored as Eigen::Quaterniond (w, x, y, z).
//  * A quaternion q_AB maps vectors expressed in B into A: x_A = R(q_AB) x_B.
//    The vehicle attitude q_B is body -> world.
//  * Attitude errors live in the world frame: q = exp(dtheta) * q_hat.
//  * Bearings are unit quaternions q_f with direction p = R(q_f) e1; the
//    tangent basis is N = R(q_f) [e2 e3] and perturbations are applied on
//    the left: q_f [+] d = exp(N d) * q_f.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace vigcal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat32 = Eigen::Matrix<double, 3, 2>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using RowVec2 = Eigen::RowVector2d;
using RowVec3 = Eigen::RowVector3d;
using UnitQuaternion = Eigen::Quaterniond;

inline UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
  UnitQuaternion q = a * b;
  q.normalize();
  return q;
}

inline Mat3 quat_to_rot(const UnitQuaternion& q) { return q.normalized().toRotationMatrix(); }

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

inline UnitQuaternion so3_exp(const Vec3& theta) {
  const double angle = theta.norm();
  if (angle < 1e-8) {
    // second-order Taylor expansion of (cos(a/2), sin(a/2)/a * theta)
    UnitQuaternion q(1.0 - angle * angle / 8.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z());
    q.normalize();
    return q;
  }
  const double half = 0.5 * angle;
  const Vec3 axis = theta / angle;
  const double s = std::sin(half);
  return UnitQuaternion(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

// Rotation vector of q with angle in [0, pi].
inline Vec3 so3_log(const UnitQuaternion& q_in) {
  UnitQuaternion q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double vn = v.norm();
  if (vn < 1e-8) {
    return 2.0 * v / q.w();
  }
  const double angle = 2.0 * std::atan2(vn, q.w());
  return angle * v / vn;
}

// Heading-only rotation about world z.
inline UnitQuaternion yaw_quaternion(double yaw) { return so3_exp(Vec3(0.0, 0.0, yaw)); }

inline double heading_of(const UnitQuaternion& q) {
  const Mat3 r = quat_to_rot(q);
  return std::atan2(r(1, 0), r(0, 0));
}

class Bearing {
 public:
  Bearing() = default;
  explicit Bearing(const UnitQuaternion& q) : q_(q.normalized()) {}

  // Minimal rotation taking e1 onto the given direction.
  static Bearing from_direction(const Vec3& dir) {
    const Vec3 d = dir.normalized();
    const Vec3 e1 = Vec3::UnitX();
    const Vec3 axis = e1.cross(d);
    const double s = axis.norm();
    const double c = e1.dot(d);
    if (s < 1e-12) {
      if (c > 0.0) return Bearing(UnitQuaternion::Identity());
      return Bearing(UnitQuaternion(0.0, 0.0, 0.0, 1.0));  // pi about z
    }
    return Bearing(so3_exp(axis / s * std::atan2(s, c)));
  }

  const UnitQuaternion& quaternion() const { return q_; }
  Vec3 direction() const { return q_ * Vec3::UnitX(); }

 private:
  UnitQuaternion q_ = UnitQuaternion::Identity();
};

inline Mat32 projection_N(const Bearing& b) {
  const Mat3 r = quat_to_rot(b.quaternion());
  return r.rightCols<2>();
}

inline Bearing s2_boxplus(const Bearing& b, const Vec2& delta) {
  return Bearing(quat_mul(so3_exp(projection_N(b) * delta), b.quaternion()));
}

// Tangent coordinates (in the basis of b2) of the minimal rotation taking
// the direction of b2 onto the direction of b1.
inline Vec2 s2_boxminus(const Bearing& b1, const Bearing& b2) {
  const Vec3 p1 = b1.direction();
  const Vec3 p2 = b2.direction();
  const Vec3 axis = p2.cross(p1);
  const double s = axis.norm();
  const double c = p2.dot(p1);
  if (s < 1e-14) {
    if (c > 0.0) return Vec2::Zero();
    throw std::domain_error("s2_boxminus: antipodal bearings");
  }
  const Vec3 theta = axis / s * std::atan2(s, c);
  return projection_N(b2).transpose() * theta;
}

}  // namespace vigcal
