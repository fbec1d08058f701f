#pragma once

// Robocentric features: bearing on S^2 plus inverse depth, expressed in the
// camera frame and driven by the camera twist.

#include <vigcal/dynamics.hpp>
#include <vigcal/errors.hpp>
#include <vigcal/geom.hpp>

#include <stdexcept>

namespace vigcal {

inline constexpr double kInverseDepthFloor = 1e-4;
inline constexpr double kInverseDepthCeiling = 10.0;

struct FeatureState {
  Bearing bearing;
  double inv_depth = 0.1;
};

// R_CB maps body vectors into the camera frame; lever is the camera origin
// expressed in the body frame.
struct CameraExtrinsics {
  Mat3 R_CB = Mat3::Identity();
  Vec3 lever = Vec3::Zero();

  // Forward-looking camera (optical z = body x, optical x = -body y).
  static CameraExtrinsics forward_looking(const Vec3& lever) {
    CameraExtrinsics ext;
    ext.R_CB << 0.0, -1.0, 0.0,
                0.0, 0.0, -1.0,
                1.0, 0.0, 0.0;
    ext.lever = lever;
    return ext;
  }
};

struct CameraTwist {
  Vec3 v = Vec3::Zero();
  Vec3 omega = Vec3::Zero();
};

inline CameraTwist camera_twist(const NavState& s, const Vec3& omega, const CameraExtrinsics& ext) {
  CameraTwist tw;
  tw.v = ext.R_CB * (s.v + omega.cross(ext.lever));
  tw.omega = ext.R_CB * omega;
  return tw;
}

struct FeatureRate {
  Vec2 bearing = Vec2::Zero();  // tangent rate in the basis N of the feature
  double inv_depth = 0.0;
};

inline FeatureRate feature_derivative(const FeatureState& f, const CameraTwist& tw) {
  const Vec3 p = f.bearing.direction();
  const Mat32 n = projection_N(f.bearing);
  FeatureRate r;
  r.bearing = -n.transpose() * (tw.omega + f.inv_depth * p.cross(tw.v));
  r.inv_depth = f.inv_depth * f.inv_depth * p.dot(tw.v);
  return r;
}

// Direction rate p_dot = (N * bearing_rate) x p.
inline Vec3 bearing_direction_rate(const FeatureState& f, const CameraTwist& tw) {
  const FeatureRate r = feature_derivative(f, tw);
  return (projection_N(f.bearing) * r.bearing).cross(f.bearing.direction());
}

// Linearized error dynamics of one feature. Tangent errors are measured in
// the basis of the nominal bearing, which itself rotates with the nominal.
struct FeatureJacobians {
  Mat2 dq_dq = Mat2::Zero();
  Vec2 dq_drho = Vec2::Zero();
  RowVec2 drho_dq = RowVec2::Zero();
  double drho_drho = 0.0;
  Mat23 dq_dv = Mat23::Zero();      // w.r.t. camera-frame velocity
  RowVec3 drho_dv = RowVec3::Zero();
  Mat23 dq_domega = Mat23::Zero();  // w.r.t. camera-frame rate
  RowVec3 drho_domega = RowVec3::Zero();
};

inline FeatureJacobians feature_jacobians(const FeatureState& f, const CameraTwist& tw) {
  const double rho = f.inv_depth;
  if (!(rho >= kInverseDepthFloor)) {
    throw std::domain_error("feature_jacobians: inverse depth below floor");
  }
  const Vec3 p = f.bearing.direction();
  const Mat32 n = projection_N(f.bearing);
  const Mat3 px = skew(p);
  const Vec3 g = tw.omega + rho * p.cross(tw.v);
  const Vec3 theta_perp = -(g - p * p.dot(g));
  // direction error e = -[p x] N d, tangent error d = N^T [p x] e
  const Mat23 lift_out = n.transpose() * px;
  const Mat32 lift_in = -px * n;
  const Mat3 dpdot_dp = -skew(tw.omega) - rho * skew(p.cross(tw.v)) - rho * px * skew(tw.v);

  FeatureJacobians j;
  j.dq_dq = lift_out * (dpdot_dp - skew(theta_perp)) * lift_in;
  j.dq_drho = lift_out * (px * px * tw.v);
  j.dq_dv = lift_out * (rho * px * px);
  j.dq_domega = lift_out * px;
  j.drho_dq = rho * rho * tw.v.transpose() * lift_in;
  j.drho_drho = 2.0 * rho * p.dot(tw.v);
  j.drho_dv = rho * rho * p.transpose();
  return j;
}

// Coupling of the feature error dynamics to the vehicle error state
// (dv, dtheta, dp); only the velocity columns are nonzero.
inline Eigen::Matrix<double, 3, 9> feature_nav_jacobian(const FeatureJacobians& j,
                                                        const CameraExtrinsics& ext) {
  Eigen::Matrix<double, 3, 9> c = Eigen::Matrix<double, 3, 9>::Zero();
  c.block<2, 3>(0, nav_index::kVel) = j.dq_dv * ext.R_CB;
  c.block<1, 3>(2, nav_index::kVel) = j.drho_dv * ext.R_CB;
  return c;
}

// Self block [[dq/dq, dq/drho], [drho/dq, drho/drho]].
inline Mat3 feature_self_jacobian(const FeatureJacobians& j) {
  Mat3 m;
  m.block<2, 2>(0, 0) = j.dq_dq;
  m.block<2, 1>(0, 2) = j.dq_drho;
  m.block<1, 2>(2, 0) = j.drho_dq;
  m(2, 2) = j.drho_drho;
  return m;
}

// Sensitivity of the feature error dynamics to the gyro parameters, through
// the corrected body rate entering both omega_C and the lever-arm term of v_C.
inline Mat36 feature_param_jacobian(const FeatureJacobians& j, const CameraExtrinsics& ext,
                                    const Vec3& omega_m, const GyroParams& params) {
  const Mat36 dw = corrected_rate_jacobian(omega_m, params);
  const Mat3 dvc_dw = -ext.R_CB * skew(ext.lever);
  const Mat3 dwc_dw = ext.R_CB;
  Mat36 psi;
  psi.topRows<2>() = (j.dq_domega * dwc_dw + j.dq_dv * dvc_dw) * dw;
  psi.bottomRows<1>() = (j.drho_domega * dwc_dw + j.drho_dv * dvc_dw) * dw;
  return psi;
}

inline Mat36 feature_param_jacobian(const FeatureState& f, const NavState& s,
                                    const CameraExtrinsics& ext, const GyroParams& params,
                                    const Vec3& omega_m) {
  const CameraTwist tw = camera_twist(s, correct_gyro(omega_m, params), ext);
  return feature_param_jacobian(feature_jacobians(f, tw), ext, omega_m, params);
}

inline Vec3 landmark_in_camera(const Vec3& landmark_world, const NavState& s,
                               const CameraExtrinsics& ext) {
  const Mat3 r_wb = quat_to_rot(s.q);
  const Vec3 cam_world = s.p + r_wb * ext.lever;
  return ext.R_CB * (r_wb.transpose() * (landmark_world - cam_world));
}

// Throws std::domain_error when the landmark is not in front of the camera.
inline FeatureState landmark_to_feature(const Vec3& landmark_world, const NavState& s,
                                        const CameraExtrinsics& ext) {
  const Vec3 l = landmark_in_camera(landmark_world, s, ext);
  if (!(l.z() > 0.0)) throw std::domain_error("landmark_to_feature: landmark behind camera");
  FeatureState f;
  f.bearing = Bearing::from_direction(l);
  f.inv_depth = 1.0 / l.norm();
  return f;
}

inline Vec3 feature_to_landmark(const FeatureState& f, const NavState& s,
                                const CameraExtrinsics& ext) {
  const Vec3 l = f.bearing.direction() / f.inv_depth;
  const Mat3 r_wb = quat_to_rot(s.q);
  return s.p + r_wb * (ext.lever + ext.R_CB.transpose() * l);
}

}  // namespace vigcal
