#pragma once

// Measurement models: patch-intensity camera rows, direct bearing rows and
// the vehicle velocity model with the single-parameter lateral velocity.

#include <vigcal/camera.hpp>
#include <vigcal/features.hpp>
#include <vigcal/geom.hpp>
#include <vigcal/image.hpp>

#include <cmath>
#include <optional>
#include <span>

namespace vigcal {

// d(intensity residual)/d(feature) for all patch pixels. Columns are the
// bearing tangent (2) and the inverse depth (1, always zero).
struct CameraRows {
  Eigen::VectorXd residual;
  Eigen::Matrix<double, Eigen::Dynamic, 3> jacobian;
  Vec2 uv = Vec2::Zero();
};

inline std::optional<CameraRows> camera_measurement_jacobian(const FeatureState& f, const PatchSet& patch,
                                                             std::span<const Image> pyramid,
                                                             const CameraIntrinsics& intr) {
  const Projection proj = project(f.bearing, intr);
  if (!proj.ok()) return std::nullopt;
  auto r = intensity_residual(patch, pyramid, proj.uv);
  if (!r) return std::nullopt;
  CameraRows rows;
  rows.uv = proj.uv;
  rows.residual = r->residual;
  rows.jacobian.resize(r->residual.size(), 3);
  rows.jacobian.leftCols<2>() = r->gradient * proj.jacobian;
  rows.jacobian.col(2).setZero();
  return rows;
}

// Chain rule for an arbitrary differentiable intensity field, used by the
// Jacobian audit: d I(f(r(p(q)))) / d q.
template <class GradientFn>
RowVec2 intensity_chain(const Bearing& b, const CameraIntrinsics& intr, GradientFn&& grad_at) {
  const Projection proj = project(b, intr);
  const RowVec2 g = grad_at(proj.uv);
  return g * proj.d_uv_d_r * proj.d_r_d_p * proj.d_p_d_q;
}

struct BearingResidual {
  Vec2 residual = Vec2::Zero();
  Mat2 jacobian = Mat2::Identity();
};

inline BearingResidual bearing_measurement(const FeatureState& f, const Bearing& observed) {
  BearingResidual r;
  r.residual = s2_boxminus(observed, f.bearing);
  return r;
}

struct VehicleVelocityMeasurement {
  double v_x_m = 0.0;  // wheel-derived longitudinal speed
  double a_y_m = 0.0;  // lateral specific force (accelerometer y)
};

// Measured velocity vector with the lateral entry implied by the
// single-track model: (v_x, -rho_sg a_y v_x, 0).
inline Vec3 vehicle_velocity_measurement(double v_x_m, double a_y_m, double rho_sg) {
  return Vec3(v_x_m, -rho_sg * a_y_m * v_x_m, 0.0);
}

// Predicted measurement for body velocity v. The lateral row is the residual
// of the lateral model, v_y + rho_sg a_y v_x, so that zero means consistent.
inline Vec3 vehicle_velocity_prediction(const Vec3& v, double a_y_m, double rho_sg) {
  return Vec3(v.x(), v.y() + rho_sg * a_y_m * v.x(), v.z());
}

inline Mat3 vehicle_measurement_jacobian(double rho_sg, double a_y_m) {
  Mat3 h = Mat3::Identity();
  h(1, 0) = rho_sg * a_y_m;
  return h;
}

struct VehicleNoise {
  double sigma_vx = 0.05;
  double sigma_vy = 0.05;
  double sigma_vz = 0.1;
  double lateral_inflation = 100.0;  // variance factor outside the valid regime
  double min_speed = 10.0;
  double max_lateral_accel = 4.0;
};

struct VehicleRows {
  Vec3 residual = Vec3::Zero();
  Mat3 jacobian = Mat3::Identity();
  Mat3 covariance = Mat3::Identity();
};

// Residual (measured - predicted) of the velocity measurement against v.
inline VehicleRows vehicle_rows(const Vec3& v, const VehicleVelocityMeasurement& m, double rho_sg,
                                const VehicleNoise& noise) {
  VehicleRows rows;
  const Vec3 measured(m.v_x_m, 0.0, 0.0);
  rows.residual = measured - vehicle_velocity_prediction(v, m.a_y_m, rho_sg);
  rows.jacobian = vehicle_measurement_jacobian(rho_sg, m.a_y_m);
  double var_y = noise.sigma_vy * noise.sigma_vy;
  if (m.v_x_m < noise.min_speed || std::abs(m.a_y_m) > noise.max_lateral_accel) {
    var_y *= noise.lateral_inflation;
  }
  rows.covariance = Eigen::DiagonalMatrix<double, 3>(noise.sigma_vx * noise.sigma_vx, var_y,
                                                     noise.sigma_vz * noise.sigma_vz);
  return rows;
}

}  // namespace vigcal
