#pragma once

// Adaptive Kalman filter: an error-state EKF over the vehicle and feature
// states, with the gyro parameters estimated by a separate recursive
// least-squares channel coupled through the sensitivity matrix Upsilon.

#include <vigcal/camera.hpp>
#include <vigcal/dataset.hpp>
#include <vigcal/dynamics.hpp>
#include <vigcal/errors.hpp>
#include <vigcal/features.hpp>
#include <vigcal/geom.hpp>
#include <vigcal/image.hpp>
#include <vigcal/measurement.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vigcal {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct NoiseConfig {
  // continuous-time process noise densities
  double q_vel = 1e-4;         // (m/s)^2 / s
  double q_att = 1e-7;         // rad^2 / s
  double q_pos = 1e-8;         // m^2 / s
  double q_bearing = 1e-6;     // rad^2 / s
  double q_inv_depth = 1e-6;   // (1/m)^2 / s

  double r_intensity = 25.0;   // intensity variance, 8-bit units
  double r_pixel = 0.25;       // px^2, position jitter of an aligned patch
  double r_bearing = 1e-6;     // rad^2
  VehicleNoise vehicle;
  double r_standstill_vel = 1e-6;
  double r_standstill_rate = 7e-6;  // per-sample gyro variance, (rad/s)^2

  double forgetting = 0.9995;  // per parameter update

  Vec9 p0 = (Vec9() << 1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-8, 1e-6, 1e-6, 1e-6).finished();
  Vec6 s0 = (Vec6() << 1e-4, 1e-4, 1e-4, 4e-4, 1e-4, 1e-4).finished();

  double init_inv_depth = 0.1;
  double init_inv_depth_sigma = 0.5;
  double init_bearing_sigma = 1e-3;
  double max_bearing_sigma = 0.2;
  double gate_probability = 0.99;

  bool valid() const {
    const bool positive = q_vel > 0 && q_att > 0 && q_pos > 0 && q_bearing > 0 && q_inv_depth > 0 &&
                          r_intensity > 0 && r_pixel >= 0 && r_bearing > 0 && vehicle.sigma_vx > 0 &&
                          vehicle.sigma_vy > 0 && vehicle.sigma_vz > 0 && r_standstill_vel > 0 &&
                          r_standstill_rate > 0 && (p0.array() > 0).all() && (s0.array() >= 0).all();
    return positive && forgetting > 0.0 && forgetting <= 1.0;
  }
};

// Sensor geometry shared by all filter steps.
struct FilterModel {
  CameraIntrinsics intr;
  CameraExtrinsics ext;
  GravityModel gravity;
};

struct FeatureSlot {
  bool active = false;
  long track_id = -1;
  FeatureState f;
  int age = 0;
  int misses = 0;
  std::optional<PatchSet> patch;
};

struct FilterState {
  double t = 0.0;
  NavState nav;
  std::vector<FeatureSlot> slots;
  MatrixXd P;
  GyroParams params;
  Mat6 S = Mat6::Zero();
  MatrixXd upsilon;
  ImuSample last_imu;
  bool has_imu = false;

  int dim() const { return nav_index::kDim + 3 * static_cast<int>(slots.size()); }
  static int offset(int slot) { return nav_index::kDim + 3 * slot; }
  int active_count() const {
    return static_cast<int>(std::count_if(slots.begin(), slots.end(), [](const FeatureSlot& s) { return s.active; }));
  }
};

inline FilterState make_filter_state(const NavState& nav, const GyroParams& params, int max_features,
                                     const NoiseConfig& noise, double t0 = 0.0) {
  FilterState fs;
  fs.t = t0;
  fs.nav = nav;
  fs.params = params;
  fs.slots.resize(std::max(0, max_features));
  const int n = fs.dim();
  fs.P = MatrixXd::Identity(n, n);
  fs.P.topLeftCorner<9, 9>() = noise.p0.asDiagonal();
  fs.S = noise.s0.asDiagonal();
  fs.upsilon = MatrixXd::Zero(n, 6);
  return fs;
}

// --- system assembly -----------------------------------------------------------

// Block-sparse continuous-time error-state Jacobian. Each feature row block
// couples only to the vehicle velocity and to itself; the vehicle block does
// not depend on the features.
struct SystemJacobian {
  Mat9 nav = Mat9::Zero();
  std::vector<Eigen::Matrix<double, 3, 9>> coupling;
  std::vector<Mat3> self;
  std::vector<bool> active;

  int dim() const { return nav_index::kDim + 3 * static_cast<int>(self.size()); }

  // F * X for X with dim() rows.
  MatrixXd apply(const MatrixXd& x) const {
    MatrixXd out(x.rows(), x.cols());
    out.topRows<9>().noalias() = nav * x.topRows<9>();
    for (size_t j = 0; j < self.size(); ++j) {
      const int o = FilterState::offset(static_cast<int>(j));
      if (!active[j]) {
        out.middleRows<3>(o).setZero();
        continue;
      }
      out.middleRows<3>(o).noalias() = coupling[j].leftCols<3>() * x.middleRows<3>(nav_index::kVel);
      out.middleRows<3>(o).noalias() += self[j] * x.middleRows<3>(o);
    }
    return out;
  }

  MatrixXd dense() const {
    const int n = dim();
    MatrixXd f = MatrixXd::Zero(n, n);
    f.topLeftCorner<9, 9>() = nav;
    for (size_t j = 0; j < self.size(); ++j) {
      if (!active[j]) continue;
      const int o = FilterState::offset(static_cast<int>(j));
      f.block<3, 9>(o, 0) = coupling[j];
      f.block<3, 3>(o, o) = self[j];
    }
    return f;
  }
};

struct LinearizedSystem {
  SystemJacobian F;
  MatrixXd psi;  // continuous-time parameter Jacobian, dim x 6
};

inline LinearizedSystem linearize(const FilterState& fs, const Vec3& omega_m, const FilterModel& model) {
  LinearizedSystem sys;
  const Vec3 omega = correct_gyro(omega_m, fs.params);
  const size_t nf = fs.slots.size();
  sys.F.nav = nav_jacobian(fs.nav, omega, model.gravity);
  sys.F.coupling.assign(nf, Eigen::Matrix<double, 3, 9>::Zero());
  sys.F.self.assign(nf, Mat3::Zero());
  sys.F.active.assign(nf, false);
  sys.psi = MatrixXd::Zero(fs.dim(), 6);
  sys.psi.topRows<9>() = nav_param_jacobian(fs.nav, omega_m, fs.params);
  const CameraTwist tw = camera_twist(fs.nav, omega, model.ext);
  for (size_t j = 0; j < nf; ++j) {
    const FeatureSlot& slot = fs.slots[j];
    if (!slot.active) continue;
    const FeatureJacobians fj = feature_jacobians(slot.f, tw);
    sys.F.active[j] = true;
    sys.F.coupling[j] = feature_nav_jacobian(fj, model.ext);
    sys.F.self[j] = feature_self_jacobian(fj);
    sys.psi.middleRows<3>(FilterState::offset(static_cast<int>(j))) =
        feature_param_jacobian(fj, model.ext, omega_m, fs.params);
  }
  return sys;
}

inline VectorXd process_noise_diagonal(const FilterState& fs, const NoiseConfig& noise) {
  VectorXd q = VectorXd::Zero(fs.dim());
  q.segment<3>(nav_index::kVel).setConstant(noise.q_vel);
  q.segment<3>(nav_index::kAtt).setConstant(noise.q_att);
  q.segment<3>(nav_index::kPos).setConstant(noise.q_pos);
  for (size_t j = 0; j < fs.slots.size(); ++j) {
    if (!fs.slots[j].active) continue;
    const int o = FilterState::offset(static_cast<int>(j));
    q.segment<2>(o).setConstant(noise.q_bearing);
    q(o + 2) = noise.q_inv_depth;
  }
  return q;
}

// P <- Phi P Phi^T + Q dt with Phi = I + F dt, using the block structure of F.
inline MatrixXd propagate_covariance(const MatrixXd& P, const SystemJacobian& F, const VectorXd& q_diag,
                                     double dt) {
  const MatrixXd fp = F.apply(P);
  const MatrixXd fpf = F.apply(fp.transpose());
  MatrixXd out = P;
  out.noalias() += dt * (fp + fp.transpose());
  out.noalias() += (dt * dt) * fpf;
  out.diagonal() += dt * q_diag;
  return 0.5 * (out + out.transpose());
}

// --- nominal propagation ---------------------------------------------------------

namespace detail {

struct JointState {
  NavState nav;
  std::vector<Vec3> dirs;
  std::vector<double> rho;
};

struct JointRate {
  NavStateDerivative nav;
  std::vector<Vec3> dirs;
  std::vector<double> rho;
};

inline JointRate joint_rate(const JointState& s, const std::vector<bool>& active, const Vec3& omega,
                            const Vec3& accel, const FilterModel& model) {
  JointRate r;
  r.nav = nav_derivative(s.nav, omega, accel, model.gravity);
  r.dirs.assign(s.dirs.size(), Vec3::Zero());
  r.rho.assign(s.rho.size(), 0.0);
  const CameraTwist tw = camera_twist(s.nav, omega, model.ext);
  for (size_t j = 0; j < s.dirs.size(); ++j) {
    if (!active[j]) continue;
    FeatureState f{Bearing::from_direction(s.dirs[j]), s.rho[j]};
    r.dirs[j] = bearing_direction_rate(f, tw);
    r.rho[j] = feature_derivative(f, tw).inv_depth;
  }
  return r;
}

inline JointState joint_axpy(const JointState& s, const JointRate& d, double h) {
  JointState o;
  o.nav = nav_axpy(s.nav, d.nav, h);
  o.dirs.resize(s.dirs.size());
  o.rho.resize(s.rho.size());
  for (size_t j = 0; j < s.dirs.size(); ++j) {
    o.dirs[j] = s.dirs[j] + h * d.dirs[j];
    o.rho[j] = s.rho[j] + h * d.rho[j];
  }
  return o;
}

}  // namespace detail

// RK4 of the vehicle and feature dynamics between two IMU samples with
// linearly interpolated, corrected inputs.
inline void propagate_nominal(FilterState& fs, const ImuSample& imu0, const ImuSample& imu1,
                              const FilterModel& model) {
  const double dt = imu1.t - imu0.t;
  const Vec3 w0 = correct_gyro(imu0.omega, fs.params);
  const Vec3 w1 = correct_gyro(imu1.omega, fs.params);
  const Vec3 wm = 0.5 * (w0 + w1);
  const Vec3 am = 0.5 * (imu0.accel + imu1.accel);
  std::vector<bool> active(fs.slots.size());
  detail::JointState s;
  s.nav = fs.nav;
  s.dirs.resize(fs.slots.size(), Vec3::UnitX());
  s.rho.resize(fs.slots.size(), 0.0);
  for (size_t j = 0; j < fs.slots.size(); ++j) {
    active[j] = fs.slots[j].active;
    if (!active[j]) continue;
    s.dirs[j] = fs.slots[j].f.bearing.direction();
    s.rho[j] = fs.slots[j].f.inv_depth;
  }
  const auto k1 = detail::joint_rate(s, active, w0, imu0.accel, model);
  const auto k2 = detail::joint_rate(detail::joint_axpy(s, k1, 0.5 * dt), active, wm, am, model);
  const auto k3 = detail::joint_rate(detail::joint_axpy(s, k2, 0.5 * dt), active, wm, am, model);
  const auto k4 = detail::joint_rate(detail::joint_axpy(s, k3, dt), active, w1, imu1.accel, model);

  const NavState nav = integrate_nav_rk4(fs.nav, w0, imu0.accel, w1, imu1.accel, dt, model.gravity);
  if (!nav.finite()) throw NumericalError("predict: non-finite vehicle state");
  fs.nav = nav;
  for (size_t j = 0; j < fs.slots.size(); ++j) {
    if (!active[j]) continue;
    const Vec3 dir = s.dirs[j] + dt / 6.0 * (k1.dirs[j] + 2.0 * k2.dirs[j] + 2.0 * k3.dirs[j] + k4.dirs[j]);
    const double rho = s.rho[j] + dt / 6.0 * (k1.rho[j] + 2.0 * k2.rho[j] + 2.0 * k3.rho[j] + k4.rho[j]);
    if (!dir.allFinite() || !std::isfinite(rho)) throw NumericalError("predict: non-finite feature state");
    FeatureState& f = fs.slots[j].f;
    f.bearing = s2_boxplus(f.bearing, s2_boxminus(Bearing::from_direction(dir), f.bearing));
    f.inv_depth = std::clamp(rho, kInverseDepthFloor, kInverseDepthCeiling);
  }
}

// --- predict ---------------------------------------------------------------------

inline void predict_in_place(FilterState& fs, const ImuSample& imu, const FilterModel& model,
                             const NoiseConfig& noise) {
  if (!fs.has_imu) {
    fs.last_imu = imu;
    fs.has_imu = true;
    fs.t = imu.t;
    return;
  }
  const double dt = imu.t - fs.t;
  if (!(dt > 0.0)) throw std::invalid_argument("predict: IMU timestamps must increase");
  if (dt > 0.1) throw std::invalid_argument("predict: step longer than 0.1 s");
  ImuSample start = fs.last_imu;
  start.t = fs.t;

  const LinearizedSystem sys = linearize(fs, start.omega, model);
  propagate_nominal(fs, start, imu, model);
  fs.P = propagate_covariance(fs.P, sys.F, process_noise_diagonal(fs, noise), dt);
  fs.upsilon += dt * (sys.F.apply(fs.upsilon) + sys.psi);
  fs.last_imu = imu;
  fs.t = imu.t;
}

inline FilterState predict(FilterState fs, const ImuSample& imu, const FilterModel& model,
                           const NoiseConfig& noise) {
  predict_in_place(fs, imu, model, noise);
  return fs;
}

// --- measurement update ------------------------------------------------------------

enum class RowKind { kVehicle, kFeature, kStandstill, kGeneric };

struct MeasurementBlock {
  RowKind kind = RowKind::kGeneric;
  int slot = -1;
  VectorXd residual;  // measured - predicted
  MatrixXd H;         // rows x dim
  MatrixXd R;         // rows x rows
  MatrixXd D;         // rows x 6 direct parameter Jacobian of the prediction; empty if none
};

struct MeasurementBatch {
  std::vector<MeasurementBlock> blocks;

  int rows() const {
    int m = 0;
    for (const auto& b : blocks) m += static_cast<int>(b.residual.size());
    return m;
  }
  bool empty() const { return blocks.empty(); }
};

struct UpdateOptions {
  bool adapt_parameters = true;
};

struct UpdateReport {
  bool applied = false;
  std::string diagnostic;
  VectorXd state_correction;
  Vec6 param_correction = Vec6::Zero();
};

inline void clamp_params(GyroParams& p) {
  p.scale_z = std::max(p.scale_z, 1e-3);
  p.misalign_yx = std::clamp(p.misalign_yx, -0.0999, 0.0999);
  p.misalign_xy = std::clamp(p.misalign_xy, -0.0999, 0.0999);
}

inline void retract(FilterState& fs, const VectorXd& dx) {
  fs.nav = nav_boxplus(fs.nav, dx.head<9>());
  for (size_t j = 0; j < fs.slots.size(); ++j) {
    FeatureSlot& slot = fs.slots[j];
    if (!slot.active) continue;
    const int o = FilterState::offset(static_cast<int>(j));
    slot.f.bearing = s2_boxplus(slot.f.bearing, dx.segment<2>(o));
    slot.f.inv_depth = std::clamp(slot.f.inv_depth + dx(o + 2), kInverseDepthFloor, kInverseDepthCeiling);
  }
}

// Stacked Kalman innovation followed by the RLS parameter innovation.
inline UpdateReport update_in_place(FilterState& fs, const MeasurementBatch& batch, const NoiseConfig& noise,
                                    const UpdateOptions& opts = {}) {
  UpdateReport rep;
  const int n = fs.dim();
  const int m = batch.rows();
  if (m == 0) {
    rep.diagnostic = "empty batch";
    return rep;
  }
  VectorXd y(m);
  MatrixXd H = MatrixXd::Zero(m, n);
  MatrixXd R = MatrixXd::Zero(m, m);
  MatrixXd D = MatrixXd::Zero(m, 6);
  int r0 = 0;
  for (const auto& b : batch.blocks) {
    const int k = static_cast<int>(b.residual.size());
    if (b.H.rows() != k || b.H.cols() != n || b.R.rows() != k || b.R.cols() != k) {
      throw std::invalid_argument("update: inconsistent measurement block shape");
    }
    y.segment(r0, k) = b.residual;
    H.middleRows(r0, k) = b.H;
    R.block(r0, r0, k, k) = b.R;
    if (b.D.size() != 0) D.middleRows(r0, k) = b.D;
    r0 += k;
  }

  const MatrixXd PHt = fs.P * H.transpose();
  MatrixXd sigma = H * PHt + R;
  sigma = 0.5 * (sigma + sigma.transpose());
  const Eigen::LLT<MatrixXd> sigma_llt(sigma);
  if (sigma_llt.info() != Eigen::Success) {
    rep.diagnostic = "innovation covariance not positive definite; update skipped";
    return rep;
  }
  const MatrixXd K = sigma_llt.solve(PHt.transpose()).transpose();

  VectorXd dx = K * y;
  const MatrixXd omega = H * fs.upsilon + D;
  MatrixXd P_new = fs.P;
  P_new.noalias() -= K * PHt.transpose();
  P_new = 0.5 * (P_new + P_new.transpose());
  MatrixXd upsilon_new = fs.upsilon;
  upsilon_new.noalias() -= K * omega;

  Vec6 dtheta = Vec6::Zero();
  Mat6 S_new = fs.S;
  if (opts.adapt_parameters && !fs.S.isZero(0.0)) {
    MatrixXd a = sigma + omega * fs.S * omega.transpose();
    a = 0.5 * (a + a.transpose());
    const Eigen::LLT<MatrixXd> a_llt(a);
    if (a_llt.info() != Eigen::Success) {
      rep.diagnostic = "parameter innovation not positive definite; update skipped";
      return rep;
    }
    const MatrixXd gamma = a_llt.solve(omega * fs.S).transpose();  // S Omega^T Lambda
    dtheta = gamma * y;
    S_new = (fs.S - gamma * omega * fs.S) / noise.forgetting;
    S_new = 0.5 * (S_new + S_new.transpose());
    dx.noalias() += upsilon_new * dtheta;
  }
  if (!dx.allFinite() || !dtheta.allFinite() || !P_new.allFinite() || !S_new.allFinite()) {
    rep.diagnostic = "non-finite update rejected";
    return rep;
  }

  fs.P = std::move(P_new);
  fs.upsilon = std::move(upsilon_new);
  fs.S = S_new;
  GyroParams params = GyroParams::from_vector(fs.params.to_vector() + dtheta);
  clamp_params(params);
  fs.params = params;
  retract(fs, dx);
  rep.applied = true;
  rep.state_correction = std::move(dx);
  rep.param_correction = dtheta;
  return rep;
}

inline FilterState update(FilterState fs, const MeasurementBatch& batch, const NoiseConfig& noise,
                          const UpdateOptions& opts = {}) {
  update_in_place(fs, batch, noise, opts);
  return fs;
}

// --- gating --------------------------------------------------------------------------

inline double chi2_quantile(int dof, double probability) {
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(dof), probability);
}

inline double mahalanobis_squared(const FilterState& fs, const MeasurementBlock& b) {
  const MatrixXd sigma = b.H * fs.P * b.H.transpose() + b.R;
  return b.residual.dot(sigma.ldlt().solve(b.residual));
}

inline bool gate(const FilterState& fs, const MeasurementBlock& b, double probability = 0.99) {
  const int dof = static_cast<int>(b.residual.size());
  if (dof == 0) return true;
  return mahalanobis_squared(fs, b) <= chi2_quantile(dof, probability);
}

// --- measurement rows ---------------------------------------------------------------

inline MeasurementBlock vehicle_block(const FilterState& fs, const VehicleVelocityMeasurement& m, double rho_sg,
                                      const NoiseConfig& noise) {
  const VehicleRows rows = vehicle_rows(fs.nav.v, m, rho_sg, noise.vehicle);
  MeasurementBlock b;
  b.kind = RowKind::kVehicle;
  b.residual = rows.residual;
  b.H = MatrixXd::Zero(3, fs.dim());
  b.H.block<3, 3>(0, nav_index::kVel) = rows.jacobian;
  b.R = rows.covariance;
  return b;
}

inline MeasurementBlock bearing_block(const FilterState& fs, int slot, const Bearing& observed,
                                      const NoiseConfig& noise) {
  const BearingResidual r = bearing_measurement(fs.slots[slot].f, observed);
  MeasurementBlock b;
  b.kind = RowKind::kFeature;
  b.slot = slot;
  b.residual = r.residual;
  b.H = MatrixXd::Zero(2, fs.dim());
  b.H.block<2, 2>(0, FilterState::offset(slot)) = r.jacobian;
  b.R = noise.r_bearing * Mat2::Identity();
  return b;
}

// Lucas-Kanade alignment started along the major axis of the predicted pixel
// covariance. Of the converged positions whose mean squared intensity error
// stays below max_mse, the one closest to the prediction wins.
inline std::optional<Vec2> search_patch(const PatchSet& patch, std::span<const Image> pyramid, const Vec2& uv,
                                        const Mat2& cov, double max_mse) {
  const Eigen::SelfAdjointEigenSolver<Mat2> es(cov);
  const double sigma = std::sqrt(std::max(es.eigenvalues()(1), 0.0));
  const Vec2 axis = es.eigenvectors().col(1);
  const double step = 2.0;
  const int k_max = std::min(20, static_cast<int>(std::ceil(3.0 * sigma / step)));
  const Mat2 info = (cov + Mat2::Identity()).inverse();
  std::optional<Vec2> best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 2 * k_max; ++k) {
    const int o = (k % 2 ? 1 : -1) * ((k + 1) / 2);
    const auto a = align_patch(patch, pyramid, uv + o * step * axis);
    if (!a) continue;
    const auto r = intensity_residual(patch, pyramid, *a);
    if (!r || r->residual.squaredNorm() / r->residual.size() > max_mse) continue;
    const Vec2 d = *a - uv;
    const double d2 = d.dot(info * d);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = *a;
    }
  }
  return best;
}

// Patch-intensity rows for one feature. The patch is first aligned by
// Lucas-Kanade around the predicted pixel; the intensity rows are
// linearized there and compressed by QR to two rows with unit-scaled noise.
inline std::optional<MeasurementBlock> intensity_block(const FilterState& fs, int slot,
                                                       std::span<const Image> pyramid,
                                                       const CameraIntrinsics& intr, const NoiseConfig& noise) {
  const FeatureSlot& fslot = fs.slots[slot];
  if (!fslot.patch) return std::nullopt;
  const Projection proj = project(fslot.f.bearing, intr);
  if (!proj.ok()) return std::nullopt;
  const int off = FilterState::offset(slot);
  const Mat2 cov = proj.jacobian * fs.P.block<2, 2>(off, off) * proj.jacobian.transpose();
  const auto aligned = search_patch(*fslot.patch, pyramid, proj.uv, cov, 9.0 * noise.r_intensity);
  if (!aligned) return std::nullopt;
  auto r = intensity_residual(*fslot.patch, pyramid, *aligned);
  if (!r) return std::nullopt;
  // Stacked model: 0 = r + G (uv(x) - aligned), uv(x) ~ uv_hat + J dq.
  const VectorXd full_res = -(r->residual + r->gradient * (proj.uv - *aligned));
  Eigen::HouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, 2>> qr(r->gradient);
  const Mat2 rg = qr.matrixQR().topLeftCorner<2, 2>().triangularView<Eigen::Upper>();
  if (std::abs(rg.determinant()) < 1e-6) return std::nullopt;
  const VectorXd qty = qr.householderQ().transpose() * full_res;
  MeasurementBlock b;
  b.kind = RowKind::kFeature;
  b.slot = slot;
  b.residual = qty.head<2>();
  b.H = MatrixXd::Zero(2, fs.dim());
  b.H.block<2, 2>(0, FilterState::offset(slot)) = rg * proj.jacobian;
  b.R = noise.r_intensity * Mat2::Identity() + noise.r_pixel * rg * rg.transpose();
  return b;
}

// Zero velocity and zero corrected rate while the vehicle stands still.
inline MeasurementBlock standstill_block(const FilterState& fs, const ImuSample& imu, const NoiseConfig& noise) {
  MeasurementBlock b;
  b.kind = RowKind::kStandstill;
  b.residual = VectorXd::Zero(6);
  b.residual.head<3>() = -fs.nav.v;
  b.residual.tail<3>() = -correct_gyro(imu.omega, fs.params);
  b.H = MatrixXd::Zero(6, fs.dim());
  b.H.block<3, 3>(0, nav_index::kVel) = Mat3::Identity();
  b.R = MatrixXd::Zero(6, 6);
  b.R.diagonal().head<3>().setConstant(noise.r_standstill_vel);
  b.R.diagonal().tail<3>().setConstant(noise.r_standstill_rate);
  b.D = MatrixXd::Zero(6, 6);
  b.D.bottomRows<3>() = corrected_rate_jacobian(imu.omega, fs.params);
  return b;
}

// Tracks how long the wheel speed has been exactly zero.
class StandstillDetector {
 public:
  explicit StandstillDetector(double min_duration = 0.5) : min_duration_(min_duration) {}

  bool update(double t, double v_x_m) {
    if (v_x_m != 0.0) {
      since_ = std::numeric_limits<double>::quiet_NaN();
      return false;
    }
    if (std::isnan(since_)) since_ = t;
    return t - since_ >= min_duration_;
  }

 private:
  double min_duration_;
  double since_ = std::numeric_limits<double>::quiet_NaN();
};

inline void append_standstill_rows(const FilterState& fs, const ImuSample& imu, const NoiseConfig& noise,
                                   bool standing_still, MeasurementBatch& batch) {
  if (standing_still) batch.blocks.push_back(standstill_block(fs, imu, noise));
}

// --- feature management ----------------------------------------------------------------

inline void clear_slot(FilterState& fs, int slot) {
  const int o = FilterState::offset(slot);
  const int n = fs.dim();
  fs.P.middleRows<3>(o).setZero();
  fs.P.middleCols<3>(o).setZero();
  fs.P.block<3, 3>(o, o).setIdentity();
  for (int c = 0; c < n; ++c)
    if (c < o || c >= o + 3) fs.P(c, c) = std::max(fs.P(c, c), 0.0);
  fs.upsilon.middleRows<3>(o).setZero();
  fs.slots[slot] = FeatureSlot{};
}

inline void init_slot(FilterState& fs, int slot, long track_id, const Bearing& bearing, double bearing_sigma,
                      const NoiseConfig& noise) {
  clear_slot(fs, slot);
  const int o = FilterState::offset(slot);
  FeatureSlot& s = fs.slots[slot];
  s.active = true;
  s.track_id = track_id;
  s.f.bearing = bearing;
  s.f.inv_depth = noise.init_inv_depth;
  fs.P.block<3, 3>(o, o) = Eigen::DiagonalMatrix<double, 3>(
      bearing_sigma * bearing_sigma, bearing_sigma * bearing_sigma,
      noise.init_inv_depth_sigma * noise.init_inv_depth_sigma);
}

inline bool slot_unhealthy(const FilterState& fs, int slot, const NoiseConfig& noise) {
  const FeatureSlot& s = fs.slots[slot];
  const int o = FilterState::offset(slot);
  const Mat2 cov = fs.P.block<2, 2>(o, o);
  const double max_var = Eigen::SelfAdjointEigenSolver<Mat2>(cov, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const bool at_bounds = s.f.inv_depth <= kInverseDepthFloor || s.f.inv_depth >= kInverseDepthCeiling;
  return std::sqrt(std::max(max_var, 0.0)) > noise.max_bearing_sigma || at_bounds;
}

struct FeatureEvents {
  int dropped = 0;
  int initialized = 0;
};

// Bearing mode: frees slots whose track is gone or unhealthy, then fills
// free slots with untracked observations closest to the optical axis.
inline FeatureEvents manage_features(FilterState& fs, std::span<const ObservedBearing> frame,
                                     const CameraIntrinsics& intr, const NoiseConfig& noise) {
  FeatureEvents ev;
  std::map<long, const ObservedBearing*> by_id;
  for (const auto& ob : frame) by_id[ob.id] = &ob;
  for (int j = 0; j < static_cast<int>(fs.slots.size()); ++j) {
    FeatureSlot& s = fs.slots[j];
    if (!s.active) continue;
    const bool seen = by_id.count(s.track_id) > 0;
    const bool in_view = project(s.f.bearing, intr).ok();
    if (!seen || !in_view || slot_unhealthy(fs, j, noise)) {
      clear_slot(fs, j);
      ++ev.dropped;
    }
  }
  std::vector<const ObservedBearing*> candidates;
  for (const auto& ob : frame) {
    const bool tracked = std::any_of(fs.slots.begin(), fs.slots.end(),
                                     [&](const FeatureSlot& s) { return s.active && s.track_id == ob.id; });
    if (!tracked && project(ob.bearing, intr).ok()) candidates.push_back(&ob);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const ObservedBearing* a, const ObservedBearing* b) {
    const double za = a->bearing.direction().z();
    const double zb = b->bearing.direction().z();
    if (za != zb) return za > zb;
    return a->id < b->id;
  });
  size_t next = 0;
  for (int j = 0; j < static_cast<int>(fs.slots.size()) && next < candidates.size(); ++j) {
    if (fs.slots[j].active) continue;
    init_slot(fs, j, candidates[next]->id, candidates[next]->bearing, noise.init_bearing_sigma, noise);
    fs.slots[j].age = 0;
    ++next;
    ++ev.initialized;
  }
  for (auto& s : fs.slots)
    if (s.active) ++s.age;
  return ev;
}

struct ImageFeatureConfig {
  DetectorConfig detector;
  int patch_levels = 2;
  int patch_size = 8;
  int max_misses = 2;
};

// Image mode: drops features that left the image, failed to track too often
// or became unhealthy, then detects FAST corners away from the tracked ones.
inline FeatureEvents manage_features(FilterState& fs, std::span<const Image> pyramid, const CameraIntrinsics& intr,
                                     const NoiseConfig& noise, const ImageFeatureConfig& cfg, long& next_track_id) {
  FeatureEvents ev;
  std::vector<Vec2> mask;
  const double margin = cfg.detector.border;
  for (int j = 0; j < static_cast<int>(fs.slots.size()); ++j) {
    FeatureSlot& s = fs.slots[j];
    if (!s.active) continue;
    const Projection proj = project(s.f.bearing, intr);
    if (!proj.ok() || !intr.contains(proj.uv, margin) || s.misses > cfg.max_misses || slot_unhealthy(fs, j, noise)) {
      clear_slot(fs, j);
      ++ev.dropped;
      continue;
    }
    mask.push_back(proj.uv);
  }
  const int free_slots = static_cast<int>(fs.slots.size()) - fs.active_count();
  if (free_slots > 0 && !pyramid.empty()) {
    const std::vector<Vec2> found = detect_features(pyramid[0], free_slots, mask, cfg.detector);
    size_t next = 0;
    for (int j = 0; j < static_cast<int>(fs.slots.size()) && next < found.size(); ++j) {
      if (fs.slots[j].active) continue;
      const Vec2& uv = found[next++];
      auto patch = extract_patch(pyramid, uv, cfg.patch_levels, cfg.patch_size);
      if (!patch) continue;
      Bearing b;
      try {
        b = unproject(uv, intr);
      } catch (const std::runtime_error&) {
        continue;
      }
      const double sigma = noise.init_bearing_sigma;
      init_slot(fs, j, next_track_id++, b, sigma, noise);
      fs.slots[j].patch = std::move(patch);
      ++ev.initialized;
    }
  }
  for (auto& s : fs.slots)
    if (s.active) ++s.age;
  return ev;
}

// --- health ----------------------------------------------------------------------------

struct CovarianceHealth {
  double max_asymmetry = 0.0;
  double min_eigenvalue = 0.0;
};

inline double min_eigenvalue(const MatrixXd& m) {
  const MatrixXd sym = 0.5 * (m + m.transpose());
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(sym, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

// Cheap PSD check: succeeds iff M + tol I admits a Cholesky factorization.
inline bool psd_within(const MatrixXd& m, double tol) {
  MatrixXd shifted = 0.5 * (m + m.transpose());
  shifted.diagonal().array() += tol;
  return Eigen::LLT<MatrixXd>(shifted).info() == Eigen::Success;
}

inline double max_asymmetry(const MatrixXd& m) { return (m - m.transpose()).cwiseAbs().maxCoeff(); }

}  // namespace vigcal
