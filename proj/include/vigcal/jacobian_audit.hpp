#pragma once

// Finite-difference audit of every analytic Jacobian used by the filter.
//
// Dynamics blocks are checked by flow differencing: nominal and perturbed
// states are integrated forward and backward over a short interval with an
// independent RK4 of the nonlinear model, their error-state difference is
// taken with boxminus, and the result is central-differenced in both the
// time step and the perturbation size.

#include <vigcal/camera.hpp>
#include <vigcal/dynamics.hpp>
#include <vigcal/features.hpp>
#include <vigcal/geom.hpp>
#include <vigcal/measurement.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace vigcal {

struct AuditConfig {
  Vec3 omega_m = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
  NavState nav;
  GyroParams params;
  FeatureState feature;
  CameraExtrinsics ext;
  CameraIntrinsics intr;
  double rho_sg = 0.0024;
  double a_y = 0.0;
};

struct AuditOptions {
  double time_step = 2e-5;
  double epsilon = 1e-4;
  std::string perturb_block;  // adds perturb_amount to entry (0,0) of this analytic block
  double perturb_amount = 1e-2;
  double tolerance = 1e-4;
};

struct BlockResult {
  std::string name;
  double max_rel_error = 0.0;
  long configs = 0;
  bool pass() const { return max_rel_error <= tol; }
  double tol = 1e-4;
};

namespace audit {

// Relative error scaled by the larger of the numeric block norm and one.
inline double rel_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  const double scale = std::max(1.0, numeric.cwiseAbs().maxCoeff());
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

struct FlowState {
  NavState nav;
  UnitQuaternion qf = UnitQuaternion::Identity();
  double rho = 0.1;
};

struct FlowRate {
  Vec3 dv, dp;
  Eigen::Vector4d dq, dqf;
  double drho;
};

// Nonlinear model written out directly: strapdown equations for the vehicle,
// landmark-in-camera kinematics for the feature (l_dot = -w x l - v_c).
inline FlowRate flow_rate(const FlowState& s, const Vec3& omega, const Vec3& accel, const CameraExtrinsics& ext,
                          const GravityModel& g) {
  FlowRate r;
  const Mat3 R = s.nav.q.normalized().toRotationMatrix();
  r.dv = accel - omega.cross(s.nav.v) + R.transpose() * g.g;
  r.dp = R * s.nav.v;
  const Eigen::Quaterniond qd = s.nav.q * Eigen::Quaterniond(0.0, omega.x(), omega.y(), omega.z());
  r.dq << 0.5 * qd.w(), 0.5 * qd.x(), 0.5 * qd.y(), 0.5 * qd.z();

  const Vec3 wc = ext.R_CB * omega;
  const Vec3 vc = ext.R_CB * (s.nav.v + omega.cross(ext.lever));
  const Vec3 p = s.qf.normalized() * Vec3::UnitX();
  const Vec3 pdot = -wc.cross(p) - s.rho * (vc - p * p.dot(vc));
  const Vec3 wperp = p.cross(pdot);  // minimal rotation rate of the bearing frame
  const Eigen::Quaterniond qfd = Eigen::Quaterniond(0.0, wperp.x(), wperp.y(), wperp.z()) * s.qf;
  r.dqf << 0.5 * qfd.w(), 0.5 * qfd.x(), 0.5 * qfd.y(), 0.5 * qfd.z();
  r.drho = s.rho * s.rho * p.dot(vc);
  return r;
}

inline FlowState flow_axpy(const FlowState& s, const FlowRate& r, double h) {
  FlowState o;
  o.nav.v = s.nav.v + h * r.dv;
  o.nav.p = s.nav.p + h * r.dp;
  o.nav.q = Eigen::Quaterniond(s.nav.q.w() + h * r.dq(0), s.nav.q.x() + h * r.dq(1), s.nav.q.y() + h * r.dq(2),
                               s.nav.q.z() + h * r.dq(3));
  o.qf = Eigen::Quaterniond(s.qf.w() + h * r.dqf(0), s.qf.x() + h * r.dqf(1), s.qf.y() + h * r.dqf(2),
                            s.qf.z() + h * r.dqf(3));
  o.rho = s.rho + h * r.drho;
  return o;
}

inline FlowState flow(const FlowState& s, const Vec3& omega, const Vec3& accel, const CameraExtrinsics& ext,
                      double h) {
  const GravityModel g;
  const FlowRate k1 = flow_rate(s, omega, accel, ext, g);
  const FlowRate k2 = flow_rate(flow_axpy(s, k1, 0.5 * h), omega, accel, ext, g);
  const FlowRate k3 = flow_rate(flow_axpy(s, k2, 0.5 * h), omega, accel, ext, g);
  const FlowRate k4 = flow_rate(flow_axpy(s, k3, h), omega, accel, ext, g);
  FlowRate k;
  k.dv = (k1.dv + 2 * k2.dv + 2 * k3.dv + k4.dv) / 6.0;
  k.dp = (k1.dp + 2 * k2.dp + 2 * k3.dp + k4.dp) / 6.0;
  k.dq = (k1.dq + 2 * k2.dq + 2 * k3.dq + k4.dq) / 6.0;
  k.dqf = (k1.dqf + 2 * k2.dqf + 2 * k3.dqf + k4.dqf) / 6.0;
  k.drho = (k1.drho + 2 * k2.drho + 2 * k3.drho + k4.drho) / 6.0;
  FlowState o = flow_axpy(s, k, h);
  o.nav.q.normalize();
  o.qf.normalize();
  return o;
}

// Error state (dv, dtheta, dp, dbearing, drho) of a relative to b.
inline Eigen::Matrix<double, 12, 1> flow_error(const FlowState& a, const FlowState& b) {
  Eigen::Matrix<double, 12, 1> e;
  e.head<9>() = nav_boxminus(a.nav, b.nav);
  e.segment<2>(9) = s2_boxminus(Bearing(a.qf), Bearing(b.qf));
  e(11) = a.rho - b.rho;
  return e;
}

inline FlowState perturb(const FlowState& s, int i, double eps) {
  FlowState o = s;
  if (i < 9) {
    Vec9 dx = Vec9::Zero();
    dx(i) = eps;
    o.nav = nav_boxplus(s.nav, dx);
  } else if (i < 11) {
    Vec2 d = Vec2::Zero();
    d(i - 9) = eps;
    o.qf = s2_boxplus(Bearing(s.qf), d).quaternion();
  } else {
    o.rho += eps;
  }
  return o;
}

// Column i of the continuous error-state Jacobian of the flow.
inline Eigen::Matrix<double, 12, 1> flow_column(const FlowState& s, const Vec3& omega, const Vec3& accel,
                                                const CameraExtrinsics& ext, int i, const AuditOptions& o) {
  const double h = o.time_step;
  const double e = o.epsilon;
  const FlowState sp = perturb(s, i, e);
  const FlowState sm = perturb(s, i, -e);
  const FlowState nf = flow(s, omega, accel, ext, h);
  const FlowState nb = flow(s, omega, accel, ext, -h);
  const auto dpf = flow_error(flow(sp, omega, accel, ext, h), nf);
  const auto dpb = flow_error(flow(sp, omega, accel, ext, -h), nb);
  const auto dmf = flow_error(flow(sm, omega, accel, ext, h), nf);
  const auto dmb = flow_error(flow(sm, omega, accel, ext, -h), nb);
  return ((dpf - dpb) - (dmf - dmb)) / (4.0 * h * e);
}

// Column j of the parameter Jacobian of the flow.
inline Eigen::Matrix<double, 12, 1> flow_param_column(const FlowState& s, const AuditConfig& c, int j,
                                                      const AuditOptions& o) {
  const double h = o.time_step;
  const double e = o.epsilon;
  Vec6 xp = c.params.to_vector(), xm = c.params.to_vector();
  xp(j) += e;
  xm(j) -= e;
  const Vec3 wp = correct_gyro(c.omega_m, GyroParams::from_vector(xp));
  const Vec3 wm = correct_gyro(c.omega_m, GyroParams::from_vector(xm));
  const Vec3 w0 = correct_gyro(c.omega_m, c.params);
  const FlowState nf = flow(s, w0, c.accel, c.ext, h);
  const FlowState nb = flow(s, w0, c.accel, c.ext, -h);
  const auto dpf = flow_error(flow(s, wp, c.accel, c.ext, h), nf);
  const auto dpb = flow_error(flow(s, wp, c.accel, c.ext, -h), nb);
  const auto dmf = flow_error(flow(s, wm, c.accel, c.ext, h), nf);
  const auto dmb = flow_error(flow(s, wm, c.accel, c.ext, -h), nb);
  return ((dpf - dpb) - (dmf - dmb)) / (4.0 * h * e);
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

// Smooth analytic intensity field for the camera-chain check.
struct SmoothImage {
  double a = 0.03, b = 0.02, c = 0.015, d = -0.025;
  double value(const Vec2& uv) const { return 100.0 * std::sin(a * uv.x() + b * uv.y()) + 50.0 * std::cos(c * uv.x() + d * uv.y()); }
  RowVec2 gradient(const Vec2& uv) const {
    const double s = 100.0 * std::cos(a * uv.x() + b * uv.y());
    const double t = -50.0 * std::sin(c * uv.x() + d * uv.y());
    return RowVec2(s * a + t * c, s * b + t * d);
  }
};

}  // namespace audit

inline AuditConfig random_audit_config(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto vec = [&](double s) { return Vec3(s * u(rng), s * u(rng), s * u(rng)); };
  AuditConfig c;
  c.omega_m = vec(1.0);
  c.accel = vec(10.0);
  c.nav.v = vec(20.0);
  c.nav.q = UnitQuaternion(audit::random_rotation(rng));
  c.nav.p = vec(100.0);
  c.params.bias = vec(0.02);
  c.params.scale_z = 1.0 + 0.1 * u(rng);
  c.params.misalign_yx = 0.05 * u(rng);
  c.params.misalign_xy = 0.05 * u(rng);
  c.ext.R_CB = audit::random_rotation(rng);
  c.ext.lever = vec(2.0);
  c.intr.k1 = 0.1 * u(rng);
  c.intr.k2 = 0.01 * u(rng);
  // bearing inside the central part of the image
  const Vec2 uv(c.intr.cx + 0.8 * c.intr.cx * u(rng), c.intr.cy + 0.8 * c.intr.cy * u(rng));
  c.feature.bearing = unproject(uv, c.intr);
  c.feature.inv_depth = std::exp(std::log(0.01) + (u(rng) + 1.0) * 0.5 * (std::log(1.0) - std::log(0.01)));
  c.rho_sg = 0.005 * (u(rng) + 1.0);
  c.a_y = 5.0 * u(rng);
  return c;
}

// Analytic blocks for one configuration, keyed by block name.
inline std::map<std::string, Eigen::MatrixXd> analytic_blocks(const AuditConfig& c) {
  std::map<std::string, Eigen::MatrixXd> b;
  const Vec3 omega = correct_gyro(c.omega_m, c.params);
  b["nav_F"] = nav_jacobian(c.nav, omega);
  b["nav_Psi"] = nav_param_jacobian(c.nav, c.omega_m, c.params);
  const CameraTwist tw = camera_twist(c.nav, omega, c.ext);
  const FeatureJacobians fj = feature_jacobians(c.feature, tw);
  b["feature_nav_F"] = feature_nav_jacobian(fj, c.ext);
  b["feature_self_F"] = feature_self_jacobian(fj);
  b["feature_Psi"] = feature_param_jacobian(fj, c.ext, c.omega_m, c.params);
  b["corrected_rate"] = corrected_rate_jacobian(c.omega_m, c.params);
  b["vehicle_H"] = vehicle_measurement_jacobian(c.rho_sg, c.a_y);
  b["bearing_H"] = Mat2::Identity();
  b["projection"] = project(c.feature.bearing, c.intr).jacobian;
  const audit::SmoothImage img;
  b["camera_chain"] = intensity_chain(c.feature.bearing, c.intr, [&](const Vec2& uv) { return img.gradient(uv); });
  return b;
}

inline std::map<std::string, Eigen::MatrixXd> numeric_blocks(const AuditConfig& c, const AuditOptions& o) {
  std::map<std::string, Eigen::MatrixXd> b;
  const double e = o.epsilon;
  const Vec3 omega = correct_gyro(c.omega_m, c.params);
  audit::FlowState s;
  s.nav = c.nav;
  s.qf = c.feature.bearing.quaternion();
  s.rho = c.feature.inv_depth;
  Eigen::Matrix<double, 12, 12> F;
  for (int i = 0; i < 12; ++i) F.col(i) = audit::flow_column(s, omega, c.accel, c.ext, i, o);
  Eigen::Matrix<double, 12, 6> psi;
  for (int j = 0; j < 6; ++j) psi.col(j) = audit::flow_param_column(s, c, j, o);
  b["nav_F"] = F.topLeftCorner<9, 9>();
  b["nav_Psi"] = psi.topRows<9>();
  b["feature_nav_F"] = F.bottomLeftCorner<3, 9>();
  b["feature_self_F"] = F.bottomRightCorner<3, 3>();
  b["feature_Psi"] = psi.bottomRows<3>();

  Eigen::Matrix<double, 3, 6> dw;
  for (int j = 0; j < 6; ++j) {
    Vec6 xp = c.params.to_vector(), xm = c.params.to_vector();
    xp(j) += e;
    xm(j) -= e;
    dw.col(j) = (correct_gyro(c.omega_m, GyroParams::from_vector(xp)) -
                 correct_gyro(c.omega_m, GyroParams::from_vector(xm))) / (2.0 * e);
  }
  b["corrected_rate"] = dw;

  Mat3 hv;
  for (int j = 0; j < 3; ++j) {
    Vec3 vp = c.nav.v, vm = c.nav.v;
    vp(j) += e;
    vm(j) -= e;
    hv.col(j) = (vehicle_velocity_prediction(vp, c.a_y, c.rho_sg) - vehicle_velocity_prediction(vm, c.a_y, c.rho_sg)) /
                (2.0 * e);
  }
  b["vehicle_H"] = hv;

  // bearing rows: residual r(d) = observed boxminus (b boxplus d), H = -dr/dd at observed = b
  Mat2 hb, pj;
  Eigen::Matrix<double, 1, 2> chain;
  const audit::SmoothImage img;
  for (int j = 0; j < 2; ++j) {
    Vec2 d = Vec2::Zero();
    d(j) = e;
    const Bearing bp = s2_boxplus(c.feature.bearing, d);
    const Bearing bm = s2_boxplus(c.feature.bearing, -d);
    hb.col(j) = -(s2_boxminus(c.feature.bearing, bp) - s2_boxminus(c.feature.bearing, bm)) / (2.0 * e);
    const Vec2 up = project(bp, c.intr).uv, um = project(bm, c.intr).uv;
    pj.col(j) = (up - um) / (2.0 * e);
    chain(j) = (img.value(up) - img.value(um)) / (2.0 * e);
  }
  b["bearing_H"] = hb;
  b["projection"] = pj;
  b["camera_chain"] = chain;
  return b;
}

struct AuditReport {
  std::vector<BlockResult> blocks;
  long configurations = 0;

  bool pass() const {
    for (const auto& b : blocks)
      if (!b.pass()) return false;
    return true;
  }

  std::string table() const {
    std::ostringstream o;
    char line[128];
    std::snprintf(line, sizeof line, "%-16s %14s %8s %6s\n", "block", "max_rel_error", "configs", "result");
    o << line;
    for (const auto& b : blocks) {
      std::snprintf(line, sizeof line, "%-16s %14.3e %8ld %6s\n", b.name.c_str(), b.max_rel_error, b.configs,
                    b.pass() ? "PASS" : "FAIL");
      o << line;
    }
    o << (pass() ? "all blocks pass" : "FAILED") << " (" << configurations << " configurations)\n";
    return o.str();
  }
};

inline AuditReport run_jacobian_audit(std::uint64_t seed, long n, const AuditOptions& opts = {}) {
  AuditReport rep;
  rep.configurations = n;
  if (n <= 0) return rep;
  std::mt19937_64 rng(seed);
  std::map<std::string, BlockResult> results;
  for (long k = 0; k < n; ++k) {
    const AuditConfig c = random_audit_config(rng);
    auto a = analytic_blocks(c);
    const auto num = numeric_blocks(c, opts);
    if (!opts.perturb_block.empty()) {
      auto it = a.find(opts.perturb_block);
      if (it != a.end()) it->second(0, 0) += opts.perturb_amount;
    }
    for (const auto& [name, m] : a) {
      BlockResult& r = results[name];
      r.name = name;
      r.tol = opts.tolerance;
      r.max_rel_error = std::max(r.max_rel_error, audit::rel_error(m, num.at(name)));
      ++r.configs;
    }
  }
  for (auto& [name, r] : results) rep.blocks.push_back(r);
  return rep;
}

}  // namespace vigcal
