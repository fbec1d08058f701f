#pragma once

// Trajectory accuracy: KITTI-style relative pose error over fixed path
// lengths and RMS absolute position error after rigid alignment.

#include <vigcal/dataset.hpp>
#include <vigcal/errors.hpp>
#include <vigcal/geom.hpp>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace vigcal {

struct AssociatedPoses {
  std::vector<PoseSample> est;
  std::vector<PoseSample> gt;
};

// Pairs every estimate with the nearest ground-truth timestamp within tol.
inline AssociatedPoses associate(const std::vector<PoseSample>& est, const std::vector<PoseSample>& gt,
                                 double tol = 0.01) {
  AssociatedPoses out;
  if (gt.empty()) return out;
  size_t j = 0;
  for (const auto& e : est) {
    while (j + 1 < gt.size() && std::abs(gt[j + 1].t - e.t) <= std::abs(gt[j].t - e.t)) ++j;
    if (std::abs(gt[j].t - e.t) <= tol) {
      out.est.push_back(e);
      out.gt.push_back(gt[j]);
    }
  }
  return out;
}

// Percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct RpeReport {
  double percentile_63 = 0.0;
  double percentile_95 = 0.0;
  double max = 0.0;
  size_t segments = 0;
  double segment_length = 100.0;
  std::vector<double> errors;  // per segment, %
};

inline Eigen::Isometry3d to_isometry(const PoseSample& p) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.linear() = quat_to_rot(p.q);
  t.translation() = p.p;
  return t;
}

// Dense segments: every associated pose starts one segment, ending at the
// first pose at least segment_length metres further along the ground truth.
inline RpeReport rpe(const std::vector<PoseSample>& est, const std::vector<PoseSample>& gt,
                     double segment_length = 100.0) {
  if (!(segment_length > 0.0)) throw std::invalid_argument("rpe: segment length must be positive");
  const AssociatedPoses a = associate(est, gt);
  if (a.gt.size() < 2) throw DataError("rpe: fewer than two associated poses");
  std::vector<double> dist(a.gt.size(), 0.0);
  for (size_t i = 1; i < a.gt.size(); ++i) dist[i] = dist[i - 1] + (a.gt[i].p - a.gt[i - 1].p).norm();
  if (dist.back() < 2.0 * segment_length) throw DataError("rpe: trajectory shorter than two segments");

  RpeReport rep;
  rep.segment_length = segment_length;
  std::vector<Eigen::Isometry3d> te(a.est.size()), tg(a.gt.size());
  for (size_t i = 0; i < a.gt.size(); ++i) {
    te[i] = to_isometry(a.est[i]);
    tg[i] = to_isometry(a.gt[i]);
  }
  size_t j = 0;
  for (size_t i = 0; i < a.gt.size(); ++i) {
    if (j < i) j = i;
    while (j < a.gt.size() && dist[j] - dist[i] < segment_length) ++j;
    if (j >= a.gt.size()) break;
    const Eigen::Isometry3d d_gt = tg[i].inverse() * tg[j];
    const Eigen::Isometry3d d_est = te[i].inverse() * te[j];
    const Eigen::Isometry3d err = d_est.inverse() * d_gt;
    rep.errors.push_back(100.0 * err.translation().norm() / segment_length);
  }
  rep.segments = rep.errors.size();
  rep.percentile_63 = percentile(rep.errors, 0.63);
  rep.percentile_95 = percentile(rep.errors, 0.95);
  rep.max = *std::max_element(rep.errors.begin(), rep.errors.end());
  return rep;
}

// RMS position error after rotation + translation alignment (no scale).
inline double ate_rmse(const std::vector<PoseSample>& est, const std::vector<PoseSample>& gt) {
  const AssociatedPoses a = associate(est, gt);
  const size_t n = a.gt.size();
  if (n < 3) throw DataError("ate: fewer than three associated poses");
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (size_t i = 0; i < n; ++i) {
    src.col(i) = a.est[i].p;
    dst.col(i) = a.gt[i].p;
  }
  const Eigen::Matrix3Xd centred = src.colwise() - src.rowwise().mean();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(centred).singularValues();
  if (!(sv(1) > 1e-9 * std::max(1.0, sv(0)))) throw DataError("ate: degenerate (collinear) alignment");
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  const Eigen::Matrix3Xd aligned = (t.topLeftCorner<3, 3>() * src).colwise() + t.topRightCorner<3, 1>();
  return std::sqrt((aligned - dst).colwise().squaredNorm().mean());
}

struct EvalReport {
  RpeReport rpe;
  double ate = 0.0;
  bool has_ate = false;
  size_t associated = 0;
};

inline EvalReport evaluate(const std::vector<PoseSample>& est, const std::vector<PoseSample>& gt,
                           double segment_length = 100.0) {
  EvalReport r;
  r.rpe = rpe(est, gt, segment_length);
  r.associated = associate(est, gt).gt.size();
  try {
    r.ate = ate_rmse(est, gt);
    r.has_ate = true;
  } catch (const DataError&) {
    r.has_ate = false;
  }
  return r;
}

inline std::string report_text(const EvalReport& r) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(4);
  o << "# trajectory evaluation\n";
  o << "# RPE percentiles are taken over dense " << r.rpe.segment_length << " m segments\n";
  o << "RPE 63rd percentile [%]: " << r.rpe.percentile_63 << '\n';
  o << "RPE 95th percentile [%]: " << r.rpe.percentile_95 << '\n';
  o << "RPE max [%]:             " << r.rpe.max << '\n';
  o << "RPE segments:            " << r.rpe.segments << '\n';
  if (r.has_ate) o << "ATE RMSE [m]:            " << r.ate << '\n';
  o << "associated poses:        " << r.associated << "\n\n";
  o.precision(9);
  o << "rpe_p63=" << r.rpe.percentile_63 << '\n';
  o << "rpe_p95=" << r.rpe.percentile_95 << '\n';
  o << "rpe_max=" << r.rpe.max << '\n';
  o << "rpe_segments=" << r.rpe.segments << '\n';
  if (r.has_ate) o << "ate_rmse=" << r.ate << '\n';
  o << "associated=" << r.associated << '\n';
  return o.str();
}

}  // namespace vigcal
