#pragma once

// Pinhole camera with two-coefficient radial distortion.

#include <vigcal/geom.hpp>

#include <cmath>
#include <stdexcept>

namespace vigcal {

struct CameraIntrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  double k1 = 0.0;
  double k2 = 0.0;
  int width = 640;
  int height = 480;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width && cy >= 0.0 && cy < height;
  }

  bool contains(const Vec2& uv, double margin = 0.0) const {
    return uv.x() >= margin && uv.y() >= margin && uv.x() <= width - 1 - margin &&
           uv.y() <= height - 1 - margin;
  }
};

enum class ProjectionStatus { kOk, kBehindCamera, kOutsideImage };

struct Projection {
  ProjectionStatus status = ProjectionStatus::kOk;
  Vec2 uv = Vec2::Zero();
  Mat2 d_uv_d_r = Mat2::Zero();    // distortion + focal
  Mat23 d_r_d_p = Mat23::Zero();   // perspective division
  Mat32 d_p_d_q = Mat32::Zero();   // bearing tangent
  Mat2 jacobian = Mat2::Zero();    // full chain w.r.t. the bearing tangent

  bool ok() const { return status == ProjectionStatus::kOk; }
};

inline Vec2 distort(const Vec2& r, const CameraIntrinsics& in) {
  const double r2 = r.squaredNorm();
  return r * (1.0 + in.k1 * r2 + in.k2 * r2 * r2);
}

inline Mat2 distort_jacobian(const Vec2& r, const CameraIntrinsics& in) {
  const double r2 = r.squaredNorm();
  const double d = 1.0 + in.k1 * r2 + in.k2 * r2 * r2;
  const double dd_dr2 = in.k1 + 2.0 * in.k2 * r2;
  return d * Mat2::Identity() + 2.0 * dd_dr2 * r * r.transpose();
}

inline Projection project(const Bearing& b, const CameraIntrinsics& in) {
  Projection out;
  const Vec3 p = b.direction();
  if (!(p.z() > 1e-6)) {
    out.status = ProjectionStatus::kBehindCamera;
    return out;
  }
  const double inv_z = 1.0 / p.z();
  const Vec2 r(p.x() * inv_z, p.y() * inv_z);
  const Vec2 rd = distort(r, in);
  out.uv = Vec2(in.fx * rd.x() + in.cx, in.fy * rd.y() + in.cy);
  out.d_uv_d_r = Eigen::DiagonalMatrix<double, 2>(in.fx, in.fy) * distort_jacobian(r, in);
  out.d_r_d_p << inv_z, 0.0, -p.x() * inv_z * inv_z,
                 0.0, inv_z, -p.y() * inv_z * inv_z;
  out.d_p_d_q = -skew(p) * projection_N(b);
  out.jacobian = out.d_uv_d_r * out.d_r_d_p * out.d_p_d_q;
  if (!in.contains(out.uv)) out.status = ProjectionStatus::kOutsideImage;
  return out;
}

// Newton inversion of the distortion; throws std::runtime_error when the
// iteration does not converge within 20 steps or the pixel lies beyond the
// maximum of the radial map.
inline Bearing unproject(const Vec2& uv, const CameraIntrinsics& in) {
  const Vec2 rd((uv.x() - in.cx) / in.fx, (uv.y() - in.cy) / in.fy);
  Vec2 r = rd;
  bool converged = false;
  for (int it = 0; it < 20; ++it) {
    const Vec2 res = distort(r, in) - rd;
    if (res.norm() < 1e-14) {
      converged = true;
      break;
    }
    const Mat2 j = distort_jacobian(r, in);
    if (std::abs(j.determinant()) < 1e-12) break;
    r -= j.inverse() * res;
    if (!r.allFinite()) break;
  }
  if (!converged) {
    const Vec2 res = distort(r, in) - rd;
    if (!r.allFinite() || res.norm() > 1e-10) {
      throw std::runtime_error("unproject: distortion inversion did not converge");
    }
  }
  // past the maximum of the radial map the inverse lands on the folded branch
  const double r2 = r.squaredNorm();
  if (1.0 + in.k1 * r2 + in.k2 * r2 * r2 <= 0.0 || 1.0 + 3.0 * in.k1 * r2 + 5.0 * in.k2 * r2 * r2 <= 0.0) {
    throw std::runtime_error("unproject: pixel outside the invertible distortion range");
  }
  return Bearing::from_direction(Vec3(r.x(), r.y(), 1.0));
}

}  // namespace vigcal
