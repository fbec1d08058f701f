#pragma once

// Planar vehicle trajectories with clothoid-blended turns, single-track
// lateral kinematics and synthetic IMU, wheel and camera streams.

#include <vigcal/camera.hpp>
#include <vigcal/dataset.hpp>
#include <vigcal/dynamics.hpp>
#include <vigcal/errors.hpp>
#include <vigcal/features.hpp>
#include <vigcal/geom.hpp>
#include <vigcal/image.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vigcal {

enum class SegmentKind { kStraight, kArc, kStop };

struct Segment {
  SegmentKind kind = SegmentKind::kStraight;
  double length = 0.0;    // straight
  double radius = 0.0;    // arc
  double angle = 0.0;     // arc, rad, positive turns left
  double speed = 0.0;     // straight or arc
  double duration = 0.0;  // stop

  static Segment straight(double length, double speed) {
    return Segment{SegmentKind::kStraight, length, 0.0, 0.0, speed, 0.0};
  }
  static Segment arc(double radius, double angle, double speed) {
    return Segment{SegmentKind::kArc, 0.0, radius, angle, speed, 0.0};
  }
  static Segment stop(double duration) { return Segment{SegmentKind::kStop, 0.0, 0.0, 0.0, 0.0, duration}; }

  double path_length() const {
    switch (kind) {
      case SegmentKind::kStraight: return length;
      case SegmentKind::kArc: return radius * std::abs(angle);
      case SegmentKind::kStop: return 0.0;
    }
    return 0.0;
  }
};

struct TrajectorySpec {
  std::vector<Segment> segments;
  double rate_hz = 100.0;
  double side_slip_gradient = 0.0024;
  double max_accel = 1.5;           // peak longitudinal acceleration of speed changes
  double blend_length = 10.0;       // clothoid length centred on each curvature change
  double max_lateral_accel = 8.0;
  double initial_heading = 0.0;
};

struct TrajectorySample {
  double t = 0.0;
  NavState nav;               // v is body-frame velocity
  Vec3 omega = Vec3::Zero();  // true body rate
  Vec3 specific_force = Vec3::Zero();
  double s = 0.0;             // arc length
};

// 4 x 200 m straights joined by 90 degree left turns. The first lap stops
// for 10 s halfway along the third straight, driven at turn speed.
inline TrajectorySpec urban_loop(int laps = 1, double speed = 14.0, double turn_radius = 35.0,
                                 double turn_speed = 11.0) {
  TrajectorySpec spec;
  const double quarter = std::numbers::pi / 2.0;
  for (int lap = 0; lap < laps; ++lap) {
    for (int side = 0; side < 4; ++side) {
      if (side == 2 && lap == 0) {
        spec.segments.push_back(Segment::straight(100.0, turn_speed));
        spec.segments.push_back(Segment::stop(10.0));
        spec.segments.push_back(Segment::straight(100.0, turn_speed));
      } else {
        spec.segments.push_back(Segment::straight(200.0, speed));
      }
      spec.segments.push_back(Segment::arc(turn_radius, quarter, turn_speed));
    }
  }
  return spec;
}

namespace detail {

// sin^2 acceleration pulse from u0 to u1 over duration T, or constant speed.
struct SpeedPhase {
  double t0 = 0.0;
  double duration = 0.0;
  double s0 = 0.0;
  double u0 = 0.0;
  double u1 = 0.0;

  void eval(double t, double& u, double& du, double& s) const {
    const double tau = std::clamp(t - t0, 0.0, duration);
    const double d = u1 - u0;
    if (d == 0.0 || duration <= 0.0) {
      u = u0;
      du = 0.0;
      s = s0 + u0 * tau;
      return;
    }
    const double w = 2.0 * std::numbers::pi / duration;
    u = u0 + d * (tau / duration - std::sin(w * tau) / (2.0 * std::numbers::pi));
    du = d / duration * (1.0 - std::cos(w * tau));
    s = s0 + u0 * tau + d * (tau * tau / (2.0 * duration) - (1.0 - std::cos(w * tau)) / (duration * w * w));
  }
  double end_s() const {
    double u, du, s;
    eval(t0 + duration, u, du, s);
    return s;
  }
};

}  // namespace detail

// Analytic speed and heading profile; lateral velocity and position are
// integrated numerically by generate_trajectory.
class TrajectoryProfile {
 public:
  explicit TrajectoryProfile(const TrajectorySpec& spec) : spec_(spec) {
    validate();
    build_curvature();
    build_speed();
  }

  double duration() const { return phases_.empty() ? 0.0 : phases_.back().t0 + phases_.back().duration; }
  double total_length() const { return knots_s_.back(); }

  void speed_at(double t, double& u, double& du, double& s) const {
    auto it = std::upper_bound(phases_.begin(), phases_.end(), t,
                               [](double tt, const detail::SpeedPhase& p) { return tt < p.t0; });
    const auto& ph = it == phases_.begin() ? phases_.front() : *std::prev(it);
    ph.eval(t, u, du, s);
  }

  double curvature(double s) const {
    const size_t k = knot(s);
    if (k + 1 >= knots_s_.size()) return knots_k_.back();
    const double ds = knots_s_[k + 1] - knots_s_[k];
    const double a = ds > 0.0 ? (s - knots_s_[k]) / ds : 0.0;
    return knots_k_[k] + a * (knots_k_[k + 1] - knots_k_[k]);
  }

  double heading(double s) const {
    const size_t k = knot(s);
    const double d = s - knots_s_[k];
    if (k + 1 >= knots_s_.size()) return knots_psi_[k] + knots_k_[k] * d;
    const double ds = knots_s_[k + 1] - knots_s_[k];
    const double slope = ds > 0.0 ? (knots_k_[k + 1] - knots_k_[k]) / ds : 0.0;
    return knots_psi_[k] + knots_k_[k] * d + 0.5 * slope * d * d;
  }

 private:
  void validate() const {
    if (spec_.segments.empty()) throw ConfigError("trajectory: no segments");
    if (!(spec_.rate_hz >= 50.0)) throw ConfigError("trajectory: sample rate must be >= 50 Hz");
    if (!(spec_.max_accel > 0.0) || !(spec_.blend_length >= 0.0)) throw ConfigError("trajectory: bad limits");
    if (spec_.side_slip_gradient < 0.0) throw ConfigError("trajectory: negative side-slip gradient");
    for (size_t i = 0; i < spec_.segments.size(); ++i) {
      const Segment& g = spec_.segments[i];
      const std::string id = "trajectory segment " + std::to_string(i);
      if (g.speed < 0.0) throw ConfigError(id + ": negative speed");
      switch (g.kind) {
        case SegmentKind::kStraight:
          if (!(g.length > 0.0) || !(g.speed > 0.0)) throw ConfigError(id + ": straight needs length and speed");
          break;
        case SegmentKind::kArc:
          if (!(g.radius > 1.0)) throw ConfigError(id + ": radius must exceed 1 m");
          if (!(g.speed > 0.0) || g.angle == 0.0) throw ConfigError(id + ": arc needs speed and angle");
          if (g.speed * g.speed / g.radius > spec_.max_lateral_accel) {
            throw ConfigError(id + ": infeasible, lateral acceleration " +
                              std::to_string(g.speed * g.speed / g.radius) + " m/s^2");
          }
          if (g.path_length() < spec_.blend_length) throw ConfigError(id + ": arc shorter than blend");
          break;
        case SegmentKind::kStop:
          if (!(g.duration > 0.0)) throw ConfigError(id + ": stop needs a duration");
          if (i == 0) throw ConfigError(id + ": trajectory cannot begin with a stop");
          break;
      }
    }
  }

  size_t knot(double s) const {
    auto it = std::upper_bound(knots_s_.begin(), knots_s_.end(), s);
    if (it == knots_s_.begin()) return 0;
    return static_cast<size_t>(std::distance(knots_s_.begin(), it) - 1);
  }

  // Piecewise-linear curvature with ramps centred on segment boundaries.
  void build_curvature() {
    std::vector<double> bounds{0.0};
    std::vector<double> kappa;
    for (const auto& g : spec_.segments) {
      if (g.kind == SegmentKind::kStop) continue;
      const double k = g.kind == SegmentKind::kArc ? std::copysign(1.0 / g.radius, g.angle) : 0.0;
      if (!kappa.empty() && kappa.back() == k) {
        bounds.back() += g.path_length();
        continue;
      }
      kappa.push_back(k);
      bounds.push_back(bounds.back() + g.path_length());
    }
    const double h = 0.5 * spec_.blend_length;
    knots_s_ = {0.0};
    knots_k_ = {kappa.front()};
    for (size_t i = 1; i < kappa.size(); ++i) {
      const double b = bounds[i];
      if (h > 0.0) {
        knots_s_.push_back(b - h);
        knots_k_.push_back(kappa[i - 1]);
        knots_s_.push_back(b + h);
        knots_k_.push_back(kappa[i]);
      } else {
        knots_s_.push_back(b);
        knots_k_.push_back(kappa[i]);
      }
    }
    knots_s_.push_back(bounds.back());
    knots_k_.push_back(kappa.back());
    knots_psi_.assign(knots_s_.size(), spec_.initial_heading);
    for (size_t k = 1; k < knots_s_.size(); ++k) {
      const double ds = knots_s_[k] - knots_s_[k - 1];
      knots_psi_[k] = knots_psi_[k - 1] + 0.5 * (knots_k_[k - 1] + knots_k_[k]) * ds;
    }
    boundaries_ = bounds;
  }

  void add_cruise(double& t, double& s, double u, double s_end) {
    if (s_end < s - 1e-9) throw ConfigError("trajectory: segment too short for its speed changes");
    const double d = std::max(0.0, s_end - s);
    phases_.push_back(detail::SpeedPhase{t, d / u, s, u, u});
    t += d / u;
    s = s_end;
  }

  void add_transition(double& t, double& s, double u0, double u1) {
    if (u0 == u1) return;
    const double T = 2.0 * std::abs(u1 - u0) / spec_.max_accel;
    phases_.push_back(detail::SpeedPhase{t, T, s, u0, u1});
    t += T;
    s = phases_.back().end_s();
  }

  static double transition_distance(double u0, double u1, double a) {
    return (u0 + u1) * std::abs(u1 - u0) / a;
  }

  // Speed changes take place on straights, outside the curvature blends.
  void build_speed() {
    const auto& segs = spec_.segments;
    const double h = 0.5 * spec_.blend_length;
    const double a = spec_.max_accel;
    double t = 0.0, s = 0.0;
    double u = segs.front().speed;
    for (size_t i = 0; i < segs.size(); ++i) {
      const Segment& g = segs[i];
      const double s_start = s;
      if (g.kind == SegmentKind::kStop) {
        if (u != 0.0) throw ConfigError("trajectory: stop reached at nonzero speed");
        phases_.push_back(detail::SpeedPhase{t, g.duration, s, 0.0, 0.0});
        t += g.duration;
        continue;
      }
      const double s_end = s_start + g.path_length();
      if (g.kind == SegmentKind::kArc) {
        if (std::abs(u - g.speed) > 1e-12) {
          throw ConfigError("trajectory: arc speed must be reached on the preceding straight");
        }
        add_cruise(t, s, u, s_end);
        continue;
      }
      const bool prev_arc = i > 0 && segs[i - 1].kind == SegmentKind::kArc;
      const bool next_arc = i + 1 < segs.size() && segs[i + 1].kind == SegmentKind::kArc;
      double u_next = g.speed;
      if (i + 1 < segs.size()) u_next = segs[i + 1].kind == SegmentKind::kStop ? 0.0 : segs[i + 1].speed;
      const double acc_start = s_start + (prev_arc ? h : 0.0);
      const double dec_end = s_end - (next_arc ? h : 0.0);
      const double need = transition_distance(u, g.speed, a) + transition_distance(g.speed, u_next, a);
      if (acc_start + need > dec_end + 1e-9) throw ConfigError("trajectory: straight too short for speed changes");
      if (u != g.speed) {
        if (u > 0.0) add_cruise(t, s, u, acc_start);
        add_transition(t, s, u, g.speed);
      }
      u = g.speed;
      add_cruise(t, s, u, dec_end - transition_distance(u, u_next, a));
      add_transition(t, s, u, u_next);
      u = u_next;
      if (u > 0.0) add_cruise(t, s, u, s_end);
      s = s_end;
    }
    if (u > 0.0) phases_.push_back(detail::SpeedPhase{t, 0.0, s, u, u});
  }

  TrajectorySpec spec_;
  std::vector<double> knots_s_, knots_k_, knots_psi_;
  std::vector<double> boundaries_;
  std::vector<detail::SpeedPhase> phases_;
};

// Integrates lateral velocity w and planar position (x, y) with RK4 on
// 1 ms substeps. The lateral dynamics relax w towards -rho_sg a_y u, which
// makes the single-track relation hold exactly above 1 m/s.
inline std::vector<TrajectorySample> generate_trajectory(const TrajectorySpec& spec) {
  const TrajectoryProfile prof(spec);
  const double k = spec.side_slip_gradient;
  const double dt_sample = 1.0 / spec.rate_hz;
  const int sub = std::max(1, static_cast<int>(std::ceil(dt_sample / 1e-3 - 1e-9)));
  const double h = dt_sample / sub;

  struct Kin {
    double u, du, s, psi, r;
  };
  auto kin = [&](double t) {
    Kin q{};
    prof.speed_at(t, q.u, q.du, q.s);
    q.psi = prof.heading(q.s);
    q.r = prof.curvature(q.s) * q.u;
    return q;
  };
  auto w_rate = [&](const Kin& q, double w) {
    if (k <= 0.0) return 0.0;
    return -(w + k * q.r * q.u * q.u) / (k * std::max(q.u, 1.0));
  };
  struct Y {
    double w, x, y;
  };
  auto rate = [&](double t, const Y& y) {
    const Kin q = kin(t);
    const double c = std::cos(q.psi), s = std::sin(q.psi);
    return Y{w_rate(q, y.w), q.u * c - y.w * s, q.u * s + y.w * c};
  };
  auto axpy = [](const Y& a, const Y& d, double hh) { return Y{a.w + hh * d.w, a.x + hh * d.x, a.y + hh * d.y}; };

  const double T = prof.duration();
  const long n = static_cast<long>(std::floor(T * spec.rate_hz + 1e-9)) + 1;
  std::vector<TrajectorySample> out;
  out.reserve(n);
  const Kin q0 = kin(0.0);
  Y y{-k * q0.r * q0.u * q0.u, 0.0, 0.0};
  for (long i = 0; i < n; ++i) {
    const double t = i * dt_sample;
    if (i > 0) {
      for (int j = 0; j < sub; ++j) {
        const double t0 = (i - 1) * dt_sample + j * h;
        const Y k1 = rate(t0, y);
        const Y k2 = rate(t0 + 0.5 * h, axpy(y, k1, 0.5 * h));
        const Y k3 = rate(t0 + 0.5 * h, axpy(y, k2, 0.5 * h));
        const Y k4 = rate(t0 + h, axpy(y, k3, h));
        y = Y{y.w + h / 6.0 * (k1.w + 2 * k2.w + 2 * k3.w + k4.w), y.x + h / 6.0 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x),
              y.y + h / 6.0 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y)};
      }
    }
    const Kin q = kin(t);
    const double dw = w_rate(q, y.w);
    TrajectorySample ts;
    ts.t = t;
    ts.s = q.s;
    ts.nav.v = Vec3(q.u, y.w, 0.0);
    ts.nav.q = yaw_quaternion(q.psi);
    ts.nav.p = Vec3(y.x, y.y, 0.0);
    ts.omega = Vec3(0.0, 0.0, q.r);
    ts.specific_force = Vec3(q.du - q.r * y.w, dw + q.r * q.u, 9.81);
    out.push_back(ts);
  }
  return out;
}

// --- sensors ---------------------------------------------------------------------------

struct SensorErrorSpec {
  GyroParams gyro;
  double gyro_noise_density = 0.015 * std::numbers::pi / 180.0;  // rad/s/sqrt(Hz)
  double accel_noise_density = 0.002;                           // m/s^2/sqrt(Hz)
  double wheel_sigma = 0.05;                                    // m/s
  double pixel_sigma = 0.5;                                     // px
  std::uint64_t seed = 1;

  static SensorErrorSpec noiseless() {
    SensorErrorSpec e;
    e.gyro_noise_density = 0.0;
    e.accel_noise_density = 0.0;
    e.wheel_sigma = 0.0;
    e.pixel_sigma = 0.0;
    return e;
  }
};

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline double gaussian(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

inline std::vector<ImuSample> synthesize_imu(const std::vector<TrajectorySample>& truth, const SensorErrorSpec& err,
                                             double rate_hz = 100.0) {
  auto rng = make_rng(err.seed, 1);
  const double sg = err.gyro_noise_density * std::sqrt(rate_hz);
  const double sa = err.accel_noise_density * std::sqrt(rate_hz);
  std::vector<ImuSample> out;
  out.reserve(truth.size());
  for (const auto& s : truth) {
    ImuSample m;
    m.t = s.t;
    m.omega = apply_gyro_error(s.omega, err.gyro);
    for (int i = 0; i < 3; ++i) m.omega(i) += gaussian(rng, sg);
    m.accel = s.specific_force;
    for (int i = 0; i < 3; ++i) m.accel(i) += gaussian(rng, sa);
    out.push_back(m);
  }
  return out;
}

// Rear-axle longitudinal wheel speed; an encoder reads exactly zero at rest.
inline std::vector<WheelSample> synthesize_wheel(const std::vector<TrajectorySample>& truth,
                                                 const SensorErrorSpec& err) {
  auto rng = make_rng(err.seed, 2);
  std::vector<WheelSample> out;
  out.reserve(truth.size());
  for (const auto& s : truth) {
    const double u = s.nav.v.x();
    const double noise = gaussian(rng, err.wheel_sigma);
    out.push_back(WheelSample{s.t, u == 0.0 ? 0.0 : u + noise});
  }
  return out;
}

struct LandmarkWorld {
  std::vector<Vec3> points;
};

struct LandmarkSpec {
  double lateral_min = 3.0;
  double lateral_max = 30.0;
  double height_min = -1.0;
  double height_max = 10.0;
  double per_10m = 8.0;
  double clearance = 2.5;  // minimum distance to the driven path
};

// Landmarks scattered along the path on both sides.
inline LandmarkWorld generate_landmarks(const std::vector<TrajectorySample>& truth, std::uint64_t seed,
                                        const LandmarkSpec& ls = {}) {
  LandmarkWorld world;
  if (truth.empty()) return world;
  auto rng = make_rng(seed, 3);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  // path polyline resampled every metre
  std::vector<Vec2> path;
  std::vector<double> yaw;
  double last_s = -1e9;
  for (const auto& s : truth) {
    if (s.s - last_s >= 1.0) {
      path.emplace_back(s.nav.p.x(), s.nav.p.y());
      yaw.push_back(heading_of(s.nav.q));
      last_s = s.s;
    }
  }
  const double extra = 60.0;  // extend the corridor beyond both ends
  const Vec2 d0(std::cos(yaw.front()), std::sin(yaw.front()));
  const Vec2 d1(std::cos(yaw.back()), std::sin(yaw.back()));
  std::vector<Vec2> cell_pts;
  std::vector<double> cell_yaw;
  for (double e = extra; e > 0.0; e -= 1.0) {
    cell_pts.push_back(path.front() - e * d0);
    cell_yaw.push_back(yaw.front());
  }
  cell_pts.insert(cell_pts.end(), path.begin(), path.end());
  cell_yaw.insert(cell_yaw.end(), yaw.begin(), yaw.end());
  for (double e = 1.0; e <= extra; e += 1.0) {
    cell_pts.push_back(path.back() + e * d1);
    cell_yaw.push_back(yaw.back());
  }
  const int cells = static_cast<int>(cell_pts.size() / 10);
  for (int c = 0; c < cells; ++c) {
    const int count = static_cast<int>(std::floor(ls.per_10m + uni(rng)));
    for (int k = 0; k < count; ++k) {
      const size_t idx = std::min(cell_pts.size() - 1, static_cast<size_t>(c * 10 + uni(rng) * 10.0));
      const double side = uni(rng) < 0.5 ? -1.0 : 1.0;
      const double lat = side * (ls.lateral_min + uni(rng) * (ls.lateral_max - ls.lateral_min));
      const double z = ls.height_min + uni(rng) * (ls.height_max - ls.height_min);
      const Vec2 normal(-std::sin(cell_yaw[idx]), std::cos(cell_yaw[idx]));
      const Vec2 xy = cell_pts[idx] + lat * normal;
      bool clear = true;
      for (const auto& p : path) {
        if ((p - xy).squaredNorm() < ls.clearance * ls.clearance) {
          clear = false;
          break;
        }
      }
      if (clear) world.points.emplace_back(xy.x(), xy.y(), z);
    }
  }
  return world;
}

struct VisibilitySpec {
  double min_depth = 1.0;
  double max_range = 120.0;
  double margin_px = 12.0;
};

inline std::vector<int> visible_landmarks(const LandmarkWorld& world, const NavState& s, const CameraIntrinsics& intr,
                                          const CameraExtrinsics& ext, const VisibilitySpec& vis = {}) {
  std::vector<int> ids;
  for (size_t i = 0; i < world.points.size(); ++i) {
    const Vec3 l = landmark_in_camera(world.points[i], s, ext);
    if (l.z() < vis.min_depth || l.norm() > vis.max_range) continue;
    const Projection pr = project(Bearing::from_direction(l), intr);
    if (pr.ok() && intr.contains(pr.uv, vis.margin_px)) ids.push_back(static_cast<int>(i));
  }
  return ids;
}

// Noisy bearing: the exact direction perturbed by an isotropic tangent
// Gaussian of sigma = pixel_sigma / fx.
inline std::vector<BearingFrame> synthesize_bearings(const std::vector<TrajectorySample>& truth,
                                                     const LandmarkWorld& world, const CameraIntrinsics& intr,
                                                     const CameraExtrinsics& ext, const SensorErrorSpec& err,
                                                     double camera_rate = 10.0, const VisibilitySpec& vis = {}) {
  auto rng = make_rng(err.seed, 4);
  const double sigma = err.pixel_sigma / intr.fx;
  std::vector<BearingFrame> frames;
  if (truth.size() < 2) return frames;
  const double imu_dt = truth[1].t - truth[0].t;
  const long stride = std::max(1L, std::lround(1.0 / (camera_rate * imu_dt)));
  for (size_t i = 0; i < truth.size(); i += stride) {
    BearingFrame f;
    f.t = truth[i].t;
    for (int id : visible_landmarks(world, truth[i].nav, intr, ext, vis)) {
      const Bearing b = Bearing::from_direction(landmark_in_camera(world.points[id], truth[i].nav, ext));
      const double e0 = gaussian(rng, sigma);
      const double e1 = gaussian(rng, sigma);
      f.obs.push_back(ObservedBearing{id, s2_boxplus(b, Vec2(e0, e1))});
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

struct RenderSpec {
  double blob_sigma = 1.5;
  double amplitude = 200.0;
  double background = 10.0;
  double max_range = 60.0;
};

inline Image render_blobs(const std::vector<Vec2>& centers, const CameraIntrinsics& intr, const RenderSpec& rs = {}) {
  Image img(intr.width, intr.height, static_cast<float>(rs.background));
  const int rad = static_cast<int>(std::ceil(4.0 * rs.blob_sigma));
  const double inv2s2 = 1.0 / (2.0 * rs.blob_sigma * rs.blob_sigma);
  for (const Vec2& c : centers) {
    const int cx = static_cast<int>(std::lround(c.x()));
    const int cy = static_cast<int>(std::lround(c.y()));
    for (int y = std::max(0, cy - rad); y <= std::min(intr.height - 1, cy + rad); ++y) {
      for (int x = std::max(0, cx - rad); x <= std::min(intr.width - 1, cx + rad); ++x) {
        const double d2 = (x - c.x()) * (x - c.x()) + (y - c.y()) * (y - c.y());
        float& px = img.at(x, y);
        px = static_cast<float>(std::min(255.0, px + rs.amplitude * std::exp(-d2 * inv2s2)));
      }
    }
  }
  return img;
}

// Image mode: each landmark in range is a Gaussian blob; pixel noise
// jitters the blob centre.
inline std::vector<ImageFrame> synthesize_images(const std::vector<TrajectorySample>& truth,
                                                 const LandmarkWorld& world, const CameraIntrinsics& intr,
                                                 const CameraExtrinsics& ext, const SensorErrorSpec& err,
                                                 double camera_rate = 10.0, const RenderSpec& rs = {}) {
  auto rng = make_rng(err.seed, 5);
  std::vector<ImageFrame> frames;
  if (truth.size() < 2) return frames;
  const double imu_dt = truth[1].t - truth[0].t;
  const long stride = std::max(1L, std::lround(1.0 / (camera_rate * imu_dt)));
  VisibilitySpec vis;
  vis.max_range = rs.max_range;
  vis.margin_px = 0.0;
  for (size_t i = 0; i < truth.size(); i += stride) {
    std::vector<Vec2> centers;
    for (int id : visible_landmarks(world, truth[i].nav, intr, ext, vis)) {
      const Projection pr =
          project(Bearing::from_direction(landmark_in_camera(world.points[id], truth[i].nav, ext)), intr);
      const double e0 = gaussian(rng, err.pixel_sigma);
      const double e1 = gaussian(rng, err.pixel_sigma);
      centers.push_back(pr.uv + Vec2(e0, e1));
    }
    ImageFrame f;
    f.t = truth[i].t;
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.pgm", frames.size());
    f.file = name;
    f.image = std::make_shared<const Image>(render_blobs(centers, intr, rs));
    frames.push_back(std::move(f));
  }
  return frames;
}

enum class CameraMode { kBearing, kImage, kNone };

struct SimulationConfig {
  TrajectorySpec trajectory = urban_loop();
  SensorErrorSpec errors;
  Calibration calib;
  LandmarkSpec landmarks;
  CameraMode mode = CameraMode::kBearing;
};

inline std::vector<PoseSample> truth_poses(const std::vector<TrajectorySample>& truth) {
  std::vector<PoseSample> out;
  out.reserve(truth.size());
  for (const auto& s : truth) out.push_back(PoseSample{s.t, s.nav.p, s.nav.q});
  return out;
}

// Full synthetic dataset, in memory.
inline Dataset simulate(const SimulationConfig& cfg, std::vector<TrajectorySample>* truth_out = nullptr) {
  TrajectorySpec tspec = cfg.trajectory;
  tspec.rate_hz = cfg.calib.imu_rate;
  tspec.side_slip_gradient = cfg.calib.side_slip_gradient;
  const auto truth = generate_trajectory(tspec);
  Dataset d;
  d.calib = cfg.calib;
  d.imu = synthesize_imu(truth, cfg.errors, cfg.calib.imu_rate);
  d.wheel = synthesize_wheel(truth, cfg.errors);
  d.gt = truth_poses(truth);
  if (cfg.mode != CameraMode::kNone) {
    const LandmarkWorld world = generate_landmarks(truth, cfg.errors.seed, cfg.landmarks);
    if (cfg.mode == CameraMode::kBearing) {
      d.bearing_frames = synthesize_bearings(truth, world, d.calib.intr, d.calib.ext, cfg.errors, d.calib.camera_rate);
    } else {
      d.image_frames = synthesize_images(truth, world, d.calib.intr, d.calib.ext, cfg.errors, d.calib.camera_rate);
    }
  }
  if (truth_out) *truth_out = truth;
  return d;
}

}  // namespace vigcal
