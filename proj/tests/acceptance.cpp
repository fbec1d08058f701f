// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <vigcal/eval.hpp>
#include <vigcal/jacobian_audit.hpp>
#include <vigcal/pipeline.hpp>
#include <vigcal/sim.hpp>

#include "reference_ekf.hpp"
#include "rls_oracle.hpp"

#include <chrono>
#include <cstdio>
#include <numbers>
#include <string>

using namespace vigcal;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

int failures = 0;

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }
  void reset() { t0_ = std::chrono::steady_clock::now(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %d %-26s %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

GyroParams injected() {
  GyroParams g;
  g.bias = Vec3(0.3, -0.2, 0.5) * kDeg;
  g.scale_z = 1.01;
  g.misalign_yx = 0.5 * kDeg;
  g.misalign_xy = 0.5 * kDeg;
  return g;
}

Vec3 mean_bias(const std::vector<ParamRecord>& rows, double t0, double t1) {
  Vec3 sum = Vec3::Zero();
  int n = 0;
  for (const auto& r : rows) {
    if (r.t >= t0 && r.t <= t1) {
      sum += r.params.bias;
      ++n;
    }
  }
  return n ? Vec3(sum / n) : Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
}

// Arc length at which the n-th turn (1-based) and its exit blend are complete.
double turn_end_s(const TrajectorySpec& spec, int n) {
  double s = 0.0;
  int turns = 0;
  for (const auto& g : spec.segments) {
    s += g.path_length();
    if (g.kind == SegmentKind::kArc && ++turns == n) return s + 0.5 * spec.blend_length;
  }
  return s;
}

Dataset truncated(const Dataset& d, double t_end) {
  Dataset out;
  out.calib = d.calib;
  for (const auto& s : d.imu)
    if (s.t <= t_end) out.imu.push_back(s);
  for (const auto& s : d.wheel)
    if (s.t <= t_end) out.wheel.push_back(s);
  for (const auto& s : d.bearing_frames)
    if (s.t <= t_end) out.bearing_frames.push_back(s);
  for (const auto& s : d.gt)
    if (s.t <= t_end) out.gt.push_back(s);
  return out;
}

}  // namespace

int main() {
  Stopwatch total;
  long health_violations = 0;
  long health_checks = 0;

  // 1. Jacobian audit
  {
    Stopwatch sw;
    const AuditReport rep = run_jacobian_audit(1, 1000);
    const double secs = sw.seconds();
    double worst = 0.0;
    std::string worst_block;
    for (const auto& b : rep.blocks) {
      if (b.max_rel_error > worst) {
        worst = b.max_rel_error;
        worst_block = b.name;
      }
    }
    const bool ok = rep.pass() && worst <= 1e-4 && rep.blocks.size() == 10 && secs < 10.0;
    report(1, "jacobian audit", ok,
           fmt("%zu blocks, %d configs, worst %.2e (%s) <= 1e-4, %.2f s < 10 s", rep.blocks.size(), 1000, worst,
               worst_block.c_str(), secs));
  }

  // 2-4. calibration convergence on the default urban loop
  SimulationConfig sim;
  sim.errors.gyro = injected();
  std::vector<TrajectorySample> truth;
  const Dataset one_lap = simulate(sim, &truth);
  {
    Stopwatch sw;
    const RunResult r = run_filter(one_lap, RunConfig{});
    const double secs = sw.seconds();
    health_violations += r.health.violations;
    health_checks += r.health.checks;
    const GyroParams g = injected();

    const Vec3 at60 = (mean_bias(r.params, 50.0, 60.0) - g.bias) / kDeg;
    const double t_end = r.params.back().t;
    const Vec3 last = (mean_bias(r.params, t_end - 10.0, t_end) - g.bias) / kDeg;
    const bool ok2 = at60.cwiseAbs().maxCoeff() <= 0.05 && last.cwiseAbs().maxCoeff() <= 0.05 && secs < 30.0;
    report(2, "gyro offset convergence", ok2,
           fmt("mean error over 50-60 s (%.4f, %.4f, %.4f) deg/s, final 10 s (%.4f, %.4f, %.4f) deg/s <= 0.05, "
               "run %.1f s < 30 s",
               at60.x(), at60.y(), at60.z(), last.x(), last.y(), last.z(), secs));

    const double s_turn = turn_end_s(sim.trajectory, 2);
    double t_turn = truth.back().t;
    for (const auto& s : truth) {
      if (s.s >= s_turn) {
        t_turn = s.t;
        break;
      }
    }
    double worst_sz = 0.0;
    for (const auto& p : r.params)
      if (p.t >= t_turn) worst_sz = std::max(worst_sz, std::abs(p.params.scale_z - g.scale_z) / g.scale_z);
    report(3, "yaw scale convergence", worst_sz <= 1e-3 && secs < 30.0,
           fmt("after second turn (t >= %.1f s) worst |s_z error| %.4f %% <= 0.1 %%, run %.1f s < 30 s", t_turn,
               100.0 * worst_sz, secs));

    const GyroParams& fin = r.params.back().params;
    const double e_yx = (fin.misalign_yx - g.misalign_yx) / kDeg;
    const double e_xy = (fin.misalign_xy - g.misalign_xy) / kDeg;
    report(4, "misalignment convergence", std::abs(e_yx) <= 0.1 && std::abs(e_xy) <= 0.1,
           fmt("final error s_yx %.4f deg, s_xy %.4f deg <= 0.1 deg", e_yx, e_xy));
  }

  // 5. ablation ordering on 5 laps
  {
    Stopwatch sw;
    SimulationConfig s5 = sim;
    s5.trajectory = urban_loop(5);
    std::vector<TrajectorySample> t5;
    const Dataset d = simulate(s5, &t5);
    const double km = t5.back().s / 1000.0;
    auto run = [&](const RunConfig& rc, RunResult* keep = nullptr) {
      RunResult r = run_filter(d, rc);
      health_violations += r.health.violations;
      health_checks += r.health.checks;
      const double p95 = rpe(r.trajectory, d.gt).percentile_95;
      if (keep) *keep = std::move(r);
      return p95;
    };
    RunResult full_run;
    const double full = run(RunConfig{}, &full_run);
    RunConfig nl;
    nl.disable_lateral_model = true;
    const double no_lat = run(nl);
    RunConfig cal;
    cal.wheel_imu_only = true;
    cal.disable_gyro_calibration = true;
    cal.initial_params = full_run.params.back().params;
    const double calibrated = run(cal);
    RunConfig unc;
    unc.wheel_imu_only = true;
    unc.disable_gyro_calibration = true;
    const double uncalibrated = run(unc);
    const double secs = sw.seconds();
    const bool ok = calibrated <= full && full <= uncalibrated && no_lat >= 1.25 * full && secs < 120.0;
    report(5, "ablation ordering", ok,
           fmt("%.2f km, RPE p95 calibrated %.3f <= full %.3f <= uncalibrated %.3f %%, no-lateral %.3f %% = %.2fx "
               ">= 1.25x, %.1f s < 120 s",
               km, calibrated, full, uncalibrated, no_lat, no_lat / full, secs));
  }

  // 6. zero-noise, zero-error closed loop
  {
    SimulationConfig s0;
    s0.errors = SensorErrorSpec::noiseless();
    const Dataset d = simulate(s0);
    RunConfig rc;
    rc.noise.r_bearing = 1e-7;
    const RunResult r = run_filter(d, rc);
    const RpeReport e = rpe(r.trajectory, d.gt);
    const bool ok = e.percentile_63 < 0.05 && e.percentile_95 < 0.05 && e.max < 0.05;
    report(6, "closed-loop sanity", ok,
           fmt("RPE p63 %.4f, p95 %.4f, max %.4f %% < 0.05 %%", e.percentile_63, e.percentile_95, e.max));
  }

  // 7. parameter channel off equals the plain EKF
  {
    const Dataset d = truncated(one_lap, 60.0);
    RunConfig rc;
    rc.disable_gyro_calibration = true;
    const RunResult a = run_filter(d, rc);
    const testing::ReferenceRun b = testing::run_reference_ekf(d, rc);
    bool same = a.trajectory.size() == b.trajectory.size();
    size_t first_diff = 0;
    for (size_t i = 0; same && i < a.trajectory.size(); ++i) {
      const auto& x = a.trajectory[i];
      const auto& y = b.trajectory[i];
      if (x.t != y.t || x.p != y.p || x.q.coeffs() != y.q.coeffs() || a.velocity[i] != b.velocity[i]) {
        same = false;
        first_diff = i;
      }
    }
    report(7, "reduction equivalence", same,
           same ? fmt("%zu poses over %.1f s bit-identical", a.trajectory.size(), d.imu.back().t - d.imu.front().t)
                : fmt("first difference at step %zu", first_diff));
  }

  // 8. RLS against batch least squares
  {
    const testing::RlsComparison c = testing::rls_vs_batch(1000, NoiseConfig{}.forgetting);
    report(8, "rls oracle", c.max_diff <= 1e-6,
           fmt("1000 steps, lambda %.4f, max |recursive - batch| %.2e <= 1e-6", NoiseConfig{}.forgetting, c.max_diff));
  }

  // 9. covariance health in runs 2-5
  report(9, "covariance health", health_violations == 0 && health_checks > 0,
         fmt("%ld steps checked, %ld violations (symmetry and min eigenvalue >= -1e-9)", health_checks,
             health_violations));

  std::printf("%d failure(s), total %.1f s\n", failures, total.seconds());
  return failures == 0 ? 0 : 1;
}
