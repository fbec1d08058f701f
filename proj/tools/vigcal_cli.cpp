// vigcal: simulate datasets, run the adaptive filter, evaluate trajectories
// and audit the analytic Jacobians.

#include <vigcal/dataset.hpp>
#include <vigcal/errors.hpp>
#include <vigcal/eval.hpp>
#include <vigcal/jacobian_audit.hpp>
#include <vigcal/pipeline.hpp>
#include <vigcal/sim.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace vigcal;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct SimulateArgs {
  std::string out;
  std::uint64_t seed = 1;
  int laps = 1;
  std::string mode = "bearing";
  std::vector<double> bias_deg{0.3, -0.2, 0.5};
  double scale_z = 1.01;
  double misalign_yx_deg = 0.5;
  double misalign_xy_deg = 0.5;
  double gyro_noise_deg = 0.015;
  double accel_noise = 0.002;
  double wheel_noise = 0.05;
  double pixel_noise = 0.5;
  bool zero_noise = false;
  bool zero_errors = false;
  double side_slip_gradient = 0.0024;
};

struct RunArgs {
  std::string data;
  std::string out;
  RunConfig cfg;
  std::string calibrated_params;
  bool no_standstill = false;
};

struct EvalArgs {
  std::string est;
  std::string gt;
  std::string out;
  double segment = 100.0;
};

struct AuditArgs {
  std::uint64_t seed = 1;
  long n = 1000;
  std::string perturb;
};

std::string truth_params_text(const GyroParams& p) {
  std::ostringstream o;
  o.precision(17);
  o << "# injected gyroscope errors, SI units (rad/s, dimensionless)\n";
  o << "bias: " << p.bias.x() << ' ' << p.bias.y() << ' ' << p.bias.z() << '\n';
  o << "scale_z: " << p.scale_z << '\n';
  o << "misalign_yx: " << p.misalign_yx << '\n';
  o << "misalign_xy: " << p.misalign_xy << '\n';
  return o.str();
}

int cmd_simulate(const SimulateArgs& a) {
  SimulationConfig sc;
  sc.trajectory = urban_loop(a.laps);
  if (a.mode == "bearing") {
    sc.mode = CameraMode::kBearing;
  } else if (a.mode == "image") {
    sc.mode = CameraMode::kImage;
  } else if (a.mode == "none") {
    sc.mode = CameraMode::kNone;
  } else {
    throw ConfigError("unknown measurement mode '" + a.mode + "'");
  }
  if (a.bias_deg.size() != 3) throw ConfigError("--bias expects three values");
  sc.errors.seed = a.seed;
  if (!a.zero_errors) {
    sc.errors.gyro.bias = Vec3(a.bias_deg[0], a.bias_deg[1], a.bias_deg[2]) * kDeg;
    sc.errors.gyro.scale_z = a.scale_z;
    sc.errors.gyro.misalign_yx = a.misalign_yx_deg * kDeg;
    sc.errors.gyro.misalign_xy = a.misalign_xy_deg * kDeg;
  }
  if (!sc.errors.gyro.valid()) throw ConfigError("injected gyro errors out of range");
  if (a.zero_noise) {
    sc.errors.gyro_noise_density = sc.errors.accel_noise_density = 0.0;
    sc.errors.wheel_sigma = sc.errors.pixel_sigma = 0.0;
  } else {
    if (a.gyro_noise_deg < 0 || a.accel_noise < 0 || a.wheel_noise < 0 || a.pixel_noise < 0) {
      throw ConfigError("noise levels must be non-negative");
    }
    sc.errors.gyro_noise_density = a.gyro_noise_deg * kDeg;
    sc.errors.accel_noise_density = a.accel_noise;
    sc.errors.wheel_sigma = a.wheel_noise;
    sc.errors.pixel_sigma = a.pixel_noise;
  }
  sc.calib.side_slip_gradient = a.side_slip_gradient;
  const Dataset d = simulate(sc);
  save_dataset(d, a.out);
  write_file_atomic(fs::path(a.out) / "truth-params.txt", truth_params_text(sc.errors.gyro));
  std::cout << "wrote " << a.out << ": " << d.imu.size() << " IMU samples, "
            << (d.image_mode() ? d.image_frames.size() : d.bearing_frames.size()) << " camera frames\n";
  return 0;
}

std::string run_report(const RunResult& r, const RunConfig& cfg, const Dataset& d) {
  std::ostringstream o;
  o.precision(9);
  o << "# filter run\n";
  o << "camera=" << (cfg.wheel_imu_only ? "off" : d.image_mode() ? "image" : "bearing") << '\n';
  o << "gyro_calibration=" << (cfg.disable_gyro_calibration ? "off" : "on") << '\n';
  o << "lateral_model=" << (cfg.disable_lateral_model ? "off" : "on") << '\n';
  o << "imu_steps=" << r.counters.imu_steps << '\n';
  o << "vehicle_rows=" << r.counters.vehicle_rows << '\n';
  o << "camera_frames=" << r.counters.frames << '\n';
  o << "camera_blocks=" << r.counters.camera_blocks << '\n';
  o << "gated_blocks=" << r.counters.gated_blocks << '\n';
  o << "features_initialized=" << r.counters.features_initialized << '\n';
  o << "features_dropped=" << r.counters.features_dropped << '\n';
  o << "standstill_updates=" << r.counters.standstill_updates << '\n';
  o << "skipped_updates=" << r.counters.skipped_updates << '\n';
  o << "health_checks=" << r.health.checks << '\n';
  o << "health_violations=" << r.health.violations << '\n';
  o << "min_eig_P=" << r.health.min_eig_P << '\n';
  o << "min_eig_S=" << r.health.min_eig_S << '\n';
  const GyroParams& p = r.final_state.params;
  o << "final_bias_deg_s=" << p.bias.x() / kDeg << ' ' << p.bias.y() / kDeg << ' ' << p.bias.z() / kDeg << '\n';
  o << "final_scale_z=" << p.scale_z << '\n';
  o << "final_misalign_deg=" << p.misalign_yx / kDeg << ' ' << p.misalign_xy / kDeg << '\n';
  for (const auto& diag : r.diagnostics) o << "# " << diag << '\n';
  if (!d.gt.empty()) {
    try {
      o << '\n' << report_text(evaluate(r.trajectory, d.gt));
    } catch (const DataError& e) {
      o << "# evaluation skipped: " << e.what() << '\n';
    }
  }
  return o.str();
}

int cmd_run(RunArgs a) {
  const Dataset d = load_dataset(a.data);
  if (!a.calibrated_params.empty()) {
    a.cfg.initial_params = read_final_params(a.calibrated_params);
    a.cfg.disable_gyro_calibration = true;
  }
  a.cfg.use_standstill = !a.no_standstill;
  const RunResult r = run_filter(d, a.cfg);
  const fs::path out(a.out);
  write_file_atomic(out / "trajectory.csv", pose_csv(r.trajectory));
  write_file_atomic(out / "params.csv", params_csv(r.params));
  write_file_atomic(out / "report.txt", run_report(r, a.cfg, d));
  std::cout << "wrote " << (out / "trajectory.csv").string() << ", params.csv, report.txt\n";
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const auto est = read_pose_csv(a.est);
  const auto gt = read_pose_csv(a.gt);
  const std::string text = report_text(evaluate(est, gt, a.segment));
  if (!a.out.empty()) write_file_atomic(a.out, text);
  std::cout << text;
  return 0;
}

int cmd_jacobian_check(const AuditArgs& a) {
  AuditOptions opts;
  opts.perturb_block = a.perturb;
  const AuditReport rep = run_jacobian_audit(a.seed, a.n, opts);
  std::cout << rep.table();
  return rep.pass() ? 0 : 1;
}

void add_noise_options(CLI::App* app, NoiseConfig& n) {
  app->add_option("--forgetting", n.forgetting, "RLS forgetting factor per update")->capture_default_str();
  app->add_option("--q-vel", n.q_vel, "velocity process noise density")->capture_default_str();
  app->add_option("--q-att", n.q_att, "attitude process noise density")->capture_default_str();
  app->add_option("--q-pos", n.q_pos, "position process noise density")->capture_default_str();
  app->add_option("--q-bearing", n.q_bearing, "bearing process noise density")->capture_default_str();
  app->add_option("--q-inv-depth", n.q_inv_depth, "inverse-depth process noise density")->capture_default_str();
  app->add_option("--r-bearing", n.r_bearing, "bearing measurement variance [rad^2]")->capture_default_str();
  app->add_option("--r-intensity", n.r_intensity, "intensity measurement variance")->capture_default_str();
  app->add_option("--r-pixel", n.r_pixel, "patch position variance [px^2]")->capture_default_str();
  app->add_option("--sigma-vx", n.vehicle.sigma_vx, "wheel speed row sigma [m/s]")->capture_default_str();
  app->add_option("--sigma-vy", n.vehicle.sigma_vy, "lateral model row sigma [m/s]")->capture_default_str();
  app->add_option("--sigma-vz", n.vehicle.sigma_vz, "vertical row sigma [m/s]")->capture_default_str();
  app->add_option("--gate", n.gate_probability, "chi-square gate probability for camera rows")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vigcal: visual-inertial odometry with online gyroscope calibration"};
  app.set_config("--config", "", "INI/TOML configuration file; command-line flags override it");
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "write a synthetic dataset directory");
  s->add_option("--out", sim.out, "output dataset directory")->required();
  s->add_option("--seed", sim.seed, "random seed")->capture_default_str();
  s->add_option("--laps", sim.laps, "number of urban-loop laps (about 1 km each)")->check(CLI::PositiveNumber)
      ->capture_default_str();
  s->add_option("--mode", sim.mode, "camera output: bearing, image or none")->capture_default_str();
  s->add_option("--bias", sim.bias_deg, "injected gyro offsets [deg/s]")->expected(3)->capture_default_str();
  s->add_option("--scale-z", sim.scale_z, "injected yaw-rate scale")->capture_default_str();
  s->add_option("--misalign-yx", sim.misalign_yx_deg, "injected misalignment s_yx [deg]")->capture_default_str();
  s->add_option("--misalign-xy", sim.misalign_xy_deg, "injected misalignment s_xy [deg]")->capture_default_str();
  s->add_option("--gyro-noise", sim.gyro_noise_deg, "gyro noise density [deg/s/sqrt(Hz)]")->capture_default_str();
  s->add_option("--accel-noise", sim.accel_noise, "accelerometer noise density [m/s^2/sqrt(Hz)]")
      ->capture_default_str();
  s->add_option("--wheel-noise", sim.wheel_noise, "wheel speed noise [m/s]")->capture_default_str();
  s->add_option("--pixel-noise", sim.pixel_noise, "pixel noise [px]")->capture_default_str();
  s->add_option("--side-slip-gradient", sim.side_slip_gradient, "rho_sg [s^2/m]")->capture_default_str();
  s->add_flag("--zero-noise", sim.zero_noise, "disable all sensor noise");
  s->add_flag("--zero-errors", sim.zero_errors, "inject no gyro errors");

  RunArgs run;
  auto* r = app.add_subcommand("run", "run the filter on a dataset directory");
  r->add_option("--data", run.data, "dataset directory")->required();
  r->add_option("--out", run.out, "output directory")->required();
  r->add_option("--max-features", run.cfg.max_features, "feature slots")->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  r->add_flag("--disable-gyro-calibration", run.cfg.disable_gyro_calibration, "keep gyro parameters fixed");
  r->add_flag("--disable-lateral-model", run.cfg.disable_lateral_model, "replace the lateral model by v_y = 0");
  r->add_flag("--wheel-imu-only", run.cfg.wheel_imu_only, "ignore camera data");
  r->add_flag("--no-standstill", run.no_standstill, "disable zero-velocity/zero-rate rows at rest");
  r->add_option("--calibrated-params", run.calibrated_params,
                "params.csv of a completed run; its last row is used and frozen");
  add_noise_options(r, run.cfg.noise);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "RPE and ATE of an estimated trajectory");
  e->add_option("--est", ev.est, "estimated trajectory.csv")->required();
  e->add_option("--gt", ev.gt, "ground-truth gt.csv")->required();
  e->add_option("--out", ev.out, "write the report to this file");
  e->add_option("--segment", ev.segment, "RPE segment length [m]")->capture_default_str();

  AuditArgs au;
  auto* j = app.add_subcommand("jacobian-check", "compare analytic Jacobians with finite differences");
  j->add_option("--seed", au.seed, "random seed")->capture_default_str();
  j->add_option("--n", au.n, "number of random configurations")->capture_default_str();
  j->add_option("--perturb", au.perturb, "add an error to one analytic block (self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim);
    if (r->parsed()) return cmd_run(run);
    if (e->parsed()) return cmd_eval(ev);
    if (j->parsed()) return cmd_jacobian_check(au);
  } catch (const ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << '\n';
    return 2;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return 3;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << '\n';
    return 4;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return 3;
  }
  return 2;
}
