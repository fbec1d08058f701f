#include <gtest/gtest.h>

#include <vigcal/dataset.hpp>
#include <vigcal/eval.hpp>
#include <vigcal/pipeline.hpp>
#include <vigcal/sim.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace vigcal;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vigcal_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrajectorySpec arc_spec() {
  TrajectorySpec spec;
  spec.side_slip_gradient = 0.0;
  spec.segments = {Segment::straight(50.0, 10.0), Segment::arc(20.0, std::numbers::pi / 2.0, 10.0),
                   Segment::straight(50.0, 10.0)};
  return spec;
}

std::vector<PoseSample> straight_poses(int n, double dt, double speed) {
  std::vector<PoseSample> out;
  for (int i = 0; i < n; ++i) out.push_back(PoseSample{i * dt, Vec3(speed * i * dt, 0, 0), UnitQuaternion::Identity()});
  return out;
}

// Square loop of side 100 m sampled every metre with a turn in place at each corner.
std::vector<PoseSample> square_poses() {
  std::vector<PoseSample> out;
  Vec3 p = Vec3::Zero();
  double t = 0.0;
  for (int side = 0; side < 4; ++side) {
    const double yaw = side * std::numbers::pi / 2.0;
    const Vec3 dir(std::cos(yaw), std::sin(yaw), 0.0);
    for (int k = 0; k < 100; ++k) {
      out.push_back(PoseSample{t, p, yaw_quaternion(yaw)});
      p += dir;
      t += 0.1;
    }
  }
  return out;
}

}  // namespace

// --- trajectory -------------------------------------------------------------

TEST(Trajectory, StraightDuration) {
  TrajectorySpec spec;
  spec.segments = {Segment::straight(100.0, 10.0)};
  const auto tr = generate_trajectory(spec);
  EXPECT_NEAR(tr.back().t, 10.0, 1e-9);
  EXPECT_NEAR(tr.back().nav.p.x(), 100.0, 1e-6);
  for (const auto& s : tr) {
    EXPECT_NEAR(s.nav.v.x(), 10.0, 1e-12);
    EXPECT_NEAR(s.omega.z(), 0.0, 1e-12);
    EXPECT_NEAR(s.specific_force.z(), 9.81, 1e-12);
  }
}

TEST(Trajectory, ArcYawRate) {
  const auto tr = generate_trajectory(arc_spec());
  // mid arc: s = 50 + 10 pi / 2
  const double t_mid = (50.0 + 5.0 * std::numbers::pi) / 10.0;
  const auto& mid = tr[static_cast<size_t>(std::lround(t_mid * 100.0))];
  EXPECT_NEAR(mid.omega.z(), 0.5, 1e-9);
  EXPECT_NEAR(mid.specific_force.y(), 5.0, 1e-6);
  EXPECT_NEAR(heading_of(tr.back().nav.q), std::numbers::pi / 2.0, 1e-9);
  double max_lat = 0.0;
  for (const auto& s : tr) max_lat = std::max(max_lat, std::abs(s.specific_force.y()));
  EXPECT_LT(max_lat, 5.0 + 1e-6);
}

TEST(Trajectory, StopIsStationary) {
  TrajectorySpec spec;
  spec.segments = {Segment::straight(100.0, 10.0), Segment::stop(5.0), Segment::straight(100.0, 10.0)};
  const auto tr = generate_trajectory(spec);
  int stopped = 0;
  for (const auto& s : tr) {
    if (s.nav.v.x() == 0.0) {
      ++stopped;
      EXPECT_EQ(s.omega.z(), 0.0);
      EXPECT_NEAR(s.specific_force.head<2>().norm(), 0.0, 1e-12);
    }
  }
  EXPECT_GE(stopped, 499);
  double peak = 0.0;
  for (const auto& s : tr) peak = std::max(peak, std::abs(s.specific_force.x()));
  EXPECT_NEAR(peak, spec.max_accel, 1e-3);
}

TEST(Trajectory, InfeasibleSegmentsThrow) {
  TrajectorySpec spec;
  spec.segments = {Segment::straight(100.0, 14.0), Segment::arc(15.0, std::numbers::pi / 2.0, 14.0)};
  EXPECT_THROW(generate_trajectory(spec), ConfigError);
  spec.segments = {Segment::straight(5.0, 14.0), Segment::arc(35.0, 1.0, 11.0)};
  EXPECT_THROW(generate_trajectory(spec), ConfigError);
  spec.segments = {Segment::stop(3.0), Segment::straight(100.0, 5.0)};
  EXPECT_THROW(generate_trajectory(spec), ConfigError);
  spec.segments = {};
  EXPECT_THROW(generate_trajectory(spec), ConfigError);
  spec = urban_loop();
  spec.rate_hz = 10.0;
  EXPECT_THROW(generate_trajectory(spec), ConfigError);
}

TEST(Trajectory, KinematicConsistency) {
  TrajectorySpec spec = urban_loop(1);
  const auto tr = generate_trajectory(spec);
  const double dt = 0.01;
  double worst_v = 0.0, worst_slip = 0.0;
  for (size_t i = 1; i + 1 < tr.size(); ++i) {
    const Vec3 dp = (tr[i + 1].nav.p - tr[i - 1].nav.p) / (2.0 * dt);
    worst_v = std::max(worst_v, (dp - quat_to_rot(tr[i].nav.q) * tr[i].nav.v).norm());
    const double dpsi = so3_log(tr[i - 1].nav.q.conjugate() * tr[i + 1].nav.q).z() / (2.0 * dt);
    EXPECT_NEAR(dpsi, tr[i].omega.z(), 1e-3);
    if (tr[i].nav.v.x() > 1.0) {
      const double pred = -spec.side_slip_gradient * tr[i].specific_force.y() * tr[i].nav.v.x();
      worst_slip = std::max(worst_slip, std::abs(tr[i].nav.v.y() - pred));
    }
  }
  EXPECT_LT(worst_v, 1e-3);
  EXPECT_LT(worst_slip, 1e-3);
}

TEST(Trajectory, UrbanLoopCloses) {
  const auto tr = generate_trajectory(urban_loop(1));
  // the last sample falls less than one sample period before the end of the turn
  EXPECT_NEAR(heading_of(tr.back().nav.q), 0.0, tr.back().omega.z() * 0.01);
  EXPECT_LT(tr.back().nav.p.head<2>().norm(), 1.0);
  double max_lat = 0.0;
  for (const auto& s : tr) max_lat = std::max(max_lat, std::abs(s.specific_force.y()));
  EXPECT_LT(max_lat, 8.0);
}

// --- sensors ---------------------------------------------------------------------

TEST(SimSensors, Deterministic) {
  SimulationConfig cfg;
  cfg.trajectory.segments = {Segment::straight(100.0, 10.0)};
  const Dataset a = simulate(cfg), b = simulate(cfg);
  ASSERT_EQ(a.imu.size(), b.imu.size());
  for (size_t i = 0; i < a.imu.size(); ++i) {
    EXPECT_EQ(a.imu[i].omega, b.imu[i].omega);
    EXPECT_EQ(a.imu[i].accel, b.imu[i].accel);
  }
  cfg.errors.seed = 2;
  const Dataset c = simulate(cfg);
  EXPECT_NE(a.imu[5].omega, c.imu[5].omega);
}

TEST(SimSensors, WheelNoiseAndRest) {
  std::vector<TrajectorySample> truth(10000);
  for (size_t i = 0; i < truth.size(); ++i) {
    truth[i].t = 0.01 * i;
    truth[i].nav.v = Vec3(i % 2 ? 5.0 : 0.0, 0, 0);
  }
  SensorErrorSpec err;
  const auto w = synthesize_wheel(truth, err);
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (size_t i = 0; i < w.size(); ++i) {
    if (truth[i].nav.v.x() == 0.0) {
      EXPECT_EQ(w[i].v_x, 0.0);
    } else {
      const double e = w[i].v_x - 5.0;
      sum += e;
      sq += e * e;
      ++n;
    }
  }
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, err.wheel_sigma, 0.05 * err.wheel_sigma);
}

TEST(SimSensors, GyroNoiseAndBias) {
  std::vector<TrajectorySample> truth(20000);
  for (size_t i = 0; i < truth.size(); ++i) truth[i].t = 0.01 * i;
  SensorErrorSpec err;
  err.gyro.bias = Vec3(0.3, -0.2, 0.5) * kDeg;
  const auto imu = synthesize_imu(truth, err);
  Vec3 mean = Vec3::Zero();
  for (const auto& s : imu) mean += s.omega;
  mean /= static_cast<double>(imu.size());
  const double sigma = err.gyro_noise_density * 10.0;
  const double se = sigma / std::sqrt(static_cast<double>(imu.size()));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(mean(i), err.gyro.bias(i), 4.0 * se);
  double sq = 0.0;
  for (const auto& s : imu) sq += (s.omega.x() - mean.x()) * (s.omega.x() - mean.x());
  EXPECT_NEAR(std::sqrt(sq / imu.size()), sigma, 0.05 * sigma);
}

TEST(SimSensors, NoiselessImuDeadReckons) {
  SimulationConfig cfg;
  cfg.errors = SensorErrorSpec::noiseless();
  cfg.mode = CameraMode::kNone;
  std::vector<TrajectorySample> truth;
  const Dataset d = simulate(cfg, &truth);
  NavState s = truth.front().nav;
  size_t i = 1;
  for (; i < d.imu.size() && d.imu[i].t <= 60.0 + 1e-9; ++i) s = propagate_nav(s, d.imu[i - 1], d.imu[i], GyroParams{});
  --i;
  EXPECT_LT((s.p - truth[i].nav.p).norm(), 1e-3);
  EXPECT_LT((s.v - truth[i].nav.v).norm(), 1e-4);
  EXPECT_LT(so3_log(s.q * truth[i].nav.q.conjugate()).norm(), 1e-4);
}

TEST(SimSensors, InjectedGyroErrorsRecoverable) {
  SimulationConfig cfg;
  cfg.errors = SensorErrorSpec::noiseless();
  cfg.errors.gyro.bias = Vec3(0.3, -0.2, 0.5) * kDeg;
  cfg.errors.gyro.scale_z = 1.01;
  cfg.errors.gyro.misalign_yx = 0.5 * kDeg;
  cfg.errors.gyro.misalign_xy = -0.5 * kDeg;
  cfg.mode = CameraMode::kNone;
  std::vector<TrajectorySample> truth;
  const Dataset d = simulate(cfg, &truth);
  for (size_t i = 0; i < d.imu.size(); i += 97)
    EXPECT_LT((correct_gyro(d.imu[i].omega, cfg.errors.gyro) - truth[i].omega).norm(), 1e-14);
}

// --- camera ------------------------------------------------------------------------------------

TEST(SimCamera, LandmarkOnAxisAtPrincipalPoint) {
  const Calibration c;
  NavState s;
  s.q = yaw_quaternion(0.4);
  s.p = Vec3(3, 4, 0);
  // 20 m ahead of the camera along the body x axis
  const Vec3 cam = s.p + quat_to_rot(s.q) * c.ext.lever;
  const Vec3 l = cam + quat_to_rot(s.q) * Vec3(20, 0, 0);
  const Projection pr = project(Bearing::from_direction(landmark_in_camera(l, s, c.ext)), c.intr);
  ASSERT_TRUE(pr.ok());
  EXPECT_NEAR(pr.uv.x(), c.intr.cx, 1e-9);
  EXPECT_NEAR(pr.uv.y(), c.intr.cy, 1e-9);
}

TEST(SimCamera, EnoughLandmarksInView) {
  SimulationConfig cfg;
  std::vector<TrajectorySample> truth;
  const Dataset d = simulate(cfg, &truth);
  ASSERT_FALSE(d.bearing_frames.empty());
  size_t fewest = 1000;
  for (const auto& f : d.bearing_frames) fewest = std::min(fewest, f.obs.size());
  EXPECT_GE(fewest, 8u);
  EXPECT_NEAR(d.bearing_frames[1].t - d.bearing_frames[0].t, 0.1, 1e-9);
  for (const auto& o : d.bearing_frames[3].obs) EXPECT_NEAR(o.bearing.direction().norm(), 1.0, 1e-12);
}

TEST(SimCamera, NoiselessBearingsAreExact) {
  SimulationConfig cfg;
  cfg.errors = SensorErrorSpec::noiseless();
  cfg.trajectory.segments = {Segment::straight(100.0, 10.0)};
  std::vector<TrajectorySample> truth;
  const Dataset d = simulate(cfg, &truth);
  const LandmarkWorld world = generate_landmarks(truth, cfg.errors.seed, cfg.landmarks);
  const auto& f = d.bearing_frames[20];
  const auto& s = truth[200];
  ASSERT_NEAR(f.t, s.t, 1e-12);
  for (const auto& o : f.obs) {
    const Vec3 dir = landmark_in_camera(world.points[o.id], s.nav, cfg.calib.ext).normalized();
    EXPECT_LT((o.bearing.direction() - dir).norm(), 1e-12);
  }
}

TEST(SimCamera, BlobRendering) {
  const CameraIntrinsics intr;
  const RenderSpec rs;
  const Image img = render_blobs({Vec2(100.0, 50.0), Vec2(100.5, 300.0)}, intr, rs);
  EXPECT_NEAR(img.at(100, 50), rs.background + rs.amplitude, 1e-3);
  EXPECT_NEAR(img.at(0, 0), rs.background, 1e-6);
  EXPECT_FLOAT_EQ(img.at(100, 300), img.at(101, 300));
  EXPECT_LT(img.at(100, 53), img.at(100, 51));
}

TEST(SimCamera, ImageModeFrames) {
  SimulationConfig cfg;
  cfg.mode = CameraMode::kImage;
  cfg.trajectory.segments = {Segment::straight(30.0, 10.0)};
  const Dataset d = simulate(cfg);
  EXPECT_TRUE(d.bearing_frames.empty());
  ASSERT_EQ(d.image_frames.size(), 31u);
  ASSERT_TRUE(d.image_frames[0].image);
  EXPECT_EQ(d.image_frames[0].image->width(), 640);
  EXPECT_EQ(d.image_frames[2].file, "000002.pgm");
}

// --- dataset I/O ----------------------------------------------------------------------

TEST(Dataset, SaveLoadRoundTrip) {
  SimulationConfig cfg;
  cfg.trajectory.segments = {Segment::straight(40.0, 10.0)};
  cfg.calib.intr.k1 = -0.05;
  cfg.calib.side_slip_gradient = 0.003;
  const Dataset d = simulate(cfg);
  const fs::path dir = scratch_dir("roundtrip");
  save_dataset(d, dir);
  const Dataset e = load_dataset(dir);
  ASSERT_EQ(e.imu.size(), d.imu.size());
  ASSERT_EQ(e.wheel.size(), d.wheel.size());
  ASSERT_EQ(e.gt.size(), d.gt.size());
  ASSERT_EQ(e.bearing_frames.size(), d.bearing_frames.size());
  for (size_t i = 0; i < d.imu.size(); ++i) {
    EXPECT_EQ(e.imu[i].t, d.imu[i].t);
    EXPECT_EQ(e.imu[i].omega, d.imu[i].omega);
    EXPECT_EQ(e.imu[i].accel, d.imu[i].accel);
    EXPECT_EQ(e.wheel[i].v_x, d.wheel[i].v_x);
    EXPECT_EQ(e.gt[i].p, d.gt[i].p);
  }
  for (size_t k = 0; k < d.bearing_frames.size(); ++k) {
    ASSERT_EQ(e.bearing_frames[k].obs.size(), d.bearing_frames[k].obs.size());
    for (size_t j = 0; j < d.bearing_frames[k].obs.size(); ++j) {
      EXPECT_EQ(e.bearing_frames[k].obs[j].id, d.bearing_frames[k].obs[j].id);
      EXPECT_LT((e.bearing_frames[k].obs[j].bearing.direction() - d.bearing_frames[k].obs[j].bearing.direction())
                    .norm(),
                1e-15);
    }
  }
  EXPECT_EQ(e.calib.intr.k1, -0.05);
  EXPECT_EQ(e.calib.side_slip_gradient, 0.003);
  EXPECT_EQ(e.calib.ext.R_CB, d.calib.ext.R_CB);
  EXPECT_EQ(e.calib.ext.lever, d.calib.ext.lever);
  std::ifstream in(dir / "imu.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,wx,wy,wz,ax,ay,az");
  fs::remove_all(dir);
}

TEST(Dataset, ImageRoundTrip) {
  SimulationConfig cfg;
  cfg.mode = CameraMode::kImage;
  cfg.trajectory.segments = {Segment::straight(12.0, 10.0)};
  const Dataset d = simulate(cfg);
  const fs::path dir = scratch_dir("images");
  save_dataset(d, dir);
  const Dataset e = load_dataset(dir);
  ASSERT_EQ(e.image_frames.size(), d.image_frames.size());
  EXPECT_FALSE(e.image_frames[1].image);
  const auto img = frame_image(e, e.image_frames[1]);
  const auto& ref = *d.image_frames[1].image;
  for (int y = 0; y < ref.height(); y += 7)
    for (int x = 0; x < ref.width(); x += 7) EXPECT_NEAR(img->at(x, y), std::round(ref.at(x, y)), 0.5);
  fs::remove_all(dir);
}

TEST(Dataset, MalformedRowReportsLine) {
  const fs::path dir = scratch_dir("malformed");
  {
    std::ofstream o(dir / "wheel.csv");
    o << "t,vx\n0.0,1.0\n0.01,abc\n";
  }
  try {
    read_wheel_csv(dir / "wheel.csv");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("wheel.csv:3"), std::string::npos) << e.what();
  }
  {
    std::ofstream o(dir / "wheel.csv");
    o << "t,speed\n0.0,1.0\n";
  }
  EXPECT_THROW(read_wheel_csv(dir / "wheel.csv"), DataError);
  {
    std::ofstream o(dir / "wheel.csv");
    o << "t,vx\n0.0,1.0\n0.0,1.0\n";
  }
  EXPECT_THROW(read_wheel_csv(dir / "wheel.csv"), DataError);
  EXPECT_THROW(load_dataset(dir / "absent"), DataError);
  fs::remove_all(dir);
}

TEST(Dataset, CalibrationRoundTripAndValidation) {
  Calibration c;
  c.intr.fx = 612.25;
  c.intr.k2 = 0.01;
  c.ext.lever = Vec3(1.1, -0.2, 1.3);
  c.camera_rate = 20.0;
  const fs::path dir = scratch_dir("calib");
  write_file_atomic(dir / "calib.txt", calibration_text(c));
  const Calibration r = read_calibration(dir / "calib.txt");
  EXPECT_EQ(r.intr.fx, 612.25);
  EXPECT_EQ(r.intr.k2, 0.01);
  EXPECT_EQ(r.ext.lever, c.ext.lever);
  EXPECT_EQ(r.camera_rate, 20.0);
  {
    std::ofstream o(dir / "calib.txt");
    o << "intrinsics: 500 500 320 240\nresolution: 640 480\nR_CB: 1 0 0 0 1 0 0 0 2\n";
  }
  EXPECT_THROW(read_calibration(dir / "calib.txt"), DataError);
  {
    std::ofstream o(dir / "calib.txt");
    o << "resolution: 640 480\n";
  }
  EXPECT_THROW(read_calibration(dir / "calib.txt"), DataError);
  fs::remove_all(dir);
}

// --- evaluation ------------------------------------------------------------------------

TEST(Eval, Association) {
  const auto gt = straight_poses(100, 0.01, 1.0);
  std::vector<PoseSample> est = {PoseSample{0.004, Vec3::Zero(), {}}, PoseSample{0.5051, Vec3::Zero(), {}},
                                 PoseSample{2.0, Vec3::Zero(), {}}};
  const auto a = associate(est, gt);
  ASSERT_EQ(a.gt.size(), 2u);
  EXPECT_EQ(a.gt[0].t, 0.0);
  EXPECT_NEAR(a.gt[1].t, 0.51, 1e-12);
}

TEST(Eval, Percentile) {
  EXPECT_EQ(percentile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_NEAR(percentile({0.0, 10.0}, 0.63), 6.3, 1e-12);
  EXPECT_NEAR(percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, 0.95), 10.5, 1e-12);
  EXPECT_EQ(percentile({4.0}, 0.95), 4.0);
  EXPECT_THROW(percentile({}, 0.5), std::invalid_argument);
}

TEST(Eval, IdenticalTrajectoriesGiveZero) {
  const auto gt = square_poses();
  const EvalReport r = evaluate(gt, gt);
  EXPECT_EQ(r.rpe.max, 0.0);
  EXPECT_NEAR(r.ate, 0.0, 1e-9);
  EXPECT_EQ(r.associated, gt.size());
  // segments start at every pose with 100 m of path left
  EXPECT_EQ(r.rpe.segments, gt.size() - 100);
}

TEST(Eval, ScaledTrajectoryGivesScaleError) {
  std::vector<PoseSample> gt;
  for (int i = 0; i <= 300; ++i) gt.push_back(PoseSample{0.1 * i, Vec3(i, 0, 0), UnitQuaternion::Identity()});
  auto est = gt;
  for (auto& p : est) p.p *= 1.01;
  const RpeReport r = rpe(est, gt);
  EXPECT_EQ(r.segments, 201u);
  EXPECT_NEAR(r.percentile_63, 1.0, 1e-9);
  EXPECT_NEAR(r.percentile_95, 1.0, 1e-9);
  EXPECT_NEAR(r.max, 1.0, 1e-9);
  // on the square, segments across a corner have a shorter chord than 100 m
  const auto sq = square_poses();
  auto sq_est = sq;
  for (auto& p : sq_est) p.p *= 1.01;
  const RpeReport c = rpe(sq_est, sq);
  EXPECT_NEAR(c.max, 1.0, 1e-9);
  EXPECT_LT(c.percentile_63, 1.0);
  EXPECT_GT(c.percentile_63, 0.7);
}

TEST(Eval, HeadingErrorOnStraight) {
  const auto gt = straight_poses(2001, 0.1, 1.0);
  auto est = gt;
  // 1 degree heading offset from the start, consistent positions
  const UnitQuaternion q = yaw_quaternion(1.0 * kDeg);
  for (auto& p : est) {
    p.p = quat_to_rot(q) * p.p;
    p.q = q;
  }
  EXPECT_NEAR(rpe(est, gt).max, 0.0, 1e-9);
  // heading drift: error over 100 m equals the chord of the accumulated turn
  est = gt;
  for (auto& p : est) p.q = yaw_quaternion(1e-4 * p.p.x());
  const RpeReport r = rpe(est, gt);
  EXPECT_GT(r.max, 0.0);
}

TEST(Eval, AteOracle) {
  // 3 m offset of one of N points placed at the centroid of a symmetric layout:
  // the rotation stays identity and the RMSE is exactly 3 sqrt(N-1)/N
  auto gt = square_poses();
  gt.push_back(PoseSample{gt.back().t + 0.1, Vec3(50, 50, 0), UnitQuaternion::Identity()});
  auto est = gt;
  const size_t n = gt.size();
  est.back().p.z() += 3.0;
  const double expected = 3.0 * std::sqrt(static_cast<double>(n - 1)) / static_cast<double>(n);
  EXPECT_NEAR(ate_rmse(est, gt), expected, 1e-6);
  // rigid motion is removed entirely
  est = gt;
  const Mat3 R = quat_to_rot(so3_exp(Vec3(0.1, -0.2, 0.7)));
  for (auto& p : est) p.p = R * p.p + Vec3(5, -2, 1);
  EXPECT_NEAR(ate_rmse(est, gt), 0.0, 1e-9);
}

TEST(Eval, DegenerateInputs) {
  const auto line = straight_poses(3000, 0.1, 1.0);
  EXPECT_THROW(ate_rmse(line, line), DataError);
  EXPECT_THROW(rpe(line, {}), DataError);
  EXPECT_THROW(rpe(straight_poses(50, 0.1, 1.0), straight_poses(50, 0.1, 1.0)), DataError);
  EXPECT_THROW(rpe(line, line, 0.0), std::invalid_argument);
  const EvalReport r = evaluate(line, line);
  EXPECT_FALSE(r.has_ate);
  EXPECT_EQ(report_text(r).find("ate_rmse"), std::string::npos);
}

// --- pipeline behaviour ------------------------------------------------------------------

TEST(Pipeline, FrozenParametersStayConstant) {
  SimulationConfig cfg;
  cfg.trajectory.segments = {Segment::straight(200.0, 14.0), Segment::arc(35.0, std::numbers::pi / 2.0, 11.0),
                             Segment::straight(100.0, 11.0)};
  cfg.errors.gyro.bias = Vec3(0.3, -0.2, 0.5) * kDeg;
  const Dataset d = simulate(cfg);
  RunConfig rc;
  rc.disable_gyro_calibration = true;
  GyroParams init;
  init.bias = Vec3(0.1, 0.1, 0.1) * kDeg;
  rc.initial_params = init;
  const RunResult r = run_filter(d, rc);
  for (const auto& p : r.params) EXPECT_EQ(p.params.to_vector(), init.to_vector());
  EXPECT_GT(r.counters.camera_blocks, 0);
  EXPECT_TRUE(r.health.healthy());
}

TEST(Pipeline, WheelImuOnlyIgnoresCamera) {
  SimulationConfig cfg;
  cfg.trajectory.segments = {Segment::straight(200.0, 14.0)};
  const Dataset d = simulate(cfg);
  RunConfig rc;
  rc.wheel_imu_only = true;
  const RunResult r = run_filter(d, rc);
  EXPECT_EQ(r.counters.camera_blocks, 0);
  EXPECT_EQ(r.counters.features_initialized, 0);
  EXPECT_EQ(r.final_state.dim(), 9);
  EXPECT_EQ(r.counters.vehicle_rows, static_cast<long>(d.wheel.size()) - 1);
  EXPECT_EQ(r.trajectory.size(), d.imu.size());
}

TEST(Pipeline, ImageModeTracksLoop) {
  SimulationConfig cfg;
  cfg.mode = CameraMode::kImage;
  cfg.errors.gyro.bias = Vec3(0.3, -0.2, 0.5) * kDeg;
  const Dataset d = simulate(cfg);
  const RunResult r = run_filter(d, RunConfig{});
  EXPECT_GT(r.counters.camera_blocks, 10 * r.counters.frames);
  EXPECT_LT(r.counters.gated_blocks, r.counters.camera_blocks / 20);
  const RpeReport rep = rpe(r.trajectory, d.gt);
  EXPECT_LT(rep.percentile_95, 2.0);
  EXPECT_NEAR(r.params.back().params.bias.z(), cfg.errors.gyro.bias.z(), 0.05 * kDeg);
}

// Zero noise, zero gyro errors, vehicle rows only: on data the filter's
// discrete model reproduces exactly the parameters do not move.
TEST(Pipeline, ParametersStationaryOnConsistentData) {
  SimulationConfig cfg;
  cfg.errors = SensorErrorSpec::noiseless();
  cfg.mode = CameraMode::kNone;
  cfg.trajectory.segments = {Segment::straight(200.0, 14.0), Segment::straight(200.0, 8.0),
                             Segment::straight(200.0, 14.0)};
  const Dataset d = simulate(cfg);
  const RunResult r = run_filter(d, RunConfig{});
  double worst = 0.0;
  for (size_t i = 1; i < r.params.size(); ++i) {
    const double step = (r.params[i].params.to_vector() - r.params[i - 1].params.to_vector()).cwiseAbs().maxCoeff();
    worst = std::max(worst, step);
  }
  EXPECT_LT(worst, 1e-9);
  EXPECT_LT((r.params.back().params.to_vector() - GyroParams{}.to_vector()).cwiseAbs().maxCoeff(), 1e-7);
}

// Through a turn the 100 Hz samples of the continuous lateral dynamics leave
// residuals of a few 1e-5 m/s at the curvature kinks; drift stays small.
TEST(Pipeline, ParametersNearlyStationaryThroughTurn) {
  SimulationConfig cfg;
  cfg.errors = SensorErrorSpec::noiseless();
  cfg.mode = CameraMode::kNone;
  cfg.trajectory.segments = {Segment::straight(200.0, 14.0), Segment::arc(35.0, std::numbers::pi / 2.0, 11.0),
                             Segment::straight(100.0, 11.0)};
  const Dataset d = simulate(cfg);
  const RunResult r = run_filter(d, RunConfig{});
  double worst = 0.0;
  for (size_t i = 1; i < r.params.size(); ++i) {
    const double step = (r.params[i].params.to_vector() - r.params[i - 1].params.to_vector()).cwiseAbs().maxCoeff();
    worst = std::max(worst, step);
  }
  EXPECT_LT(worst, 1e-5);
  const GyroParams fin = r.params.back().params;
  EXPECT_LT(fin.bias.cwiseAbs().maxCoeff(), 0.001 * kDeg);
  EXPECT_NEAR(fin.scale_z, 1.0, 1e-4);
}

TEST(Pipeline, StandstillUpdatesDuringStop) {
  SimulationConfig cfg;
  cfg.trajectory = urban_loop(1);
  cfg.mode = CameraMode::kNone;
  const Dataset d = simulate(cfg);
  const RunResult r = run_filter(d, RunConfig{});
  // 10 s stop at 100 Hz minus the 0.5 s confirmation window
  EXPECT_NEAR(static_cast<double>(r.counters.standstill_updates), 950.0, 5.0);
  RunConfig off;
  off.use_standstill = false;
  EXPECT_EQ(run_filter(d, off).counters.standstill_updates, 0);
}

TEST(Pipeline, RejectsBadConfigAndData) {
  SimulationConfig cfg;
  cfg.trajectory.segments = {Segment::straight(20.0, 10.0)};
  const Dataset d = simulate(cfg);
  RunConfig rc;
  rc.noise.forgetting = 1.5;
  EXPECT_THROW(run_filter(d, rc), ConfigError);
  rc = RunConfig{};
  rc.max_features = -1;
  EXPECT_THROW(run_filter(d, rc), ConfigError);
  Dataset bad = d;
  std::swap(bad.imu[3], bad.imu[4]);
  EXPECT_THROW(run_filter(bad, RunConfig{}), DataError);
}
