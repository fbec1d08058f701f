#pragma once

// Runs the adaptive filter over a dataset: IMU-rate prediction, vehicle
// rows at wheel rate, camera rows stacked once per frame.

#include <vigcal/dataset.hpp>
#include <vigcal/errors.hpp>
#include <vigcal/filter.hpp>
#include <vigcal/image.hpp>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace vigcal {

struct RunConfig {
  NoiseConfig noise;
  int max_features = 16;
  bool disable_gyro_calibration = false;  // parameter channel off, params stay at their initial values
  bool disable_lateral_model = false;     // lateral row becomes v_y = 0
  bool wheel_imu_only = false;            // camera rows are ignored
  bool use_standstill = true;
  std::optional<GyroParams> initial_params;
  bool check_health = true;
  int eigen_check_every = 100;
  ImageFeatureConfig image;
};

struct ParamRecord {
  double t = 0.0;
  GyroParams params;
  Vec6 s_diag = Vec6::Zero();
};

struct RunCounters {
  long imu_steps = 0;
  long vehicle_rows = 0;
  long frames = 0;
  long camera_blocks = 0;
  long gated_blocks = 0;
  long features_initialized = 0;
  long features_dropped = 0;
  long standstill_updates = 0;
  long skipped_updates = 0;
};

struct HealthStats {
  long checks = 0;
  long violations = 0;
  double min_eig_P = std::numeric_limits<double>::infinity();
  double min_eig_S = std::numeric_limits<double>::infinity();
  double max_asym_P = 0.0;
  double max_asym_S = 0.0;

  bool healthy() const { return violations == 0; }
};

struct RunResult {
  std::vector<PoseSample> trajectory;
  std::vector<ParamRecord> params;
  std::vector<Vec3> velocity;
  RunCounters counters;
  HealthStats health;
  std::vector<std::string> diagnostics;
  FilterState final_state;
};

inline void check_health(const FilterState& fs, long step, int eigen_every, HealthStats& h) {
  constexpr double tol = 1e-9;
  ++h.checks;
  const double asym_p = max_asymmetry(fs.P);
  const double asym_s = max_asymmetry(fs.S);
  h.max_asym_P = std::max(h.max_asym_P, asym_p);
  h.max_asym_S = std::max(h.max_asym_S, asym_s);
  const double eig_s = min_eigenvalue(fs.S);
  h.min_eig_S = std::min(h.min_eig_S, eig_s);
  bool ok = asym_p <= tol && asym_s <= tol && eig_s >= -tol && psd_within(fs.P, tol);
  if (eigen_every > 0 && step % eigen_every == 0) {
    const double eig_p = min_eigenvalue(fs.P);
    h.min_eig_P = std::min(h.min_eig_P, eig_p);
    ok = ok && eig_p >= -tol;
  }
  if (!ok) ++h.violations;
}

inline NavState initial_nav(const Dataset& d) {
  NavState nav;
  const double t0 = d.imu.front().t;
  if (!d.gt.empty()) {
    const auto it = std::min_element(d.gt.begin(), d.gt.end(), [&](const PoseSample& a, const PoseSample& b) {
      return std::abs(a.t - t0) < std::abs(b.t - t0);
    });
    if (std::abs(it->t - t0) <= 0.01) {
      nav.p = it->p;
      nav.q = it->q;
    }
  }
  const auto w = std::min_element(d.wheel.begin(), d.wheel.end(), [&](const WheelSample& a, const WheelSample& b) {
    return std::abs(a.t - t0) < std::abs(b.t - t0);
  });
  nav.v = Vec3(w->v_x, 0.0, 0.0);
  return nav;
}

inline void validate_dataset(const Dataset& d) {
  if (d.imu.size() < 2) throw DataError("dataset: need at least two IMU samples");
  if (d.wheel.empty()) throw DataError("dataset: no wheel samples");
  for (size_t i = 1; i < d.imu.size(); ++i) {
    const double dt = d.imu[i].t - d.imu[i - 1].t;
    if (!(dt > 0.0) || dt > 0.1) {
      throw DataError("dataset: IMU sample " + std::to_string(i) + " has invalid spacing " + std::to_string(dt));
    }
  }
  if (!d.calib.intr.valid()) throw DataError("dataset: invalid camera intrinsics");
}

inline RunResult run_filter(const Dataset& d, const RunConfig& cfg,
                            const std::function<void(const FilterState&)>& observer = {}) {
  validate_dataset(d);
  if (!cfg.noise.valid()) throw ConfigError("noise configuration: variances must be positive, 0 < lambda <= 1");
  if (cfg.max_features < 0) throw ConfigError("max_features must be non-negative");

  const bool use_camera = !cfg.wheel_imu_only && (d.image_mode() || !d.bearing_frames.empty());
  const int slots = use_camera ? cfg.max_features : 0;
  const GyroParams p0 = cfg.initial_params.value_or(GyroParams{});
  FilterState fs = make_filter_state(initial_nav(d), p0, slots, cfg.noise, d.imu.front().t);
  if (cfg.disable_gyro_calibration) fs.S.setZero();
  const UpdateOptions upd{!cfg.disable_gyro_calibration};
  const double rho_sg = cfg.disable_lateral_model ? 0.0 : d.calib.side_slip_gradient;
  const FilterModel model{d.calib.intr, d.calib.ext, GravityModel{}};

  RunResult res;
  res.trajectory.reserve(d.imu.size());
  res.params.reserve(d.imu.size());
  StandstillDetector standstill;
  size_t wi = 0, ci = 0;
  long next_track = 0;
  const double frame_tol = 0.25 / d.calib.imu_rate;

  auto record = [&](const FilterState& s) {
    res.trajectory.push_back(PoseSample{s.t, s.nav.p, s.nav.q});
    res.velocity.push_back(s.nav.v);
    res.params.push_back(ParamRecord{s.t, s.params, s.S.diagonal()});
  };

  predict_in_place(fs, d.imu.front(), model, cfg.noise);
  if (use_camera) {
    const double t0 = d.imu.front().t;
    if (!d.image_mode() && std::abs(d.bearing_frames.front().t - t0) <= frame_tol) {
      const FeatureEvents ev = manage_features(fs, d.bearing_frames.front().obs, d.calib.intr, cfg.noise);
      res.counters.features_initialized += ev.initialized;
      ++res.counters.frames;
      ci = 1;
    } else if (d.image_mode() && std::abs(d.image_frames.front().t - t0) <= frame_tol) {
      const auto pyr = build_pyramid(*frame_image(d, d.image_frames.front()), cfg.image.patch_levels);
      const FeatureEvents ev = manage_features(fs, pyr, d.calib.intr, cfg.noise, cfg.image, next_track);
      res.counters.features_initialized += ev.initialized;
      ++res.counters.frames;
      ci = 1;
    }
  }
  record(fs);
  for (size_t k = 1; k < d.imu.size(); ++k) {
    const ImuSample& imu = d.imu[k];
    predict_in_place(fs, imu, model, cfg.noise);
    ++res.counters.imu_steps;
    MeasurementBatch batch;

    std::optional<WheelSample> wheel;
    while (wi < d.wheel.size() && d.wheel[wi].t <= imu.t + frame_tol) {
      if (std::abs(d.wheel[wi].t - imu.t) <= frame_tol) wheel = d.wheel[wi];
      ++wi;
    }
    if (wheel) {
      batch.blocks.push_back(vehicle_block(fs, VehicleVelocityMeasurement{wheel->v_x, imu.accel.y()}, rho_sg, cfg.noise));
      ++res.counters.vehicle_rows;
      const bool still = standstill.update(imu.t, wheel->v_x);
      if (cfg.use_standstill && still) {
        append_standstill_rows(fs, imu, cfg.noise, true, batch);
        ++res.counters.standstill_updates;
      }
    }

    // camera frame aligned with this IMU sample
    const BearingFrame* bframe = nullptr;
    const ImageFrame* iframe = nullptr;
    std::shared_ptr<const Image> image;
    std::vector<Image> pyramid;
    if (use_camera) {
      if (d.image_mode()) {
        while (ci < d.image_frames.size() && d.image_frames[ci].t < imu.t - frame_tol) ++ci;
        if (ci < d.image_frames.size() && std::abs(d.image_frames[ci].t - imu.t) <= frame_tol) {
          iframe = &d.image_frames[ci++];
        }
      } else {
        while (ci < d.bearing_frames.size() && d.bearing_frames[ci].t < imu.t - frame_tol) ++ci;
        if (ci < d.bearing_frames.size() && std::abs(d.bearing_frames[ci].t - imu.t) <= frame_tol) {
          bframe = &d.bearing_frames[ci++];
        }
      }
    }
    if (bframe) {
      ++res.counters.frames;
      std::map<long, const ObservedBearing*> by_id;
      for (const auto& ob : bframe->obs) by_id[ob.id] = &ob;
      for (int j = 0; j < static_cast<int>(fs.slots.size()); ++j) {
        const FeatureSlot& s = fs.slots[j];
        if (!s.active) continue;
        auto it = by_id.find(s.track_id);
        if (it == by_id.end()) continue;
        MeasurementBlock b;
        try {
          b = bearing_block(fs, j, it->second->bearing, cfg.noise);
        } catch (const std::domain_error&) {
          continue;
        }
        if (gate(fs, b, cfg.noise.gate_probability)) {
          batch.blocks.push_back(std::move(b));
          ++res.counters.camera_blocks;
        } else {
          ++res.counters.gated_blocks;
        }
      }
    }
    if (iframe) {
      ++res.counters.frames;
      image = frame_image(d, *iframe);
      pyramid = build_pyramid(*image, cfg.image.patch_levels);
      for (int j = 0; j < static_cast<int>(fs.slots.size()); ++j) {
        FeatureSlot& s = fs.slots[j];
        if (!s.active) continue;
        auto b = intensity_block(fs, j, pyramid, d.calib.intr, cfg.noise);
        if (b && gate(fs, *b, cfg.noise.gate_probability)) {
          batch.blocks.push_back(std::move(*b));
          ++res.counters.camera_blocks;
          s.misses = 0;
        } else {
          if (b) ++res.counters.gated_blocks;
          ++s.misses;
        }
      }
    }

    if (!batch.empty()) {
      const UpdateReport rep = update_in_place(fs, batch, cfg.noise, upd);
      if (!rep.applied) {
        ++res.counters.skipped_updates;
        if (res.diagnostics.size() < 100) {
          res.diagnostics.push_back("t=" + format_double(imu.t) + ": " + rep.diagnostic);
        }
      }
    }
    if (bframe) {
      const FeatureEvents ev = manage_features(fs, bframe->obs, d.calib.intr, cfg.noise);
      res.counters.features_initialized += ev.initialized;
      res.counters.features_dropped += ev.dropped;
    }
    if (iframe) {
      const FeatureEvents ev = manage_features(fs, pyramid, d.calib.intr, cfg.noise, cfg.image, next_track);
      res.counters.features_initialized += ev.initialized;
      res.counters.features_dropped += ev.dropped;
    }
    if (!fs.nav.finite() || !fs.P.allFinite()) {
      throw NumericalError("filter diverged at t=" + format_double(imu.t));
    }
    if (cfg.check_health) check_health(fs, static_cast<long>(k), cfg.eigen_check_every, res.health);
    if (observer) observer(fs);
    record(fs);
  }
  if (cfg.check_health) {
    res.health.min_eig_P = std::min(res.health.min_eig_P, min_eigenvalue(fs.P));
  }
  res.final_state = std::move(fs);
  return res;
}

inline std::string params_csv(const std::vector<ParamRecord>& rows) {
  CsvWriter w({"t", "bx", "by", "bz", "sz", "syx", "sxy", "var_bx", "var_by", "var_bz", "var_sz", "var_syx",
               "var_sxy"});
  for (const auto& r : rows) {
    const Vec6 p = r.params.to_vector();
    w.row(r.t, p(0), p(1), p(2), p(3), p(4), p(5), r.s_diag(0), r.s_diag(1), r.s_diag(2), r.s_diag(3),
          r.s_diag(4), r.s_diag(5));
  }
  return w.str();
}

// Last row of a params.csv file, used to start (and freeze) a calibrated run.
inline GyroParams read_final_params(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, {"t", "bx", "by", "bz", "sz", "syx", "sxy", "var_bx", "var_by", "var_bz",
                                     "var_sz", "var_syx", "var_sxy"});
  if (t.rows.empty()) throw DataError(path.string() + ": no parameter rows");
  const auto& r = t.rows.back();
  const std::string loc = where(path, t, t.rows.size() - 1);
  Vec6 v;
  for (int i = 0; i < 6; ++i) v(i) = parse_double(r[i + 1], loc);
  const GyroParams p = GyroParams::from_vector(v);
  if (!p.valid()) throw DataError(loc + ": invalid gyro parameters");
  return p;
}

}  // namespace vigcal
