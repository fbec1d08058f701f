#pragma once

// Parameter channel on a linear regression: scalar measurements
// y_k = phi_k theta + e_k enter the filter through the direct parameter
// Jacobian D = phi_k only. The recursive estimate is compared with the
// exponentially weighted batch least-squares solution including the prior.

#include <vigcal/filter.hpp>

#include <cmath>
#include <random>

namespace vigcal::testing {

struct RlsComparison {
  Vec6 truth = Vec6::Zero();
  Vec6 recursive = Vec6::Zero();
  Vec6 batch = Vec6::Zero();
  double max_diff = 0.0;
};

inline RlsComparison rls_vs_batch(int steps, double lambda, std::uint64_t seed = 7) {
  const double r = 1e-4;
  NoiseConfig noise;
  noise.forgetting = lambda;
  noise.s0 = Vec6::Constant(1e-2);
  FilterState fs = make_filter_state(NavState{}, GyroParams{}, 0, noise);

  RlsComparison out;
  out.truth << 0.01, -0.02, 0.005, 1.02, 0.01, -0.015;
  const Vec6 theta0 = fs.params.to_vector();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Mat6 info = std::pow(lambda, steps) * Mat6(noise.s0.cwiseInverse().asDiagonal());
  Vec6 rhs = info * theta0;
  for (int k = 1; k <= steps; ++k) {
    Eigen::Matrix<double, 1, 6> phi;
    for (int i = 0; i < 6; ++i) phi(i) = unit(rng);
    const double y = phi.dot(out.truth) + std::sqrt(r) * unit(rng);

    MeasurementBlock b;
    b.residual = VectorXd::Constant(1, y - phi.dot(fs.params.to_vector()));
    b.H = MatrixXd::Zero(1, fs.dim());
    b.R = MatrixXd::Constant(1, 1, r);
    b.D = phi;
    MeasurementBatch batch;
    batch.blocks.push_back(b);
    update_in_place(fs, batch, noise);

    const double w = std::pow(lambda, steps - k + 1) / r;
    info += w * phi.transpose() * phi;
    rhs += w * phi.transpose() * y;
  }
  out.recursive = fs.params.to_vector();
  out.batch = info.ldlt().solve(rhs);
  out.max_diff = (out.recursive - out.batch).cwiseAbs().maxCoeff();
  return out;
}

}  // namespace vigcal::testing
