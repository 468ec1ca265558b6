#pragma once

#include "eediff/common.hpp"

#include <vector>

namespace eediff {

// Discrete variance-preserving noise schedule. Tables are indexed by timestep
// t in [1, T]; index 0 holds the t = 0 convention (alpha_bar = 1, beta = 0).
//
// Two coefficient families are kept apart on purpose:
//   alphas / betas             per-step transition, alpha_t = 1 - beta_t
//   signal_coefs / noise_coefs closed-form marginal, sqrt(abar_t), sqrt(1 - abar_t)
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return steps_; }

  double beta(int t) const { return betas_[check(t)]; }
  double alpha(int t) const { return alphas_[check(t)]; }
  double alpha_bar(int t) const { return alpha_bars_[check0(t)]; }
  double signal_coef(int t) const { return signal_coefs_[check0(t)]; }
  double noise_coef(int t) const { return noise_coefs_[check0(t)]; }
  double posterior_variance(int t) const { return posterior_vars_[check(t)]; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  explicit NoiseSchedule(std::vector<double> betas);
  std::size_t check(int t) const;
  std::size_t check0(int t) const;

  int steps_ = 0;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> signal_coefs_;
  std::vector<double> noise_coefs_;
  std::vector<double> posterior_vars_;
};

struct NoisySample {
  Matrix x_t;
  int t = 0;
  Matrix eps;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, rowwise over a batch.
NoisySample forward_diffuse(const Matrix& x0, int t, const Matrix& eps,
                            const NoiseSchedule& sched);

// Per-row timesteps; row r of x0 is diffused to timesteps[r].
Matrix forward_diffuse_batch(const Matrix& x0, const std::vector<int>& timesteps,
                             const Matrix& eps, const NoiseSchedule& sched);

// Mean of p(x_{t-1} | x_t) given a noise estimate.
Matrix posterior_mean(const Matrix& x_t, const Matrix& eps_hat, int t,
                      const NoiseSchedule& sched);

double posterior_variance(int t, const NoiseSchedule& sched);

}  // namespace eediff
