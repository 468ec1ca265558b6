#include "eediff/schedule.hpp"

#include <cmath>
#include <sstream>

namespace eediff {

namespace {

std::string step_message(int t, int steps) {
  std::ostringstream os;
  os << "timestep " << t << " outside [1, " << steps << "]";
  return os.str();
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) {
    throw RangeError("schedule needs at least one step");
  }
  if (!(beta_start >= 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
    throw RangeError("linear schedule requires 0 <= beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  betas.back() = steps == 1 ? beta_start : beta_end;
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) {
    throw RangeError("schedule needs at least one step");
  }
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) {
      throw RangeError("every beta must lie in [0, 1)");
    }
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas)
    : steps_(static_cast<int>(betas.size())) {
  const auto n = betas.size() + 1;
  betas_.assign(n, 0.0);
  alphas_.assign(n, 1.0);
  alpha_bars_.assign(n, 1.0);
  signal_coefs_.assign(n, 1.0);
  noise_coefs_.assign(n, 0.0);
  posterior_vars_.assign(n, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    betas_[t] = betas[t - 1];
    alphas_[t] = 1.0 - betas_[t];
    alpha_bars_[t] = alpha_bars_[t - 1] * alphas_[t];
    signal_coefs_[t] = std::sqrt(alpha_bars_[t]);
    noise_coefs_[t] = std::sqrt(1.0 - alpha_bars_[t]);
    const double denom = 1.0 - alpha_bars_[t];
    posterior_vars_[t] = denom > 0.0 ? (1.0 - alpha_bars_[t - 1]) / denom * betas_[t] : 0.0;
  }
}

std::size_t NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps_) {
    throw RangeError(step_message(t, steps_));
  }
  return static_cast<std::size_t>(t);
}

std::size_t NoiseSchedule::check0(int t) const {
  if (t < 0 || t > steps_) {
    throw RangeError(step_message(t, steps_));
  }
  return static_cast<std::size_t>(t);
}

NoisySample forward_diffuse(const Matrix& x0, int t, const Matrix& eps,
                            const NoiseSchedule& sched) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw ShapeError("forward_diffuse: noise shape differs from data shape");
  }
  sched.beta(t);  // range check
  NoisySample out;
  out.t = t;
  out.eps = eps;
  out.x_t = sched.signal_coef(t) * x0 + sched.noise_coef(t) * eps;
  return out;
}

Matrix forward_diffuse_batch(const Matrix& x0, const std::vector<int>& timesteps,
                             const Matrix& eps, const NoiseSchedule& sched) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw ShapeError("forward_diffuse: noise shape differs from data shape");
  }
  if (static_cast<Index>(timesteps.size()) != x0.rows()) {
    throw ShapeError("forward_diffuse: one timestep per row required");
  }
  Matrix out(x0.rows(), x0.cols());
  for (Index r = 0; r < x0.rows(); ++r) {
    const int t = timesteps[static_cast<std::size_t>(r)];
    sched.beta(t);
    out.row(r) = sched.signal_coef(t) * x0.row(r) + sched.noise_coef(t) * eps.row(r);
  }
  return out;
}

Matrix posterior_mean(const Matrix& x_t, const Matrix& eps_hat, int t,
                      const NoiseSchedule& sched) {
  if (x_t.rows() != eps_hat.rows() || x_t.cols() != eps_hat.cols()) {
    throw ShapeError("posterior_mean: eps_hat shape differs from x_t shape");
  }
  const double alpha = sched.alpha(t);
  const double one_minus_abar = 1.0 - sched.alpha_bar(t);
  double eps_coef = 0.0;
  if (one_minus_abar > 0.0) {
    eps_coef = (1.0 - alpha) / std::sqrt(one_minus_abar);
  } else if (eps_hat.size() > 0 && eps_hat.cwiseAbs().maxCoeff() != 0.0) {
    std::ostringstream os;
    os << "posterior_mean: degenerate step t=" << t
       << " (alpha_bar = 1) with nonzero noise estimate";
    throw NumericalError(os.str());
  }
  return (x_t - eps_coef * eps_hat) / std::sqrt(alpha);
}

double posterior_variance(int t, const NoiseSchedule& sched) {
  return sched.posterior_variance(t);
}

}  // namespace eediff
