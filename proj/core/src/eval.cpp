#include "eediff/eval.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace eediff {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Mean kernel value over all pairs (or all off-diagonal pairs of a set with
// itself when `skip_diagonal`).
double mean_kernel(const Matrix& x, const Matrix& y, const std::vector<double>& inv2h2,
                   bool skip_diagonal) {
  double total = 0.0;
  const Index dim = x.cols();
  for (Index i = 0; i < x.rows(); ++i) {
    double row = 0.0;
    for (Index j = 0; j < y.rows(); ++j) {
      if (skip_diagonal && i == j) continue;
      double d2 = 0.0;
      for (Index c = 0; c < dim; ++c) {
        const double diff = x(i, c) - y(j, c);
        d2 += diff * diff;
      }
      double k = 0.0;
      for (double s : inv2h2) k += std::exp(-d2 * s);
      row += k;
    }
    total += row;
  }
  const double pairs = skip_diagonal ? static_cast<double>(x.rows()) * static_cast<double>(x.rows() - 1)
                                     : static_cast<double>(x.rows()) * static_cast<double>(y.rows());
  return total / (pairs * static_cast<double>(inv2h2.size()));
}

// Fixed argument order for the cross term so that swapping the sets cannot
// change the summation order.
bool canonical_first(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return !std::lexicographical_compare(b.data(), b.data() + b.size(), a.data(), a.data() + a.size());
}

Matrix sqrtm_psd(const Matrix& m) {
  const Eigen::MatrixXd dense = m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
  const Eigen::VectorXd vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

void mean_cov(const Matrix& x, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / static_cast<double>(std::max<Index>(x.rows() - 1, 1));
}

}  // namespace

double layers_reduction(double avg_layers, int depth) {
  if (depth < 1) throw RangeError("depth must be >= 1");
  return 1.0 - avg_layers / static_cast<double>(depth);
}

FlopsBreakdown flops_breakdown(const BackboneConfig& config) {
  config.validate();
  const TokenLayout layout(config);
  const double d = config.hidden_dim;
  const double m = layout.data_tokens();
  const double l = m + 1.0;
  const double p = layout.token_len();
  const double n = config.depth;
  FlopsBreakdown f;
  f.attention = 4.0 * d * d * l + 2.0 * d * l * l;
  f.mlp = 2.0 * config.mlp_ratio * d * d * l;
  f.uem = d * m + d;
  f.skip = 2.0 * d * d * l * static_cast<double>(config.skip_pairs.size()) / n;
  f.embedding = d * d + p * d * m;
  f.head = d * p * m;
  return f;
}

FlopsPair flops_estimate(const BackboneConfig& config, double avg_layers) {
  if (avg_layers < 0.0 || avg_layers > config.depth) {
    throw RangeError("average layers must lie in [0, N]");
  }
  const FlopsBreakdown f = flops_breakdown(config);
  return {f.fixed() + config.depth * f.per_layer(), f.fixed() + avg_layers * f.per_layer()};
}

EfficiencyReport layer_usage_report(const SampleRun& run, int depth) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& row : run.layers_used) {
    for (int v : row) {
      sum += v;
      ++count;
    }
  }
  if (count == 0) throw RangeError("layer usage report needs a nonempty run");
  EfficiencyReport r;
  r.depth = depth;
  r.avg_layers = sum / static_cast<double>(count);
  r.layers_ratio_reduction = layers_reduction(r.avg_layers, depth);
  return r;
}

EfficiencyReport layer_usage_report(const SampleRun& run, const BackboneConfig& config) {
  EfficiencyReport r = layer_usage_report(run, config.depth);
  const FlopsPair f = flops_estimate(config, r.avg_layers);
  r.flops_full = f.full;
  r.flops_actual = f.actual;
  return r;
}

double mmd_squared(const Matrix& a, const Matrix& b, const std::vector<double>& bandwidths,
                   bool unbiased) {
  if (a.cols() != b.cols()) throw ShapeError("mmd: sets differ in dimensionality");
  if (bandwidths.empty()) throw RangeError("mmd: no bandwidths given");
  const Index min_points = unbiased ? 2 : 1;
  if (a.rows() < min_points || b.rows() < min_points) {
    throw RangeError("mmd: too few points per set");
  }
  std::vector<double> inv2h2;
  for (double h : bandwidths) {
    if (!(h > 0.0)) throw RangeError("mmd: bandwidths must be positive");
    inv2h2.push_back(1.0 / (2.0 * h * h));
  }
  const double kaa = mean_kernel(a, a, inv2h2, unbiased);
  const double kbb = mean_kernel(b, b, inv2h2, unbiased);
  const double kab = canonical_first(a, b) ? mean_kernel(a, b, inv2h2, false)
                                           : mean_kernel(b, a, inv2h2, false);
  return kaa + kbb - 2.0 * kab;
}

double frechet_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("frechet: sets differ in dimensionality");
  if (a.rows() < 2 || b.rows() < 2) throw RangeError("frechet: too few points per set");
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd ca, cb;
  mean_cov(a, ma, ca);
  mean_cov(b, mb, cb);
  const Matrix sa = sqrtm_psd(ca);
  const Matrix cross = sqrtm_psd(sa * cb * sa);
  return (ma - mb).squaredNorm() + (ca + cb).trace() - 2.0 * cross.trace();
}

RedundancyProfile layer_redundancy_profile(const Denoiser& backbone, const Dataset& data,
                                           const NoiseSchedule& sched,
                                           const std::vector<int>& t_grid, Index probe_n,
                                           std::uint64_t probe_seed) {
  if (t_grid.empty()) throw RangeError("redundancy profile needs a nonempty timestep grid");
  std::mt19937_64 rng(probe_seed);
  std::uniform_int_distribution<Index> pick(0, data.data.rows() - 1);
  Matrix x0(probe_n, data.data.cols());
  for (Index i = 0; i < probe_n; ++i) x0.row(i) = data.data.row(pick(rng));
  const Matrix eps = standard_normal(probe_n, data.data.cols(), rng);

  const int n = backbone.depth();
  RedundancyProfile out;
  out.t_grid = t_grid;
  out.mse = Matrix::Zero(static_cast<Index>(t_grid.size()), n);
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const NoisySample s = forward_diffuse(x0, t_grid[k], eps, sched);
    const ForwardResult r = backbone.forward_collect(s.x_t, t_grid[k]);
    const Matrix& last = r.trace.preds.back();
    for (int i = 0; i < n; ++i) {
      out.mse(static_cast<Index>(k), i) =
          (r.trace.preds[static_cast<std::size_t>(i)] - last).array().square().mean();
    }
  }
  return out;
}

ErrorAccumulation error_accumulation_curve(const EarlyExitModel& model, const ExitPolicy& policy,
                                           const NoiseSchedule& sched,
                                           const SamplerOptions& options, Index n,
                                           std::uint64_t seed) {
  policy.validate(model.depth());
  const Index dim = model.backbone.layout().data_dim();
  ErrorAccumulation out;
  out.timesteps = sampler_timesteps(options.kind, sched, options.steps);
  ChainNoise noise_ee(n, dim, seed);
  ChainNoise noise_full(n, dim, seed);
  Matrix x_ee = noise_ee.draw();
  Matrix x_full = noise_full.draw();
  double layer_sum = 0.0;
  for (std::size_t j = 0; j < out.timesteps.size(); ++j) {
    const int t = out.timesteps[j];
    const StepPrediction ee = early_exit_denoise(model, x_ee, t, policy);
    const Matrix full = model.backbone.forward_full(x_full, std::vector<int>(static_cast<std::size_t>(n), t));
    for (int v : ee.exit_layer) layer_sum += v;
    Matrix z_ee, z_full;
    if (options.kind == SamplerKind::Ancestral && t > 1) {
      z_ee = noise_ee.draw();
      z_full = noise_full.draw();
    }
    x_ee = sampler_update(options.kind, x_ee, ee.eps_hat, out.timesteps, j, sched, z_ee);
    x_full = sampler_update(options.kind, x_full, full, out.timesteps, j, sched, z_full);
    if (!x_ee.allFinite() || !x_full.allFinite()) {
      throw NumericalError("paired trajectory became non-finite at step " + std::to_string(j + 1));
    }
    out.mse.push_back((x_ee - x_full).array().square().mean());
  }
  out.avg_layers = layer_sum / (static_cast<double>(n) * static_cast<double>(out.timesteps.size()));
  return out;
}

TradeoffPoint evaluate_threshold(const EarlyExitModel& model, const NoiseSchedule& sched,
                                 double threshold, const SweepSettings& settings,
                                 const Matrix& reference) {
  ExitPolicy policy;
  policy.threshold = threshold;
  policy.aggregation = settings.aggregation;
  policy.min_layer = settings.min_layer;
  SampleRun run = run_sampler(early_exit_predictor(model, policy), sched, settings.n,
                              model.backbone.layout().data_dim(), settings.seed, settings.sampler);
  run.policy = policy;
  const EfficiencyReport eff = layer_usage_report(run, model.backbone.config());
  TradeoffPoint p;
  p.threshold = threshold;
  p.quality = mmd_squared(run.samples, reference, settings.bandwidths, true);
  p.avg_layers = eff.avg_layers;
  p.layers_ratio_reduction = eff.layers_ratio_reduction;
  p.flops_actual = eff.flops_actual;
  p.flops_full = eff.flops_full;
  return p;
}

std::vector<TradeoffPoint> threshold_sweep(const EarlyExitModel& model, const NoiseSchedule& sched,
                                           const std::vector<double>& thresholds,
                                           const SweepSettings& settings, const Matrix& reference) {
  if (thresholds.empty()) throw ConfigError("threshold sweep needs at least one threshold");
  std::vector<TradeoffPoint> out;
  for (double tau : thresholds) out.push_back(evaluate_threshold(model, sched, tau, settings, reference));
  return out;
}

Calibration threshold_for_reduction(const EarlyExitModel& model, const NoiseSchedule& sched,
                                    double target, const SweepSettings& settings, int iterations) {
  ExitPolicy policy;
  policy.aggregation = settings.aggregation;
  policy.min_layer = settings.min_layer;
  const Index dim = model.backbone.layout().data_dim();
  const auto reduction_at = [&](double tau) {
    policy.threshold = tau;
    const SampleRun run = run_sampler(early_exit_predictor(model, policy), sched, settings.n, dim,
                                      settings.seed, settings.sampler);
    return layer_usage_report(run, model.depth()).layers_ratio_reduction;
  };
  double lo = 1e-4, hi = 1.0;
  Calibration best{hi, reduction_at(hi)};
  for (int it = 0; it < iterations; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double r = reduction_at(mid);
    if (std::abs(r - target) < std::abs(best.reduction - target)) best = {mid, r};
    (r < target ? lo : hi) = mid;
  }
  return best;
}

void write_efficiency_csv(const EfficiencyReport& r, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "depth,avg_layers,layers_ratio_reduction,reduction_percent,flops_full,flops_actual\n";
  out << r.depth << ',' << fmt(r.avg_layers) << ',' << fmt(r.layers_ratio_reduction) << ','
      << fmt(r.reduction_percent()) << ',' << fmt(r.flops_full) << ',' << fmt(r.flops_actual) << '\n';
}

void write_tradeoff_csv(const std::vector<TradeoffPoint>& points, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "threshold,mmd,avg_layers,layers_ratio_reduction,flops_actual,flops_full\n";
  for (const auto& p : points) {
    out << fmt(p.threshold) << ',' << fmt(p.quality) << ',' << fmt(p.avg_layers) << ','
        << fmt(p.layers_ratio_reduction) << ',' << fmt(p.flops_actual) << ',' << fmt(p.flops_full) << '\n';
  }
}

void write_redundancy_csv(const RedundancyProfile& profile, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "t,layer,mse\n";
  for (std::size_t k = 0; k < profile.t_grid.size(); ++k) {
    for (Index i = 0; i < profile.mse.cols(); ++i) {
      out << profile.t_grid[k] << ',' << i + 1 << ',' << fmt(profile.mse(static_cast<Index>(k), i)) << '\n';
    }
  }
}

void write_error_accum_csv(const ErrorAccumulation& curve, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "step,t,mse\n";
  for (std::size_t j = 0; j < curve.mse.size(); ++j) {
    out << j + 1 << ',' << curve.timesteps[j] << ',' << fmt(curve.mse[j]) << '\n';
  }
}

}  // namespace eediff
