#pragma once

#include "eediff/backbone.hpp"
#include "eediff/dataset.hpp"
#include "eediff/model.hpp"
#include "eediff/sampling.hpp"
#include "eediff/schedule.hpp"

#include <filesystem>
#include <vector>

namespace eediff {

struct EfficiencyReport {
  int depth = 0;
  double avg_layers = 0.0;
  double layers_ratio_reduction = 0.0;  // 1 - avg / N, in [0, 1 - 1/N]
  double flops_full = 0.0;
  double flops_actual = 0.0;

  // Negative percentage as reported in tables, e.g. -47.7.
  double reduction_percent() const { return 0.0 - 100.0 * layers_ratio_reduction; }
  double flops_reduction() const { return 1.0 - flops_actual / flops_full; }
};

double layers_reduction(double avg_layers, int depth);

// Theoretical cost per sample and denoising step, one multiply-add = 1 unit.
// d = hidden width, L = tokens per sample (data tokens + time token),
// r = MLP ratio, P = token length, M = data tokens, N = depth.
//
//   attention  4 d^2 L + 2 d L^2    (qkv + output projections, scores + mix)
//   mlp        2 r d^2 L
//   uem        d M + d              (token part per token, time part once)
//   skip       2 d^2 L per skip layer, averaged over the N layers
//   embedding  d^2 + P d M          (time projection, patch embedding)
//   exit head  d P M                (one head, whichever layer exits)
//
// per_layer = attention + mlp + uem + skip; fixed = embedding + exit head;
// cost(avg) = fixed + avg * per_layer.
struct FlopsBreakdown {
  double attention = 0.0;
  double mlp = 0.0;
  double uem = 0.0;
  double skip = 0.0;
  double embedding = 0.0;
  double head = 0.0;

  double per_layer() const { return attention + mlp + uem + skip; }
  double fixed() const { return embedding + head; }
};

FlopsBreakdown flops_breakdown(const BackboneConfig& config);

struct FlopsPair {
  double full = 0.0;
  double actual = 0.0;
};

FlopsPair flops_estimate(const BackboneConfig& config, double avg_layers);

EfficiencyReport layer_usage_report(const SampleRun& run, const BackboneConfig& config);
// Depth-only variant; FLOPs fields are left at zero.
EfficiencyReport layer_usage_report(const SampleRun& run, int depth);

// Squared MMD with k(x, y) = mean_h exp(-|x - y|^2 / (2 h^2)). The unbiased
// form drops the diagonal of the within-set terms and needs two points per
// set. Both forms are exactly symmetric in their arguments.
double mmd_squared(const Matrix& a, const Matrix& b, const std::vector<double>& bandwidths,
                   bool unbiased = true);

// |mu_a - mu_b|^2 + tr(C_a + C_b - 2 (C_a^{1/2} C_b C_a^{1/2})^{1/2}) on raw values.
double frechet_distance(const Matrix& a, const Matrix& b);

struct RedundancyProfile {
  std::vector<int> t_grid;
  Matrix mse;  // t_grid.size() x N, entry (k, i-1) = mean |g_i - g_N|^2 at t_grid[k]
};

// Probe batch: `probe_n` dataset rows and noise drawn from `probe_seed`,
// diffused to each t on the fly.
RedundancyProfile layer_redundancy_profile(const Denoiser& backbone, const Dataset& data,
                                           const NoiseSchedule& sched,
                                           const std::vector<int>& t_grid, Index probe_n,
                                           std::uint64_t probe_seed);

struct ErrorAccumulation {
  std::vector<int> timesteps;
  std::vector<double> mse;         // per step, between early-exit and full states
  double avg_layers = 0.0;         // of the early-exit chain
};

// Runs an early-exit chain and a full-depth chain in lockstep from the same
// x_T with the same injected noise.
ErrorAccumulation error_accumulation_curve(const EarlyExitModel& model, const ExitPolicy& policy,
                                           const NoiseSchedule& sched,
                                           const SamplerOptions& options, Index n,
                                           std::uint64_t seed);

struct TradeoffPoint {
  double threshold = 0.0;
  double quality = 0.0;  // squared MMD against the reference set
  double avg_layers = 0.0;
  double layers_ratio_reduction = 0.0;
  double flops_actual = 0.0;
  double flops_full = 0.0;
};

struct SweepSettings {
  SamplerOptions sampler;
  Index n = 1000;
  std::uint64_t seed = 0;
  std::vector<double> bandwidths{0.1, 0.2, 0.5, 1.0, 2.0};
  Aggregation aggregation = Aggregation::Mean;
  int min_layer = 1;
};

TradeoffPoint evaluate_threshold(const EarlyExitModel& model, const NoiseSchedule& sched,
                                 double threshold, const SweepSettings& settings,
                                 const Matrix& reference);

// One generation + quality evaluation per threshold, same seed throughout.
std::vector<TradeoffPoint> threshold_sweep(const EarlyExitModel& model, const NoiseSchedule& sched,
                                           const std::vector<double>& thresholds,
                                           const SweepSettings& settings, const Matrix& reference);

struct Calibration {
  double threshold = 0.0;
  double reduction = 0.0;
};

// Geometric bisection for the threshold whose sampled layer reduction is
// closest to `target`, using the settings' sampler, seed and n.
Calibration threshold_for_reduction(const EarlyExitModel& model, const NoiseSchedule& sched,
                                    double target, const SweepSettings& settings,
                                    int iterations = 14);

void write_efficiency_csv(const EfficiencyReport& report, const std::filesystem::path& path);
void write_tradeoff_csv(const std::vector<TradeoffPoint>& points, const std::filesystem::path& path);
void write_redundancy_csv(const RedundancyProfile& profile, const std::filesystem::path& path);
void write_error_accum_csv(const ErrorAccumulation& curve, const std::filesystem::path& path);

}  // namespace eediff
