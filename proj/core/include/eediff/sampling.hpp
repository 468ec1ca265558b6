#pragma once

#include "eediff/config.hpp"
#include "eediff/model.hpp"
#include "eediff/schedule.hpp"
#include "eediff/uem.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace eediff {

// Noise estimate for a batch at a common timestep, with how it was obtained.
struct StepPrediction {
  Matrix eps_hat;                // B x D
  std::vector<int> exit_layer;   // per row
  std::vector<double> u_at_exit; // per row; NaN when no uncertainty head ran
  std::vector<RowVector> u_maps; // per row, per-token map at exit (may be empty)
};

using NoisePredictor = std::function<StepPrediction(const Matrix& x_t, int t)>;

// Batched threshold-driven exit: each row leaves at the first layer whose
// aggregated uncertainty falls below the threshold. Heads above a row's exit
// layer are never evaluated.
StepPrediction early_exit_denoise(const EarlyExitModel& model, const Matrix& x_t, int t,
                                  const ExitPolicy& policy, bool keep_maps = false);

// Predictors usable by the sampler loops.
NoisePredictor early_exit_predictor(const EarlyExitModel& model, const ExitPolicy& policy,
                                    bool keep_maps = false);
// Plain full-depth network, no uncertainty machinery at all.
NoisePredictor full_depth_predictor(const Denoiser& backbone);

// Private Gaussian stream per chain, seeded from (seed, chain index).
class ChainNoise {
 public:
  ChainNoise(Index chains, Index dim, std::uint64_t seed);
  Matrix draw();

 private:
  Index dim_;
  std::vector<std::mt19937_64> rngs_;
};

// Ancestral: T, T-1, ..., 1. Deterministic: `steps` values from T down to 1
// with uniform stride, fractional positions rounded toward larger t.
std::vector<int> strided_timesteps(int T, int steps);
std::vector<int> sampler_timesteps(SamplerKind kind, const NoiseSchedule& sched, int steps);

// One reverse update from timesteps[j]; `z` is only read by the ancestral
// sampler and only when timesteps[j] > 1.
Matrix sampler_update(SamplerKind kind, const Matrix& x, const Matrix& eps_hat,
                      const std::vector<int>& timesteps, std::size_t j,
                      const NoiseSchedule& sched, const Matrix& z);

// Deterministic x0 estimate implied by a noise estimate.
Matrix predict_x0(const Matrix& x_t, const Matrix& eps_hat, int t, const NoiseSchedule& sched);

struct SampleRun {
  SamplerKind sampler = SamplerKind::Deterministic;
  ExitPolicy policy;
  std::uint64_t seed = 0;
  int depth = 0;
  std::vector<int> timesteps;   // one per sampling step
  Matrix samples;               // n x D
  std::vector<std::vector<int>> layers_used;  // [sample][step]
  std::vector<std::vector<double>> u_traces;  // [sample][step]
  // step index (1-based) -> per-sample token maps, for the first few samples.
  std::map<int, std::vector<RowVector>> u_maps;

  Index n() const { return samples.rows(); }
  Index steps() const { return static_cast<Index>(timesteps.size()); }
};

struct SamplerOptions {
  SamplerKind kind = SamplerKind::Deterministic;
  int steps = 100;
  std::vector<int> map_steps;  // 1-based sampling steps whose maps are kept
  Index map_samples = 4;
};

SampleRun run_sampler(const NoisePredictor& predictor, const NoiseSchedule& sched, Index n,
                      Index dim, std::uint64_t seed, const SamplerOptions& options);

SampleRun ancestral_sample(const EarlyExitModel& model, const NoiseSchedule& sched,
                           const ExitPolicy& policy, Index n, std::uint64_t seed);
SampleRun deterministic_sample(const EarlyExitModel& model, const NoiseSchedule& sched,
                               const ExitPolicy& policy, Index n, int steps, std::uint64_t seed);

// Maps u in [0, 1] linearly onto 0..255.
std::vector<std::uint8_t> uncertainty_to_gray(const RowVector& u_map);

// Writes umap_sample<k>_step<j>.png for each recorded (sample, step) among
// `steps`; returns the written paths.
std::vector<std::filesystem::path> export_uncertainty_maps(const SampleRun& run,
                                                           const std::vector<int>& steps,
                                                           int grid_h, int grid_w,
                                                           const std::filesystem::path& dir);

// sample,step,t,exit_layer,u_at_exit
void write_traces_csv(const SampleRun& run, const std::filesystem::path& path);

}  // namespace eediff
