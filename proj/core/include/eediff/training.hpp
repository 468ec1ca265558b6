#pragma once

#include "eediff/dataset.hpp"
#include "eediff/losses.hpp"
#include "eediff/model.hpp"
#include "eediff/optimizer.hpp"
#include "eediff/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace eediff {

struct TrainConfig {
  double learning_rate = 2e-4;
  double adam_beta1 = 0.99;
  double adam_beta2 = 0.99;
  double weight_decay = 0.03;
  int batch_size = 64;
  std::int64_t total_steps = 20000;
  std::uint64_t seed = 0;

  void validate() const;
  AdamWConfig optimizer() const;
};

// Running mean of the per-sample simple loss, one bucket per timestep.
class TimestepLossHistogram {
 public:
  TimestepLossHistogram() = default;
  explicit TimestepLossHistogram(int steps);

  int steps() const { return static_cast<int>(counts_.size()) - 1; }
  void add(int t, double loss);
  std::int64_t count(int t) const { return counts_.at(static_cast<std::size_t>(t)); }
  double mean(int t) const;
  // Count-weighted mean over buckets [lo, hi].
  double range_mean(int lo, int hi) const;

  const std::vector<std::int64_t>& counts() const { return counts_; }
  const std::vector<double>& sums() const { return sums_; }
  void restore(std::vector<std::int64_t> counts, std::vector<double> sums);

  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<std::int64_t> counts_;
  std::vector<double> sums_;
};

struct Batch {
  Matrix x0;
  std::vector<int> timesteps;
  Matrix eps;
};

// The batch used at `step` depends only on (seed, step), so an interrupted
// run resumes with exactly the batches it would have seen.
Batch draw_batch(const Dataset& data, const NoiseSchedule& sched, int batch_size,
                 std::uint64_t seed, std::int64_t step);

struct TrainingState {
  EarlyExitModel model;
  AdamW optimizer;
  TimestepLossHistogram histogram;
  std::int64_t step = 0;
};

struct StepLosses {
  std::int64_t step = 0;
  double simple = 0.0;
  double uncertainty = 0.0;
  double layerwise = 0.0;
  double total = 0.0;
};

// One forward over the batch, all loss components, one optimizer update.
// A non-finite component aborts before any parameter changes.
StepLosses train_step(TrainingState& state, const Batch& batch, const NoiseSchedule& sched,
                      const LossWeights& weights);

}  // namespace eediff
