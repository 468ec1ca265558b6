#include "eediff/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace eediff {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (total_steps < 0) throw ConfigError("train.total_steps must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
}

AdamWConfig TrainConfig::optimizer() const {
  AdamWConfig c;
  c.learning_rate = learning_rate;
  c.beta1 = adam_beta1;
  c.beta2 = adam_beta2;
  c.weight_decay = weight_decay;
  return c;
}

TimestepLossHistogram::TimestepLossHistogram(int steps)
    : counts_(static_cast<std::size_t>(steps) + 1, 0),
      sums_(static_cast<std::size_t>(steps) + 1, 0.0) {}

void TimestepLossHistogram::add(int t, double loss) {
  if (t < 1 || t > steps()) {
    throw RangeError("histogram timestep out of range");
  }
  counts_[static_cast<std::size_t>(t)] += 1;
  sums_[static_cast<std::size_t>(t)] += loss;
}

double TimestepLossHistogram::mean(int t) const {
  const auto c = count(t);
  return c > 0 ? sums_[static_cast<std::size_t>(t)] / static_cast<double>(c)
               : std::numeric_limits<double>::quiet_NaN();
}

double TimestepLossHistogram::range_mean(int lo, int hi) const {
  double sum = 0.0;
  std::int64_t cnt = 0;
  for (int t = std::max(lo, 1); t <= std::min(hi, steps()); ++t) {
    sum += sums_[static_cast<std::size_t>(t)];
    cnt += counts_[static_cast<std::size_t>(t)];
  }
  return cnt > 0 ? sum / static_cast<double>(cnt) : std::numeric_limits<double>::quiet_NaN();
}

void TimestepLossHistogram::restore(std::vector<std::int64_t> counts, std::vector<double> sums) {
  if (counts.size() != sums.size()) {
    throw ShapeError("histogram counts and sums differ in length");
  }
  counts_ = std::move(counts);
  sums_ = std::move(sums);
}

void TimestepLossHistogram::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t,count,mean_loss\n";
  out.precision(10);
  for (int t = 1; t <= steps(); ++t) {
    out << t << ',' << count(t) << ',';
    if (count(t) > 0) {
      out << mean(t);
    }
    out << '\n';
  }
}

Batch draw_batch(const Dataset& data, const NoiseSchedule& sched, int batch_size,
                 std::uint64_t seed, std::int64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    0x7261696eU};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<Index> pick(0, data.data.rows() - 1);
  Batch b;
  b.x0.resize(batch_size, data.data.cols());
  for (int i = 0; i < batch_size; ++i) {
    b.x0.row(i) = data.data.row(pick(rng));
  }
  b.timesteps = sample_timesteps(batch_size, sched.steps(), rng);
  b.eps = standard_normal(batch_size, data.data.cols(), rng);
  return b;
}

StepLosses train_step(TrainingState& state, const Batch& batch, const NoiseSchedule& sched,
                      const LossWeights& weights) {
  const Matrix x_t = forward_diffuse_batch(batch.x0, batch.timesteps, batch.eps, sched);
  state.model.zero_grad();
  const ObjectiveResult res =
      evaluate_objective(state.model, x_t, batch.timesteps, batch.eps, weights, true);
  const auto params = state.model.parameters();
  for (const Parameter* p : params) {
    if (!p->grad.allFinite()) {
      throw NumericalError("non-finite gradient in " + p->name + " at step " +
                           std::to_string(state.step + 1));
    }
  }
  state.optimizer.step(params);
  for (std::size_t i = 0; i < batch.timesteps.size(); ++i) {
    state.histogram.add(batch.timesteps[i], res.per_sample_simple[i]);
  }
  ++state.step;
  StepLosses out;
  out.step = state.step;
  out.simple = res.loss.simple;
  out.uncertainty = res.loss.uncertainty;
  out.layerwise = res.loss.layerwise;
  out.total = res.loss.total;
  return out;
}

}  // namespace eediff
