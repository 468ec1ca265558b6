#pragma once

#include "eediff/layers.hpp"

#include <cstdint>
#include <vector>

namespace eediff {

struct AdamWConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.99;
  double beta2 = 0.99;
  double weight_decay = 0.03;
  double eps = 1e-8;
};

// Adaptive-moment update with decoupled weight decay and bias correction:
//   p <- p * (1 - lr * wd)
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const AdamWConfig& config) : config_(config) {}

  const AdamWConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }

  void step(const std::vector<Parameter*>& params);

  // Moment buffers, aligned with the parameter list passed to step().
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  AdamWConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace eediff
