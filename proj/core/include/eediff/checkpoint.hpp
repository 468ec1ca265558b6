#pragma once

#include "eediff/config.hpp"
#include "eediff/training.hpp"

#include <filesystem>

namespace eediff {

struct Checkpoint {
  RunConfig config;
  TrainingState state;
};

// Parameters, optimizer moments, loss histogram, step and resolved config.
void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                     const TrainingState& state);

// Restores everything or throws; never returns a partially filled state.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds a fresh model and optimizer for `config`.
TrainingState initial_state(const RunConfig& config);

// Throws ConfigError naming every differing key, ignoring keys that may
// legitimately change between a run and its continuation.
void check_resume_compatible(const RunConfig& saved, const RunConfig& requested);

}  // namespace eediff
