#pragma once

#include "eediff/backbone.hpp"
#include "eediff/dataset.hpp"
#include "eediff/losses.hpp"
#include "eediff/schedule.hpp"
#include "eediff/training.hpp"
#include "eediff/uem.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace eediff {

enum class SamplerKind { Ancestral, Deterministic };

SamplerKind parse_sampler(const std::string& name);
std::string to_string(SamplerKind kind);

struct ScheduleConfig {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const { return NoiseSchedule::linear(T, beta_start, beta_end); }
};

struct DataConfig {
  DatasetKind kind = DatasetKind::GaussianMixture;
  Index n = 20000;
  int image_size = 8;
  std::uint64_t seed = 1234;
};

struct SampleConfig {
  SamplerKind sampler = SamplerKind::Deterministic;
  int steps = 100;
  Index n = 1000;
  // Sampling steps (1-based) whose per-token uncertainty maps are exported.
  std::vector<int> export_steps;
  Index export_samples = 4;
};

struct EvalConfig {
  Index reference_n = 2000;
  std::vector<double> bandwidths{0.1, 0.2, 0.5, 1.0, 2.0};
  std::vector<double> thresholds{0.2, 0.1, 0.05, 0.02, 0.01};
  Index probe_n = 256;
  std::uint64_t probe_seed = 4242;
  std::vector<int> t_grid{1, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000};
};

// Fully resolved run configuration. Every field has a default; the JSON
// form is nested by section (schedule, model, uem, loss, train, data, exit,
// sample, eval, paths) with `seed` at the top level.
struct RunConfig {
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  BackboneConfig model;
  bool uem_share_params = false;
  LossWeights loss;
  TrainConfig train;
  int checkpoint_every = 5000;
  int log_every = 100;
  DataConfig data;
  ExitPolicy exit;
  SampleConfig sample;
  EvalConfig eval;
  std::string out_root = "runs";

  // Cross-field checks; throws ConfigError listing every problem.
  void validate() const;
  nlohmann::json to_json() const;
  // Train/reference split of one dataset draw.
  std::pair<Dataset, Dataset> datasets() const;
  static RunConfig from_json(const nlohmann::json& doc);
};

// The default document, used as the schema: a key is valid iff it exists here.
nlohmann::json default_config_json();

// Overlays `user` onto the defaults, rejecting unknown keys and type
// mismatches (all problems are collected into one ConfigError).
nlohmann::json merge_config(const nlohmann::json& user);

// "section.key=value"; the value is parsed as JSON when possible, otherwise
// taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);
RunConfig config_from_overrides(const std::vector<std::string>& overrides);

// Dotted paths of leaves that differ between two documents.
std::vector<std::string> config_differences(const nlohmann::json& a, const nlohmann::json& b);

}  // namespace eediff
