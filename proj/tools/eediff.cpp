// eediff: train, sample, evaluate and profile early-exit diffusion models.
//
//   eediff train   --config configs/toy_gmm.json --out runs/gmm
//   eediff sample  --checkpoint runs/gmm/checkpoint.eed --threshold 0.05 --n 500
//   eediff sweep   --checkpoint runs/gmm/checkpoint.eed --thresholds 0.2,0.1,0.05,0.02,0.01
//   eediff profile --checkpoint runs/gmm/checkpoint.eed
//   eediff eval    --checkpoint runs/gmm/checkpoint.eed [--samples samples.eed]

#include "eediff/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string samples;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::string sampler;
  std::optional<int> steps;
  std::optional<long> n;
  std::string thresholds;
  std::string dataset;
  std::vector<std::string> set;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--dataset", f.dataset, "toy dataset")
      ->check(CLI::IsMember({"gmm", "swissroll", "checkerboard", "tinyimage"}));
  cmd->add_option("--set", f.set, "config override key=value (repeatable)");
  cmd->add_flag("-q,--quiet", f.quiet, "suppress progress output");
}

void add_inference(CLI::App* cmd, Flags& f, bool needs_checkpoint) {
  auto* ck = cmd->add_option("--checkpoint", f.checkpoint, "trained checkpoint archive");
  if (needs_checkpoint) ck->required();
  cmd->add_option("--threshold", f.threshold, "exit threshold tau (>= 0)");
  cmd->add_option("--sampler", f.sampler, "reverse sampler")
      ->check(CLI::IsMember({"ancestral", "deterministic"}));
  cmd->add_option("--steps", f.steps, "deterministic sampler steps");
  cmd->add_option("--n", f.n, "number of samples");
}

std::string json_list(const std::string& csv) {
  std::stringstream in(csv);
  std::string item, out = "[";
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    out += (out.size() > 1 ? "," : "") + item;
  }
  return out + "]";
}

eediff::CommandOptions to_options(const Flags& f) {
  eediff::CommandOptions o;
  if (!f.config.empty()) o.config_path = f.config;
  if (!f.out.empty()) o.out = f.out;
  if (!f.checkpoint.empty()) o.checkpoint = f.checkpoint;
  if (!f.samples.empty()) o.samples = f.samples;
  o.quiet = f.quiet;
  o.overrides = f.set;
  if (f.seed) o.overrides.push_back("seed=" + std::to_string(*f.seed));
  if (f.threshold) {
    std::ostringstream v;
    v.precision(17);
    v << *f.threshold;
    o.overrides.push_back("exit.threshold=" + v.str());
  }
  if (!f.sampler.empty()) o.overrides.push_back("sample.sampler=" + f.sampler);
  if (f.steps) o.overrides.push_back("sample.steps=" + std::to_string(*f.steps));
  if (f.n) o.overrides.push_back("sample.n=" + std::to_string(*f.n));
  if (!f.dataset.empty()) o.overrides.push_back("data.kind=" + f.dataset);
  if (!f.thresholds.empty()) o.overrides.push_back("eval.thresholds=" + json_list(f.thresholds));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"early-exit diffusion laboratory"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train", "train a model (resumes from <out>/checkpoint.eed)");
  add_common(train, f);

  auto* sample = app.add_subcommand("sample", "generate samples with threshold-driven exits");
  add_common(sample, f);
  add_inference(sample, f, true);

  auto* eval = app.add_subcommand("eval", "score samples against held-out reference data");
  add_common(eval, f);
  add_inference(eval, f, true);
  eval->add_option("--samples", f.samples, "score this sample archive instead of sampling");

  auto* profile = app.add_subcommand("profile", "layer redundancy and error accumulation");
  add_common(profile, f);
  add_inference(profile, f, false);

  auto* sweep = app.add_subcommand("sweep", "quality/compute trade-off over exit thresholds");
  add_common(sweep, f);
  add_inference(sweep, f, true);
  sweep->add_option("--thresholds", f.thresholds, "comma-separated thresholds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return eediff::run_command(app.get_subcommands().front()->get_name(), to_options(f), std::cout,
                             std::cerr);
}
