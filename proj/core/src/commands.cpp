#include "eediff/commands.hpp"

#include "eediff/checkpoint.hpp"
#include "eediff/eval.hpp"
#include "eediff/sampling.hpp"
#include "eediff/tensor_archive.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>

namespace eediff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointName = "checkpoint.eed";

RunConfig resolve_config(const CommandOptions& opts) {
  if (opts.config_path) return load_config(*opts.config_path, opts.overrides);
  return config_from_overrides(opts.overrides);
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

fs::path prepare_out(const std::string& command, const CommandOptions& opts, const RunConfig& config) {
  const fs::path dir = resolve_out_dir(command, opts, config);
  fs::create_directories(dir);
  write_json(dir / "config.json", config.to_json());
  return dir;
}

fs::path require_checkpoint(const CommandOptions& opts) {
  if (!opts.checkpoint) throw ConfigError("this command needs --checkpoint");
  if (!fs::exists(*opts.checkpoint)) {
    throw IoError("checkpoint not found: " + opts.checkpoint->string());
  }
  return *opts.checkpoint;
}

ExitPolicy policy_of(const RunConfig& c) {
  ExitPolicy p = c.exit;
  p.validate(c.model.depth);
  return p;
}

SamplerOptions sampler_of(const RunConfig& c) {
  SamplerOptions o;
  o.kind = c.sample.sampler;
  o.steps = c.sample.sampler == SamplerKind::Ancestral ? c.schedule.T : c.sample.steps;
  o.map_steps = c.sample.export_steps;
  o.map_samples = c.sample.export_samples;
  return o;
}

SweepSettings sweep_of(const RunConfig& c) {
  SweepSettings s;
  s.sampler = sampler_of(c);
  s.sampler.map_steps.clear();
  s.n = c.sample.n;
  s.seed = c.seed;
  s.bandwidths = c.eval.bandwidths;
  s.aggregation = c.exit.aggregation;
  s.min_layer = c.exit.min_layer;
  return s;
}

json efficiency_json(const EfficiencyReport& r) {
  return {{"depth", r.depth},
          {"avg_layers", r.avg_layers},
          {"layers_ratio_reduction", r.layers_ratio_reduction},
          {"reduction_percent", r.reduction_percent()},
          {"flops_full", r.flops_full},
          {"flops_actual", r.flops_actual}};
}

void write_loss_row(std::ofstream& out, const StepLosses& l) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g\n", static_cast<long long>(l.step),
                l.simple, l.uncertainty, l.layerwise, l.total);
  out << buf;
}

// Drops rows logged after `step`, which a resumed run will write again.
void truncate_curve(const fs::path& path, std::int64_t step) {
  std::ifstream in(path);
  std::string header, line, kept;
  std::getline(in, header);
  while (std::getline(in, line)) {
    if (std::stoll(line.substr(0, line.find(','))) <= step) kept += line + '\n';
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << header << '\n' << kept;
}

// Keys that must match between a checkpoint and the config used with it.
void check_inference_compatible(const RunConfig& saved, const RunConfig& requested) {
  const json a = saved.to_json(), b = requested.to_json();
  std::vector<std::string> keys;
  for (const char* section : {"model", "schedule"}) {
    for (const auto& k : config_differences(a.at(section), b.at(section))) {
      keys.push_back(std::string(section) + "." + k);
    }
  }
  for (const auto& [section, key] : {std::pair{"uem", "share_params"}, std::pair{"data", "kind"},
                                     std::pair{"data", "image_size"}}) {
    if (a.at(section).at(key) != b.at(section).at(key)) {
      keys.push_back(std::string(section) + "." + key);
    }
  }
  if (!keys.empty()) {
    std::string msg = "config does not match the checkpoint; differing keys:";
    for (const auto& k : keys) msg += " " + k;
    throw ConfigError(msg);
  }
}

}  // namespace

fs::path resolve_out_dir(const std::string& command, const CommandOptions& opts, const RunConfig& config) {
  if (opts.out) return *opts.out;
  if (const char* env = std::getenv("EEDIFF_RUNS_DIR"); env != nullptr && *env != '\0') {
    return fs::path(env) / command;
  }
  return fs::path(config.out_root) / command;
}

RunConfig resolve_inference_config(const RunConfig& saved, const CommandOptions& opts) {
  RunConfig requested;
  if (opts.config_path) {
    requested = load_config(*opts.config_path, opts.overrides);
  } else {
    json doc = saved.to_json();
    for (const auto& o : opts.overrides) apply_override(doc, o);
    requested = RunConfig::from_json(doc);
  }
  check_inference_compatible(saved, requested);
  return requested;
}

int cmd_train(const CommandOptions& opts, std::ostream& log) {
  const RunConfig config = resolve_config(opts);
  const fs::path dir = resolve_out_dir("train", opts, config);
  const fs::path ckpt_path = dir / kCheckpointName;

  TrainingState state;
  if (fs::exists(ckpt_path)) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    check_resume_compatible(ck.config, config);
    state = std::move(ck.state);
    if (!opts.quiet) log << "resuming " << ckpt_path.string() << " at step " << state.step << '\n';
  } else {
    state = initial_state(config);
  }
  fs::create_directories(dir);
  write_json(dir / "config.json", config.to_json());

  const auto [data, reference] = config.datasets();
  const NoiseSchedule sched = config.schedule.build();
  const fs::path curve_path = dir / "loss_curve.csv";
  const bool fresh = state.step == 0 || !fs::exists(curve_path);
  if (!fresh) truncate_curve(curve_path, state.step);
  std::ofstream curve(curve_path, fresh ? std::ios::trunc : std::ios::app);
  if (!curve) throw IoError("cannot write " + curve_path.string());
  if (fresh) curve << "step,simple,uncertainty,layerwise,total\n";

  StepLosses last;
  while (state.step < config.train.total_steps) {
    const Batch batch = draw_batch(data, sched, config.train.batch_size, config.seed, state.step);
    last = train_step(state, batch, sched, config.loss);
    if (state.step % config.log_every == 0 || state.step == config.train.total_steps) {
      write_loss_row(curve, last);
      if (!opts.quiet) {
        log << "step " << last.step << " simple " << last.simple << " L_u " << last.uncertainty
            << " layerwise " << last.layerwise << " total " << last.total << '\n';
      }
    }
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 &&
        state.step < config.train.total_steps) {
      curve.flush();
      save_checkpoint(dir / "checkpoints" / ("step_" + std::to_string(state.step) + ".eed"), config, state);
      save_checkpoint(ckpt_path, config, state);
    }
  }
  curve.close();
  save_checkpoint(ckpt_path, config, state);
  state.histogram.write_csv(dir / "timestep_hist.csv");

  const int T = config.schedule.T;
  json metrics = {{"command", "train"},
                  {"step", state.step},
                  {"final_losses",
                   {{"simple", last.simple},
                    {"uncertainty", last.uncertainty},
                    {"layerwise", last.layerwise},
                    {"total", last.total}}},
                  {"histogram",
                   {{"mean_loss_low_t", state.histogram.range_mean(1, T / 5)},
                    {"mean_loss_high_t", state.histogram.range_mean((4 * T + 4) / 5, T)}}}};
  write_json(dir / "metrics.json", metrics);
  if (!opts.quiet) log << "wrote " << ckpt_path.string() << '\n';
  return 0;
}

int cmd_sample(const CommandOptions& opts, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(require_checkpoint(opts));
  const RunConfig config = resolve_inference_config(ck.config, opts);
  const fs::path dir = prepare_out("sample", opts, config);
  const NoiseSchedule sched = config.schedule.build();
  const EarlyExitModel& model = ck.state.model;
  const ExitPolicy policy = policy_of(config);
  const SamplerOptions so = sampler_of(config);

  SampleRun run = run_sampler(early_exit_predictor(model, policy, !so.map_steps.empty()), sched,
                              config.sample.n, model.backbone.layout().data_dim(), config.seed, so);
  run.policy = policy;
  run.depth = model.depth();

  TensorArchive ar;
  ar.header = {{"kind", "eediff-samples"},
               {"sampler", to_string(run.sampler)},
               {"seed", config.seed},
               {"threshold", policy.threshold},
               {"shape", config.model.input_shape}};
  ar.tensors.push_back(NamedTensor::from_matrix("samples", run.samples));
  write_archive(dir / "samples.eed", ar);
  write_traces_csv(run, dir / "traces.csv");
  const EfficiencyReport eff = layer_usage_report(run, config.model);
  write_efficiency_csv(eff, dir / "efficiency.csv");
  if (!so.map_steps.empty()) {
    const TokenLayout layout(config.model);
    export_uncertainty_maps(run, so.map_steps, layout.grid_h(), layout.grid_w(), dir / "umaps");
  }
  write_json(dir / "metrics.json", {{"command", "sample"}, {"efficiency", efficiency_json(eff)}});
  if (!opts.quiet) {
    log << "avg layers " << eff.avg_layers << " of " << eff.depth << " (" << eff.reduction_percent()
        << "%), wrote " << dir.string() << '\n';
  }
  return 0;
}

int cmd_eval(const CommandOptions& opts, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(require_checkpoint(opts));
  const RunConfig config = resolve_inference_config(ck.config, opts);
  const fs::path dir = prepare_out("eval", opts, config);
  const auto reference = config.datasets().second.data;

  Matrix samples;
  json metrics = {{"command", "eval"}};
  if (opts.samples) {
    const TensorArchive ar = read_archive(*opts.samples);
    samples = ar.at("samples").to_matrix();
    if (samples.cols() != reference.cols()) {
      throw ShapeError("sample archive dimensionality differs from the reference data");
    }
    metrics["samples"] = opts.samples->string();
  } else {
    const NoiseSchedule sched = config.schedule.build();
    const ExitPolicy policy = policy_of(config);
    SamplerOptions so = sampler_of(config);
    so.map_steps.clear();
    SampleRun run = run_sampler(early_exit_predictor(ck.state.model, policy), sched, config.sample.n,
                                ck.state.model.backbone.layout().data_dim(), config.seed, so);
    const EfficiencyReport eff = layer_usage_report(run, config.model);
    write_efficiency_csv(eff, dir / "efficiency.csv");
    metrics["efficiency"] = efficiency_json(eff);
    samples = std::move(run.samples);
  }
  metrics["mmd_unbiased"] = mmd_squared(samples, reference, config.eval.bandwidths, true);
  metrics["mmd_biased"] = mmd_squared(samples, reference, config.eval.bandwidths, false);
  if (config.data.kind == DatasetKind::TinyImage) {
    metrics["frechet_pixels"] = frechet_distance(samples, reference);
  }
  write_json(dir / "metrics.json", metrics);
  if (!opts.quiet) log << "mmd " << metrics["mmd_unbiased"].get<double>() << ", wrote " << dir.string() << '\n';
  return 0;
}

int cmd_profile(const CommandOptions& opts, std::ostream& log) {
  // Without a checkpoint the profile runs on a freshly initialised model.
  std::optional<Checkpoint> ck;
  RunConfig config;
  if (opts.checkpoint) {
    ck = load_checkpoint(require_checkpoint(opts));
    config = resolve_inference_config(ck->config, opts);
  } else {
    config = resolve_config(opts);
  }
  const EarlyExitModel model =
      ck ? ck->state.model : EarlyExitModel(config.model, config.uem_share_params, config.seed);
  const fs::path dir = prepare_out("profile", opts, config);
  const NoiseSchedule sched = config.schedule.build();
  const auto data = config.datasets().first;

  const RedundancyProfile prof = layer_redundancy_profile(model.backbone, data, sched, config.eval.t_grid,
                                                          config.eval.probe_n, config.eval.probe_seed);
  write_redundancy_csv(prof, dir / "redundancy.csv");
  SamplerOptions so = sampler_of(config);
  so.map_steps.clear();
  const ErrorAccumulation acc =
      error_accumulation_curve(model, policy_of(config), sched, so, config.sample.n, config.seed);
  write_error_accum_csv(acc, dir / "error_accum.csv");
  write_json(dir / "metrics.json", {{"command", "profile"},
                                    {"error_accum_terminal", acc.mse.back()},
                                    {"error_accum_avg_layers", acc.avg_layers}});
  if (!opts.quiet) log << "wrote " << dir.string() << '\n';
  return 0;
}

int cmd_sweep(const CommandOptions& opts, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(require_checkpoint(opts));
  const RunConfig config = resolve_inference_config(ck.config, opts);
  if (config.eval.thresholds.empty()) throw ConfigError("threshold list is empty");
  const fs::path dir = prepare_out("sweep", opts, config);
  const NoiseSchedule sched = config.schedule.build();
  const auto reference = config.datasets().second.data;
  const auto points = threshold_sweep(ck.state.model, sched, config.eval.thresholds, sweep_of(config), reference);
  write_tradeoff_csv(points, dir / "tradeoff.csv");
  json rows = json::array();
  for (const auto& p : points) {
    rows.push_back({{"threshold", p.threshold},
                    {"mmd", p.quality},
                    {"avg_layers", p.avg_layers},
                    {"layers_ratio_reduction", p.layers_ratio_reduction},
                    {"flops_actual", p.flops_actual}});
  }
  write_json(dir / "metrics.json", {{"command", "sweep"}, {"points", rows}});
  if (!opts.quiet) {
    for (const auto& p : points) {
      log << "tau " << p.threshold << " mmd " << p.quality << " reduction " << 100.0 * p.layers_ratio_reduction
          << "%\n";
    }
  }
  return 0;
}

int run_command(const std::string& name, const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  try {
    if (name == "train") return cmd_train(opts, log);
    if (name == "sample") return cmd_sample(opts, log);
    if (name == "eval") return cmd_eval(opts, log);
    if (name == "profile") return cmd_profile(opts, log);
    if (name == "sweep") return cmd_sweep(opts, log);
    throw ConfigError("unknown command '" + name + "'");
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace eediff
