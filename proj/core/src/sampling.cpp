#include "eediff/sampling.hpp"

#include "eediff/png_writer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace eediff {

StepPrediction early_exit_denoise(const EarlyExitModel& model, const Matrix& x_t, int t,
                                  const ExitPolicy& policy, bool keep_maps) {
  const Denoiser& net = model.backbone;
  const Index batch = x_t.rows();
  const Index tokens = net.layout().data_tokens();
  const std::vector<int> timesteps(static_cast<std::size_t>(batch), t);
  const RowVector temb_row = timestep_embedding(static_cast<double>(t), net.hidden_dim());

  StepPrediction out;
  out.u_at_exit.assign(static_cast<std::size_t>(batch), std::numeric_limits<double>::quiet_NaN());
  if (keep_maps) out.u_maps.resize(static_cast<std::size_t>(batch));

  const StopFn stop = [&](int layer, const IncrementalPass& pass) {
    const auto& active = pass.active();
    const auto count = static_cast<Index>(active.size());
    const Matrix temb = temb_row.replicate(count, 1);
    const Matrix logits =
        uncertainty_logits(net.data_rows(pass.hidden()), temb, model.uem.for_layer(layer), tokens);
    std::vector<char> flags(active.size(), 0);
    UncertaintyRecord rec;
    rec.layer_index = layer;
    rec.t = t;
    for (Index k = 0; k < count; ++k) {
      rec.u_map = logits.row(k).unaryExpr([](double v) { return sigmoid(v); });
      rec.u_scalar = aggregate(rec.u_map, policy.aggregation);
      const auto sample = static_cast<std::size_t>(active[static_cast<std::size_t>(k)]);
      out.u_at_exit[sample] = rec.u_scalar;
      if (keep_maps) out.u_maps[sample] = rec.u_map;
      flags[static_cast<std::size_t>(k)] = exit_decision(rec, policy) ? 1 : 0;
    }
    return flags;
  };
  ForwardResult r = net.forward_incremental(x_t, timesteps, stop, false);
  out.eps_hat = std::move(r.eps_hat);
  out.exit_layer = std::move(r.trace.exit_layer);
  return out;
}

NoisePredictor early_exit_predictor(const EarlyExitModel& model, const ExitPolicy& policy,
                                    bool keep_maps) {
  policy.validate(model.depth());
  return [&model, policy, keep_maps](const Matrix& x_t, int t) {
    return early_exit_denoise(model, x_t, t, policy, keep_maps);
  };
}

NoisePredictor full_depth_predictor(const Denoiser& backbone) {
  return [&backbone](const Matrix& x_t, int t) {
    StepPrediction out;
    out.eps_hat = backbone.forward_full(x_t, std::vector<int>(static_cast<std::size_t>(x_t.rows()), t));
    out.exit_layer.assign(static_cast<std::size_t>(x_t.rows()), backbone.depth());
    out.u_at_exit.assign(static_cast<std::size_t>(x_t.rows()), std::numeric_limits<double>::quiet_NaN());
    return out;
  };
}

ChainNoise::ChainNoise(Index chains, Index dim, std::uint64_t seed) : dim_(dim) {
  rngs_.reserve(static_cast<std::size_t>(chains));
  for (Index i = 0; i < chains; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    rngs_.emplace_back(seq);
  }
}

Matrix ChainNoise::draw() {
  std::normal_distribution<double> normal;
  Matrix z(static_cast<Index>(rngs_.size()), dim_);
  for (std::size_t i = 0; i < rngs_.size(); ++i) {
    for (Index c = 0; c < dim_; ++c) z(static_cast<Index>(i), c) = normal(rngs_[i]);
  }
  return z;
}

std::vector<int> strided_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) {
    throw RangeError("sampling steps must lie in [1, T]");
  }
  if (steps == 1) return {T};
  std::vector<int> out(static_cast<std::size_t>(steps));
  const auto span = static_cast<std::int64_t>(T - 1);
  for (int j = 0; j < steps; ++j) {
    // ceil(T - j (T-1) / (steps-1)) == T - floor(j (T-1) / (steps-1))
    out[static_cast<std::size_t>(j)] = T - static_cast<int>(j * span / (steps - 1));
  }
  return out;
}

std::vector<int> sampler_timesteps(SamplerKind kind, const NoiseSchedule& sched, int steps) {
  if (kind == SamplerKind::Ancestral) return strided_timesteps(sched.steps(), sched.steps());
  return strided_timesteps(sched.steps(), steps);
}

Matrix predict_x0(const Matrix& x_t, const Matrix& eps_hat, int t, const NoiseSchedule& sched) {
  if (x_t.rows() != eps_hat.rows() || x_t.cols() != eps_hat.cols()) {
    throw ShapeError("predict_x0: shape mismatch");
  }
  return (x_t - sched.noise_coef(t) * eps_hat) / sched.signal_coef(t);
}

Matrix sampler_update(SamplerKind kind, const Matrix& x, const Matrix& eps_hat,
                      const std::vector<int>& timesteps, std::size_t j,
                      const NoiseSchedule& sched, const Matrix& z) {
  const int t = timesteps.at(j);
  if (kind == SamplerKind::Ancestral) {
    Matrix mean = posterior_mean(x, eps_hat, t, sched);
    if (t > 1) mean.noalias() += std::sqrt(posterior_variance(t, sched)) * z;
    return mean;
  }
  const int next = j + 1 < timesteps.size() ? timesteps[j + 1] : 0;
  const Matrix x0 = predict_x0(x, eps_hat, t, sched);
  return sched.signal_coef(next) * x0 + sched.noise_coef(next) * eps_hat;
}

SampleRun run_sampler(const NoisePredictor& predictor, const NoiseSchedule& sched, Index n,
                      Index dim, std::uint64_t seed, const SamplerOptions& options) {
  if (n < 1) throw RangeError("sample count must be >= 1");
  SampleRun run;
  run.sampler = options.kind;
  run.seed = seed;
  run.timesteps = sampler_timesteps(options.kind, sched, options.steps);
  const std::size_t steps = run.timesteps.size();
  run.layers_used.assign(static_cast<std::size_t>(n), std::vector<int>(steps));
  run.u_traces.assign(static_cast<std::size_t>(n), std::vector<double>(steps));

  ChainNoise noise(n, dim, seed);
  Matrix x = noise.draw();
  for (std::size_t j = 0; j < steps; ++j) {
    const int t = run.timesteps[j];
    StepPrediction pred = predictor(x, t);
    if (pred.eps_hat.rows() != n || pred.eps_hat.cols() != dim) {
      throw ShapeError("noise predictor returned the wrong shape");
    }
    for (Index i = 0; i < n; ++i) {
      const auto s = static_cast<std::size_t>(i);
      run.layers_used[s][j] = pred.exit_layer[s];
      run.u_traces[s][j] = pred.u_at_exit[s];
      run.depth = std::max(run.depth, pred.exit_layer[s]);
    }
    const int step = static_cast<int>(j) + 1;
    if (!pred.u_maps.empty() &&
        std::find(options.map_steps.begin(), options.map_steps.end(), step) != options.map_steps.end()) {
      const auto keep = std::min<std::size_t>(pred.u_maps.size(), static_cast<std::size_t>(options.map_samples));
      run.u_maps[step].assign(pred.u_maps.begin(), pred.u_maps.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    Matrix z;
    if (options.kind == SamplerKind::Ancestral && t > 1) z = noise.draw();
    x = sampler_update(options.kind, x, pred.eps_hat, run.timesteps, j, sched, z);
    if (!x.allFinite()) {
      throw NumericalError("sampler state became non-finite at step " + std::to_string(step) +
                           " (t = " + std::to_string(t) + ")");
    }
  }
  run.samples = std::move(x);
  return run;
}

SampleRun ancestral_sample(const EarlyExitModel& model, const NoiseSchedule& sched,
                           const ExitPolicy& policy, Index n, std::uint64_t seed) {
  SamplerOptions opt;
  opt.kind = SamplerKind::Ancestral;
  opt.steps = sched.steps();
  SampleRun run = run_sampler(early_exit_predictor(model, policy), sched, n,
                              model.backbone.layout().data_dim(), seed, opt);
  run.policy = policy;
  run.depth = model.depth();
  return run;
}

SampleRun deterministic_sample(const EarlyExitModel& model, const NoiseSchedule& sched,
                               const ExitPolicy& policy, Index n, int steps, std::uint64_t seed) {
  SamplerOptions opt;
  opt.kind = SamplerKind::Deterministic;
  opt.steps = steps;
  SampleRun run = run_sampler(early_exit_predictor(model, policy), sched, n,
                              model.backbone.layout().data_dim(), seed, opt);
  run.policy = policy;
  run.depth = model.depth();
  return run;
}

std::vector<std::uint8_t> uncertainty_to_gray(const RowVector& u_map) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(u_map.size()));
  for (Index i = 0; i < u_map.size(); ++i) {
    const double v = std::clamp(u_map(i), 0.0, 1.0);
    out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

std::vector<std::filesystem::path> export_uncertainty_maps(const SampleRun& run,
                                                           const std::vector<int>& steps,
                                                           int grid_h, int grid_w,
                                                           const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  std::filesystem::create_directories(dir);
  for (int step : steps) {
    const auto it = run.u_maps.find(step);
    if (it == run.u_maps.end()) {
      throw RangeError("uncertainty maps were not recorded for step " + std::to_string(step));
    }
    for (std::size_t k = 0; k < it->second.size(); ++k) {
      const RowVector& map = it->second[k];
      if (map.size() != static_cast<Index>(grid_h) * grid_w) {
        throw ShapeError("uncertainty map size does not match the token grid");
      }
      const auto path = dir / ("umap_sample" + std::to_string(k) + "_step" + std::to_string(step) + ".png");
      write_png_gray(path, grid_w, grid_h, uncertainty_to_gray(map));
      written.push_back(path);
    }
  }
  return written;
}

void write_traces_csv(const SampleRun& run, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample,step,t,exit_layer,u_at_exit\n";
  char buf[64];
  for (Index i = 0; i < run.n(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    for (std::size_t j = 0; j < run.timesteps.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g", run.u_traces[s][j]);
      out << i << ',' << j + 1 << ',' << run.timesteps[j] << ',' << run.layers_used[s][j] << ','
          << buf << '\n';
    }
  }
}

}  // namespace eediff
