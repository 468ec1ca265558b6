// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--cache DIR] [--source DIR]
//
// Trained toy checkpoints live under DIR and are reused (or resumed) on later
// runs, so only the first invocation pays for training. The verdict lines are
// also written to DIR/report.txt.

#include "eediff/checkpoint.hpp"
#include "eediff/commands.hpp"
#include "eediff/eval.hpp"
#include "eediff/sampling.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifndef EEDIFF_SOURCE_DIR
#define EEDIFF_SOURCE_DIR "."
#endif

using namespace eediff;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  int id = 0;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<Verdict> g_verdicts;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

void note(const std::string& s) { std::cout << "  " << s << std::endl; }

void record(int id, const std::function<std::pair<bool, std::string>()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  v.id = id;
  try {
    std::tie(v.pass, v.detail) = body();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = std::string("exception: ") + e.what();
  }
  v.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "  [" << id << "] " << (v.pass ? "pass" : "FAIL") << " after " << fmt("%.1f", v.seconds)
            << " s: " << v.detail << std::endl;
  g_verdicts.push_back(v);
}

Matrix gaussian(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && std::equal(a.data(), a.data() + a.size(), b.data());
}

void jitter(EarlyExitModel& m, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  m.for_each_parameter([&](Parameter& p) {
    for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += n(rng);
  });
}

BackboneConfig micro(int depth, bool image) {
  BackboneConfig c;
  c.depth = depth;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.input_shape = image ? std::vector<int>{4, 4, 1} : std::vector<int>{2};
  c.patch_size = image ? 2 : 1;
  c.skip_pairs = default_skip_pairs(depth);
  return c;
}

// ---------------------------------------------------------------- criterion 1

std::pair<bool, std::string> threshold_zero_equivalence(const RunConfig& base) {
  const EarlyExitModel model(base.model, base.uem_share_params, 5);
  const NoiseSchedule sched = base.schedule.build();
  const Index dim = model.backbone.layout().data_dim();
  std::ostringstream os;
  bool ok = true;
  for (SamplerKind kind : {SamplerKind::Ancestral, SamplerKind::Deterministic}) {
    SamplerOptions o;
    o.kind = kind;
    o.steps = base.sample.steps;
    const SampleRun ee = run_sampler(early_exit_predictor(model, ExitPolicy{}), sched, 32, dim, 11, o);
    const SampleRun full = run_sampler(full_depth_predictor(model.backbone), sched, 32, dim, 11, o);
    bool all_full = true;
    for (const auto& row : ee.layers_used)
      for (int l : row) all_full = all_full && l == model.depth();
    const bool eq = same_bits(ee.samples, full.samples) && all_full;
    ok = ok && eq;
    os << to_string(kind) << " (" << ee.steps() << " steps) " << (eq ? "bitwise equal" : "DIFFERS") << "; ";
  }
  return {ok, os.str()};
}

// ---------------------------------------------------------------- criterion 2

double worst_gradient_error(bool image, bool shared, LayerwiseMode mode, std::string& where) {
  EarlyExitModel model(micro(3, image), shared, 17);
  jitter(model, 99, 0.2);
  const Index dim = model.backbone.layout().data_dim();
  const Matrix x = gaussian(3, dim, 1), eps = gaussian(3, dim, 2);
  const std::vector<int> t{3, 420, 990};
  LossWeights w;  // lambda = beta = 1
  w.layerwise = mode;
  model.zero_grad();
  const DetachedTargets frozen = evaluate_objective(model, x, t, eps, w, true).detached;
  const auto loss_at = [&] { return evaluate_objective(model, x, t, eps, w, false, &frozen).loss.total; };
  const double h = 1e-5;
  double worst = 0.0;
  model.for_each_parameter([&](Parameter& p) {
    for (Index i = 0; i < p.value.size(); ++i) {
      double& v = p.value.data()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss_at();
      v = saved - h;
      const double down = loss_at();
      v = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad.data()[i];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      if (rel > worst) {
        worst = rel;
        where = p.name;
      }
    }
  });
  return worst;
}

bool stop_gradient_contract(std::string& why) {
  EarlyExitModel model(micro(3, false), false, 4);
  jitter(model, 5, 0.2);
  const Matrix x = gaussian(4, 2, 1), eps = gaussian(4, 2, 2);
  const std::vector<int> t{5, 50, 500, 1000};
  const LossWeights ual_only{0.0, 1.0, LayerwiseMode::UncertaintyAware};

  // (1 - u) weights carry no gradient into the heads.
  model.zero_grad();
  const ObjectiveResult r = evaluate_objective(model, x, t, eps, ual_only, true);
  bool ok = true;
  model.uem.for_each_parameter([&](Parameter& p) { ok = ok && p.grad.isZero(0.0); });
  if (!ok) {
    why = "layer-wise term reached the uncertainty heads";
    return false;
  }
  // Moving the detached targets leaves backbone gradients untouched.
  std::vector<Matrix> g1;
  model.backbone.for_each_parameter([&](Parameter& p) { g1.push_back(p.grad); });
  DetachedTargets shifted = r.detached;
  for (auto& u : shifted.u_hat) u.array() = 1.0 - 0.5 * u.array();
  model.zero_grad();
  evaluate_objective(model, x, t, eps, ual_only, true, &shifted);
  std::size_t k = 0;
  model.backbone.for_each_parameter([&](Parameter& p) { ok = ok && same_bits(p.grad, g1[k++]); });
  if (!ok) {
    why = "pseudo-uncertainty target leaked gradient";
    return false;
  }
  // The uncertainty loss itself does train both heads and backbone.
  model.zero_grad();
  evaluate_objective(model, x, t, eps, LossWeights{1.0, 0.0, LayerwiseMode::UncertaintyAware}, true);
  bool heads = true, trunk = false;
  model.uem.for_each_parameter([&](Parameter& p) { heads = heads && p.grad.cwiseAbs().maxCoeff() > 0.0; });
  model.backbone.for_each_parameter([&](Parameter& p) {
    if (p.name.rfind("blocks.", 0) == 0 && p.grad.cwiseAbs().maxCoeff() > 0.0) trunk = true;
  });
  if (!heads || !trunk) {
    why = "uncertainty loss gradient missing";
    return false;
  }
  return true;
}

std::pair<bool, std::string> gradient_check() {
  std::ostringstream os;
  bool ok = true;
  struct Variant {
    const char* name;
    bool image, shared;
    LayerwiseMode mode;
  };
  const Variant variants[] = {{"vector", false, false, LayerwiseMode::UncertaintyAware},
                              {"vector shared-uem", false, true, LayerwiseMode::UncertaintyAware},
                              {"vector plain", false, false, LayerwiseMode::Plain},
                              {"image", true, false, LayerwiseMode::UncertaintyAware}};
  for (const auto& v : variants) {
    std::string where;
    const double worst = worst_gradient_error(v.image, v.shared, v.mode, where);
    ok = ok && worst < 1e-4;
    os << v.name << " max rel err " << fmt("%.2e", worst) << "; ";
  }
  std::string why;
  const bool sg = stop_gradient_contract(why);
  os << "stop-gradient contract " << (sg ? "holds" : "broken: " + why);
  return {ok && sg, os.str()};
}

// ---------------------------------------------------------------- criterion 3

std::pair<bool, std::string> loss_identities() {
  double worst_ual = 0.0, worst_all = 0.0;
  bool u_open = true, uhat_zero = true, uhat_pos = true;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    EarlyExitModel model(micro(4, seed % 2 == 1), false, seed);
    jitter(model, seed + 50, 0.3);
    const Index dim = model.backbone.layout().data_dim();
    const Matrix x = gaussian(6, dim, seed + 10), eps = gaussian(6, dim, seed + 20);
    const std::vector<int> t{1, 2, 3, 400, 800, 1000};
    const TrainForward f = model.backbone.forward_train(x, t);
    const auto& layout = model.backbone.layout();
    const std::vector<Matrix> inter(f.preds.begin(), f.preds.end() - 1);
    const std::vector<Matrix> zeros(inter.size(), Matrix::Zero(6, layout.data_tokens()));
    worst_ual = std::max(worst_ual, std::abs(loss_ual(inter, eps, zeros, layout) -
                                             loss_layerwise_plain(inter, eps, layout, 4)));
    const ObjectiveResult r = evaluate_objective(model, x, t, eps, LossWeights{0.0, 0.0}, false);
    worst_all = std::max(worst_all, std::abs(r.loss.total - loss_simple(f.output, eps)));
    for (const auto& u : r.u) u_open = u_open && u.minCoeff() > 0.0 && u.maxCoeff() < 1.0;
    uhat_zero = uhat_zero && pseudo_uncertainty(eps, eps, layout).isZero(0.0);
    Matrix off = eps;
    off(seed % 6, 0) += 1e-9;
    const Matrix uh = pseudo_uncertainty(off, eps, layout);
    uhat_pos = uhat_pos && uh.maxCoeff() > 0.0;
  }
  const bool ok = worst_ual <= 1e-12 && worst_all <= 1e-12 && u_open && uhat_zero && uhat_pos;
  return {ok, "|L_UAL(u=0) - L_n| <= " + fmt("%.1e", worst_ual) + ", |L_all(0,0) - L_simple| <= " +
                  fmt("%.1e", worst_all) + ", u in (0,1): " + (u_open ? "yes" : "no") +
                  ", uhat = 0 iff exact: " + (uhat_zero && uhat_pos ? "yes" : "no")};
}

// ---------------------------------------------------------------- criterion 4

std::pair<bool, std::string> efficiency_arithmetic(const RunConfig& base) {
  SampleRun run;
  run.layers_used.assign(5, std::vector<int>{7, 7, 7, 7, 6});
  const EfficiencyReport r = layer_usage_report(run, base.model);
  const double shown = std::round(r.reduction_percent() * 10.0) / 10.0;
  const double layer_cut = 0.476;
  const FlopsPair f = flops_estimate(base.model, base.model.depth * (1.0 - layer_cut));
  const double flops_cut = 1.0 - f.actual / f.full;
  const double scaled = 22.86 * f.actual / f.full;
  const bool ok = std::abs(r.avg_layers - 6.8) < 1e-12 && shown == -47.7 &&
                  std::abs(flops_cut - layer_cut) <= 0.02 * layer_cut && std::abs(scaled - 11.97) <= 0.02 * 11.97;
  return {ok, "6.8/13 layers -> " + fmt("%.1f", shown) + "%; 47.6% layer cut -> " + fmt("%.2f", 100 * flops_cut) +
                  "% FLOPs cut, 22.86 -> " + fmt("%.2f", scaled) + " units"};
}

// ---------------------------------------------------------------- criterion 9

std::pair<bool, std::string> schedule_oracles() {
  bool ok = true;
  std::ostringstream os;
  const auto two = NoiseSchedule::linear(2, 0.5, 0.5);
  const bool prod = two.alpha_bar(1) == 0.5 && two.alpha_bar(2) == 0.25;
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  long double ld = 1.0L;
  for (int i = 0; i < 1000; ++i) ld *= 1.0L - (1e-4L + (0.02L - 1e-4L) * i / 999.0L);
  const double rel = std::abs(s.alpha_bar(1000) / static_cast<double>(ld) - 1.0);
  os << "cumprod " << (prod ? "exact" : "WRONG") << ", abar_1000 rel err " << fmt("%.1e", rel);
  ok = ok && prod && rel < 1e-8;

  double vp = 0.0;
  bool monotone = true;
  for (int t = 1; t <= 1000; ++t) {
    vp = std::max(vp, std::abs(s.signal_coef(t) * s.signal_coef(t) + s.noise_coef(t) * s.noise_coef(t) - 1.0));
    monotone = monotone && s.alpha_bar(t) <= s.alpha_bar(t - 1) && s.posterior_variance(t) >= 0.0;
  }
  os << ", VP max dev " << fmt("%.1e", vp);
  ok = ok && vp < 1e-10 && monotone;

  const auto s10 = NoiseSchedule::linear(10, 1e-4, 0.2);
  const double x0 = 0.8;
  Matrix x = forward_diffuse(Matrix::Constant(1, 1, x0), 10, Matrix::Constant(1, 1, -1.1), s10).x_t;
  for (int t = 10; t >= 1; --t) {
    const double e = (x(0, 0) - s10.signal_coef(t) * x0) / s10.noise_coef(t);
    x = posterior_mean(x, Matrix::Constant(1, 1, e), t, s10);
  }
  const double rec = std::abs(x(0, 0) - x0);
  const double closed = posterior_mean(Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.5), 2, two)(0, 0);
  os << ", posterior recursion err " << fmt("%.1e", rec) << ", closed form " << fmt("%.5f", closed);
  ok = ok && rec < 1e-5 && std::abs(closed - 1.00597) < 1e-5;

  const int n = 100000;
  bool mc = true;
  for (int t : {1, 500, 1000}) {
    const Matrix eps = gaussian(n, 1, static_cast<std::uint64_t>(t));
    const Matrix xt = forward_diffuse(Matrix::Constant(n, 1, 1.3), t, eps, s).x_t;
    const double mean = xt.mean();
    const double var = (xt.array() - mean).square().sum() / (n - 1);
    const double sd = s.noise_coef(t);
    mc = mc && std::abs(mean - s.signal_coef(t) * 1.3) < 3.0 * sd / std::sqrt(n) &&
         std::abs(var - sd * sd) < 3.0 * sd * sd * std::sqrt(2.0 / (n - 1));
  }
  os << ", Monte-Carlo marginals " << (mc ? "within 3 sigma" : "OUTSIDE 3 sigma");
  return {ok && mc, os.str()};
}

// ------------------------------------------------------------ trained models

struct Trained {
  RunConfig config;
  Checkpoint ck;
};

Trained train_cached(const fs::path& cache, const fs::path& config_path, const std::string& loss, int seed) {
  const fs::path dir = cache / (loss + "_seed" + std::to_string(seed));
  CommandOptions o;
  o.config_path = config_path;
  o.overrides = {"seed=" + std::to_string(seed), "loss.layerwise=" + loss};
  o.out = dir;
  o.quiet = true;
  const auto start = std::chrono::steady_clock::now();
  std::ostringstream log;
  if (cmd_train(o, log) != 0) throw std::runtime_error("training failed in " + dir.string());
  Trained t;
  t.ck = load_checkpoint(dir / "checkpoint.eed");
  t.config = t.ck.config;
  note("model " + loss + " seed " + std::to_string(seed) + ": " + std::to_string(t.ck.state.step) + " steps (" +
       fmt("%.0f", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()) + " s)");
  return t;
}

struct Point {
  double threshold = 0.0;
  double reduction = 0.0;
  double mmd = 0.0;
  double avg_layers = 0.0;
};

constexpr Index kEvalN = 2000;
constexpr std::uint64_t kEvalSeed = 7;
constexpr Index kCalibrationN = 250;
constexpr double kTargetReduction = 0.35;

SweepSettings settings_for(const RunConfig& c, Index n) {
  SweepSettings s;
  s.sampler.kind = c.sample.sampler;
  s.sampler.steps = c.sample.steps;
  s.n = n;
  s.seed = kEvalSeed;
  s.bandwidths = c.eval.bandwidths;
  s.aggregation = c.exit.aggregation;
  s.min_layer = c.exit.min_layer;
  return s;
}

Point evaluate_at(const Trained& m, double tau, const Matrix& reference) {
  const TradeoffPoint p = evaluate_threshold(m.ck.state.model, m.config.schedule.build(), tau,
                                             settings_for(m.config, kEvalN), reference);
  return {tau, p.layers_ratio_reduction, p.quality, p.avg_layers};
}

// Threshold calibrated on a small batch for ~35% layer reduction, then scored on the full batch.
Point matched_point(const Trained& m, const Matrix& reference) {
  const Calibration c = threshold_for_reduction(m.ck.state.model, m.config.schedule.build(), kTargetReduction,
                                                settings_for(m.config, kCalibrationN));
  return evaluate_at(m, c.threshold, reference);
}

std::string describe(const Point& p) {
  return "tau " + fmt("%.4g", p.threshold) + " cut " + fmt("%.1f", 100 * p.reduction) + "% mmd " +
         fmt("%.5f", p.mmd);
}

}  // namespace

int main(int argc, char** argv) {
  fs::path cache = "acceptance_cache";
  fs::path source = EEDIFF_SOURCE_DIR;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--cache") == 0) cache = argv[i + 1];
    else if (std::strcmp(argv[i], "--source") == 0) source = argv[i + 1];
    else {
      std::cerr << "usage: acceptance [--cache DIR] [--source DIR]\n";
      return 2;
    }
  }
  const fs::path config_path = source / "configs" / "toy_gmm.json";
  const RunConfig base = load_config(config_path, {});
  std::cout << "acceptance: cache " << cache.string() << ", config " << config_path.string() << std::endl;

  record(1, [&] { return threshold_zero_equivalence(base); });
  record(2, gradient_check);
  record(3, loss_identities);
  record(4, [&] { return efficiency_arithmetic(base); });
  record(9, schedule_oracles);

  // Identical budgets: every model gets the shipped config's step count.
  std::vector<Trained> ua, plain;
  for (int seed = 0; seed < 3; ++seed) {
    ua.push_back(train_cached(cache, config_path, "ua", seed));
    plain.push_back(train_cached(cache, config_path, "plain", seed));
  }
  const Matrix reference = base.datasets().second.data;

  record(5, [&]() -> std::pair<bool, std::string> {
    const Trained& m = ua[0];
    std::vector<double> taus = m.config.eval.thresholds;
    std::sort(taus.begin(), taus.end());
    const Point zero = evaluate_at(m, 0.0, reference);
    std::vector<Point> pts;
    for (double tau : taus) {
      pts.push_back(evaluate_at(m, tau, reference));
      note("ua seed 0 " + describe(pts.back()));
    }
    bool monotone = true;
    for (std::size_t i = 1; i < pts.size(); ++i) monotone = monotone && pts[i].reduction >= pts[i - 1].reduction;
    const Point* good = nullptr;
    for (const auto& p : pts)
      if (p.reduction >= 0.30 && p.mmd <= 2.0 * zero.mmd && (good == nullptr || p.reduction > good->reduction)) good = &p;
    std::string detail = "steps " + std::to_string(m.ck.state.step) + ", tau=0 mmd " + fmt("%.5f", zero.mmd) +
                         ", reductions " + (monotone ? "weakly increasing" : "NOT monotone") + " over ";
    for (const auto& p : pts) detail += fmt("%.1f", 100 * p.reduction) + "% ";
    detail += good ? "; " + describe(*good) + " (" + fmt("%.2f", good->mmd / zero.mmd) + "x)"
                   : "; no point with >= 30% cut within 2x";
    return {monotone && good != nullptr && m.ck.state.step >= 20000, detail};
  });

  std::vector<Point> ua_pts, plain_pts;
  for (int seed = 0; seed < 3; ++seed) {
    ua_pts.push_back(matched_point(ua[static_cast<std::size_t>(seed)], reference));
    plain_pts.push_back(matched_point(plain[static_cast<std::size_t>(seed)], reference));
    note("seed " + std::to_string(seed) + " ua " + describe(ua_pts.back()) + " | plain " + describe(plain_pts.back()));
  }

  record(6, [&]() -> std::pair<bool, std::string> {
    int wins = 0;
    bool matched = true;
    std::string detail;
    for (std::size_t s = 0; s < 3; ++s) {
      matched = matched && ua_pts[s].reduction >= 0.30 && plain_pts[s].reduction >= 0.30;
      const bool win = ua_pts[s].mmd < plain_pts[s].mmd;
      wins += win ? 1 : 0;
      detail += "seed " + std::to_string(s) + ": ua " + fmt("%.5f", ua_pts[s].mmd) + " @" +
                fmt("%.1f", 100 * ua_pts[s].reduction) + "% vs plain " + fmt("%.5f", plain_pts[s].mmd) + " @" +
                fmt("%.1f", 100 * plain_pts[s].reduction) + "%; ";
    }
    detail += std::to_string(wins) + "/3 seeds favour the UA loss";
    return {matched && wins >= 2, detail};
  });

  record(7, [&]() -> std::pair<bool, std::string> {
    const Trained& m = ua[0];
    ExitPolicy policy = ExitPolicy{ua_pts[0].threshold, m.config.exit.aggregation, m.config.exit.min_layer};
    const SweepSettings s = settings_for(m.config, kEvalN);
    const SampleRun run = run_sampler(early_exit_predictor(m.ck.state.model, policy), m.config.schedule.build(),
                                      kEvalN, 2, kEvalSeed, s.sampler);
    const std::size_t steps = run.timesteps.size(), tenth = std::max<std::size_t>(1, steps / 10);
    double first = 0.0, last = 0.0;
    for (const auto& row : run.u_traces) {
      for (std::size_t j = 0; j < tenth; ++j) {
        first += row[j];
        last += row[steps - 1 - j];
      }
    }
    first /= static_cast<double>(tenth * run.u_traces.size());
    last /= static_cast<double>(tenth * run.u_traces.size());
    const int T = m.config.schedule.T;
    const auto& h = m.ck.state.histogram;
    const double high = h.range_mean((4 * T + 4) / 5, T), low = h.range_mean(1, T / 5);
    return {last > first && high < low,
            "exit uncertainty first 10% steps " + fmt("%.4f", first) + " -> last 10% " + fmt("%.4f", last) +
                "; training loss t in [1, 0.2T] " + fmt("%.4f", low) + " vs [0.8T, T] " + fmt("%.4f", high)};
  });

  record(8, [&]() -> std::pair<bool, std::string> {
    SamplerOptions so;
    so.kind = base.sample.sampler;
    so.steps = base.sample.steps;
    const auto& m0 = ua[0];
    const NoiseSchedule sched = m0.config.schedule.build();
    const ErrorAccumulation zero = error_accumulation_curve(m0.ck.state.model, ExitPolicy{}, sched, so, 500, kEvalSeed);
    const bool flat = std::all_of(zero.mse.begin(), zero.mse.end(), [](double v) { return v == 0.0; });
    int wins = 0;
    std::string detail = std::string("tau=0 curve ") + (flat ? "identically zero" : "NONZERO") + "; ";
    for (std::size_t s = 0; s < 3; ++s) {
      const auto run = [&](const Trained& m, double tau) {
        const ExitPolicy p{tau, m.config.exit.aggregation, m.config.exit.min_layer};
        return error_accumulation_curve(m.ck.state.model, p, sched, so, 500, kEvalSeed);
      };
      const ErrorAccumulation a = run(ua[s], ua_pts[s].threshold), b = run(plain[s], plain_pts[s].threshold);
      wins += a.mse.back() < b.mse.back() ? 1 : 0;
      detail += "seed " + std::to_string(s) + ": ua " + fmt("%.4g", a.mse.back()) + " @" + fmt("%.2f", a.avg_layers) +
                " layers vs plain " + fmt("%.4g", b.mse.back()) + " @" + fmt("%.2f", b.avg_layers) + "; ";
    }
    detail += std::to_string(wins) + "/3 seeds lower for UA";
    return {flat && wins >= 2, detail};
  });

  std::sort(g_verdicts.begin(), g_verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  std::ostringstream report;
  int failed = 0;
  for (const auto& v : g_verdicts) {
    report << (v.pass ? "PASS" : "FAIL") << " C" << v.id << " " << v.detail << "\n";
    failed += v.pass ? 0 : 1;
  }
  report << (failed == 0 ? "all criteria pass" : std::to_string(failed) + " criteria fail") << "\n";
  std::cout << "\n" << report.str() << std::flush;
  std::ofstream(cache / "report.txt") << report.str();
  return failed == 0 ? 0 : 1;
}
