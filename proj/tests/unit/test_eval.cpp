#include "eediff/eval.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

using namespace eediff;
using namespace eediff::testing;

namespace {

SampleRun run_with_layers(std::vector<std::vector<int>> layers) {
  SampleRun r;
  r.layers_used = std::move(layers);
  return r;
}

BackboneConfig toy_config() {
  BackboneConfig c = micro_config(13, 64, 4);
  return c;
}

const NoiseSchedule& short_schedule() {
  static const NoiseSchedule s = NoiseSchedule::linear(40, 1e-3, 0.2);
  return s;
}

EarlyExitModel perturbed(const BackboneConfig& c, std::uint64_t seed = 3) {
  EarlyExitModel m(c, false, seed);
  perturb_parameters(m, seed + 100, 0.2);
  return m;
}

}  // namespace

TEST(LayerUsage, ReportedExamples) {
  EXPECT_EQ(layer_usage_report(run_with_layers({{13, 13}, {13, 13}}), 13).reduction_percent(), 0.0);
  EXPECT_NEAR(layers_reduction(6.8, 13) * 100.0, 47.7, 0.05);

  const auto half = layer_usage_report(run_with_layers({{13, 7}, {7, 13}}), 13);
  EXPECT_EQ(half.avg_layers, 10.0);
  EXPECT_NEAR(half.reduction_percent(), -23.1, 0.05);

  // 6.8 average from raw traces.
  std::vector<std::vector<int>> traces(5, std::vector<int>{7, 7, 7, 7, 6});
  const auto r = layer_usage_report(run_with_layers(traces), 13);
  EXPECT_NEAR(r.avg_layers, 6.8, 1e-12);
  EXPECT_NEAR(r.reduction_percent(), -47.7, 0.05);
  EXPECT_THROW(layer_usage_report(SampleRun{}, 13), RangeError);
}

TEST(LayerUsage, MatchesIndependentMean) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> layer(1, 13);
  std::vector<std::vector<int>> traces(37, std::vector<int>(19));
  for (auto& row : traces) std::generate(row.begin(), row.end(), [&] { return layer(rng); });
  long total = 0;
  for (const auto& row : traces) total = std::accumulate(row.begin(), row.end(), total);
  const double mean = static_cast<double>(total) / (37.0 * 19.0);
  const auto r = layer_usage_report(run_with_layers(traces), toy_config());
  EXPECT_EQ(r.avg_layers, mean);
  EXPECT_EQ(r.layers_ratio_reduction, 1.0 - mean / 13.0);
  EXPECT_GE(r.layers_ratio_reduction, 0.0);
  EXPECT_LE(r.layers_ratio_reduction, 1.0 - 1.0 / 13.0);
  EXPECT_LE(r.flops_actual, r.flops_full);
}

TEST(Flops, DocumentedTableForToyConfig) {
  const FlopsBreakdown f = flops_breakdown(toy_config());
  // d = 64, M = 1 data token, L = 2, P = 2, r = 4, 6 skip pairs over 13 layers.
  EXPECT_EQ(f.attention, 4.0 * 64 * 64 * 2 + 2.0 * 64 * 4);
  EXPECT_EQ(f.mlp, 2.0 * 4 * 64 * 64 * 2);
  EXPECT_EQ(f.uem, 64.0 + 64.0);
  EXPECT_DOUBLE_EQ(f.skip, 2.0 * 64 * 64 * 2 * 6 / 13.0);
  EXPECT_EQ(f.embedding, 64.0 * 64 + 2 * 64);
  EXPECT_EQ(f.head, 64.0 * 2);
  EXPECT_NEAR(flops_estimate(toy_config(), 13).full, 1388928.0, 1e-6);
}

TEST(Flops, FullDepthEqualsFull) {
  for (const auto& c : {toy_config(), image_config(6, 32, 8, 2)}) {
    const FlopsPair p = flops_estimate(c, c.depth);
    EXPECT_EQ(p.actual, p.full);
  }
  EXPECT_THROW(flops_estimate(toy_config(), 13.5), RangeError);
  EXPECT_THROW(flops_estimate(toy_config(), -1.0), RangeError);
}

TEST(Flops, ReductionTracksLayerRatio) {
  // 22.86 -> 11.97 units is a 47.6% cut; our model must land within 2% of it.
  for (const auto& c : {toy_config(), image_config(13, 64, 8, 2), image_config(13, 128, 16, 2)}) {
    const double avg = 13.0 * (1.0 - 0.476);
    const FlopsPair p = flops_estimate(c, avg);
    const double scaled = 22.86 * p.actual / p.full;
    EXPECT_NEAR(scaled, 11.97, 0.02 * 11.97);
    EXPECT_NEAR(1.0 - p.actual / p.full, 0.476, 0.02 * 0.476);
  }
}

TEST(Flops, MlpTermQuadruplesWithWidth) {
  BackboneConfig a = image_config(4, 16, 8, 2), b = a;
  b.hidden_dim = 32;
  EXPECT_EQ(flops_breakdown(b).mlp, 4.0 * flops_breakdown(a).mlp);
}

TEST(Flops, LinearInAverageDepth) {
  const auto c = toy_config();
  const FlopsBreakdown f = flops_breakdown(c);
  for (double avg : {0.0, 1.0, 3.3, 6.8, 13.0}) {
    EXPECT_NEAR(flops_estimate(c, avg).actual, f.fixed() + avg * f.per_layer(), 1e-6);
  }
  const double a = flops_estimate(c, 2.0).actual, b = flops_estimate(c, 5.0).actual,
               d = flops_estimate(c, 8.0).actual;
  EXPECT_NEAR(b - a, d - b, 1e-6);
}

TEST(Mmd, TwoPointMassesClosedForm) {
  for (double d : {0.3, 1.0, 2.5}) {
    Matrix a(1, 2), b(1, 2);
    a << 0.0, 0.0;
    b << d, 0.0;
    for (double h : {0.5, 1.0}) {
      EXPECT_NEAR(mmd_squared(a, b, {h}, false), 2.0 * (1.0 - std::exp(-d * d / (2 * h * h))), 1e-15);
    }
  }
}

TEST(Mmd, BiasedSelfDistanceIsExactlyZero) {
  const Matrix a = random_matrix(50, 3, 1);
  EXPECT_EQ(mmd_squared(a, a, {0.1, 0.5, 2.0}, false), 0.0);
}

TEST(Mmd, ExactlySymmetric) {
  const Matrix a = random_matrix(40, 2, 1), b = random_matrix(33, 2, 2, 1.5), c = random_matrix(40, 2, 3);
  for (bool unbiased : {true, false}) {
    EXPECT_EQ(mmd_squared(a, b, {0.2, 1.0}, unbiased), mmd_squared(b, a, {0.2, 1.0}, unbiased));
    EXPECT_EQ(mmd_squared(a, c, {0.2, 1.0}, unbiased), mmd_squared(c, a, {0.2, 1.0}, unbiased));
  }
}

TEST(Mmd, Errors) {
  const Matrix a = random_matrix(5, 2, 1);
  EXPECT_THROW(mmd_squared(a, random_matrix(5, 3, 1), {1.0}), ShapeError);
  EXPECT_THROW(mmd_squared(a, random_matrix(1, 2, 1), {1.0}), RangeError);
  EXPECT_THROW(mmd_squared(a, a, {}), RangeError);
}

TEST(Mmd, SeparatesShiftedDistributions) {
  const Matrix a = random_matrix(300, 2, 1), b = random_matrix(300, 2, 2);
  Matrix c = random_matrix(300, 2, 3);
  c.col(0).array() += 1.0;
  EXPECT_GT(mmd_squared(a, c, {0.1, 0.2, 0.5, 1, 2}), 10 * std::abs(mmd_squared(a, b, {0.1, 0.2, 0.5, 1, 2})));
}

TEST(Mmd, SplitHalvesWithinPermutationSpread) {
  const Dataset d = make_toy_dataset(DatasetKind::GaussianMixture, 5000, 17);
  const std::vector<double> bw{0.1, 0.2, 0.5, 1.0, 2.0};
  const Index half = 2500;
  const double observed = mmd_squared(d.data.topRows(half), d.data.bottomRows(half), bw);
  // Null spread from random re-splits of the pooled set.
  std::mt19937_64 rng(99);
  std::vector<Index> idx(5000);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> null;
  for (int k = 0; k < 12; ++k) {
    std::shuffle(idx.begin(), idx.end(), rng);
    Matrix shuffled(5000, 2);
    for (Index i = 0; i < 5000; ++i) shuffled.row(i) = d.data.row(idx[static_cast<std::size_t>(i)]);
    null.push_back(mmd_squared(shuffled.topRows(half), shuffled.bottomRows(half), bw));
  }
  double var = 0.0;
  for (double v : null) var += v * v;
  const double sigma = std::sqrt(var / static_cast<double>(null.size()));
  EXPECT_LT(std::abs(observed), 3.0 * sigma);
}

TEST(Frechet, ZeroForIdenticalAndKnownForShift) {
  const Matrix a = random_matrix(200, 3, 1);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-9);
  Matrix b = a;
  b.array() += 2.0;
  EXPECT_NEAR(frechet_distance(a, b), 12.0, 1e-9);
}

TEST(Redundancy, FinalLayerRowIsZeroAndEntriesFinite) {
  const EarlyExitModel m(image_config(4, 8, 4, 2), false, 2);
  const Dataset d = make_toy_dataset(DatasetKind::TinyImage, 64, 5, 4);
  const auto p = layer_redundancy_profile(m.backbone, d, short_schedule(), {1, 20, 40}, 16, 4);
  ASSERT_EQ(p.mse.rows(), 3);
  ASSERT_EQ(p.mse.cols(), 4);
  for (Index k = 0; k < 3; ++k) {
    EXPECT_EQ(p.mse(k, 3), 0.0);
    for (Index i = 0; i < 4; ++i) {
      EXPECT_TRUE(std::isfinite(p.mse(k, i)));
      EXPECT_GE(p.mse(k, i), p.mse(k, 3));
    }
  }
  EXPECT_THROW(layer_redundancy_profile(m.backbone, d, short_schedule(), {}, 16, 4), RangeError);
  const auto again = layer_redundancy_profile(m.backbone, d, short_schedule(), {1, 20, 40}, 16, 4);
  EXPECT_TRUE(bitwise_equal(p.mse, again.mse));
}

TEST(ErrorAccumulation, ZeroThresholdGivesZeroCurve) {
  const EarlyExitModel m = perturbed(micro_config(4));
  for (auto kind : {SamplerKind::Ancestral, SamplerKind::Deterministic}) {
    SamplerOptions o;
    o.kind = kind;
    o.steps = 10;
    const auto curve = error_accumulation_curve(m, ExitPolicy{}, short_schedule(), o, 8, 1);
    ASSERT_EQ(curve.mse.size(), curve.timesteps.size());
    for (double v : curve.mse) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(curve.avg_layers, 4.0);
  }
}

TEST(ErrorAccumulation, NonnegativeWithEarlyExit) {
  const EarlyExitModel m = perturbed(micro_config(4));
  ExitPolicy p;
  p.threshold = 0.55;
  SamplerOptions o;
  o.steps = 10;
  const auto curve = error_accumulation_curve(m, p, short_schedule(), o, 8, 1);
  for (double v : curve.mse) EXPECT_GE(v, 0.0);
  EXPECT_LT(curve.avg_layers, 4.0);
  EXPECT_GT(*std::max_element(curve.mse.begin(), curve.mse.end()), 0.0);
}

TEST(Sweep, ZeroPointMatchesFullModelAndReductionsAreOrdered) {
  const EarlyExitModel m = perturbed(micro_config(5), 8);
  SweepSettings s;
  s.n = 64;
  s.seed = 2;
  s.sampler.steps = 10;
  const Matrix reference = make_toy_dataset(DatasetKind::GaussianMixture, 200, 1).data;
  const std::vector<double> taus{0.0, 0.3, 0.5, 0.6, 0.8};
  const auto points = threshold_sweep(m, short_schedule(), taus, s, reference);
  ASSERT_EQ(points.size(), taus.size());

  const SampleRun full = run_sampler(full_depth_predictor(m.backbone), short_schedule(), 64, 2, 2, s.sampler);
  EXPECT_EQ(points[0].layers_ratio_reduction, 0.0);
  EXPECT_EQ(points[0].quality, mmd_squared(full.samples, reference, s.bandwidths));
  for (std::size_t i = 1; i < points.size(); ++i) {
    EXPECT_EQ(points[i].threshold, taus[i]);
    EXPECT_GE(points[i].layers_ratio_reduction, points[i - 1].layers_ratio_reduction);
  }
  EXPECT_THROW(threshold_sweep(m, short_schedule(), {}, s, reference), ConfigError);
}

TEST(Calibration, HitsReachableTarget) {
  const EarlyExitModel m = perturbed(micro_config(5), 8);
  SweepSettings s;
  s.n = 32;
  s.sampler.steps = 8;
  const Calibration c = threshold_for_reduction(m, short_schedule(), 0.3, s);
  EXPECT_GT(c.threshold, 0.0);
  EXPECT_LE(c.threshold, 1.0);
  ExitPolicy p;
  p.threshold = c.threshold;
  const SampleRun run = run_sampler(early_exit_predictor(m, p), short_schedule(), 32, 2, 0, s.sampler);
  EXPECT_EQ(layer_usage_report(run, 5).layers_ratio_reduction, c.reduction);
}

TEST(Csv, HeadersAreStable) {
  const auto dir = temp_dir("eval_csv");
  EfficiencyReport e;
  e.depth = 13;
  e.avg_layers = 13;
  write_efficiency_csv(e, dir / "efficiency.csv");
  write_tradeoff_csv({TradeoffPoint{}}, dir / "tradeoff.csv");
  RedundancyProfile rp{{1}, Matrix::Zero(1, 2)};
  write_redundancy_csv(rp, dir / "redundancy.csv");
  write_error_accum_csv(ErrorAccumulation{{5}, {0.0}, 1.0}, dir / "error_accum.csv");
  const auto first_lines = [&](const char* name) {
    std::ifstream in(dir / name);
    std::string a, b;
    std::getline(in, a);
    std::getline(in, b);
    return a + "|" + b;
  };
  EXPECT_EQ(first_lines("efficiency.csv"),
            "depth,avg_layers,layers_ratio_reduction,reduction_percent,flops_full,flops_actual|13,13,0,0,0,0");
  EXPECT_EQ(first_lines("tradeoff.csv").substr(0, 63),
            "threshold,mmd,avg_layers,layers_ratio_reduction,flops_actual,fl");
  EXPECT_EQ(first_lines("redundancy.csv"), "t,layer,mse|1,1,0");
  EXPECT_EQ(first_lines("error_accum.csv"), "step,t,mse|1,5,0");
}
