#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dlt/learning.hpp"
#include "dlt/oracle.hpp"
#include "dlt/selftest.hpp"

using namespace dlt;

TEST(Softmax, Examples) {
  const auto topo = build_topology({{{1}, 2}, {{1}, 1}}, {{{1}, {1}}});
  Parameters p = Parameters::zeros(topo);
  EXPECT_DOUBLE_EQ(weights_from_scores(p, topo).kernel[0][0], 0.5);
  p.kernel_scores[0] = {std::log(3.0), 0.0};
  const Weights w = weights_from_scores(p, topo);
  EXPECT_NEAR(w.kernel[0][0], 0.75, 1e-15);
  EXPECT_NEAR(w.kernel[0][1], 0.25, 1e-15);
  p.kernel_scores[0] = {std::log(3.0) + 40.0, 40.0};
  const Weights shifted = weights_from_scores(p, topo);
  EXPECT_NEAR(shifted.kernel[0][0], 0.75, 1e-15);
  p.kernel_scores[0][0] = std::nan("");
  EXPECT_THROW(weights_from_scores(p, topo), Error);
}

TEST(Softmax, SlicesSumToOne) {
  Rng rng = make_rng(2, 1);
  const auto topo = reference_topology();
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 3.0), topo);
  for (std::size_t l = 0; l + 1 < topo.num_layers(); ++l) {
    const std::size_t fc = topo.states(l), fp = topo.states(l + 1);
    for (std::size_t k = 0; k < topo.kernel_volume(l); k += 7)
      for (std::size_t g = 0; g < fp; g += 5) {
        double s = 0.0;
        for (std::size_t f = 0; f < fc; ++f) s += w.kernel[l][table_index(k, f, g, fc, fp)];
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  }
  EXPECT_NEAR(std::accumulate(w.root.begin(), w.root.end(), 0.0), 1.0, 1e-12);
}

TEST(Gradient, MatchesFiniteDifferences) { EXPECT_LE(selftest::gradient_agreement(25, 21), 1e-4); }

TEST(Gradient, ObjectiveAndSliceSums) {
  Rng rng = make_rng(22, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_tiny_instance(rng, 1.5);
    const auto [log_l, grad] = grad_log_likelihood(inst.params, inst.topo, inst.obs);
    EXPECT_NEAR(log_l, log_likelihood(inst.params, inst.topo, inst.obs), 1e-12);
    for (std::size_t l = 0; l + 1 < inst.topo.num_layers(); ++l) {
      const std::size_t fc = inst.topo.states(l), fp = inst.topo.states(l + 1);
      for (std::size_t k = 0; k < inst.topo.kernel_volume(l); ++k)
        for (std::size_t g = 0; g < fp; ++g) {
          double s = 0.0;
          for (std::size_t f = 0; f < fc; ++f) s += grad.kernel[l][table_index(k, f, g, fc, fp)];
          EXPECT_NEAR(s, 0.0, 1e-10);
        }
    }
    EXPECT_NEAR(std::accumulate(grad.root.begin(), grad.root.end(), 0.0), 0.0, 1e-10);
  }
}

TEST(Gradient, AllMissingIsZero) {
  Rng rng = make_rng(23, 1);
  const auto topo = selftest::three_pixel_topology();
  const auto params = Parameters::random(topo, rng, 2.0);
  const auto obs = ObservationGrid::all_missing({3});
  const auto [log_l, grad] = grad_log_likelihood(params, topo, obs);
  EXPECT_NEAR(log_l, 0.0, 1e-12);
  for (const auto& t : grad.kernel)
    for (double v : t) EXPECT_NEAR(v, 0.0, 1e-12);
  const auto fd = oracle::finite_difference_grad(params, topo, obs);
  for (const auto& t : fd.kernel)
    for (double v : t) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Training, ZeroLearningRateKeepsParameters) {
  Rng rng = make_rng(24, 1);
  const auto topo = quadtree_topology({4, 4}, {2, 3, 3});
  const auto params = Parameters::random(topo, rng, 0.5);
  std::vector<ObservationGrid> data;
  for (int i = 0; i < 10; ++i) data.push_back(oracle::random_observation(topo, rng, 0.0));
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  const auto result = sga_fit(params, topo, data, cfg);
  EXPECT_TRUE(result.params == params);
  ASSERT_EQ(result.trace.size(), 3u);
  EXPECT_DOUBLE_EQ(result.trace[0].mean_nll, result.trace[2].mean_nll);
}

TEST(Training, PointMassReachesZeroNll) {
  Rng rng = make_rng(25, 1);
  const auto topo = selftest::three_pixel_topology();
  const std::vector<ObservationGrid> data(128, ObservationGrid{{3}, {1, 0, 1}});
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  const auto result = sga_fit(Parameters::random(topo, rng, 0.5), topo, data, cfg);
  // A deterministic model can put all mass on this image, so the optimum is 0.
  const double final_nll = mean_nll(weights_from_scores(result.params, topo), topo, data);
  EXPECT_LT(final_nll, 1e-3);
  EXPECT_LT(result.trace.back().mean_nll, result.trace.front().mean_nll);
}

TEST(Training, DeterministicAcrossThreadCounts) {
  Rng rng = make_rng(26, 1);
  const auto topo = quadtree_topology({8, 8}, {2, 4, 4, 6});
  const auto params = Parameters::random(topo, rng, 0.5);
  std::vector<ObservationGrid> data;
  for (int i = 0; i < 70; ++i) data.push_back(oracle::random_observation(topo, rng, 0.2));
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.5;
  const auto a = sga_fit(params, topo, data, cfg);
  cfg.threads = 3;
  const auto b = sga_fit(params, topo, data, cfg);
  EXPECT_TRUE(a.params == b.params);
  for (std::size_t e = 0; e < a.trace.size(); ++e) EXPECT_EQ(a.trace[e].mean_nll, b.trace[e].mean_nll);
  EXPECT_LT(a.trace.back().mean_nll, a.trace.front().mean_nll);
}

TEST(Training, Errors) {
  const auto topo = selftest::three_pixel_topology();
  const auto params = Parameters::zeros(topo);
  EXPECT_THROW(sga_fit(params, topo, {}, TrainConfig{}), Error);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(sga_fit(params, topo, {ObservationGrid::all_missing({3})}, bad), Error);
  try {
    sga_fit(params, topo, {}, TrainConfig{});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}
