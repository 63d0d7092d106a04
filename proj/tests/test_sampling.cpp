#include <gtest/gtest.h>

#include <cmath>

#include "dlt/oracle.hpp"
#include "dlt/sampling.hpp"
#include "dlt/selftest.hpp"

using namespace dlt;

TEST(SampleRoot, Examples) {
  Rng rng = make_rng(1, 2);
  const std::vector<double> any{std::log(0.3), std::log(0.9)};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_root(any, std::vector<double>{1.0, 0.0}, rng), 0u);
  const std::vector<double> excluded{0.0, kNegInf};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_root(excluded, std::vector<double>{0.5, 0.5}, rng), 0u);

  const std::vector<double> u{std::log(0.2), std::log(0.6)};
  const int n = 10000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += sample_root(u, std::vector<double>{0.5, 0.5}, rng) == 1;
  const double sigma = std::sqrt(0.75 * 0.25 / n);
  EXPECT_NEAR(ones / double(n), 0.75, 3 * sigma);

  EXPECT_THROW(sample_root(std::vector<double>{kNegInf, kNegInf}, std::vector<double>{0.5, 0.5}, rng), Error);
}

TEST(Sampling, MatchesExactChain) {
  const auto topo = selftest::three_pixel_topology();
  Rng rng = make_rng(2, 2);
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 1.5), topo);
  EXPECT_LE(selftest::sampler_total_variation(topo, w, ObservationGrid::all_missing({3}), 20000, 31), 0.05);
  EXPECT_LE(selftest::sampler_total_variation(topo, w, ObservationGrid{{3}, {ObservationGrid::kMissing, 1, ObservationGrid::kMissing}},
                                              20000, 32),
            0.05);
}

TEST(Sampling, QuadtreeMatchesAncestralChain) {
  const auto topo = quadtree_topology({2, 2}, {2, 3});
  Rng rng = make_rng(3, 2);
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 1.5), topo);
  EXPECT_LE(selftest::sampler_total_variation(topo, w, ObservationGrid{{2, 2}, {1, -1, -1, 0}}, 20000, 33), 0.05);
}

TEST(Sampling, ObservedPixelsReproduced) {
  Rng rng = make_rng(4, 2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto inst = oracle::random_tiny_instance(rng, 1.0);
    const Weights w = weights_from_scores(inst.params, inst.topo);
    EXPECT_EQ(selftest::observed_fidelity(inst.topo, w, inst.obs, 200, 40 + trial), 200u);
  }
}

TEST(Sampling, FullyObservedAndSeedDeterminism) {
  const auto topo = reference_topology();
  Rng rng = make_rng(5, 2);
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 0.5), topo);
  const auto obs = oracle::random_observation(topo, rng, 0.0);
  Rng a = make_rng(9, Stream::Sample, 0);
  const SampleGrid z = sample_conditional(w, topo, obs, a);
  EXPECT_EQ(z.states[0], obs.states);
  for (std::size_t l = 0; l < topo.num_layers(); ++l) EXPECT_EQ(z.states[l].size(), topo.positions(l));

  const auto missing = ObservationGrid::all_missing({28, 28});
  Rng b = make_rng(9, Stream::Sample, 1), c = make_rng(9, Stream::Sample, 1);
  EXPECT_TRUE(sample_conditional(w, topo, missing, b) == sample_conditional(w, topo, missing, c));

  Rng d = make_rng(9, Stream::Sample, 2);
  EXPECT_TRUE(inpaint(w, topo, obs, d) == states_to_image(obs.states, {28, 28}, 2));
}

TEST(Sampling, InpaintKeepsObservedPixels) {
  const auto topo = reference_topology();
  Rng rng = make_rng(6, 2);
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 0.5), topo);
  ObservationGrid obs = oracle::random_observation(topo, rng, 0.0);
  for (std::size_t r = 3; r < 15; ++r)
    for (std::size_t c = 10; c < 22; ++c) obs.states[r * 28 + c] = ObservationGrid::kMissing;
  std::vector<std::int32_t> completed;
  const Image img = inpaint(w, topo, obs, rng, &completed);
  ASSERT_EQ(img.pixels.size(), 784u);
  for (std::size_t t = 0; t < 784; ++t) {
    EXPECT_TRUE(img.pixels[t] == 0.0 || img.pixels[t] == 1.0);
    if (obs.observed(t)) EXPECT_EQ(completed[t], obs.states[t]);
  }
}

TEST(Sampling, VisualizeState) {
  const auto topo = reference_topology();
  Rng rng = make_rng(7, 2);
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 0.5), topo);
  const Image three = visualize_state(w, topo, 2, 5, rng);
  EXPECT_EQ(three.height, 12u);
  EXPECT_EQ(three.width, 12u);
  const Image two = visualize_state(w, topo, 1, 0, rng);
  EXPECT_EQ(two.height, 4u);
  EXPECT_EQ(two.width, 4u);
  EXPECT_THROW(visualize_state(w, topo, 0, 0, rng), Error);
  EXPECT_THROW(visualize_state(w, topo, 2, 64, rng), Error);

  // Consistent one-hot tables make the rendering independent of the seed.
  Parameters det = Parameters::zeros(topo);
  for (std::size_t l = 0; l + 1 < topo.num_layers(); ++l) {
    const std::size_t fc = topo.states(l), fp = topo.states(l + 1);
    for (std::size_t k = 0; k < topo.kernel_volume(l); ++k)
      for (std::size_t g = 0; g < fp; ++g)
        for (std::size_t f = 0; f < fc; ++f) det.kernel_scores[l][table_index(k, f, g, fc, fp)] = f == g % fc ? 0.0 : -1e300;
  }
  const Weights dw = weights_from_scores(det, topo);
  Rng r1 = make_rng(1, 4), r2 = make_rng(99, 4);
  EXPECT_TRUE(visualize_state(dw, topo, 2, 17, r1) == visualize_state(dw, topo, 2, 17, r2));
}

TEST(Sampling, HugeExponentsStayFinite) {
  const auto topo = canonical_1d_topology(12);
  EXPECT_GE(topo.max_duplicates(), 1024);
  Rng rng = make_rng(8, 2);
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 1.0), topo);
  const auto obs = oracle::random_observation(topo, rng, 0.5);
  const SampleGrid z = sample_conditional(w, topo, obs, rng);
  for (std::size_t t = 0; t < obs.size(); ++t)
    if (obs.observed(t)) EXPECT_EQ(z.states[0][t], obs.states[t]);
}
