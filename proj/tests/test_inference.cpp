#include <gtest/gtest.h>

#include <cmath>

#include "dlt/inference.hpp"
#include "dlt/oracle.hpp"
#include "dlt/selftest.hpp"

using namespace dlt;

namespace {

Weights uniform_weights(const ModelTopology& topo) { return weights_from_scores(Parameters::zeros(topo), topo); }

}  // namespace

TEST(Inference, LeafMessages) {
  const auto topo = selftest::three_pixel_topology();
  const auto msgs = init_leaf_messages(ObservationGrid{{3}, {1, ObservationGrid::kMissing, 0}}, topo);
  EXPECT_EQ(msgs.at(0, 0, 2)[0], kNegInf);
  EXPECT_EQ(msgs.at(0, 0, 2)[1], 0.0);
  EXPECT_EQ(msgs.at(0, 1, 2)[0], 0.0);
  EXPECT_EQ(msgs.at(0, 1, 2)[1], 0.0);
  EXPECT_EQ(msgs.at(0, 2, 2)[0], 0.0);
  EXPECT_EQ(msgs.at(0, 2, 2)[1], kNegInf);

  const auto empty = init_leaf_messages(ObservationGrid::all_missing({3}), topo);
  for (double v : empty.log_u[0]) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(init_leaf_messages(ObservationGrid::all_missing({4}), topo), Error);
}

TEST(Inference, AllMissingGivesZeroMessages) {
  Rng rng = make_rng(5, 1);
  const auto topo = selftest::three_pixel_topology();
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 3.0), topo);
  MessageGrid msgs = init_leaf_messages(ObservationGrid::all_missing({3}), topo);
  forward_pass(w, topo, msgs);
  for (const auto& layer : msgs.log_u)
    for (double v : layer) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_NEAR(log_likelihood(w, topo, ObservationGrid::all_missing({3})), 0.0, 1e-12);
}

TEST(Inference, UniformWeightsMatchOracleExactly) {
  const auto topo = selftest::three_pixel_topology();
  const Weights w = uniform_weights(topo);
  const ObservationGrid obs{{3}, {0, 1, 0}};
  const double unique = log_likelihood(w, topo, obs);
  EXPECT_DOUBLE_EQ(unique, oracle::explicit_tree_bp(oracle::build_explicit_tree(topo, obs), w, topo));
  EXPECT_NEAR(unique, oracle::enumerate_joint(topo, w, obs), 1e-12);
  // four leaf nodes observed independently at probability 1/2 each
  EXPECT_NEAR(unique, 4.0 * std::log(0.5), 1e-12);
}

TEST(Inference, DeterministicPrior) {
  const std::vector<double> log_u{std::log(0.3), std::log(0.6)};
  EXPECT_DOUBLE_EQ(log_likelihood(log_u, std::vector<double>{0.0, 1.0}), std::log(0.6));
  EXPECT_THROW(log_likelihood(log_u, std::vector<double>{1.0}), Error);
}

TEST(Inference, UniqueMessagesMatchOracles) { EXPECT_LE(selftest::likelihood_agreement(60, 11), 1e-12); }

TEST(Inference, Normalization) {
  const auto n = selftest::normalization(15, 12);
  EXPECT_LE(n.max_pixel_sum_error, 1e-10);
  EXPECT_LE(n.max_leaf_sum_error, 1e-10);
  EXPECT_LE(n.max_all_missing, 1e-12);
}

TEST(Inference, OverlapLosesImageMass) {
  // Duplicated leaves are separate variables, so image-level mass drops below one.
  Rng rng = make_rng(3, 1);
  const auto topo = selftest::three_pixel_topology();
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 1.0), topo);
  EXPECT_LT(selftest::pixel_mass(topo, w), 1.0 - 1e-6);
  EXPECT_NEAR(oracle::leaf_assignment_mass(topo, w), 1.0, 1e-12);
}

TEST(Inference, MonotoneEvidence) {
  Rng rng = make_rng(8, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_tiny_instance(rng);
    const Weights w = weights_from_scores(inst.params, inst.topo);
    for (std::size_t t = 0; t < inst.obs.size(); ++t) {
      if (inst.obs.observed(t)) continue;
      const double marginal = log_likelihood(w, inst.topo, inst.obs);
      ObservationGrid more = inst.obs;
      double total = 0.0;
      for (std::size_t f = 0; f < inst.topo.states(0); ++f) {
        more.states[t] = static_cast<std::int32_t>(f);
        const double completed = log_likelihood(w, inst.topo, more);
        EXPECT_LE(completed, marginal + 1e-12);
        total += std::exp(completed);
      }
      // Each pixel is re-observed by every duplicate, so the completions sum to at most the marginal.
      EXPECT_LE(total, std::exp(marginal) * (1 + 1e-12));
      if (inst.topo.duplicates(0)[t] == 1) EXPECT_NEAR(total, std::exp(marginal), 1e-12);
    }
  }
}

TEST(Inference, MessagesBoundedAndFinite) {
  Rng rng = make_rng(9, 1);
  const auto topo = quadtree_topology({4, 4}, {3, 4, 5});
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 5.0), topo);
  for (int trial = 0; trial < 50; ++trial) {
    const auto obs = oracle::random_observation(topo, rng, 0.5);
    MessageGrid msgs = init_leaf_messages(obs, topo);
    forward_pass(w, topo, msgs);
    for (const auto& layer : msgs.log_u)
      for (double v : layer) {
        EXPECT_FALSE(std::isnan(v));
        EXPECT_LE(v, 1e-12);
      }
  }
}

TEST(Inference, ReferenceComputesEveryMessage) {
  const auto topo = reference_topology();
  Rng rng = make_rng(1, 1);
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 0.5), topo);
  MessageGrid msgs = init_leaf_messages(oracle::random_observation(topo, rng, 0.2), topo);
  forward_pass(w, topo, msgs);
  std::size_t vectors = 0;
  for (std::size_t l = 0; l < topo.num_layers(); ++l) {
    ASSERT_EQ(msgs.log_u[l].size(), topo.positions(l) * topo.states(l));
    vectors += topo.positions(l);
    for (double v : msgs.log_u[l]) ASSERT_FALSE(std::isnan(v));
  }
  EXPECT_EQ(vectors, 979u);
  EXPECT_TRUE(std::isfinite(log_likelihood(root_message(msgs, topo), w.root)));
}

TEST(Oracle, SingleNodeAndDeterministicChain) {
  const auto single = build_topology({{{1}, 3}}, {});
  Parameters p = Parameters::zeros(single);
  p.root_scores = {0.0, std::log(2.0), std::log(5.0)};
  const Weights w = weights_from_scores(p, single);
  const ObservationGrid obs{{1}, {1}};
  EXPECT_NEAR(oracle::explicit_tree_bp(oracle::build_explicit_tree(single, obs), w, single), std::log(0.25), 1e-15);

  const auto topo = selftest::three_pixel_topology();
  Parameters det = Parameters::zeros(topo);
  for (auto& table : det.kernel_scores)
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t g = 0; g < 2; ++g) table[table_index(k, f, g, 2, 2)] = f == g ? 0.0 : -1e300;
  det.root_scores = {0.0, -1e300};
  const Weights dw = weights_from_scores(det, topo);
  oracle::for_each_complete_observation(topo, [&](const ObservationGrid& o) {
    const double l = std::exp(oracle::enumerate_joint(topo, dw, o));
    EXPECT_TRUE(l == 0.0 || std::abs(l - 1.0) < 1e-15) << l;
  });
}

TEST(Oracle, ChainDistribution) {
  Rng rng = make_rng(4, 1);
  const auto topo = selftest::three_pixel_topology();
  const Weights w = weights_from_scores(Parameters::random(topo, rng, 1.0), topo);
  double total = 0.0;
  for (const auto& [z, p] : oracle::sample_chain_distribution(topo, w, ObservationGrid{{3}, {1, ObservationGrid::kMissing, 0}}))
    total += p;
  EXPECT_NEAR(total, 1.0, 1e-10);
  const auto full = oracle::sample_chain_distribution(topo, w, ObservationGrid{{3}, {1, 0, 1}});
  for (const auto& [z, p] : full) {
    if (p == 0.0) continue;
    EXPECT_EQ(std::vector<std::int32_t>(z.end() - 3, z.end()), (std::vector<std::int32_t>{1, 0, 1}));
  }
}

TEST(Oracle, SizeGuards) {
  EXPECT_THROW(oracle::build_explicit_tree(reference_topology(), ObservationGrid::all_missing({28, 28})), Error);
  EXPECT_THROW(oracle::enumerate_joint(canonical_1d_topology(4), weights_from_scores(Parameters::zeros(canonical_1d_topology(4)),
                                                                                    canonical_1d_topology(4)),
                                       ObservationGrid::all_missing({22})),
               Error);
}

TEST(Oracle, TinyInstancesIncludeDuplicatedLeaves) {
  Rng rng = make_rng(10, 1);
  int overlapping = 0;
  for (int i = 0; i < 100; ++i) {
    const auto topo = oracle::random_tiny_topology(rng);
    EXPECT_LE(topo.num_layers(), 3u);
    EXPECT_LE(topo.positions(0), 5u);
    overlapping += topo.layer_nodes(0) > topo.positions(0);
    const auto flat = oracle::random_tiny_topology(rng, false);
    EXPECT_EQ(flat.layer_nodes(0), flat.positions(0));
  }
  EXPECT_GE(overlapping, 50);
}
