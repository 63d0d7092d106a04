#pragma once

// Oracle agreement checks shared by the `selftest` command and the test
// suites.  Each check returns the measured quantity; thresholds are
// applied by run_selftest and by the callers.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dlt/inference.hpp"
#include "dlt/learning.hpp"
#include "dlt/oracle.hpp"
#include "dlt/rng.hpp"
#include "dlt/sampling.hpp"
#include "dlt/topology.hpp"

namespace dlt::selftest {

struct Result {
  std::string name;
  bool passed;
  std::string detail;
};

/// Largest pairwise gap between unique-message, explicit-tree and
/// enumeration log-likelihoods over random tiny instances.
inline double likelihood_agreement(std::size_t instances, std::uint64_t seed) {
  Rng rng = make_rng(seed, 101);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto inst = oracle::random_tiny_instance(rng);
    const Weights w = weights_from_scores(inst.params, inst.topo);
    const double unique = log_likelihood(w, inst.topo, inst.obs);
    const double tree = oracle::explicit_tree_bp(oracle::build_explicit_tree(inst.topo, inst.obs), w, inst.topo);
    const double joint = oracle::enumerate_joint(inst.topo, w, inst.obs);
    worst = std::max({worst, std::abs(unique - tree), std::abs(unique - joint), std::abs(tree - joint)});
  }
  return worst;
}

struct Normalization {
  double max_pixel_sum_error = 0.0;  // overlap-free models: |sum over complete images of L - 1|
  double max_leaf_sum_error = 0.0;   // any model: |sum over complete leaf-node assignments of L - 1|
  double min_pixel_mass = 1.0;       // smallest image-level mass seen on overlapping models
  double max_all_missing = 0.0;      // |log L| for the empty observation
};

inline double pixel_mass(const ModelTopology& topo, const Weights& w) {
  double total = 0.0;
  oracle::for_each_complete_observation(topo, [&](const ObservationGrid& obs) {
    total += std::exp(log_likelihood(w, topo, obs));
  });
  return total;
}

inline Normalization normalization(std::size_t instances, std::uint64_t seed) {
  Rng rng = make_rng(seed, 102);
  Normalization n;
  for (std::size_t i = 0; i < instances; ++i) {
    for (const bool overlap : {false, true}) {
      const auto inst = oracle::random_tiny_instance(rng, 2.0, overlap);
      const Weights w = weights_from_scores(inst.params, inst.topo);
      const double image_mass = pixel_mass(inst.topo, w);
      if (inst.topo.layer_nodes(0) == inst.topo.positions(0)) {
        n.max_pixel_sum_error = std::max(n.max_pixel_sum_error, std::abs(image_mass - 1.0));
      } else {
        n.min_pixel_mass = std::min(n.min_pixel_mass, image_mass);
      }
      n.max_leaf_sum_error = std::max(n.max_leaf_sum_error, std::abs(oracle::leaf_assignment_mass(inst.topo, w) - 1.0));
      const double empty = log_likelihood(w, inst.topo, ObservationGrid::all_missing(inst.topo.layer(0).extent));
      n.max_all_missing = std::max(n.max_all_missing, std::abs(empty));
    }
  }
  return n;
}

/// |analytic - numeric| / max(|numeric|, 1e-3): a relative error with the
/// absolute floor 1e-7 at the 1e-4 threshold.
inline double gradient_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-3);
}

inline double gradient_agreement(std::size_t instances, std::uint64_t seed, double h = 1e-5) {
  Rng rng = make_rng(seed, 103);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto inst = oracle::random_tiny_instance(rng, 1.0);
    const auto [log_l, grad] = grad_log_likelihood(inst.params, inst.topo, inst.obs);
    const auto fd = oracle::finite_difference_grad(inst.params, inst.topo, inst.obs, h);
    for (std::size_t l = 0; l < grad.kernel.size(); ++l)
      for (std::size_t j = 0; j < grad.kernel[l].size(); ++j)
        worst = std::max(worst, gradient_error(grad.kernel[l][j], fd.kernel[l][j]));
    for (std::size_t j = 0; j < grad.root.size(); ++j) worst = std::max(worst, gradient_error(grad.root[j], fd.root[j]));
  }
  return worst;
}

/// Total variation between sampler frequencies and the exact chain.
inline double sampler_total_variation(const ModelTopology& topo, const Weights& w, const ObservationGrid& obs,
                                      std::size_t draws, std::uint64_t seed) {
  const auto exact = oracle::sample_chain_distribution(topo, w, obs);
  std::map<std::vector<std::int32_t>, double> empirical;
  MessageGrid msgs = init_leaf_messages(obs, topo);
  forward_pass(w, topo, msgs);
  Rng rng = make_rng(seed, Stream::Sample);
  for (std::size_t i = 0; i < draws; ++i) {
    empirical[oracle::flatten_sample(sample_from_messages(w, topo, msgs, rng).states)] += 1.0 / double(draws);
  }
  double tv = 0.0;
  for (const auto& [z, p] : exact) {
    const auto it = empirical.find(z);
    tv += std::abs(p - (it == empirical.end() ? 0.0 : it->second));
  }
  for (const auto& [z, q] : empirical)
    if (!exact.count(z)) tv += q;
  return tv / 2.0;
}

/// Runs that reproduce every observed pixel.
inline std::size_t observed_fidelity(const ModelTopology& topo, const Weights& w, const ObservationGrid& obs,
                                     std::size_t runs, std::uint64_t seed) {
  std::size_t ok = 0;
  Rng rng = make_rng(seed, Stream::Sample);
  for (std::size_t i = 0; i < runs; ++i) {
    const SampleGrid z = sample_conditional(w, topo, obs, rng);
    bool match = true;
    for (std::size_t t = 0; t < obs.size(); ++t) match = match && (!obs.observed(t) || z.states[0][t] == obs.states[t]);
    ok += match;
  }
  return ok;
}

/// Layers [3, 2, 1] with two states each and kernels (2, 1), (2, 1).
inline ModelTopology three_pixel_topology() {
  return build_topology({{{3}, 2}, {{2}, 2}, {{1}, 2}}, {{{2}, {1}}, {{2}, {1}}});
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::vector<Result> run_selftest(std::uint64_t seed = 7) {
  std::vector<Result> out;

  bool closed = true;
  for (std::size_t L = 1; L <= 6; ++L) {
    const auto topo = canonical_1d_topology(L);
    const auto cf = closed_form_counts(L);
    closed = closed && topo.total_positions() == cf.total_positions && topo.total_nodes() == cf.total_nodes;
    for (std::size_t l = 0; l < L; ++l) closed = closed && topo.positions(l) == cf.layer_positions[l];
  }
  out.push_back({"closed-form node counts (L = 1..6)", closed, ""});

  const auto ref = reference_topology();
  const bool ref_ok = ref.total_positions() == 979 && ref.total_nodes() == 10651 && count_parameters(ref) == 1691648;
  out.push_back({"reference topology counts", ref_ok,
                 "T=" + std::to_string(ref.total_positions()) + " D=" + ref.total_nodes().str() +
                     " params=" + std::to_string(count_parameters(ref))});

  const double agree = likelihood_agreement(50, seed);
  out.push_back({"unique messages = explicit tree = enumeration", agree <= 1e-12, "max gap " + fmt(agree)});

  const auto norm = normalization(20, seed);
  out.push_back({"likelihood normalization",
                 norm.max_pixel_sum_error <= 1e-10 && norm.max_leaf_sum_error <= 1e-10 && norm.max_all_missing <= 1e-12,
                 "image sum error " + fmt(norm.max_pixel_sum_error) + ", leaf sum error " + fmt(norm.max_leaf_sum_error) +
                     ", empty-evidence |log L| " + fmt(norm.max_all_missing)});

  const double grad = gradient_agreement(20, seed);
  out.push_back({"gradient vs central differences", grad <= 1e-4, "max relative error " + fmt(grad)});

  const auto tiny = three_pixel_topology();
  Rng rng = make_rng(seed, 104);
  const Weights w = weights_from_scores(Parameters::random(tiny, rng, 1.5), tiny);
  const double tv_prior = sampler_total_variation(tiny, w, ObservationGrid::all_missing({3}), 20000, seed);
  const double tv_cond = sampler_total_variation(tiny, w, ObservationGrid{{3}, {1, ObservationGrid::kMissing, 0}}, 20000, seed + 1);
  out.push_back({"sampler matches exact chain distribution", tv_prior <= 0.05 && tv_cond <= 0.05,
                 "TV prior " + fmt(tv_prior) + ", TV conditional " + fmt(tv_cond)});

  const auto fid = observed_fidelity(tiny, w, ObservationGrid{{3}, {1, ObservationGrid::kMissing, 0}}, 1000, seed);
  out.push_back({"observed pixels reproduced", fid == 1000, std::to_string(fid) + "/1000"});
  return out;
}

}  // namespace dlt::selftest
