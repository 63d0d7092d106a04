#pragma once

// Brute-force references for tiny instances.  None of these reuse the
// unique-message pass: the explicit tree materializes every duplicate node
// and runs linear-domain sum-product on it, enumeration sums the joint
// over all node states, and the sampling chain is evaluated with plain
// powers of linear probabilities.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dlt/error.hpp"
#include "dlt/inference.hpp"
#include "dlt/parameters.hpp"
#include "dlt/rng.hpp"
#include "dlt/topology.hpp"

namespace dlt::oracle {

inline constexpr std::size_t kMaxTreeNodes = 10'000;
inline constexpr double kMaxJointConfigurations = 1e7;
inline constexpr double kMaxSampleConfigurations = 1e6;

/// Every duplicate node materialized; node 0 is the root and parents
/// precede children.
struct ExplicitTree {
  struct Node {
    std::size_t layer;
    std::size_t position;
    std::int64_t parent;  // -1 for the root
    std::size_t offset;   // kernel offset within the parent
    std::vector<std::size_t> children;
  };
  std::vector<Node> nodes;
  // Observed state per node (kMissing for hidden and unobserved nodes).  As
  // built, every leaf duplicate of position t carries the pixel observation
  // of t; the normalization check overrides duplicates individually.
  std::vector<std::int32_t> leaf_state;
};

inline ExplicitTree build_explicit_tree(const ModelTopology& topo, const ObservationGrid& obs) {
  if (topo.total_nodes() > kMaxTreeNodes) {
    throw Error(ErrorCode::InstanceTooLarge, "explicit tree would have more than 10000 nodes");
  }
  if (obs.extent != topo.layer(0).extent) throw Error(ErrorCode::ExtentMismatch, "observation extent mismatch");
  ExplicitTree tree;
  tree.nodes.push_back({topo.root_layer(), 0, -1, 0, {}});
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const std::size_t l = tree.nodes[i].layer;
    tree.leaf_state.push_back(l == 0 ? obs.states[tree.nodes[i].position] : ObservationGrid::kMissing);
    if (l == 0) continue;
    const std::size_t p = tree.nodes[i].position;
    for (std::size_t k = 0; k < topo.kernel_volume(l - 1); ++k) {
      tree.nodes[i].children.push_back(tree.nodes.size());
      tree.nodes.push_back({l - 1, topo.child(l - 1, p, k), static_cast<std::int64_t>(i), k, {}});
    }
  }
  return tree;
}

/// Linear-domain messages m[node][state] for every node of the tree.
inline std::vector<std::vector<double>> explicit_tree_messages(const ExplicitTree& tree, const Weights& w,
                                                               const ModelTopology& topo) {
  std::vector<std::vector<double>> m(tree.nodes.size());
  for (std::size_t i = tree.nodes.size(); i-- > 0;) {
    const auto& node = tree.nodes[i];
    const std::size_t F = topo.states(node.layer);
    if (node.layer == 0) {
      const auto s = tree.leaf_state[i];
      m[i].assign(F, s == ObservationGrid::kMissing ? 1.0 : 0.0);
      if (s != ObservationGrid::kMissing) m[i][static_cast<std::size_t>(s)] = 1.0;
      continue;
    }
    const std::size_t fc = topo.states(node.layer - 1);
    m[i].assign(F, 1.0);
    for (std::size_t c : node.children) {
      const std::size_t k = tree.nodes[c].offset;
      for (std::size_t g = 0; g < F; ++g) {
        double s = 0.0;
        for (std::size_t f = 0; f < fc; ++f) s += w.kernel[node.layer - 1][table_index(k, f, g, fc, F)] * m[c][f];
        m[i][g] *= s;
      }
    }
  }
  return m;
}

inline double explicit_tree_bp(const ExplicitTree& tree, const Weights& w, const ModelTopology& topo) {
  const auto m = explicit_tree_messages(tree, w, topo);
  double like = 0.0;
  for (std::size_t f = 0; f < w.root.size(); ++f) like += w.root[f] * m[0][f];
  return std::log(like);
}

/// log of the sum over every joint state of all tree nodes (observed leaf
/// duplicates clamped) of the product of root prior and edge conditionals.
inline double enumerate_joint(const ModelTopology& topo, const Weights& w, const ObservationGrid& obs) {
  const ExplicitTree tree = build_explicit_tree(topo, obs);
  const std::size_t n = tree.nodes.size();
  std::vector<std::size_t> radix(n);
  double space = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = tree.nodes[i];
    const bool clamped = tree.leaf_state[i] != ObservationGrid::kMissing;
    radix[i] = clamped ? 1 : topo.states(node.layer);
    space *= static_cast<double>(radix[i]);
  }
  if (space > kMaxJointConfigurations) {
    throw Error(ErrorCode::InstanceTooLarge, "joint state space exceeds 1e7 configurations");
  }
  std::vector<std::size_t> digit(n, 0);
  auto state = [&](std::size_t i) {
    if (tree.leaf_state[i] != ObservationGrid::kMissing) return static_cast<std::size_t>(tree.leaf_state[i]);
    return digit[i];
  };
  double total = 0.0;
  while (true) {
    double p = w.root[state(0)];
    for (std::size_t i = 1; i < n && p != 0.0; ++i) {
      const auto& node = tree.nodes[i];
      const auto& parent = tree.nodes[static_cast<std::size_t>(node.parent)];
      p *= w.kernel[node.layer][table_index(node.offset, state(i), state(static_cast<std::size_t>(node.parent)),
                                            topo.states(node.layer), topo.states(parent.layer))];
    }
    total += p;
    std::size_t i = 0;
    while (i < n && ++digit[i] == radix[i]) digit[i++] = 0;
    if (i == n) break;
  }
  return std::log(total);
}

/// Sum of the likelihood over every complete assignment of the leaf nodes
/// of the explicit tree, each duplicate observed independently.  This is
/// the normalization of the model as a distribution over its nodes; sums
/// over pixel images only reach 1 when no leaf is duplicated.
inline double leaf_assignment_mass(const ModelTopology& topo, const Weights& w) {
  ExplicitTree tree = build_explicit_tree(topo, ObservationGrid::all_missing(topo.layer(0).extent));
  std::vector<std::size_t> leaves;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i)
    if (tree.nodes[i].layer == 0) leaves.push_back(i);
  const auto F = static_cast<std::int32_t>(topo.states(0));
  if (std::pow(double(F), double(leaves.size())) > kMaxJointConfigurations) {
    throw Error(ErrorCode::InstanceTooLarge, "leaf assignment space exceeds 1e7 configurations");
  }
  for (auto i : leaves) tree.leaf_state[i] = 0;
  double total = 0.0;
  while (true) {
    total += std::exp(explicit_tree_bp(tree, w, topo));
    std::size_t j = 0;
    while (j < leaves.size() && ++tree.leaf_state[leaves[j]] == F) tree.leaf_state[leaves[j++]] = 0;
    if (j == leaves.size()) break;
  }
  return total;
}

/// Exact probability of every full sample (layers concatenated, root
/// first) produced by the constrained top-down sampler.  Zero-probability
/// samples are omitted.
inline std::map<std::vector<std::int32_t>, double> sample_chain_distribution(const ModelTopology& topo, const Weights& w,
                                                                             const ObservationGrid& obs) {
  double space = 1.0;
  for (std::size_t l = 0; l < topo.num_layers(); ++l) space *= std::pow(double(topo.states(l)), double(topo.positions(l)));
  if (space > kMaxSampleConfigurations) {
    throw Error(ErrorCode::InstanceTooLarge, "sample space exceeds 1e6 configurations");
  }
  // Unique messages read off the first duplicate of each position.
  const ExplicitTree tree = build_explicit_tree(topo, obs);
  const auto m = explicit_tree_messages(tree, w, topo);
  std::vector<std::vector<std::vector<double>>> u(topo.num_layers());
  for (std::size_t l = 0; l < topo.num_layers(); ++l) u[l].resize(topo.positions(l));
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    auto& slot = u[tree.nodes[i].layer][tree.nodes[i].position];
    if (slot.empty()) slot = m[i];
  }

  // Positions in sampling order: root, then each lower layer row-major.
  struct Site {
    std::size_t layer, position;
  };
  std::vector<Site> sites;
  std::vector<std::vector<std::size_t>> site_index(topo.num_layers());
  for (std::size_t l = topo.num_layers(); l-- > 0;) {
    for (std::size_t t = 0; t < topo.positions(l); ++t) {
      site_index[l].push_back(sites.size());
      sites.push_back({l, t});
    }
  }

  std::map<std::vector<std::int32_t>, double> dist;
  std::vector<std::int32_t> z(sites.size(), 0);
  auto step_distribution = [&](const Site& s) {
    const std::size_t F = topo.states(s.layer);
    std::vector<double> pi(F);
    if (s.layer == topo.root_layer()) {
      for (std::size_t f = 0; f < F; ++f) pi[f] = w.root[f] * u[s.layer][0][f];
    } else {
      const double d = topo.duplicates(s.layer)[s.position].convert_to<double>();
      const std::size_t fp = topo.states(s.layer + 1);
      for (std::size_t f = 0; f < F; ++f) {
        pi[f] = std::pow(u[s.layer][s.position][f], d);
        for (const auto& link : topo.parents(s.layer, s.position)) {
          const auto g = static_cast<std::size_t>(z[site_index[s.layer + 1][link.parent]]);
          const double e = topo.duplicates(s.layer + 1)[link.parent].convert_to<double>();
          pi[f] *= std::pow(w.kernel[s.layer][table_index(link.offset, f, g, F, fp)], e);
        }
      }
    }
    double z_norm = 0.0;
    for (double x : pi) z_norm += x;
    for (double& x : pi) x = z_norm > 0.0 ? x / z_norm : 0.0;
    return pi;
  };
  while (true) {
    double p = 1.0;
    for (const auto& s : sites) {
      const auto pi = step_distribution(s);
      p *= pi[static_cast<std::size_t>(z[site_index[s.layer][s.position]])];
      if (p == 0.0) break;
    }
    if (p > 0.0) dist[z] = p;
    std::size_t i = z.size();
    while (i-- > 0) {
      if (static_cast<std::size_t>(++z[i]) < topo.states(sites[i].layer)) break;
      z[i] = 0;
    }
    if (i == static_cast<std::size_t>(-1)) break;
  }
  return dist;
}

/// Sample flattened in the order used by sample_chain_distribution.
inline std::vector<std::int32_t> flatten_sample(const std::vector<std::vector<std::int32_t>>& states) {
  std::vector<std::int32_t> out;
  for (std::size_t l = states.size(); l-- > 0;) out.insert(out.end(), states[l].begin(), states[l].end());
  return out;
}

/// Central differences of log L with respect to every score.
inline GradientBuffer finite_difference_grad(const Parameters& params, const ModelTopology& topo,
                                             const ObservationGrid& obs, double h = 1e-5) {
  GradientBuffer g = GradientBuffer::zeros(topo);
  Parameters p = params;
  auto probe = [&](double& s) {
    const double saved = s;
    s = saved + h;
    const double up = log_likelihood(p, topo, obs);
    s = saved - h;
    const double down = log_likelihood(p, topo, obs);
    s = saved;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t l = 0; l < p.kernel_scores.size(); ++l)
    for (std::size_t i = 0; i < p.kernel_scores[l].size(); ++i) g.kernel[l][i] = probe(p.kernel_scores[l][i]);
  for (std::size_t i = 0; i < p.root_scores.size(); ++i) g.root[i] = probe(p.root_scores[i]);
  return g;
}

/// A random small model: at most 3 layers, at most 5 input positions,
/// at most 3 states per layer, random scores and a random partial
/// observation.
struct TinyInstance {
  ModelTopology topo;
  Parameters params;
  ObservationGrid obs;
};

inline ModelTopology random_tiny_topology(Rng& rng, bool allow_overlap = true) {
  auto states = [&](bool input) { return static_cast<std::size_t>(input ? 2 + uniform_index(rng, 2) : 1 + uniform_index(rng, 3)); };
  auto chain = [&](std::size_t n, std::size_t k, std::size_t s) {
    const std::size_t m = (n - k) / s + 1;
    return build_topology({{{n}, states(true)}, {{m}, states(false)}, {{1}, states(false)}}, {{{k}, {s}}, {{m}, {1}}});
  };
  if (allow_overlap && uniform_index(rng, 4) != 0) {
    // Overlapping first kernel (stride < size), so some leaves are duplicated.
    while (true) {
      const std::size_t n = 3 + uniform_index(rng, 3);
      const std::size_t k = 2 + uniform_index(rng, n - 2);
      const std::size_t s = 1 + uniform_index(rng, k - 1);
      if ((n - k) % s == 0) return chain(n, k, s);
    }
  }
  switch (uniform_index(rng, 4)) {
    case 0:
      return build_topology({{{1}, 2 + uniform_index(rng, 2)}}, {});
    case 1:
      return build_topology({{{2, 2}, states(true)}, {{1, 2}, states(false)}, {{1, 1}, states(false)}},
                            {{{2, 1}, {1, 1}}, {{1, 2}, {1, 1}}});
    case 2: {
      const std::size_t n = 1 + uniform_index(rng, 5);
      return build_topology({{{n}, states(true)}, {{1}, states(false)}}, {{{n}, {n}}});
    }
    default:
      while (true) {
        const std::size_t n = 2 + uniform_index(rng, 4);
        const std::size_t k = 1 + uniform_index(rng, n - 1);
        if (n % k == 0) return chain(n, k, k);
      }
  }
}

inline ObservationGrid random_observation(const ModelTopology& topo, Rng& rng, double missing_rate = 0.3) {
  ObservationGrid obs = ObservationGrid::all_missing(topo.layer(0).extent);
  for (auto& s : obs.states) {
    if (uniform01(rng) >= missing_rate) s = static_cast<std::int32_t>(uniform_index(rng, topo.states(0)));
  }
  return obs;
}

inline TinyInstance random_tiny_instance(Rng& rng, double score_scale = 2.0, bool allow_overlap = true) {
  ModelTopology topo = random_tiny_topology(rng, allow_overlap);
  Parameters params = Parameters::random(topo, rng, score_scale);
  ObservationGrid obs = random_observation(topo, rng);
  return {std::move(topo), std::move(params), std::move(obs)};
}

/// Enumerates every complete observation of the input layer.
template <typename Fn>
void for_each_complete_observation(const ModelTopology& topo, Fn&& fn) {
  ObservationGrid obs = ObservationGrid::all_missing(topo.layer(0).extent);
  std::fill(obs.states.begin(), obs.states.end(), 0);
  const auto F = static_cast<std::int32_t>(topo.states(0));
  while (true) {
    fn(static_cast<const ObservationGrid&>(obs));
    std::size_t i = 0;
    while (i < obs.states.size() && ++obs.states[i] == F) obs.states[i++] = 0;
    if (i == obs.states.size()) break;
  }
}

}  // namespace dlt::oracle
