#pragma once

// Exact marginal likelihood by one bottom-up pass over unique messages.
// Every duplicate of a spatial position receives the same message, so the
// pass touches each position once: log u[l+1][p][g] is the sum over the
// kernel offsets k of log sum_f w[k][f][g] u[l][child(p,k)][f].

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dlt/error.hpp"
#include "dlt/logmath.hpp"
#include "dlt/parameters.hpp"
#include "dlt/topology.hpp"

namespace dlt {

/// Per-pixel categorical observation; kMissing marks an unobserved pixel.
struct ObservationGrid {
  static constexpr std::int32_t kMissing = -1;

  Extent extent;
  std::vector<std::int32_t> states;

  static ObservationGrid all_missing(const Extent& extent) {
    return {extent, std::vector<std::int32_t>(volume(extent), kMissing)};
  }

  std::size_t size() const { return states.size(); }
  bool observed(std::size_t t) const { return states[t] != kMissing; }
  std::size_t observed_count() const {
    std::size_t n = 0;
    for (auto s : states) n += s != kMissing;
    return n;
  }

  bool operator==(const ObservationGrid&) const = default;
};

/// Log-domain unique messages, one flat buffer of T^l * F^l values per layer.
struct MessageGrid {
  std::vector<std::vector<double>> log_u;

  std::span<const double> at(std::size_t l, std::size_t t, std::size_t states) const {
    return {log_u[l].data() + t * states, states};
  }
  std::span<double> at(std::size_t l, std::size_t t, std::size_t states) {
    return {log_u[l].data() + t * states, states};
  }
};

/// Intermediates of a forward pass kept for the reverse sweep: for kernel l,
/// the max-shift of each child message and the per-(parent, offset) factor
/// sum_f w[k][f][g] exp(log u[f] - shift).
struct ForwardCache {
  std::vector<std::vector<double>> shift;   // [p * K + k]
  std::vector<std::vector<double>> factor;  // [(p * K + k) * F_parent + g]
};

inline void init_leaf_messages(const ObservationGrid& obs, const ModelTopology& topo, MessageGrid& msgs) {
  if (obs.extent != topo.layer(0).extent || obs.states.size() != topo.positions(0)) {
    throw Error(ErrorCode::ExtentMismatch, "observation extent " + format_extent(obs.extent) +
                                               " does not match input layer " + format_extent(topo.layer(0).extent));
  }
  const std::size_t F = topo.states(0);
  msgs.log_u.resize(topo.num_layers());
  auto& leaves = msgs.log_u[0];
  leaves.resize(topo.positions(0) * F);
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const auto s = obs.states[t];
    if (s != ObservationGrid::kMissing && (s < 0 || static_cast<std::size_t>(s) >= F)) {
      throw Error(ErrorCode::ExtentMismatch, "observed state " + std::to_string(s) + " at position " +
                                                 std::to_string(t) + " exceeds " + std::to_string(F) + " states");
    }
    for (std::size_t f = 0; f < F; ++f) {
      leaves[t * F + f] = (s == ObservationGrid::kMissing || static_cast<std::size_t>(s) == f) ? 0.0 : kNegInf;
    }
  }
}

inline MessageGrid init_leaf_messages(const ObservationGrid& obs, const ModelTopology& topo) {
  MessageGrid msgs;
  init_leaf_messages(obs, topo, msgs);
  return msgs;
}

/// Fills layers 1..L-1 of `msgs` from its leaf layer.  Scratch buffers in
/// `msgs` and `cache` are reused across calls.
inline void forward_pass(const Weights& w, const ModelTopology& topo, MessageGrid& msgs, ForwardCache* cache = nullptr) {
  w.check(topo);
  if (msgs.log_u.size() != topo.num_layers() || msgs.log_u[0].size() != topo.positions(0) * topo.states(0)) {
    throw Error(ErrorCode::ShapeMismatch, "leaf messages do not match the topology");
  }
  if (cache) {
    cache->shift.resize(topo.num_layers() - 1);
    cache->factor.resize(topo.num_layers() - 1);
  }
  std::vector<double> scaled;
  std::vector<double> factor;
  for (std::size_t l = 0; l + 1 < topo.num_layers(); ++l) {
    const std::size_t fc = topo.states(l);
    const std::size_t fp = topo.states(l + 1);
    const std::size_t kv = topo.kernel_volume(l);
    const std::size_t np = topo.positions(l + 1);
    const auto& table = w.kernel[l];
    auto& out_layer = msgs.log_u[l + 1];
    out_layer.assign(np * fp, 0.0);
    scaled.resize(fc);
    if (cache) {
      cache->shift[l].resize(np * kv);
      cache->factor[l].resize(np * kv * fp);
    } else {
      factor.resize(fp);
    }
    for (std::size_t p = 0; p < np; ++p) {
      double* out = out_layer.data() + p * fp;
      for (std::size_t k = 0; k < kv; ++k) {
        const std::size_t t = topo.child(l, p, k);
        const double* in = msgs.log_u[l].data() + t * fc;
        double m = kNegInf;
        for (std::size_t f = 0; f < fc; ++f) m = std::max(m, in[f]);
        double* v = cache ? cache->factor[l].data() + (p * kv + k) * fp : factor.data();
        if (cache) cache->shift[l][p * kv + k] = m;
        std::fill(v, v + fp, 0.0);
        if (m == kNegInf) {
          for (std::size_t g = 0; g < fp; ++g) out[g] = kNegInf;
          continue;
        }
        for (std::size_t f = 0; f < fc; ++f) scaled[f] = in[f] == kNegInf ? 0.0 : std::exp(in[f] - m);
        for (std::size_t f = 0; f < fc; ++f) {
          const double a = scaled[f];
          if (a == 0.0) continue;
          const double* row = table.data() + table_index(k, f, 0, fc, fp);
          for (std::size_t g = 0; g < fp; ++g) v[g] += a * row[g];
        }
        for (std::size_t g = 0; g < fp; ++g) out[g] += safe_log(v[g]) + m;
      }
    }
  }
}

inline MessageGrid forward_pass(const Weights& w, const ModelTopology& topo, const MessageGrid& leaves) {
  MessageGrid msgs = leaves;
  msgs.log_u.resize(topo.num_layers());
  forward_pass(w, topo, msgs);
  return msgs;
}

/// log sum_f prior_f * u_f for a log-domain root message and a root prior
/// given as probabilities.
inline double log_likelihood(std::span<const double> root_message, std::span<const double> root_prior) {
  if (root_message.size() != root_prior.size()) {
    throw Error(ErrorCode::LengthMismatch, "root message has " + std::to_string(root_message.size()) +
                                               " states, prior has " + std::to_string(root_prior.size()));
  }
  std::vector<double> terms(root_message.size());
  for (std::size_t f = 0; f < terms.size(); ++f) terms[f] = safe_log(root_prior[f]) + root_message[f];
  return logsumexp(terms);
}

inline std::span<const double> root_message(const MessageGrid& msgs, const ModelTopology& topo) {
  return msgs.at(topo.root_layer(), 0, topo.states(topo.root_layer()));
}

inline double log_likelihood(const Weights& w, const ModelTopology& topo, const ObservationGrid& obs) {
  MessageGrid msgs = init_leaf_messages(obs, topo);
  forward_pass(w, topo, msgs);
  return log_likelihood(root_message(msgs, topo), w.root);
}

inline double log_likelihood(const Parameters& params, const ModelTopology& topo, const ObservationGrid& obs) {
  return log_likelihood(weights_from_scores(params, topo), topo, obs);
}

}  // namespace dlt
