#pragma once

// Constrained top-down sampling.  All duplicates of a position share one
// state, so each position draws from the product of the posteriors of all
// its parent duplicates; a parent at p contributes its factor with
// exponent D[l+1][p] and the unique message u enters with exponent D[l][t].

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlt/error.hpp"
#include "dlt/inference.hpp"
#include "dlt/logmath.hpp"
#include "dlt/parameters.hpp"
#include "dlt/rng.hpp"
#include "dlt/topology.hpp"

namespace dlt {

/// One state per position per layer.
struct SampleGrid {
  std::vector<std::vector<std::int32_t>> states;

  bool operator==(const SampleGrid&) const = default;
};

/// Intensities in [0, 1], row-major; 1-D layers render as a single row.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  bool operator==(const Image&) const = default;
};

inline std::size_t sample_root(std::span<const double> log_u_root, std::span<const double> prior, Rng& rng) {
  if (log_u_root.size() != prior.size()) {
    throw Error(ErrorCode::LengthMismatch, "root message and prior differ in length");
  }
  std::vector<double> log_post(prior.size());
  for (std::size_t f = 0; f < prior.size(); ++f) log_post[f] = safe_log(prior[f]) + log_u_root[f];
  return sample_log_categorical(log_post, rng);
}

/// Samples every position of layer l given the states of layer l+1.
/// Positions are visited in row-major order.
inline void sample_layer(std::size_t l, std::span<const std::int32_t> above, const MessageGrid& msgs, const Weights& w,
                         const ModelTopology& topo, Rng& rng, std::vector<std::int32_t>& out) {
  if (l + 1 >= topo.num_layers()) {
    throw Error(ErrorCode::InvalidLayerOrState, "layer " + std::to_string(l + 1) + " has no parent layer");
  }
  if (above.size() != topo.positions(l + 1)) {
    throw Error(ErrorCode::ShapeMismatch, "parent-layer sample has the wrong number of positions");
  }
  const std::size_t fc = topo.states(l);
  const std::size_t fp = topo.states(l + 1);
  const auto dup = topo.duplicate_weights(l);
  const auto dup_above = topo.duplicate_weights(l + 1);
  const auto& log_table = w.log_kernel[l];
  std::vector<double> log_pi(fc);
  out.resize(topo.positions(l));
  for (std::size_t t = 0; t < out.size(); ++t) {
    const auto log_u = msgs.at(l, t, fc);
    for (std::size_t f = 0; f < fc; ++f) log_pi[f] = log_u[f] == kNegInf ? kNegInf : dup[t] * log_u[f];
    for (const auto& link : topo.parents(l, t)) {
      const auto g = static_cast<std::size_t>(above[link.parent]);
      const double e = dup_above[link.parent];
      for (std::size_t f = 0; f < fc; ++f) {
        const double lw = log_table[table_index(link.offset, f, g, fc, fp)];
        log_pi[f] += lw == kNegInf ? kNegInf : e * lw;
      }
    }
    try {
      out[t] = static_cast<std::int32_t>(sample_log_categorical(log_pi, rng));
    } catch (const Error&) {
      throw Error(ErrorCode::AllZeroPosterior,
                  "layer " + std::to_string(l + 1) + ", position " + std::to_string(t) + ": no state has mass");
    }
  }
}

/// Top-down pass over messages from a prior inference pass.  When
/// `root_state` is set the root is fixed instead of drawn.
inline SampleGrid sample_from_messages(const Weights& w, const ModelTopology& topo, const MessageGrid& msgs, Rng& rng,
                                       std::optional<std::size_t> root_state = std::nullopt) {
  const std::size_t top = topo.root_layer();
  SampleGrid z;
  z.states.resize(topo.num_layers());
  std::size_t root;
  if (root_state) {
    if (*root_state >= topo.states(top)) throw Error(ErrorCode::InvalidLayerOrState, "root state out of range");
    root = *root_state;
  } else {
    root = sample_root(root_message(msgs, topo), w.root, rng);
  }
  z.states[top] = {static_cast<std::int32_t>(root)};
  for (std::size_t l = top; l-- > 0;) sample_layer(l, z.states[l + 1], msgs, w, topo, rng, z.states[l]);
  return z;
}

inline SampleGrid sample_conditional(const Weights& w, const ModelTopology& topo, const ObservationGrid& obs, Rng& rng) {
  MessageGrid msgs = init_leaf_messages(obs, topo);
  forward_pass(w, topo, msgs);
  return sample_from_messages(w, topo, msgs, rng);
}

inline Image states_to_image(std::span<const std::int32_t> states, const Extent& extent, std::size_t levels) {
  Image img;
  img.height = extent.size() >= 2 ? extent[0] : 1;
  img.width = extent.size() >= 2 ? volume(extent) / extent[0] : extent[0];
  img.pixels.resize(states.size());
  const double scale = levels > 1 ? 1.0 / static_cast<double>(levels - 1) : 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) img.pixels[i] = states[i] * scale;
  return img;
}

/// Observed pixels are kept; missing pixels take a single conditional sample.
inline Image inpaint(const Weights& w, const ModelTopology& topo, const ObservationGrid& obs, Rng& rng,
                     std::vector<std::int32_t>* completed = nullptr) {
  SampleGrid z = sample_conditional(w, topo, obs, rng);
  std::vector<std::int32_t> states = z.states[0];
  for (std::size_t t = 0; t < states.size(); ++t)
    if (obs.observed(t)) states[t] = obs.states[t];
  if (completed) *completed = states;
  return states_to_image(states, topo.layer(0).extent, topo.states(0));
}

/// Renders what state f of a layer-`layer` node (0-based, >= 1) looks like:
/// the sub-tree under one such node with its root fixed to f, sampled
/// without evidence.
inline Image visualize_state(const Weights& w, const ModelTopology& topo, std::size_t layer, std::size_t state, Rng& rng) {
  if (layer == 0 || layer >= topo.num_layers() || state >= topo.states(layer)) {
    throw Error(ErrorCode::InvalidLayerOrState,
                "layer " + std::to_string(layer + 1) + " state " + std::to_string(state) + " is not valid");
  }
  const ModelTopology sub = receptive_field_topology(topo, layer);
  Weights sw;
  sw.kernel.assign(w.kernel.begin(), w.kernel.begin() + static_cast<std::ptrdiff_t>(layer));
  sw.root.assign(topo.states(layer), 0.0);
  sw.root[state] = 1.0;
  sw.refresh_logs();
  MessageGrid msgs = init_leaf_messages(ObservationGrid::all_missing(sub.layer(0).extent), sub);
  forward_pass(sw, sub, msgs);
  SampleGrid z = sample_from_messages(sw, sub, msgs, rng, state);
  return states_to_image(z.states[0], sub.layer(0).extent, sub.states(0));
}

}  // namespace dlt
