#pragma once

// Graph skeleton of a dense latent tree: layer shapes, kernel geometry,
// per-position duplicate counts and child/parent adjacency.
//
// Layers are indexed from 0 (pixels) to num_layers()-1 (root).  Kernel l
// connects child layer l to parent layer l+1; a parent at multi-index p
// has the children stride*p + k for every kernel offset k.  Positions and
// kernel offsets are flattened row-major.

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "dlt/error.hpp"

namespace dlt {

using Extent = std::vector<std::size_t>;
using DuplicateCount = boost::multiprecision::cpp_int;

inline std::size_t volume(const Extent& e) {
  return std::accumulate(e.begin(), e.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string format_extent(const Extent& e) {
  std::string s;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(e[i]);
  }
  return s;
}

struct LayerShape {
  Extent extent;
  std::size_t states = 1;

  bool operator==(const LayerShape&) const = default;
};

struct KernelSpec {
  Extent size;
  Extent stride;

  bool operator==(const KernelSpec&) const = default;
};

struct ParentLink {
  std::uint32_t parent;  // flat position in the layer above
  std::uint32_t offset;  // flat kernel offset of this child within that parent
};

class ModelTopology {
 public:
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t root_layer() const { return layers_.size() - 1; }
  std::size_t dims() const { return layers_.front().extent.size(); }

  const std::vector<LayerShape>& layers() const { return layers_; }
  const std::vector<KernelSpec>& kernels() const { return kernels_; }
  const LayerShape& layer(std::size_t l) const { return layers_.at(l); }
  const KernelSpec& kernel(std::size_t l) const { return kernels_.at(l); }

  std::size_t positions(std::size_t l) const { return volume(layers_[l].extent); }
  std::size_t states(std::size_t l) const { return layers_[l].states; }
  std::size_t kernel_volume(std::size_t l) const { return volume(kernels_[l].size); }

  /// Flat child position in layer l for parent p (layer l+1) and offset k.
  std::size_t child(std::size_t l, std::size_t p, std::size_t k) const {
    return children_[l][p * kernel_volume(l) + k];
  }
  std::span<const std::uint32_t> children(std::size_t l, std::size_t p) const {
    const std::size_t kv = kernel_volume(l);
    return {children_[l].data() + p * kv, kv};
  }
  /// Parents of position t in layer l (empty for the root).
  std::span<const ParentLink> parents(std::size_t l, std::size_t t) const {
    if (l == root_layer()) return {};
    const auto& offs = parent_offsets_[l];
    return {parent_links_[l].data() + offs[t], offs[t + 1] - offs[t]};
  }

  const std::vector<DuplicateCount>& duplicates(std::size_t l) const { return duplicates_[l]; }
  /// Duplicate counts as doubles, used as exponents in log-domain sampling.
  std::span<const double> duplicate_weights(std::size_t l) const { return duplicate_weights_[l]; }

  std::size_t total_positions() const {
    std::size_t t = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) t += positions(l);
    return t;
  }
  DuplicateCount total_nodes() const {
    DuplicateCount d = 0;
    for (const auto& layer : duplicates_)
      for (const auto& c : layer) d += c;
    return d;
  }
  DuplicateCount layer_nodes(std::size_t l) const {
    DuplicateCount d = 0;
    for (const auto& c : duplicates_[l]) d += c;
    return d;
  }
  DuplicateCount max_duplicates() const {
    DuplicateCount m = 0;
    for (const auto& layer : duplicates_)
      for (const auto& c : layer) m = c > m ? c : m;
    return m;
  }

  bool operator==(const ModelTopology& o) const {
    return layers_ == o.layers_ && kernels_ == o.kernels_;
  }

 private:
  friend ModelTopology build_topology(std::vector<LayerShape>, std::vector<KernelSpec>);

  std::vector<LayerShape> layers_;
  std::vector<KernelSpec> kernels_;
  std::vector<std::vector<std::uint32_t>> children_;
  std::vector<std::vector<std::size_t>> parent_offsets_;
  std::vector<std::vector<ParentLink>> parent_links_;
  std::vector<std::vector<DuplicateCount>> duplicates_;
  std::vector<std::vector<double>> duplicate_weights_;
};

namespace detail {

inline Extent unflatten(std::size_t index, const Extent& extent) {
  Extent idx(extent.size());
  for (std::size_t d = extent.size(); d-- > 0;) {
    idx[d] = index % extent[d];
    index /= extent[d];
  }
  return idx;
}

inline std::size_t flatten(const Extent& idx, const Extent& extent) {
  std::size_t flat = 0;
  for (std::size_t d = 0; d < extent.size(); ++d) flat = flat * extent[d] + idx[d];
  return flat;
}

[[noreturn]] inline void geometry_error(std::size_t layer, const std::string& what) {
  throw Error(ErrorCode::GeometryMismatch, "layer " + std::to_string(layer + 1) + ": " + what);
}

}  // namespace detail

inline ModelTopology build_topology(std::vector<LayerShape> layers, std::vector<KernelSpec> kernels) {
  if (layers.empty()) detail::geometry_error(0, "no layers");
  if (layers.size() != kernels.size() + 1) {
    detail::geometry_error(0, "expected " + std::to_string(layers.size() - 1) + " kernels, got " +
                                  std::to_string(kernels.size()));
  }
  const std::size_t dims = layers.front().extent.size();
  if (dims == 0) detail::geometry_error(0, "extent has no dimensions");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& e = layers[l].extent;
    if (e.size() != dims) detail::geometry_error(l, "dimension count differs from layer 1");
    for (auto x : e)
      if (x == 0) detail::geometry_error(l, "zero extent");
    if (layers[l].states == 0) detail::geometry_error(l, "zero states");
  }
  for (auto x : layers.back().extent)
    if (x != 1) detail::geometry_error(layers.size() - 1, "top layer must have extent 1");

  for (std::size_t l = 0; l < kernels.size(); ++l) {
    const auto& k = kernels[l];
    if (k.size.size() != dims || k.stride.size() != dims) {
      detail::geometry_error(l, "kernel dimension count differs from layer extent");
    }
    for (std::size_t d = 0; d < dims; ++d) {
      const std::size_t child = layers[l].extent[d];
      const std::size_t parent = layers[l + 1].extent[d];
      if (k.size[d] == 0 || k.stride[d] == 0) detail::geometry_error(l, "zero kernel size or stride");
      if (k.size[d] > child || (child - k.size[d]) % k.stride[d] != 0 ||
          (child - k.size[d]) / k.stride[d] + 1 != parent) {
        detail::geometry_error(l, "kernel " + format_extent(k.size) + "/" + format_extent(k.stride) +
                                      " does not map " + format_extent(layers[l].extent) + " onto " +
                                      format_extent(layers[l + 1].extent));
      }
    }
  }

  ModelTopology topo;
  topo.layers_ = std::move(layers);
  topo.kernels_ = std::move(kernels);
  const std::size_t L = topo.layers_.size();
  topo.children_.resize(L - 1);
  topo.parent_offsets_.resize(L - 1);
  topo.parent_links_.resize(L - 1);

  for (std::size_t l = 0; l + 1 < L; ++l) {
    const auto& child_extent = topo.layers_[l].extent;
    const auto& parent_extent = topo.layers_[l + 1].extent;
    const auto& kernel = topo.kernels_[l];
    const std::size_t np = volume(parent_extent);
    const std::size_t kv = volume(kernel.size);
    const std::size_t nc = volume(child_extent);
    auto& children = topo.children_[l];
    children.resize(np * kv);
    std::vector<std::vector<ParentLink>> per_child(nc);
    for (std::size_t p = 0; p < np; ++p) {
      const Extent pi = detail::unflatten(p, parent_extent);
      for (std::size_t k = 0; k < kv; ++k) {
        const Extent ki = detail::unflatten(k, kernel.size);
        Extent ci(dims);
        for (std::size_t d = 0; d < dims; ++d) ci[d] = kernel.stride[d] * pi[d] + ki[d];
        const std::size_t c = detail::flatten(ci, child_extent);
        children[p * kv + k] = static_cast<std::uint32_t>(c);
        per_child[c].push_back({static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(k)});
      }
    }
    auto& offsets = topo.parent_offsets_[l];
    auto& links = topo.parent_links_[l];
    offsets.assign(1, 0);
    for (std::size_t c = 0; c < nc; ++c) {
      if (per_child[c].empty()) detail::geometry_error(l, "position without parent");
      links.insert(links.end(), per_child[c].begin(), per_child[c].end());
      offsets.push_back(links.size());
    }
  }

  topo.duplicates_.resize(L);
  topo.duplicates_[L - 1].assign(1, DuplicateCount(1));
  for (std::size_t l = L - 1; l-- > 0;) {
    auto& dup = topo.duplicates_[l];
    dup.assign(volume(topo.layers_[l].extent), DuplicateCount(0));
    for (std::size_t t = 0; t < dup.size(); ++t) {
      for (const auto& link : topo.parents(l, t)) dup[t] += topo.duplicates_[l + 1][link.parent];
    }
  }
  topo.duplicate_weights_.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    for (const auto& c : topo.duplicates_[l]) topo.duplicate_weights_[l].push_back(c.convert_to<double>());
  }
  return topo;
}

struct ClosedFormCounts {
  std::vector<std::uint64_t> layer_positions;  // T^l, bottom layer first
  std::uint64_t total_positions;               // T
  DuplicateCount total_nodes;                  // D
};

/// Closed forms for the 1-D family with kernel size 4 and stride 2:
/// T^l = 3*2^(L-l) - 2, T = 3*2^L - 2L - 3, D = (4^L - 1)/3.
inline ClosedFormCounts closed_form_counts(std::size_t num_layers) {
  const std::size_t L = num_layers;
  ClosedFormCounts c;
  for (std::size_t l = 1; l <= L; ++l) c.layer_positions.push_back(3 * (std::uint64_t{1} << (L - l)) - 2);
  c.total_positions = 3 * (std::uint64_t{1} << L) - 2 * L - 3;
  DuplicateCount four_l = 1;
  four_l <<= 2 * L;
  c.total_nodes = (four_l - 1) / 3;
  return c;
}

/// Layers [T^1, ..., 1] of the canonical 1-D family (kernel 4, stride 2).
inline ModelTopology canonical_1d_topology(std::size_t num_layers, std::size_t states = 2) {
  std::vector<LayerShape> layers;
  std::vector<KernelSpec> kernels;
  for (std::size_t l = 1; l <= num_layers; ++l) {
    layers.push_back({{3 * (std::size_t{1} << (num_layers - l)) - 2}, states});
    if (l < num_layers) kernels.push_back({{4}, {2}});
  }
  return build_topology(std::move(layers), std::move(kernels));
}

/// Number of kernel weights plus root prior entries.
inline std::uint64_t count_parameters(const ModelTopology& topo) {
  std::uint64_t n = topo.states(topo.root_layer());
  for (std::size_t l = 0; l + 1 < topo.num_layers(); ++l) {
    n += static_cast<std::uint64_t>(topo.kernel_volume(l)) * topo.states(l) * topo.states(l + 1);
  }
  return n;
}

/// Zero-overlap configuration: 2x2/stride-2 kernels up to the last layer,
/// whose single kernel spans the whole remaining extent.
inline ModelTopology quadtree_topology(const Extent& input_extent, const std::vector<std::size_t>& states) {
  if (states.size() < 2) detail::geometry_error(0, "quad-tree needs at least two layers");
  std::vector<LayerShape> layers;
  std::vector<KernelSpec> kernels;
  Extent e = input_extent;
  layers.push_back({e, states[0]});
  for (std::size_t l = 1; l < states.size(); ++l) {
    KernelSpec k;
    if (l + 1 < states.size()) {
      k.size.assign(e.size(), 2);
      k.stride.assign(e.size(), 2);
      for (std::size_t d = 0; d < e.size(); ++d) {
        if (e[d] % 2 != 0) detail::geometry_error(l - 1, "extent " + format_extent(e) + " not divisible by 2");
        e[d] /= 2;
      }
    } else {
      k.size = e;
      k.stride = e;
      e.assign(e.size(), 1);
    }
    kernels.push_back(std::move(k));
    layers.push_back({e, states[l]});
  }
  return build_topology(std::move(layers), std::move(kernels));
}

/// Four-layer 28x28 reference model: states 2/32/64/1024, kernels
/// 4x4/2, 5x5/2, 5x5/1.
inline ModelTopology reference_topology(std::size_t input_states = 2) {
  return build_topology({{{28, 28}, input_states}, {{13, 13}, 32}, {{5, 5}, 64}, {{1, 1}, 1024}},
                        {{{4, 4}, {2, 2}}, {{5, 5}, {2, 2}}, {{5, 5}, {1, 1}}});
}

/// Sub-tree under a single node of layer `top`: layers 0..top with the
/// receptive-field extents of that node and the same kernels.
inline ModelTopology receptive_field_topology(const ModelTopology& topo, std::size_t top) {
  if (top == 0 || top >= topo.num_layers()) {
    throw Error(ErrorCode::InvalidLayerOrState, "layer " + std::to_string(top + 1) + " out of range");
  }
  std::vector<LayerShape> layers(top + 1);
  std::vector<KernelSpec> kernels(topo.kernels().begin(), topo.kernels().begin() + top);
  Extent e(topo.dims(), 1);
  layers[top] = {e, topo.states(top)};
  for (std::size_t l = top; l-- > 0;) {
    for (std::size_t d = 0; d < e.size(); ++d) e[d] = (e[d] - 1) * kernels[l].stride[d] + kernels[l].size[d];
    layers[l] = {e, topo.states(l)};
  }
  return build_topology(std::move(layers), std::move(kernels));
}

}  // namespace dlt
