#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dlt/error.hpp"
#include "dlt/logmath.hpp"
#include "dlt/rng.hpp"
#include "dlt/topology.hpp"

namespace dlt {

/// Row-major index into a kernel table laid out as [offset k][child f][parent g].
inline std::size_t table_index(std::size_t k, std::size_t f, std::size_t g, std::size_t child_states,
                               std::size_t parent_states) {
  return (k * child_states + f) * parent_states + g;
}

namespace detail {

template <typename Tables>
void check_table_shapes(const Tables& kernel, const std::vector<double>& root, const ModelTopology& topo,
                        const char* what) {
  bool ok = kernel.size() + 1 == topo.num_layers() && root.size() == topo.states(topo.root_layer());
  for (std::size_t l = 0; ok && l < kernel.size(); ++l) {
    ok = kernel[l].size() == topo.kernel_volume(l) * topo.states(l) * topo.states(l + 1);
  }
  if (!ok) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " do not match the topology");
}

inline std::vector<std::vector<double>> zero_tables(const ModelTopology& topo) {
  std::vector<std::vector<double>> t(topo.num_layers() - 1);
  for (std::size_t l = 0; l < t.size(); ++l) {
    t[l].assign(topo.kernel_volume(l) * topo.states(l) * topo.states(l + 1), 0.0);
  }
  return t;
}

}  // namespace detail

/// Unconstrained scores.  Kernel l holds s[k][f][g] for child state f of
/// layer l given parent state g of layer l+1; the weights are the softmax
/// of s over f.
struct Parameters {
  std::vector<std::vector<double>> kernel_scores;
  std::vector<double> root_scores;

  static Parameters zeros(const ModelTopology& topo) {
    return {detail::zero_tables(topo), std::vector<double>(topo.states(topo.root_layer()), 0.0)};
  }

  /// Scores i.i.d. uniform on [-scale, scale], kernels in order then root.
  static Parameters random(const ModelTopology& topo, Rng& rng, double scale = 0.5) {
    Parameters p = zeros(topo);
    for (auto& table : p.kernel_scores)
      for (auto& s : table) s = uniform(rng, -scale, scale);
    for (auto& s : p.root_scores) s = uniform(rng, -scale, scale);
    return p;
  }

  void check(const ModelTopology& topo) const {
    detail::check_table_shapes(kernel_scores, root_scores, topo, "parameters");
  }

  std::size_t size() const {
    std::size_t n = root_scores.size();
    for (const auto& t : kernel_scores) n += t.size();
    return n;
  }

  bool operator==(const Parameters&) const = default;
};

/// Partials of log L with respect to the scores; same layout as Parameters.
struct GradientBuffer {
  std::vector<std::vector<double>> kernel;
  std::vector<double> root;

  static GradientBuffer zeros(const ModelTopology& topo) {
    return {detail::zero_tables(topo), std::vector<double>(topo.states(topo.root_layer()), 0.0)};
  }

  void set_zero() {
    for (auto& t : kernel) std::fill(t.begin(), t.end(), 0.0);
    std::fill(root.begin(), root.end(), 0.0);
  }

  GradientBuffer& operator+=(const GradientBuffer& o) {
    for (std::size_t l = 0; l < kernel.size(); ++l)
      for (std::size_t i = 0; i < kernel[l].size(); ++i) kernel[l][i] += o.kernel[l][i];
    for (std::size_t i = 0; i < root.size(); ++i) root[i] += o.root[i];
    return *this;
  }

  GradientBuffer& operator*=(double c) {
    for (auto& t : kernel)
      for (auto& x : t) x *= c;
    for (auto& x : root) x *= c;
    return *this;
  }
};

/// Conditional probability tables and root prior, with their logs.
struct Weights {
  std::vector<std::vector<double>> kernel;
  std::vector<std::vector<double>> log_kernel;
  std::vector<double> root;
  std::vector<double> log_root;

  void check(const ModelTopology& topo) const {
    detail::check_table_shapes(kernel, root, topo, "weights");
  }

  /// Fills the log tables from the probability tables.
  void refresh_logs() {
    log_kernel.resize(kernel.size());
    for (std::size_t l = 0; l < kernel.size(); ++l) {
      log_kernel[l].resize(kernel[l].size());
      for (std::size_t i = 0; i < kernel[l].size(); ++i) log_kernel[l][i] = safe_log(kernel[l][i]);
    }
    log_root.resize(root.size());
    for (std::size_t i = 0; i < root.size(); ++i) log_root[i] = safe_log(root[i]);
  }
};

namespace detail {

// Max-shifted softmax over the child-state axis of one [k][f][g] table.
inline void softmax_table(const std::vector<double>& scores, std::vector<double>& w, std::vector<double>& log_w,
                          std::size_t kv, std::size_t fc, std::size_t fp) {
  w.resize(scores.size());
  log_w.resize(scores.size());
  for (std::size_t k = 0; k < kv; ++k) {
    for (std::size_t g = 0; g < fp; ++g) {
      double m = kNegInf;
      for (std::size_t f = 0; f < fc; ++f) m = std::max(m, scores[table_index(k, f, g, fc, fp)]);
      double z = 0.0;
      for (std::size_t f = 0; f < fc; ++f) z += std::exp(scores[table_index(k, f, g, fc, fp)] - m);
      const double log_z = m + std::log(z);
      for (std::size_t f = 0; f < fc; ++f) {
        const std::size_t i = table_index(k, f, g, fc, fp);
        log_w[i] = scores[i] - log_z;
        w[i] = std::exp(log_w[i]);
      }
    }
  }
}

}  // namespace detail

inline Weights weights_from_scores(const Parameters& params, const ModelTopology& topo) {
  params.check(topo);
  auto finite = [](const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  for (const auto& t : params.kernel_scores)
    if (!finite(t)) throw Error(ErrorCode::NonFiniteScore, "kernel score is not finite");
  if (!finite(params.root_scores)) throw Error(ErrorCode::NonFiniteScore, "root score is not finite");

  Weights w;
  w.kernel.resize(params.kernel_scores.size());
  w.log_kernel.resize(params.kernel_scores.size());
  for (std::size_t l = 0; l < params.kernel_scores.size(); ++l) {
    detail::softmax_table(params.kernel_scores[l], w.kernel[l], w.log_kernel[l], topo.kernel_volume(l),
                          topo.states(l), topo.states(l + 1));
  }
  detail::softmax_table(params.root_scores, w.root, w.log_root, 1, params.root_scores.size(), 1);
  return w;
}

/// Maps a gradient with respect to the linear weights onto the scores:
/// ds[f] = w[f] * (dw[f] - sum_f' w[f'] dw[f']) per (k, g) slice.
inline void weight_grad_to_score_grad(const Weights& w, const ModelTopology& topo, GradientBuffer& grad) {
  auto apply = [](const std::vector<double>& wt, std::vector<double>& gt, std::size_t kv, std::size_t fc,
                  std::size_t fp) {
    for (std::size_t k = 0; k < kv; ++k) {
      for (std::size_t g = 0; g < fp; ++g) {
        double dot = 0.0;
        for (std::size_t f = 0; f < fc; ++f) {
          const std::size_t i = table_index(k, f, g, fc, fp);
          dot += wt[i] * gt[i];
        }
        for (std::size_t f = 0; f < fc; ++f) {
          const std::size_t i = table_index(k, f, g, fc, fp);
          gt[i] = wt[i] * (gt[i] - dot);
        }
      }
    }
  };
  for (std::size_t l = 0; l < grad.kernel.size(); ++l) {
    apply(w.kernel[l], grad.kernel[l], topo.kernel_volume(l), topo.states(l), topo.states(l + 1));
  }
  apply(w.root, grad.root, 1, w.root.size(), 1);
}

}  // namespace dlt
