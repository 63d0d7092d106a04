#pragma once

// Gradient of log L with respect to the scores by a reverse sweep over the
// forward computation, and minibatch stochastic gradient ascent.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dlt/error.hpp"
#include "dlt/inference.hpp"
#include "dlt/logmath.hpp"
#include "dlt/parameters.hpp"
#include "dlt/rng.hpp"
#include "dlt/topology.hpp"

namespace dlt {

/// Per-worker scratch for gradient evaluation.
struct Workspace {
  MessageGrid msgs;
  ForwardCache cache;
  std::vector<std::vector<double>> adjoint;
  std::vector<double> scaled;
  std::vector<double> ratio;
};

/// Runs the forward pass for `obs` and adds d log L / d w (with respect to
/// the linear weights, not the scores) into `weight_grad`.  Returns log L.
inline double accumulate_weight_gradient(const Weights& w, const ModelTopology& topo, const ObservationGrid& obs,
                                         GradientBuffer& weight_grad, Workspace& ws) {
  init_leaf_messages(obs, topo, ws.msgs);
  forward_pass(w, topo, ws.msgs, &ws.cache);
  const std::size_t top = topo.root_layer();
  const std::size_t fr = topo.states(top);
  const auto root = ws.msgs.at(top, 0, fr);
  const double log_l = log_likelihood(root, w.root);
  if (!std::isfinite(log_l)) {
    throw Error(ErrorCode::DivergedToNonFinite, "observation has zero likelihood under the model");
  }

  ws.adjoint.resize(topo.num_layers());
  ws.adjoint[top].assign(fr, 0.0);
  for (std::size_t g = 0; g < fr; ++g) {
    const double post_over_prior = root[g] == kNegInf ? 0.0 : std::exp(root[g] - log_l);
    weight_grad.root[g] += post_over_prior;
    ws.adjoint[top][g] = w.root[g] * post_over_prior;
  }

  for (std::size_t l = top; l-- > 0;) {
    const std::size_t fc = topo.states(l);
    const std::size_t fp = topo.states(l + 1);
    const std::size_t kv = topo.kernel_volume(l);
    const std::size_t np = topo.positions(l + 1);
    const bool need_child_adjoint = l > 0;
    if (need_child_adjoint) ws.adjoint[l].assign(topo.positions(l) * fc, 0.0);
    const auto& table = w.kernel[l];
    auto& grad = weight_grad.kernel[l];
    ws.scaled.resize(fc);
    ws.ratio.resize(fp);
    for (std::size_t p = 0; p < np; ++p) {
      const double* a_parent = ws.adjoint[l + 1].data() + p * fp;
      for (std::size_t k = 0; k < kv; ++k) {
        const double m = ws.cache.shift[l][p * kv + k];
        if (m == kNegInf) continue;
        const double* v = ws.cache.factor[l].data() + (p * kv + k) * fp;
        bool any = false;
        for (std::size_t g = 0; g < fp; ++g) {
          ws.ratio[g] = a_parent[g] == 0.0 ? 0.0 : a_parent[g] / v[g];
          any = any || ws.ratio[g] != 0.0;
        }
        if (!any) continue;
        const std::size_t t = topo.child(l, p, k);
        const double* in = ws.msgs.log_u[l].data() + t * fc;
        double* a_child = need_child_adjoint ? ws.adjoint[l].data() + t * fc : nullptr;
        for (std::size_t f = 0; f < fc; ++f) {
          const double u = in[f] == kNegInf ? 0.0 : std::exp(in[f] - m);
          if (u == 0.0) continue;
          const std::size_t row = table_index(k, f, 0, fc, fp);
          const double* wrow = table.data() + row;
          double* grow = grad.data() + row;
          double dot = 0.0;
          for (std::size_t g = 0; g < fp; ++g) {
            grow[g] += u * ws.ratio[g];
            dot += wrow[g] * ws.ratio[g];
          }
          if (a_child) a_child[f] += u * dot;
        }
      }
    }
  }
  return log_l;
}

/// log L and its gradient with respect to the scores.
inline std::pair<double, GradientBuffer> grad_log_likelihood(const Parameters& params, const ModelTopology& topo,
                                                             const ObservationGrid& obs) {
  const Weights w = weights_from_scores(params, topo);
  GradientBuffer grad = GradientBuffer::zeros(topo);
  Workspace ws;
  const double log_l = accumulate_weight_gradient(w, topo, obs, grad, ws);
  weight_grad_to_score_grad(w, topo, grad);
  return {log_l, std::move(grad)};
}

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

struct EpochStats {
  std::size_t epoch;  // 1-based
  double mean_nll;    // nats per image, measured during the epoch's updates
  double wall_seconds;
};

/// Images per gradient partial sum.  Partial sums are reduced in a fixed
/// order, so results do not depend on the thread count.
inline constexpr std::size_t kReductionChunk = 16;

/// Mean per-image gradient (score space) and summed log L over `batch`.
class BatchGradient {
 public:
  BatchGradient(const ModelTopology& topo, std::size_t max_batch, std::size_t threads)
      : topo_(topo), threads_(std::max<std::size_t>(1, threads)) {
    const std::size_t chunks = (max_batch + kReductionChunk - 1) / kReductionChunk;
    partial_.assign(chunks, GradientBuffer::zeros(topo));
    partial_log_l_.assign(chunks, 0.0);
    workspaces_.resize(threads_);
  }

  /// Returns the summed log-likelihood; `out` receives the mean score gradient.
  double compute(const Weights& w, std::span<const ObservationGrid* const> batch, GradientBuffer& out) {
    const std::size_t chunks = (batch.size() + kReductionChunk - 1) / kReductionChunk;
    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(threads_);
    auto worker = [&](std::size_t id) {
      try {
        for (std::size_t c = next++; c < chunks; c = next++) {
          partial_[c].set_zero();
          partial_log_l_[c] = 0.0;
          const std::size_t end = std::min(batch.size(), (c + 1) * kReductionChunk);
          for (std::size_t i = c * kReductionChunk; i < end; ++i) {
            partial_log_l_[c] += accumulate_weight_gradient(w, topo_, *batch[i], partial_[c], workspaces_[id]);
          }
        }
      } catch (const std::exception& e) {
        errors[id] = e.what();
        next = chunks;
      }
    };
    const std::size_t n = std::min(threads_, chunks);
    if (n <= 1) {
      worker(0);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t id = 0; id < n; ++id) pool.emplace_back(worker, id);
    }
    for (const auto& e : errors)
      if (!e.empty()) throw Error(ErrorCode::DivergedToNonFinite, e);

    out.set_zero();
    double log_l = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
      out += partial_[c];
      log_l += partial_log_l_[c];
    }
    out *= 1.0 / static_cast<double>(batch.size());
    weight_grad_to_score_grad(w, topo_, out);
    return log_l;
  }

 private:
  const ModelTopology& topo_;
  std::size_t threads_;
  std::vector<GradientBuffer> partial_;
  std::vector<double> partial_log_l_;
  std::vector<Workspace> workspaces_;
};

struct TrainResult {
  Parameters params;
  std::vector<EpochStats> trace;
};

/// Called after every epoch with the current parameters.
using EpochCallback = std::function<void(const EpochStats&, const Parameters&)>;

inline TrainResult sga_fit(Parameters params, const ModelTopology& topo, const std::vector<ObservationGrid>& dataset,
                           const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  if (!(config.learning_rate >= 0.0) || config.batch_size == 0) {
    throw Error(ErrorCode::BadConfig, "learning rate must be >= 0 and batch size > 0");
  }
  params.check(topo);
  Weights w = weights_from_scores(params, topo);
  const std::size_t batch = std::min(config.batch_size, dataset.size());
  BatchGradient batch_grad(topo, batch, config.threads);
  GradientBuffer grad = GradientBuffer::zeros(topo);
  GradientBuffer velocity = GradientBuffer::zeros(topo);
  Rng shuffle_rng = make_rng(config.seed, Stream::Shuffle);
  std::vector<std::size_t> order(dataset.size());
  std::vector<const ObservationGrid*> members;

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, shuffle_rng);
    double log_l_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + batch);
      members.clear();
      for (std::size_t i = begin; i < end; ++i) members.push_back(&dataset[order[i]]);
      log_l_sum += batch_grad.compute(w, members, grad);
      if (config.learning_rate == 0.0) continue;

      auto step = [&](std::vector<double>& s, std::vector<double>& vel, const std::vector<double>& g) {
        for (std::size_t i = 0; i < s.size(); ++i) {
          vel[i] = config.momentum * vel[i] + g[i];
          s[i] += config.learning_rate * vel[i];
        }
      };
      for (std::size_t l = 0; l < params.kernel_scores.size(); ++l) {
        step(params.kernel_scores[l], velocity.kernel[l], grad.kernel[l]);
      }
      step(params.root_scores, velocity.root, grad.root);
      try {
        w = weights_from_scores(params, topo);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteScore) throw;
        throw Error(ErrorCode::DivergedToNonFinite,
                    "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EpochStats stats{epoch, -log_l_sum / static_cast<double>(dataset.size()), elapsed};
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats, params);
  }
  result.params = std::move(params);
  return result;
}

/// Mean negative log-likelihood (nats per image) of `dataset`.
inline double mean_nll(const Weights& w, const ModelTopology& topo, const std::vector<ObservationGrid>& dataset,
                       std::vector<double>* per_image = nullptr) {
  MessageGrid msgs;
  double total = 0.0;
  if (per_image) per_image->clear();
  for (const auto& obs : dataset) {
    init_leaf_messages(obs, topo, msgs);
    forward_pass(w, topo, msgs);
    const double nll = -log_likelihood(root_message(msgs, topo), w.root);
    if (per_image) per_image->push_back(nll);
    total += nll;
  }
  return dataset.empty() ? 0.0 : total / static_cast<double>(dataset.size());
}

}  // namespace dlt
