/*
 * Copyright 2026 The saekit authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "saekit/data.hpp"
#include "saekit/models.hpp"

namespace saekit {

enum class Optimizer { sgd_momentum, adam };

inline Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd_momentum" || s == "sgd") return Optimizer::sgd_momentum;
  if (s == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + s + "'; valid: sgd_momentum, adam");
}

inline std::string to_string(Optimizer o) {
  return o == Optimizer::sgd_momentum ? "sgd_momentum" : "adam";
}

/// Training protocol: SGD defaults carry momentum 0.9 and weight decay 1e-4
/// with base LR 0.01 stepped by 0.1 every 15 epochs; Adam runs default to
/// LR 1e-3 with betas (0.9, 0.999).
struct TrainConfig {
  Optimizer optimizer = Optimizer::sgd_momentum;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t batch_size = 16;
  int64_t epochs = 30;
  int64_t lr_step = 15;
  double lr_decay = 0.1;
  uint64_t seed = 1;

  static double default_lr(Optimizer o) {
    return o == Optimizer::sgd_momentum ? 0.01 : 0.001;
  }
};

/// base_lr * lr_decay^floor(epoch / lr_step).
inline double step_lr(int64_t epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ContractError("step_lr: epoch must be >= 0");
  double lr = cfg.base_lr;
  for (int64_t i = 0; i < epoch / cfg.lr_step; ++i) lr *= cfg.lr_decay;
  return lr;
}

struct MetricsRecord {
  int64_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double top1 = 0;  // percent
  double top5 = 0;  // percent
};

/// A view of one updatable tensor; decay is off for biases and batch-norm
/// parameters.
template <typename S>
struct ParamRef {
  std::string name;
  Tensor<S>* value = nullptr;
  bool decay = true;
};

template <typename S>
std::vector<ParamRef<S>> trainable_params(ModelInstance<S>& m) {
  std::vector<ParamRef<S>> out;
  for (const auto& name : m.names()) {
    auto& e = m.entry(name);
    if (e.trainable) out.push_back({name, &e.value, e.decay});
  }
  return out;
}

template <typename S>
using GradMap = std::map<std::string, Tensor<S>>;

template <typename S>
struct SgdState {
  std::map<std::string, Tensor<S>> velocity;
};

/// g' = g + wd*w (decay-eligible tensors only); v = momentum*v + g';
/// w -= lr*v.
template <typename S>
void sgd_step(const std::vector<ParamRef<S>>& params, const GradMap<S>& grads,
              double lr, double momentum, double weight_decay, SgdState<S>& state) {
  for (const auto& p : params) {
    auto git = grads.find(p.name);
    if (git == grads.end()) continue;
    const Tensor<S>& g = git->second;
    if (!g.same_shape(*p.value))
      throw ShapeError("sgd_step: gradient shape " + shape_str(g.shape()) +
                       " != parameter shape " + shape_str(p.value->shape()) +
                       " for '" + p.name + "'");
    auto vit = state.velocity.find(p.name);
    if (vit == state.velocity.end())
      vit = state.velocity.emplace(p.name, Tensor<S>::zeros(g.shape())).first;
    Tensor<S>& v = vit->second;
    Tensor<S>& w = *p.value;
    const S wd = p.decay ? static_cast<S>(weight_decay) : S(0);
    const S mom = static_cast<S>(momentum);
    const S step = static_cast<S>(lr);
    for (int64_t i = 0; i < w.size(); ++i) {
      const S gi = g[i] + wd * w[i];
      v[i] = mom * v[i] + gi;
      w[i] -= step * v[i];
    }
  }
}

template <typename S>
struct AdamState {
  std::map<std::string, Tensor<S>> m1, m2;
  int64_t t = 0;
};

/// Bias-corrected Adam; weight decay is L2 coupled into the gradient, same
/// as the SGD path.
template <typename S>
void adam_step(const std::vector<ParamRef<S>>& params, const GradMap<S>& grads,
               double lr, double beta1, double beta2, double eps,
               double weight_decay, AdamState<S>& state) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (const auto& p : params) {
    auto git = grads.find(p.name);
    if (git == grads.end()) continue;
    const Tensor<S>& g = git->second;
    if (!g.same_shape(*p.value))
      throw ShapeError("adam_step: gradient shape " + shape_str(g.shape()) +
                       " != parameter shape " + shape_str(p.value->shape()) +
                       " for '" + p.name + "'");
    auto& m1 = state.m1.try_emplace(p.name, Tensor<S>::zeros(g.shape())).first->second;
    auto& m2 = state.m2.try_emplace(p.name, Tensor<S>::zeros(g.shape())).first->second;
    Tensor<S>& w = *p.value;
    const S wd = p.decay ? static_cast<S>(weight_decay) : S(0);
    for (int64_t i = 0; i < w.size(); ++i) {
      const S gi = g[i] + wd * w[i];
      m1[i] = static_cast<S>(beta1) * m1[i] + static_cast<S>(1.0 - beta1) * gi;
      m2[i] = static_cast<S>(beta2) * m2[i] + static_cast<S>(1.0 - beta2) * gi * gi;
      const double mhat = static_cast<double>(m1[i]) / bc1;
      const double vhat = static_cast<double>(m2[i]) / bc2;
      w[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

/// Rank of the true label among the logits; ties rank the lower class index
/// first. Correct at k iff rank < k.
inline int64_t label_rank(const float* logits, int64_t k, int32_t label) {
  int64_t rank = 0;
  const float ref = logits[label];
  for (int64_t j = 0; j < k; ++j) {
    if (logits[j] > ref || (logits[j] == ref && j < label)) ++rank;
  }
  return rank;
}

/// Top-1/top-5 accuracy in percent, eval mode, batched; logits are a pure
/// function of the frozen weights so the batch split does not matter.
template <typename S>
std::pair<double, double> evaluate(ModelInstance<S>& m, const Dataset& data,
                                   int64_t batch_size = 64) {
  const Mode saved = m.mode();
  m.set_mode(Mode::eval);
  const int64_t n = data.size();
  const int64_t k = m.spec().num_classes;
  int64_t hit1 = 0, hit5 = 0;
  const int64_t chw = data.images.size() / n;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t b = std::min(batch_size, n - start);
    Tensor<S> batch({b, data.images.extent(1), data.images.extent(2),
                     data.images.extent(3)});
    for (int64_t i = 0; i < b * chw; ++i)
      batch[i] = static_cast<S>(data.images[start * chw + i]);
    Tensor<S> logits = forward(m, batch);
    TensorF logits_f = logits.template cast<float>();
    for (int64_t i = 0; i < b; ++i) {
      const int64_t rank =
          label_rank(logits_f.data() + i * k, k,
                     data.labels[static_cast<size_t>(start + i)]);
      if (rank < 1) ++hit1;
      if (rank < 5) ++hit5;
    }
  }
  m.set_mode(saved);
  const double denom = static_cast<double>(n);
  return {100.0 * hit1 / denom, 100.0 * hit5 / denom};
}

/// Batch boundaries for one epoch; the last partial batch is kept.
inline std::vector<int64_t> batch_starts(int64_t n, int64_t batch_size) {
  std::vector<int64_t> starts;
  for (int64_t s = 0; s < n; s += batch_size) starts.push_back(s);
  return starts;
}

namespace detail {

inline std::vector<int64_t> shuffled_indices(int64_t n, uint64_t seed) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(i + 1));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

}  // namespace detail

/// Epoch loop per the training protocol: seeded shuffle (seed + epoch),
/// forward/loss/backward/step per batch (last partial batch kept), LR from
/// step_lr. train_loss is the sample-weighted mean batch loss; top-1/top-5
/// are measured on the training set in eval mode at each epoch end, so a
/// saved checkpoint reproduces the final row exactly.
template <typename S>
std::vector<MetricsRecord> train(ModelInstance<S>& m, const Dataset& data,
                                 const TrainConfig& cfg) {
  const int64_t n = data.size();
  if (n == 0) throw ContractError("train: dataset is empty");
  const int64_t classes = m.spec().num_classes;
  for (size_t i = 0; i < data.labels.size(); ++i)
    if (data.labels[i] < 0 || data.labels[i] >= classes)
      throw ContractError("train: label " + std::to_string(data.labels[i]) +
                          " out of range [0," + std::to_string(classes) +
                          ") at sample " + std::to_string(i));

  auto params = trainable_params(m);
  SgdState<S> sgd;
  AdamState<S> adam;
  const int64_t chw = data.images.size() / n;
  std::vector<MetricsRecord> records;
  records.reserve(static_cast<size_t>(cfg.epochs));

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_lr(epoch, cfg);
    const auto order = detail::shuffled_indices(n, cfg.seed + static_cast<uint64_t>(epoch));
    m.set_mode(Mode::train);
    double loss_sum = 0;
    for (int64_t start : batch_starts(n, cfg.batch_size)) {
      const int64_t b = std::min(cfg.batch_size, n - start);
      Tensor<S> batch({b, data.images.extent(1), data.images.extent(2),
                       data.images.extent(3)});
      std::vector<int32_t> labels(static_cast<size_t>(b));
      for (int64_t i = 0; i < b; ++i) {
        const int64_t src = order[static_cast<size_t>(start + i)];
        labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(src)];
        const float* sp = data.images.data() + src * chw;
        S* dp = batch.data() + i * chw;
        for (int64_t j = 0; j < chw; ++j) dp[j] = static_cast<S>(sp[j]);
      }
      ForwardGraph<S> fg = forward_graph(m, batch);
      Var<S> loss = softmax_cross_entropy(fg.logits, labels);
      fg.tape->backward(loss);
      GradMap<S> grads;
      for (const auto& [name, var] : fg.params)
        if (fg.tape->has_grad(var)) grads.emplace(name, fg.tape->grad(var));
      if (cfg.optimizer == Optimizer::sgd_momentum)
        sgd_step(params, grads, lr, cfg.momentum, cfg.weight_decay, sgd);
      else
        adam_step(params, grads, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                  cfg.weight_decay, adam);
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(b);
    }
    auto [top1, top5] = evaluate(m, data);
    records.push_back({epoch, lr, loss_sum / static_cast<double>(n), top1, top5});
    m.set_mode(Mode::train);
  }
  m.set_mode(Mode::eval);
  return records;
}

/// Metrics CSV: optional '#' comment lines, then the fixed header and one
/// row per epoch with reals at 6 decimal places.
inline void write_metrics_csv(std::ostream& os,
                              const std::vector<MetricsRecord>& records,
                              const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << "\n";
  os << "epoch,lr,train_loss,top1,top5\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(r.epoch), r.lr, r.train_loss, r.top1,
                  r.top5);
    os << buf;
  }
}

}  // namespace saekit
