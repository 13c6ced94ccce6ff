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

#include <span>
#include <vector>

#include "saekit/layers.hpp"

namespace saekit {

/// Squeeze-aggregated-excitation configuration. The reduction ratio r
/// shrinks the squeeze width to C/r; cardinality k is the number of parallel
/// squeeze branches. k = 1 is a plain squeeze-and-excitation gate.
struct SaEConfig {
  int64_t channels = 0;
  int64_t reduction = 32;
  int64_t cardinality = 4;

  int64_t reduced() const { return channels / reduction; }

  void validate() const {
    if (channels < 1 || reduction < 1 || cardinality < 1)
      throw ConfigError("SaEConfig: channels, reduction and cardinality must be >= 1");
    if (channels % reduction != 0)
      throw ConfigError("SaEConfig: channels " + std::to_string(channels) +
                        " not divisible by reduction " + std::to_string(reduction));
  }
};

/// Closed-form gate parameter count: 2kC^2/r + kC/r + C.
inline int64_t sae_param_count(const SaEConfig& cfg) {
  cfg.validate();
  const int64_t c = cfg.channels, k = cfg.cardinality, cr = cfg.reduced();
  return 2 * k * c * cr + k * cr + c;
}

/// Gate parameters: k squeeze branches [C/r, C] with biases [C/r], and one
/// excitation layer [C, k*C/r] with bias [C].
template <typename S>
struct SaEParams {
  std::vector<Tensor<S>> branch_weight;
  std::vector<Tensor<S>> branch_bias;
  Tensor<S> excite_weight;
  Tensor<S> excite_bias;

  int64_t param_count() const {
    int64_t total = excite_weight.size() + excite_bias.size();
    for (const auto& t : branch_weight) total += t.size();
    for (const auto& t : branch_bias) total += t.size();
    return total;
  }

  void check(const SaEConfig& cfg) const {
    cfg.validate();
    const int64_t c = cfg.channels, cr = cfg.reduced(), k = cfg.cardinality;
    if (static_cast<int64_t>(branch_weight.size()) != k ||
        static_cast<int64_t>(branch_bias.size()) != k)
      throw ShapeError("SaEParams: expected " + std::to_string(k) + " branches, got " +
                       std::to_string(branch_weight.size()));
    for (int64_t i = 0; i < k; ++i) {
      if (branch_weight[static_cast<size_t>(i)].shape() != Shape{cr, c})
        throw ShapeError("SaEParams: branch weight " + std::to_string(i) + " is " +
                         shape_str(branch_weight[static_cast<size_t>(i)].shape()) +
                         ", expected " + shape_str({cr, c}));
      if (branch_bias[static_cast<size_t>(i)].shape() != Shape{cr})
        throw ShapeError("SaEParams: branch bias " + std::to_string(i) + " is " +
                         shape_str(branch_bias[static_cast<size_t>(i)].shape()) +
                         ", expected " + shape_str({cr}));
    }
    if (excite_weight.shape() != Shape{c, k * cr})
      throw ShapeError("SaEParams: excite weight is " + shape_str(excite_weight.shape()) +
                       ", expected " + shape_str({c, k * cr}));
    if (excite_bias.shape() != Shape{c})
      throw ShapeError("SaEParams: excite bias is " + shape_str(excite_bias.shape()) +
                       ", expected " + shape_str({c}));
  }

  static SaEParams init(const SaEConfig& cfg, Rng& rng) {
    cfg.validate();
    const int64_t c = cfg.channels, cr = cfg.reduced(), k = cfg.cardinality;
    SaEParams p;
    auto uniform_fanin = [&rng](Shape shape, int64_t fan_in) {
      Tensor<S> t(std::move(shape));
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (int64_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<S>(rng.uniform(-bound, bound));
      return t;
    };
    for (int64_t i = 0; i < k; ++i) {
      p.branch_weight.push_back(uniform_fanin({cr, c}, c));
      p.branch_bias.push_back(Tensor<S>::zeros({cr}));
    }
    p.excite_weight = uniform_fanin({c, k * cr}, k * cr);
    p.excite_bias = Tensor<S>::zeros({c});
    return p;
  }
};

/// Plain SE gate parameters: squeeze [C/r, C] + bias, excite [C, C/r] + bias.
template <typename S>
struct SeParams {
  Tensor<S> squeeze_weight, squeeze_bias;
  Tensor<S> excite_weight, excite_bias;
};

/// Relabels SE parameters as the k = 1 aggregated layout (bijective).
template <typename S>
SaEParams<S> se_to_sae_map(const SeParams<S>& se) {
  SaEParams<S> p;
  p.branch_weight = {se.squeeze_weight};
  p.branch_bias = {se.squeeze_bias};
  p.excite_weight = se.excite_weight;
  p.excite_bias = se.excite_bias;
  return p;
}

template <typename S>
SeParams<S> sae_to_se_map(const SaEParams<S>& p) {
  if (p.branch_weight.size() != 1)
    throw ShapeError("sae_to_se_map: cardinality must be 1");
  return SeParams<S>{p.branch_weight[0], p.branch_bias[0], p.excite_weight,
                     p.excite_bias};
}

/// Tape-level gate: z = GAP(u); per branch a_i = relu(z W_i^T + b_i); the
/// branch outputs are concatenated and excited once, s = sigmoid(a W_e^T +
/// b_e); the result is u rescaled channel-wise by s.
template <typename S>
Var<S> sae_gate(Var<S> u, std::span<const Var<S>> branch_w,
                std::span<const Var<S>> branch_b, Var<S> excite_w, Var<S> excite_b) {
  Var<S> z = global_avg_pool(u);
  std::vector<Var<S>> branches;
  branches.reserve(branch_w.size());
  for (size_t i = 0; i < branch_w.size(); ++i)
    branches.push_back(
        relu(dense_t(z, branch_w[i], std::optional<Var<S>>(branch_b[i]))));
  Var<S> agg = concat_cols(branches);
  Var<S> s = sigmoid(dense_t(agg, excite_w, std::optional<Var<S>>(excite_b)));
  return mul(u, s);
}

namespace detail {

template <typename S>
Tensor<S> run_gate(const Tensor<S>& u, const SaEParams<S>& p) {
  Tape<S> tape;
  Var<S> uv = tape.leaf(u, /*requires_grad=*/false);
  std::vector<Var<S>> bw, bb;
  for (size_t i = 0; i < p.branch_weight.size(); ++i) {
    bw.push_back(tape.leaf(p.branch_weight[i], false));
    bb.push_back(tape.leaf(p.branch_bias[i], false));
  }
  Var<S> ew = tape.leaf(p.excite_weight, false);
  Var<S> eb = tape.leaf(p.excite_bias, false);
  return sae_gate<S>(uv, bw, bb, ew, eb).value();
}

}  // namespace detail

/// Squeeze-aggregated-excitation forward on a plain tensor.
template <typename S>
Tensor<S> sae_forward(const Tensor<S>& u, const SaEParams<S>& p, const SaEConfig& cfg) {
  p.check(cfg);
  if (u.rank() != 4 || u.extent(1) != cfg.channels)
    throw ShapeError("sae_forward: input " + shape_str(u.shape()) +
                     " does not carry " + std::to_string(cfg.channels) + " channels");
  return detail::run_gate(u, p);
}

/// Squeeze-and-excitation forward; the k = 1 special case of the aggregated
/// gate, sharing its code path bit for bit.
template <typename S>
Tensor<S> se_forward(const Tensor<S>& u, const SaEParams<S>& p, const SaEConfig& cfg) {
  if (cfg.cardinality != 1)
    throw ContractError("se_forward: requires cardinality 1, got " +
                        std::to_string(cfg.cardinality));
  return sae_forward(u, p, cfg);
}

}  // namespace saekit
