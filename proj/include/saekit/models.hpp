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

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "saekit/se.hpp"

namespace saekit {

enum class Arch {
  resnet50,
  senet50,
  senetv2_50,
  resnext50,
  senextv2_50,
  tiny_resnet,
  tiny_senetv2,
};

enum class Gate { none, se, sae };

inline const std::vector<std::pair<std::string, Arch>>& arch_table() {
  static const std::vector<std::pair<std::string, Arch>> table = {
      {"resnet50", Arch::resnet50},       {"senet50", Arch::senet50},
      {"senetv2_50", Arch::senetv2_50},   {"resnext50", Arch::resnext50},
      {"senextv2_50", Arch::senextv2_50}, {"tiny_resnet", Arch::tiny_resnet},
      {"tiny_senetv2", Arch::tiny_senetv2},
  };
  return table;
}

inline std::string arch_names() {
  std::string s;
  for (const auto& [name, _] : arch_table()) {
    if (!s.empty()) s += ", ";
    s += name;
  }
  return s;
}

inline Arch arch_from_string(const std::string& name) {
  for (const auto& [n, a] : arch_table())
    if (n == name) return a;
  throw ConfigError("unknown arch '" + name + "'; valid: " + arch_names());
}

inline std::string to_string(Arch a) {
  for (const auto& [n, v] : arch_table())
    if (v == a) return n;
  return "?";
}

/// Declarative architecture description. reduction/cardinality shape the
/// SE/SaE gates; groups applies to the ResNeXt family's 3x3 convolutions.
struct ModelSpec {
  Arch arch = Arch::resnet50;
  int64_t num_classes = 1000;
  int64_t reduction = 32;
  int64_t cardinality = 4;
  int64_t groups = 32;
};

struct StagePlan {
  int64_t mid, out, blocks, stride;
};

struct ArchPlan {
  bool imagenet_stem;  // 7x7/64 stride-2 conv + 3x3 stride-2 max pool
  int64_t stem_out;
  std::vector<StagePlan> stages;
  int64_t groups;
  Gate gate;
  int64_t reduction;
  int64_t cardinality;
};

inline ArchPlan plan_model(const ModelSpec& spec) {
  if (spec.num_classes < 1)
    throw ConfigError("num_classes must be >= 1, got " +
                      std::to_string(spec.num_classes));
  ArchPlan p;
  p.groups = 1;
  p.gate = Gate::none;
  p.reduction = spec.reduction;
  p.cardinality = spec.cardinality;

  const bool resnext =
      spec.arch == Arch::resnext50 || spec.arch == Arch::senextv2_50;
  const bool tiny =
      spec.arch == Arch::tiny_resnet || spec.arch == Arch::tiny_senetv2;

  if (tiny) {
    // 32x32-scale stem: 3x3 stride 1, no max pool
    p.imagenet_stem = false;
    p.stem_out = 16;
    p.stages = {{16, 64, 1, 1}, {32, 128, 1, 2}, {64, 256, 1, 2}};
  } else {
    p.imagenet_stem = true;
    p.stem_out = 64;
    if (resnext) {
      // doubled mid widths, grouped 3x3
      p.stages = {{128, 256, 3, 1},
                  {256, 512, 4, 2},
                  {512, 1024, 6, 2},
                  {1024, 2048, 3, 2}};
      p.groups = spec.groups;
      if (p.groups < 1) throw ConfigError("groups must be >= 1");
      for (const auto& s : p.stages)
        if (s.mid % p.groups != 0)
          throw ConfigError("groups " + std::to_string(p.groups) +
                            " does not divide stage width " + std::to_string(s.mid));
    } else {
      p.stages = {{64, 256, 3, 1},
                  {128, 512, 4, 2},
                  {256, 1024, 6, 2},
                  {512, 2048, 3, 2}};
    }
  }

  switch (spec.arch) {
    case Arch::senet50:
      p.gate = Gate::se;
      p.cardinality = 1;
      break;
    case Arch::senetv2_50:
    case Arch::senextv2_50:
    case Arch::tiny_senetv2:
      p.gate = Gate::sae;
      break;
    default:
      break;
  }
  if (p.gate != Gate::none) {
    if (p.cardinality < 1) throw ConfigError("cardinality must be >= 1");
    for (const auto& s : p.stages)
      SaEConfig{s.out, p.reduction, p.cardinality}.validate();
  }
  return p;
}

/// A materialized model: the spec, its plan and every named tensor
/// (trainable parameters plus batch-norm running buffers) in stable
/// insertion order.
template <typename S>
class ModelInstance {
 public:
  struct Entry {
    Tensor<S> value;
    bool trainable = true;
    bool decay = true;  // weight-decay eligible (off for biases and BN)
  };

  ModelInstance(ModelSpec spec, ArchPlan plan)
      : spec_(std::move(spec)), plan_(std::move(plan)) {}

  const ModelSpec& spec() const { return spec_; }
  const ArchPlan& plan() const { return plan_; }

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  const std::vector<std::string>& names() const { return order_; }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw ContractError("model has no tensor named '" + name + "'");
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw ContractError("model has no tensor named '" + name + "'");
    return it->second;
  }

  Tensor<S>& tensor(const std::string& name) { return entry(name).value; }
  const Tensor<S>& tensor(const std::string& name) const {
    return entry(name).value;
  }

  void add(const std::string& name, Tensor<S> value, bool trainable, bool decay) {
    if (entries_.count(name))
      throw ContractError("duplicate tensor name '" + name + "'");
    entries_.emplace(name, Entry{std::move(value), trainable, decay});
    order_.push_back(name);
  }

  /// Exact trainable parameter count: sum of products of extents.
  int64_t count_params() const {
    int64_t total = 0;
    for (const auto& n : order_) {
      const Entry& e = entries_.at(n);
      if (e.trainable) total += e.value.size();
    }
    return total;
  }

  /// Per-section counts: stem, one entry per stage (gates excluded), the
  /// gates as their own section, and the head.
  std::vector<std::pair<std::string, int64_t>> breakdown() const {
    std::vector<std::pair<std::string, int64_t>> sections;
    sections.emplace_back("stem", 0);
    for (size_t i = 0; i < plan_.stages.size(); ++i)
      sections.emplace_back("stage" + std::to_string(i + 1), 0);
    sections.emplace_back("gates", 0);
    sections.emplace_back("head", 0);
    for (const auto& n : order_) {
      const Entry& e = entries_.at(n);
      if (!e.trainable) continue;
      size_t slot;
      if (n.find(".gate.") != std::string::npos)
        slot = sections.size() - 2;
      else if (n.rfind("stem.", 0) == 0)
        slot = 0;
      else if (n.rfind("head.", 0) == 0)
        slot = sections.size() - 1;
      else
        slot = 1 + static_cast<size_t>(n[1] - '1');  // names are s<digit>.b...
      sections[slot].second += e.value.size();
    }
    return sections;
  }

 private:
  ModelSpec spec_;
  ArchPlan plan_;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  Mode mode_ = Mode::train;
};

namespace detail {

template <typename S>
void add_conv(ModelInstance<S>& m, const std::string& name, int64_t cout,
              int64_t cin_per_group, int64_t kh, int64_t kw, uint64_t seed) {
  Rng rng(seed_for(seed, name + ".weight"));
  const double fan_in = static_cast<double>(cin_per_group * kh * kw);
  const S stddev = static_cast<S>(std::sqrt(2.0 / fan_in));
  m.add(name + ".weight",
        Tensor<S>::randn({cout, cin_per_group, kh, kw}, rng, stddev), true, true);
}

template <typename S>
void add_bn(ModelInstance<S>& m, const std::string& name, int64_t c) {
  m.add(name + ".gamma", Tensor<S>::ones({c}), true, false);
  m.add(name + ".beta", Tensor<S>::zeros({c}), true, false);
  m.add(name + ".running_mean", Tensor<S>::zeros({c}), false, false);
  m.add(name + ".running_var", Tensor<S>::ones({c}), false, false);
}

template <typename S>
Tensor<S> dense_init(int64_t rows, int64_t cols, int64_t fan_in, uint64_t s) {
  Rng rng(s);
  Tensor<S> w({rows, cols});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<S>(rng.uniform(-bound, bound));
  return w;
}

template <typename S>
void add_gate(ModelInstance<S>& m, const std::string& name, const SaEConfig& cfg,
              uint64_t seed) {
  const int64_t c = cfg.channels, cr = cfg.reduced(), k = cfg.cardinality;
  for (int64_t i = 0; i < k; ++i) {
    const std::string b = name + ".branch" + std::to_string(i);
    m.add(b + ".weight",
          dense_init<S>(cr, c, c, seed_for(seed, b + ".weight")), true, true);
    m.add(b + ".bias", Tensor<S>::zeros({cr}), true, false);
  }
  m.add(name + ".excite.weight",
        dense_init<S>(c, k * cr, k * cr, seed_for(seed, name + ".excite.weight")),
        true, true);
  m.add(name + ".excite.bias", Tensor<S>::zeros({c}), true, false);
}

}  // namespace detail

/// Builds a model with deterministic, seed-and-name-derived initialization:
/// fan-in-scaled normal for convolutions, uniform +-1/sqrt(fan_in) for dense
/// weights, gamma=1/beta=0 for batch norm, zero biases. Two instances built
/// from the same seed share identical values for identically named tensors.
template <typename S>
ModelInstance<S> build_model(const ModelSpec& spec, uint64_t seed) {
  ArchPlan plan = plan_model(spec);
  ModelInstance<S> m(spec, plan);

  if (plan.imagenet_stem)
    detail::add_conv(m, "stem.conv", plan.stem_out, 3, 7, 7, seed);
  else
    detail::add_conv(m, "stem.conv", plan.stem_out, 3, 3, 3, seed);
  detail::add_bn(m, "stem.bn", plan.stem_out);

  int64_t in = plan.stem_out;
  for (size_t si = 0; si < plan.stages.size(); ++si) {
    const StagePlan& st = plan.stages[si];
    for (int64_t bi = 0; bi < st.blocks; ++bi) {
      const std::string p =
          "s" + std::to_string(si + 1) + ".b" + std::to_string(bi) + ".";
      const int64_t stride = bi == 0 ? st.stride : 1;
      detail::add_conv(m, p + "conv1", st.mid, in, 1, 1, seed);
      detail::add_bn(m, p + "bn1", st.mid);
      detail::add_conv(m, p + "conv2", st.mid, st.mid / plan.groups, 3, 3, seed);
      detail::add_bn(m, p + "bn2", st.mid);
      detail::add_conv(m, p + "conv3", st.out, st.mid, 1, 1, seed);
      detail::add_bn(m, p + "bn3", st.out);
      if (stride != 1 || in != st.out) {
        detail::add_conv(m, p + "down.conv", st.out, in, 1, 1, seed);
        detail::add_bn(m, p + "down.bn", st.out);
      }
      if (plan.gate != Gate::none)
        detail::add_gate(m, p + "gate",
                         SaEConfig{st.out, plan.reduction, plan.cardinality}, seed);
      in = st.out;
    }
  }

  m.add("head.fc.weight",
        detail::dense_init<S>(in, spec.num_classes, in,
                              seed_for(seed, "head.fc.weight")),
        true, true);
  m.add("head.fc.bias", Tensor<S>::zeros({spec.num_classes}), true, false);
  return m;
}

/// One forward pass recorded on a fresh tape. params holds the leaf for
/// every trainable tensor so gradients can be read back after backward().
template <typename S>
struct ForwardGraph {
  std::unique_ptr<Tape<S>> tape;
  Var<S> logits;
  std::vector<std::pair<std::string, Var<S>>> params;
};

namespace detail {

template <typename S>
struct LeafCtx {
  Tape<S>& tape;
  ModelInstance<S>& m;
  ForwardGraph<S>& out;

  Var<S> operator()(const std::string& name) {
    auto& e = m.entry(name);
    Var<S> v = tape.leaf(e.value, e.trainable);
    if (e.trainable) out.params.emplace_back(name, v);
    return v;
  }
};

template <typename S>
Var<S> bn_layer(LeafCtx<S>& ctx, Var<S> x, const std::string& name) {
  auto& mean = ctx.m.tensor(name + ".running_mean");
  auto& var = ctx.m.tensor(name + ".running_var");
  return batchnorm2d(x, ctx(name + ".gamma"), ctx(name + ".beta"), mean, var,
                     BnOpts{0.1, 1e-5, ctx.m.mode()});
}

template <typename S>
Var<S> gate_layer(LeafCtx<S>& ctx, Var<S> u, const std::string& prefix,
                  int64_t cardinality) {
  std::vector<Var<S>> bw, bb;
  for (int64_t i = 0; i < cardinality; ++i) {
    const std::string b = prefix + ".branch" + std::to_string(i);
    bw.push_back(ctx(b + ".weight"));
    bb.push_back(ctx(b + ".bias"));
  }
  return sae_gate<S>(u, bw, bb, ctx(prefix + ".excite.weight"),
                     ctx(prefix + ".excite.bias"));
}

/// Bottleneck: y = relu(shortcut(x) + gate(bn(conv1x1(relu(bn(conv3x3(
/// relu(bn(conv1x1(x))))))))); the gate scales the expanded features before
/// the residual addition.
template <typename S>
Var<S> bottleneck(LeafCtx<S>& ctx, Var<S> x, const std::string& p, int64_t in,
                  int64_t out, int64_t stride, int64_t groups, Gate gate,
                  int64_t cardinality) {
  Var<S> h = relu(bn_layer(ctx, conv2d(x, ctx(p + "conv1.weight"), {}, ConvOpts{1, 0, 1}),
                           p + "bn1"));
  h = relu(bn_layer(
      ctx, conv2d(h, ctx(p + "conv2.weight"), {}, ConvOpts{stride, 1, groups}),
      p + "bn2"));
  h = bn_layer(ctx, conv2d(h, ctx(p + "conv3.weight"), {}, ConvOpts{1, 0, 1}),
               p + "bn3");
  if (gate != Gate::none) h = gate_layer(ctx, h, p + "gate", cardinality);
  Var<S> shortcut = x;
  if (stride != 1 || in != out)
    shortcut = bn_layer(
        ctx, conv2d(x, ctx(p + "down.conv.weight"), {}, ConvOpts{stride, 0, 1}),
        p + "down.bn");
  return relu(add(shortcut, h));
}

}  // namespace detail

/// Records the full network forward on a fresh tape. Train mode updates the
/// batch-norm running buffers as a side effect.
template <typename S>
ForwardGraph<S> forward_graph(ModelInstance<S>& m, const Tensor<S>& batch) {
  if (batch.rank() != 4 || batch.extent(1) != 3)
    throw ShapeError("forward: expected [N,3,H,W] input, got " +
                     shape_str(batch.shape()));
  const ArchPlan& plan = m.plan();
  ForwardGraph<S> fg;
  fg.tape = std::make_unique<Tape<S>>();
  detail::LeafCtx<S> ctx{*fg.tape, m, fg};

  auto guarded = [](const std::string& where, auto&& fn) {
    try {
      return fn();
    } catch (const ShapeError& e) {
      throw ShapeError(where + ": " + e.what());
    }
  };

  Var<S> x = fg.tape->leaf(batch, /*requires_grad=*/false);
  x = guarded("stem", [&] {
    Var<S> h = conv2d(x, ctx("stem.conv.weight"), {},
                      ConvOpts{plan.imagenet_stem ? 2 : 1,
                               plan.imagenet_stem ? 3 : 1, 1});
    h = relu(detail::bn_layer(ctx, h, "stem.bn"));
    if (plan.imagenet_stem) h = maxpool2d(h, 3, 2);
    return h;
  });

  int64_t in = plan.stem_out;
  for (size_t si = 0; si < plan.stages.size(); ++si) {
    const StagePlan& st = plan.stages[si];
    const std::string sname = "s" + std::to_string(si + 1);
    x = guarded(sname, [&] {
      Var<S> h = x;
      for (int64_t bi = 0; bi < st.blocks; ++bi) {
        const int64_t stride = bi == 0 ? st.stride : 1;
        h = detail::bottleneck(ctx, h, sname + ".b" + std::to_string(bi) + ".",
                               bi == 0 ? in : st.out, st.out, stride, plan.groups,
                               plan.gate, plan.cardinality);
      }
      return h;
    });
    in = st.out;
  }

  fg.logits = guarded("head", [&] {
    Var<S> h = global_avg_pool(x);
    return dense(h, ctx("head.fc.weight"),
                 std::optional<Var<S>>(ctx("head.fc.bias")));
  });
  return fg;
}

/// Logits for a batch; deterministic in eval mode.
template <typename S>
Tensor<S> forward(ModelInstance<S>& m, const Tensor<S>& batch) {
  return forward_graph(m, batch).logits.value();
}

/// Runs a single bottleneck block of a built model on x (test access).
template <typename S>
Tensor<S> forward_block(ModelInstance<S>& m, int64_t stage, int64_t block,
                        const Tensor<S>& x) {
  const ArchPlan& plan = m.plan();
  const StagePlan& st = plan.stages[static_cast<size_t>(stage - 1)];
  int64_t in = stage == 1 ? plan.stem_out : plan.stages[static_cast<size_t>(stage - 2)].out;
  if (block > 0) in = st.out;
  ForwardGraph<S> fg;
  fg.tape = std::make_unique<Tape<S>>();
  detail::LeafCtx<S> ctx{*fg.tape, m, fg};
  Var<S> xv = fg.tape->leaf(x, false);
  const std::string p =
      "s" + std::to_string(stage) + ".b" + std::to_string(block) + ".";
  return detail::bottleneck(ctx, xv, p, in, st.out, block == 0 ? st.stride : 1,
                            plan.groups, plan.gate, plan.cardinality)
      .value();
}

}  // namespace saekit
