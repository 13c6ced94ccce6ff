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

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "saekit/tensor.hpp"

namespace saekit {

template <typename Scalar>
class Tape;

/// Handle to one node of a tape. Cheap to copy; valid for the tape's
/// lifetime.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int32_t id = -1;

  const Tensor<Scalar>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
};

/// Define-by-run record of differentiable operations. The tape is rebuilt
/// for every forward pass; nodes are appended in topological order, so a
/// single reverse sweep propagates gradients. Node values are immutable
/// once recorded.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int32_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Creates an input node. Gradients are only tracked through nodes with
  /// requires_grad set (constants such as data batches opt out).
  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad});
    return {this, static_cast<int32_t>(nodes_.size() - 1)};
  }

  /// Records an op result. The backward function reads grad(self) and
  /// accumulates into grad_sink(input) for each differentiable input.
  Var<Scalar> record(Tensor<Scalar> value, std::vector<int32_t> inputs,
                     BackwardFn backward) {
    bool rg = false;
    for (int32_t i : inputs) rg = rg || nodes_[static_cast<size_t>(i)].requires_grad;
    nodes_.push_back(
        Node{std::move(value), std::move(inputs), rg ? std::move(backward) : nullptr, rg});
    return {this, static_cast<int32_t>(nodes_.size() - 1)};
  }

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

  const Tensor<Scalar>& value(int32_t id) const {
    return nodes_[static_cast<size_t>(id)].value;
  }

  bool requires_grad(int32_t id) const {
    return nodes_[static_cast<size_t>(id)].requires_grad;
  }

  /// Reverse-mode sweep from a scalar loss. Gradients of nodes that do not
  /// participate stay absent. Accumulation order is the fixed reverse
  /// creation order, so repeated runs are bit-identical.
  void backward(Var<Scalar> loss) {
    if (loss.tape != this)
      throw ContractError("backward: loss node belongs to a different tape");
    const Node& ln = nodes_[static_cast<size_t>(loss.id)];
    if (ln.value.size() != 1)
      throw ContractError("backward: loss must be scalar, got " +
                          shape_str(ln.value.shape()));
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[static_cast<size_t>(loss.id)] =
        Tensor<Scalar>::ones(ln.value.shape());
    for (int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!grads_[static_cast<size_t>(i)] || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  bool has_grad(Var<Scalar> v) const { return has_grad(v.id); }
  bool has_grad(int32_t id) const {
    return id < static_cast<int32_t>(grads_.size()) &&
           grads_[static_cast<size_t>(id)].has_value();
  }

  const Tensor<Scalar>& grad(Var<Scalar> v) const { return grad(v.id); }
  const Tensor<Scalar>& grad(int32_t id) const {
    if (!has_grad(id)) throw ContractError("no gradient recorded for node");
    return *grads_[static_cast<size_t>(id)];
  }

  /// Gradient buffer of a node, zero-initialized on first use. Returns
  /// nullptr when the node does not require a gradient, letting backward
  /// functions skip dead branches.
  Tensor<Scalar>* grad_sink(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return nullptr;
    auto& slot = grads_[static_cast<size_t>(id)];
    if (!slot) slot = Tensor<Scalar>::zeros(n.value.shape());
    return &*slot;
  }

 private:
  struct Node {
    Tensor<Scalar> value;
    std::vector<int32_t> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<Scalar>>> grads_;
};

namespace detail {

// Broadcast classification for binary elementwise ops: equal shapes, or a
// per-channel operand [N,C] paired with a feature map [N,C,H,W].
enum class Broadcast { none, lhs_channel, rhs_channel };

inline Broadcast classify_broadcast(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::none;
  if (a.size() == 4 && b.size() == 2 && a[0] == b[0] && a[1] == b[1])
    return Broadcast::rhs_channel;
  if (b.size() == 4 && a.size() == 2 && a[0] == b[0] && a[1] == b[1])
    return Broadcast::lhs_channel;
  throw ShapeError("elementwise op: shapes " + shape_str(a) + " and " +
                   shape_str(b) + " are not broadcastable");
}

}  // namespace detail

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) +
                     " and " + shape_str(bv.shape()));
  const int64_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor<S> out({m, n});
  mat_view(out, m, n).noalias() = mat_view(av, m, k) * mat_view(bv, k, n);
  return a.tape->record(
      std::move(out), {a.id, b.id}, [a, b, m, k, n](Tape<S>& t, int32_t self) {
        auto dc = mat_view(t.grad(self), m, n);
        if (auto* da = t.grad_sink(a.id))
          mat_view(*da, m, k).noalias() += dc * mat_view(t.value(b.id), k, n).transpose();
        if (auto* db = t.grad_sink(b.id))
          mat_view(*db, k, n).noalias() += mat_view(t.value(a.id), m, k).transpose() * dc;
      });
}

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Var<S> binary_ewise(Var<S> a, Var<S> b, Fwd fwd, Bwd bwd) {
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  Broadcast bc = classify_broadcast(av.shape(), bv.shape());
  const Tensor<S>& big = bc == Broadcast::lhs_channel ? bv : av;
  Tensor<S> out(big.shape());
  if (bc == Broadcast::none) {
    for (int64_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    const Tensor<S>& vec = bc == Broadcast::lhs_channel ? av : bv;
    const bool vec_is_lhs = bc == Broadcast::lhs_channel;
    const int64_t n = big.extent(0), c = big.extent(1);
    const int64_t hw = big.extent(2) * big.extent(3);
    for (int64_t i = 0; i < n * c; ++i) {
      const S s = vec[i];
      const S* src = big.data() + i * hw;
      S* dst = out.data() + i * hw;
      for (int64_t j = 0; j < hw; ++j)
        dst[j] = vec_is_lhs ? fwd(s, src[j]) : fwd(src[j], s);
    }
  }
  return a.tape->record(std::move(out), {a.id, b.id},
                        [a, b, bc, bwd](Tape<S>& t, int32_t self) {
                          bwd(t, self, a.id, b.id, bc);
                        });
}

}  // namespace detail

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  using detail::Broadcast;
  return detail::binary_ewise<S>(
      a, b, [](S x, S y) { return x + y; },
      [](Tape<S>& t, int32_t self, int32_t ai, int32_t bi, Broadcast bc) {
        const Tensor<S>& g = t.grad(self);
        auto spread = [&](int32_t id, bool is_vec) {
          Tensor<S>* d = t.grad_sink(id);
          if (!d) return;
          if (!is_vec) {
            arr_view(*d) += arr_view(g);
            return;
          }
          const Shape& gs = g.shape();
          const int64_t hw = gs[2] * gs[3];
          for (int64_t i = 0; i < gs[0] * gs[1]; ++i) {
            S acc = 0;
            const S* src = g.data() + i * hw;
            for (int64_t j = 0; j < hw; ++j) acc += src[j];
            (*d)[i] += acc;
          }
        };
        spread(ai, bc == Broadcast::lhs_channel);
        spread(bi, bc == Broadcast::rhs_channel);
      });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  using detail::Broadcast;
  return detail::binary_ewise<S>(
      a, b, [](S x, S y) { return x * y; },
      [](Tape<S>& t, int32_t self, int32_t ai, int32_t bi, Broadcast bc) {
        const Tensor<S>& g = t.grad(self);
        const Tensor<S>& av = t.value(ai);
        const Tensor<S>& bv = t.value(bi);
        auto acc_into = [&](int32_t id, const Tensor<S>& other, bool id_is_vec,
                            bool other_is_vec) {
          Tensor<S>* d = t.grad_sink(id);
          if (!d) return;
          if (bc == Broadcast::none) {
            for (int64_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * other[i];
            return;
          }
          const Shape& gs = g.shape();
          const int64_t hw = gs[2] * gs[3];
          for (int64_t i = 0; i < gs[0] * gs[1]; ++i) {
            const S* gp = g.data() + i * hw;
            if (id_is_vec) {
              // d(vec) = sum over spatial of g * map
              const S* op = other.data() + i * hw;
              S acc = 0;
              for (int64_t j = 0; j < hw; ++j) acc += gp[j] * op[j];
              (*d)[i] += acc;
            } else if (other_is_vec) {
              const S s = other[i];
              S* dp = d->data() + i * hw;
              for (int64_t j = 0; j < hw; ++j) dp[j] += gp[j] * s;
            }
          }
        };
        acc_into(ai, bv, bc == Broadcast::lhs_channel, bc == Broadcast::rhs_channel);
        acc_into(bi, av, bc == Broadcast::rhs_channel, bc == Broadcast::lhs_channel);
      });
}

template <typename S>
Var<S> relu(Var<S> a) {
  const Tensor<S>& av = a.value();
  Tensor<S> out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] > S(0) ? av[i] : S(0);
  return a.tape->record(std::move(out), {a.id}, [a](Tape<S>& t, int32_t self) {
    if (auto* d = t.grad_sink(a.id)) {
      const Tensor<S>& g = t.grad(self);
      const Tensor<S>& x = t.value(a.id);
      // subgradient at 0 is 0
      for (int64_t i = 0; i < g.size(); ++i)
        if (x[i] > S(0)) (*d)[i] += g[i];
    }
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  const Tensor<S>& av = a.value();
  Tensor<S> out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i)
    out[i] = S(1) / (S(1) + std::exp(-av[i]));
  return a.tape->record(std::move(out), {a.id}, [a](Tape<S>& t, int32_t self) {
    if (auto* d = t.grad_sink(a.id)) {
      const Tensor<S>& g = t.grad(self);
      const Tensor<S>& y = t.value(self);
      for (int64_t i = 0; i < g.size(); ++i)
        (*d)[i] += g[i] * y[i] * (S(1) - y[i]);
    }
  });
}

/// Full reduction to a scalar (shape [1]); index-ascending accumulation.
template <typename S>
Var<S> sum(Var<S> a) {
  const Tensor<S>& av = a.value();
  S acc = 0;
  for (int64_t i = 0; i < av.size(); ++i) acc += av[i];
  return a.tape->record(Tensor<S>({1}, {acc}), {a.id},
                        [a](Tape<S>& t, int32_t self) {
                          if (auto* d = t.grad_sink(a.id)) {
                            const S g = t.grad(self)[0];
                            for (int64_t i = 0; i < d->size(); ++i) (*d)[i] += g;
                          }
                        });
}

/// Multiplication by a compile-time constant scalar.
template <typename S>
Var<S> scale(Var<S> a, S c) {
  const Tensor<S>& av = a.value();
  Tensor<S> out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
  return a.tape->record(std::move(out), {a.id},
                        [a, c](Tape<S>& t, int32_t self) {
                          if (auto* d = t.grad_sink(a.id)) {
                            const Tensor<S>& g = t.grad(self);
                            for (int64_t i = 0; i < g.size(); ++i)
                              (*d)[i] += g[i] * c;
                          }
                        });
}

/// Column-wise concatenation of 2-d tensors [N, D_i] -> [N, sum D_i].
template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int64_t n = parts[0].value().extent(0);
  int64_t total = 0;
  for (const auto& p : parts) {
    const Tensor<S>& v = p.value();
    if (v.rank() != 2 || v.extent(0) != n)
      throw ShapeError("concat_cols: expected [N,D] with N=" + std::to_string(n) +
                       ", got " + shape_str(v.shape()));
    total += v.extent(1);
  }
  Tensor<S> out({n, total});
  std::vector<int32_t> ids;
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& p : parts) {
    const Tensor<S>& v = p.value();
    const int64_t d = v.extent(1);
    for (int64_t r = 0; r < n; ++r)
      for (int64_t c = 0; c < d; ++c) out[r * total + off + c] = v[r * d + c];
    ids.push_back(p.id);
    offsets.push_back(off);
    off += d;
  }
  Tape<S>* tape = parts[0].tape;
  return tape->record(
      std::move(out), ids,
      [ids, offsets, n, total](Tape<S>& t, int32_t self) {
        const Tensor<S>& g = t.grad(self);
        for (size_t k = 0; k < ids.size(); ++k) {
          Tensor<S>* d = t.grad_sink(ids[k]);
          if (!d) continue;
          const int64_t dcols = d->extent(1);
          for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < dcols; ++c)
              (*d)[r * dcols + c] += g[r * total + offsets[k] + c];
        }
      });
}

}  // namespace saekit
