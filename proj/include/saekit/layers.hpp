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

#include <optional>
#include <vector>

#include "saekit/tape.hpp"

namespace saekit {

enum class Mode { train, eval };

struct ConvOpts {
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;
};

/// Grouped 2-d convolution parameters. Weight layout is
/// [Cout, Cin/groups, kh, kw]; bias is omitted when the layer is followed
/// by batch normalization.
template <typename S>
struct Conv2dParams {
  Tensor<S> weight;
  std::optional<Tensor<S>> bias;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;
};

template <typename S>
struct BatchNormParams {
  Tensor<S> gamma, beta;
  Tensor<S> running_mean, running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);
  Mode mode = Mode::train;

  static BatchNormParams init(int64_t channels) {
    BatchNormParams p;
    p.gamma = Tensor<S>::ones({channels});
    p.beta = Tensor<S>::zeros({channels});
    p.running_mean = Tensor<S>::zeros({channels});
    p.running_var = Tensor<S>::ones({channels});
    return p;
  }
};

namespace detail {

struct ConvDims {
  int64_t n, cin, h, w;
  int64_t cout, cpg, kh, kw;  // cpg = channels per group
  int64_t ho, wo, groups, stride, pad;
  int64_t cols() const { return ho * wo; }
  int64_t krows() const { return cpg * kh * kw; }  // per-group col rows
};

template <typename S>
ConvDims conv_dims(const Tensor<S>& x, const Tensor<S>& w, const ConvOpts& o) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: expected 4-d input and weight, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  ConvDims d;
  d.n = x.extent(0);
  d.cin = x.extent(1);
  d.h = x.extent(2);
  d.w = x.extent(3);
  d.cout = w.extent(0);
  d.cpg = w.extent(1);
  d.kh = w.extent(2);
  d.kw = w.extent(3);
  d.groups = o.groups;
  d.stride = o.stride;
  d.pad = o.padding;
  if (o.groups < 1 || d.cin % o.groups != 0 || d.cout % o.groups != 0 ||
      d.cpg != d.cin / o.groups)
    throw ShapeError("conv2d: group divisibility violated for input " +
                     shape_str(x.shape()) + ", weight " + shape_str(w.shape()) +
                     ", groups " + std::to_string(o.groups));
  d.ho = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
  d.wo = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
  if (d.h + 2 * d.pad < d.kh || d.w + 2 * d.pad < d.kw || d.ho < 1 || d.wo < 1)
    throw ShapeError("conv2d: empty output for input " + shape_str(x.shape()) +
                     ", kernel " + shape_str(w.shape()) + ", stride " +
                     std::to_string(d.stride) + ", pad " + std::to_string(d.pad));
  return d;
}

// Unrolls one sample into a [cin*kh*kw, ho*wo] column matrix (zero padding).
template <typename S>
void im2col(const S* x, const ConvDims& d, S* col) {
  const int64_t cols = d.cols();
  for (int64_t c = 0; c < d.cin; ++c) {
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        S* row = col + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (int64_t oh = 0; oh < d.ho; ++oh) {
          const int64_t ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.h) {
            for (int64_t ow = 0; ow < d.wo; ++ow) row[oh * d.wo + ow] = S(0);
            continue;
          }
          const S* src = x + (c * d.h + ih) * d.w;
          for (int64_t ow = 0; ow < d.wo; ++ow) {
            const int64_t iw = ow * d.stride - d.pad + kj;
            row[oh * d.wo + ow] = (iw < 0 || iw >= d.w) ? S(0) : src[iw];
          }
        }
      }
    }
  }
}

// Scatters a column-matrix gradient back onto one input sample.
template <typename S>
void col2im_add(const S* col, const ConvDims& d, S* dx) {
  const int64_t cols = d.cols();
  for (int64_t c = 0; c < d.cin; ++c) {
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        const S* row = col + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (int64_t oh = 0; oh < d.ho; ++oh) {
          const int64_t ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.h) continue;
          S* dst = dx + (c * d.h + ih) * d.w;
          for (int64_t ow = 0; ow < d.wo; ++ow) {
            const int64_t iw = ow * d.stride - d.pad + kj;
            if (iw >= 0 && iw < d.w) dst[iw] += row[oh * d.wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Grouped cross-correlation, differentiable w.r.t. input, weight and bias.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, std::optional<Var<S>> b, ConvOpts opts) {
  using detail::ConvDims;
  const ConvDims d = detail::conv_dims(x.value(), w.value(), opts);
  if (b && (b->value().rank() != 1 || b->value().extent(0) != d.cout))
    throw ShapeError("conv2d: bias shape " + shape_str(b->value().shape()) +
                     " does not match Cout " + std::to_string(d.cout));

  const Tensor<S>& xv = x.value();
  const Tensor<S>& wv = w.value();
  const int64_t cols = d.cols(), krows = d.krows(), copg = d.cout / d.groups;
  Tensor<S> out({d.n, d.cout, d.ho, d.wo});

  {
    std::vector<Tensor<S>> colbuf(static_cast<size_t>(
        kernel_threads() > 1 ? std::min<int64_t>(kernel_threads(), d.n) : 1));
    for (auto& cb : colbuf) cb = Tensor<S>({d.cin * d.kh * d.kw, cols});
    // disjoint per-sample writes; safe to fan out
    if (colbuf.size() == 1) {
      Tensor<S>& col = colbuf[0];
      for (int64_t n = 0; n < d.n; ++n) {
        detail::im2col(xv.data() + n * d.cin * d.h * d.w, d, col.data());
        for (int64_t g = 0; g < d.groups; ++g) {
          Eigen::Map<const MatX<S>> wg(wv.data() + g * copg * krows, copg, krows);
          Eigen::Map<const MatX<S>> cg(col.data() + g * krows * cols, krows, cols);
          Eigen::Map<MatX<S>> og(out.data() + (n * d.cout + g * copg) * cols, copg, cols);
          og.noalias() = wg * cg;
        }
      }
    } else {
      const int64_t nthreads = static_cast<int64_t>(colbuf.size());
      const int64_t chunk = (d.n + nthreads - 1) / nthreads;
      parallel_for(nthreads, [&](int64_t t) {
        Tensor<S>& col = colbuf[static_cast<size_t>(t)];
        for (int64_t n = t * chunk; n < std::min(d.n, (t + 1) * chunk); ++n) {
          detail::im2col(xv.data() + n * d.cin * d.h * d.w, d, col.data());
          for (int64_t g = 0; g < d.groups; ++g) {
            Eigen::Map<const MatX<S>> wg(wv.data() + g * copg * krows, copg, krows);
            Eigen::Map<const MatX<S>> cg(col.data() + g * krows * cols, krows, cols);
            Eigen::Map<MatX<S>> og(out.data() + (n * d.cout + g * copg) * cols, copg, cols);
            og.noalias() = wg * cg;
          }
        }
      });
    }
  }
  if (b) {
    const Tensor<S>& bv = b->value();
    for (int64_t n = 0; n < d.n; ++n)
      for (int64_t c = 0; c < d.cout; ++c) {
        S* dst = out.data() + (n * d.cout + c) * cols;
        for (int64_t i = 0; i < cols; ++i) dst[i] += bv[c];
      }
  }

  std::vector<int32_t> inputs{x.id, w.id};
  if (b) inputs.push_back(b->id);
  const int32_t bid = b ? b->id : -1;
  return x.tape->record(
      std::move(out), std::move(inputs),
      [x, w, bid, d, cols, krows, copg](Tape<S>& t, int32_t self) {
        const Tensor<S>& g = t.grad(self);
        const Tensor<S>& xv = t.value(x.id);
        const Tensor<S>& wv = t.value(w.id);
        Tensor<S>* dx = t.grad_sink(x.id);
        Tensor<S>* dw = t.grad_sink(w.id);
        Tensor<S>* db = bid >= 0 ? t.grad_sink(bid) : nullptr;
        Tensor<S> col({d.cin * d.kh * d.kw, cols});
        Tensor<S> dcol({d.cin * d.kh * d.kw, cols});
        for (int64_t n = 0; n < d.n; ++n) {
          if (dw) detail::im2col(xv.data() + n * d.cin * d.h * d.w, d, col.data());
          for (int64_t g_ = 0; g_ < d.groups; ++g_) {
            Eigen::Map<const MatX<S>> gg(g.data() + (n * d.cout + g_ * copg) * cols,
                                         copg, cols);
            if (dw) {
              Eigen::Map<const MatX<S>> cg(col.data() + g_ * krows * cols, krows, cols);
              Eigen::Map<MatX<S>> dwg(dw->data() + g_ * copg * krows, copg, krows);
              dwg.noalias() += gg * cg.transpose();
            }
            if (dx) {
              Eigen::Map<const MatX<S>> wg(wv.data() + g_ * copg * krows, copg, krows);
              Eigen::Map<MatX<S>> dcg(dcol.data() + g_ * krows * cols, krows, cols);
              dcg.noalias() = wg.transpose() * gg;
            }
          }
          if (dx)
            detail::col2im_add(dcol.data(), d, dx->data() + n * d.cin * d.h * d.w);
        }
        if (db) {
          for (int64_t n = 0; n < d.n; ++n)
            for (int64_t c = 0; c < d.cout; ++c) {
              const S* src = g.data() + (n * d.cout + c) * cols;
              S acc = 0;
              for (int64_t i = 0; i < cols; ++i) acc += src[i];
              (*db)[c] += acc;
            }
        }
      });
}

/// Spec-typed convenience: leafs the parameters onto x's tape.
template <typename S>
Var<S> conv2d(Tape<S>& tape, Var<S> x, const Conv2dParams<S>& p) {
  Var<S> w = tape.leaf(p.weight);
  std::optional<Var<S>> b;
  if (p.bias) b = tape.leaf(*p.bias);
  return conv2d(x, w, b, ConvOpts{p.stride, p.padding, p.groups});
}

struct BnOpts {
  double momentum = 0.1;
  double eps = 1e-5;
  Mode mode = Mode::train;
};

/// Per-channel batch normalization over [N,C,H,W]. Train mode normalizes by
/// biased batch statistics and updates the running buffers in place
/// (new = (1-momentum)*old + momentum*batch); eval mode depends only on the
/// running statistics captured at record time.
template <typename S>
Var<S> batchnorm2d(Var<S> x, Var<S> gamma, Var<S> beta, Tensor<S>& running_mean,
                   Tensor<S>& running_var, const BnOpts& o) {
  const Tensor<S>& xv = x.value();
  if (xv.rank() != 4)
    throw ShapeError("batchnorm2d: expected 4-d input, got " + shape_str(xv.shape()));
  const int64_t n = xv.extent(0), c = xv.extent(1);
  const int64_t hw = xv.extent(2) * xv.extent(3);
  const int64_t m = n * hw;
  if (gamma.value().size() != c || beta.value().size() != c ||
      running_mean.size() != c || running_var.size() != c)
    throw ShapeError("batchnorm2d: parameter size does not match channels " +
                     std::to_string(c));
  const Tensor<S>& gv = gamma.value();
  const Tensor<S>& bv = beta.value();

  Tensor<S> mean({c}), inv_std({c});
  if (o.mode == Mode::train) {
    if (m < 2)
      throw ContractError("batchnorm2d: train mode needs N*H*W >= 2, got " +
                          std::to_string(m));
    for (int64_t ch = 0; ch < c; ++ch) {
      S acc = 0;
      for (int64_t i = 0; i < n; ++i) {
        const S* src = xv.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) acc += src[j];
      }
      const S mu = acc / static_cast<S>(m);
      S var = 0;
      for (int64_t i = 0; i < n; ++i) {
        const S* src = xv.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const S dlt = src[j] - mu;
          var += dlt * dlt;
        }
      }
      var /= static_cast<S>(m);  // biased estimator, also used for the running update
      mean[ch] = mu;
      inv_std[ch] = S(1) / std::sqrt(var + static_cast<S>(o.eps));
      running_mean[ch] = static_cast<S>(1.0 - o.momentum) * running_mean[ch] +
                         static_cast<S>(o.momentum) * mu;
      running_var[ch] = static_cast<S>(1.0 - o.momentum) * running_var[ch] +
                        static_cast<S>(o.momentum) * var;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      inv_std[ch] = S(1) / std::sqrt(running_var[ch] + static_cast<S>(o.eps));
    }
  }

  Tensor<S> out(xv.shape());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const S* src = xv.data() + (i * c + ch) * hw;
      S* dst = out.data() + (i * c + ch) * hw;
      const S mu = mean[ch], is = inv_std[ch], ga = gv[ch], be = bv[ch];
      for (int64_t j = 0; j < hw; ++j) dst[j] = (src[j] - mu) * is * ga + be;
    }

  const bool train = o.mode == Mode::train;
  return x.tape->record(
      std::move(out), {x.id, gamma.id, beta.id},
      [x, gamma, beta, mean, inv_std, n, c, hw, train](Tape<S>& t, int32_t self) {
        const Tensor<S>& g = t.grad(self);
        const Tensor<S>& xv = t.value(x.id);
        const Tensor<S>& gv = t.value(gamma.id);
        const S m = static_cast<S>(n * hw);
        Tensor<S>* dx = t.grad_sink(x.id);
        Tensor<S>* dgamma = t.grad_sink(gamma.id);
        Tensor<S>* dbeta = t.grad_sink(beta.id);
        for (int64_t ch = 0; ch < c; ++ch) {
          const S mu = mean[ch], is = inv_std[ch];
          S sum_g = 0, sum_gx = 0;
          for (int64_t i = 0; i < n; ++i) {
            const S* gp = g.data() + (i * c + ch) * hw;
            const S* xp = xv.data() + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) {
              sum_g += gp[j];
              sum_gx += gp[j] * (xp[j] - mu) * is;
            }
          }
          if (dbeta) (*dbeta)[ch] += sum_g;
          if (dgamma) (*dgamma)[ch] += sum_gx;
          if (dx) {
            const S ga_is = gv[ch] * is;
            for (int64_t i = 0; i < n; ++i) {
              const S* gp = g.data() + (i * c + ch) * hw;
              const S* xp = xv.data() + (i * c + ch) * hw;
              S* dp = dx->data() + (i * c + ch) * hw;
              if (train) {
                for (int64_t j = 0; j < hw; ++j) {
                  const S xhat = (xp[j] - mu) * is;
                  dp[j] += ga_is * (gp[j] - sum_g / m - xhat * sum_gx / m);
                }
              } else {
                for (int64_t j = 0; j < hw; ++j) dp[j] += ga_is * gp[j];
              }
            }
          }
        }
      });
}

/// Spec-typed convenience wrapper; mutates p's running statistics in train
/// mode.
template <typename S>
Var<S> batchnorm2d(Tape<S>& tape, Var<S> x, BatchNormParams<S>& p) {
  Var<S> gamma = tape.leaf(p.gamma);
  Var<S> beta = tape.leaf(p.beta);
  return batchnorm2d(x, gamma, beta, p.running_mean, p.running_var,
                     BnOpts{static_cast<double>(p.momentum),
                            static_cast<double>(p.eps), p.mode});
}

/// Windowed max with square kernel; gradient routes to the first argmax in
/// row-major window order.
template <typename S>
Var<S> maxpool2d(Var<S> x, int64_t kernel, int64_t stride) {
  const Tensor<S>& xv = x.value();
  if (xv.rank() != 4)
    throw ShapeError("maxpool2d: expected 4-d input, got " + shape_str(xv.shape()));
  const int64_t n = xv.extent(0), c = xv.extent(1), h = xv.extent(2), w = xv.extent(3);
  const int64_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  if (h < kernel || w < kernel || ho < 1 || wo < 1)
    throw ShapeError("maxpool2d: empty output for input " + shape_str(xv.shape()) +
                     ", kernel " + std::to_string(kernel) + ", stride " +
                     std::to_string(stride));
  Tensor<S> out({n, c, ho, wo});
  std::vector<int64_t> argmax(static_cast<size_t>(out.size()));
  int64_t o = 0;
  for (int64_t i = 0; i < n * c; ++i) {
    const S* plane = xv.data() + i * h * w;
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow, ++o) {
        int64_t best = (oh * stride) * w + ow * stride;
        S best_v = plane[best];
        for (int64_t ki = 0; ki < kernel; ++ki)
          for (int64_t kj = 0; kj < kernel; ++kj) {
            const int64_t idx = (oh * stride + ki) * w + ow * stride + kj;
            if (plane[idx] > best_v) {  // strict: first max wins ties
              best_v = plane[idx];
              best = idx;
            }
          }
        out[o] = best_v;
        argmax[static_cast<size_t>(o)] = i * h * w + best;
      }
  }
  return x.tape->record(std::move(out), {x.id},
                        [x, argmax](Tape<S>& t, int32_t self) {
                          if (auto* d = t.grad_sink(x.id)) {
                            const Tensor<S>& g = t.grad(self);
                            for (int64_t i = 0; i < g.size(); ++i)
                              (*d)[argmax[static_cast<size_t>(i)]] += g[i];
                          }
                        });
}

/// [N,C,H,W] -> [N,C] spatial mean; gradient spreads uniformly.
template <typename S>
Var<S> global_avg_pool(Var<S> x) {
  const Tensor<S>& xv = x.value();
  if (xv.rank() != 4)
    throw ShapeError("global_avg_pool: expected 4-d input, got " +
                     shape_str(xv.shape()));
  const int64_t nc = xv.extent(0) * xv.extent(1);
  const int64_t hw = xv.extent(2) * xv.extent(3);
  Tensor<S> out({xv.extent(0), xv.extent(1)});
  for (int64_t i = 0; i < nc; ++i) {
    const S* src = xv.data() + i * hw;
    S acc = 0;
    for (int64_t j = 0; j < hw; ++j) acc += src[j];
    out[i] = acc / static_cast<S>(hw);
  }
  return x.tape->record(std::move(out), {x.id},
                        [x, hw](Tape<S>& t, int32_t self) {
                          if (auto* d = t.grad_sink(x.id)) {
                            const Tensor<S>& g = t.grad(self);
                            const S inv = S(1) / static_cast<S>(hw);
                            for (int64_t i = 0; i < g.size(); ++i) {
                              S* dst = d->data() + i * hw;
                              const S gi = g[i] * inv;
                              for (int64_t j = 0; j < hw; ++j) dst[j] += gi;
                            }
                          }
                        });
}

namespace detail {

template <typename S>
Var<S> linear_impl(Var<S> x, Var<S> w, std::optional<Var<S>> b, bool w_transposed) {
  const Tensor<S>& xv = x.value();
  const Tensor<S>& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2)
    throw ShapeError("dense: expected 2-d input and weight, got " +
                     shape_str(xv.shape()) + " and " + shape_str(wv.shape()));
  const int64_t n = xv.extent(0), din = xv.extent(1);
  const int64_t wd = w_transposed ? wv.extent(1) : wv.extent(0);
  const int64_t e = w_transposed ? wv.extent(0) : wv.extent(1);
  if (wd != din)
    throw ShapeError("dense: inner extents differ, input " + shape_str(xv.shape()) +
                     " vs weight " + shape_str(wv.shape()));
  if (b && b->value().size() != e)
    throw ShapeError("dense: bias shape " + shape_str(b->value().shape()) +
                     " does not match output width " + std::to_string(e));
  Tensor<S> out({n, e});
  auto om = mat_view(out, n, e);
  if (w_transposed)
    om.noalias() = mat_view(xv, n, din) * mat_view(wv, e, din).transpose();
  else
    om.noalias() = mat_view(xv, n, din) * mat_view(wv, din, e);
  if (b) {
    const Tensor<S>& bv = b->value();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < e; ++j) out[i * e + j] += bv[j];
  }
  std::vector<int32_t> inputs{x.id, w.id};
  if (b) inputs.push_back(b->id);
  const int32_t bid = b ? b->id : -1;
  return x.tape->record(
      std::move(out), std::move(inputs),
      [x, w, bid, n, din, e, w_transposed](Tape<S>& t, int32_t self) {
        auto g = mat_view(t.grad(self), n, e);
        if (auto* dx = t.grad_sink(x.id)) {
          if (w_transposed)
            mat_view(*dx, n, din).noalias() += g * mat_view(t.value(w.id), e, din);
          else
            mat_view(*dx, n, din).noalias() +=
                g * mat_view(t.value(w.id), din, e).transpose();
        }
        if (auto* dw = t.grad_sink(w.id)) {
          if (w_transposed)
            mat_view(*dw, e, din).noalias() +=
                g.transpose() * mat_view(t.value(x.id), n, din);
          else
            mat_view(*dw, din, e).noalias() +=
                mat_view(t.value(x.id), n, din).transpose() * g;
        }
        if (bid >= 0) {
          if (auto* db = t.grad_sink(bid)) {
            const Tensor<S>& gv = t.grad(self);
            for (int64_t i = 0; i < n; ++i)
              for (int64_t j = 0; j < e; ++j) (*db)[j] += gv[i * e + j];
          }
        }
      });
}

}  // namespace detail

/// y = x * w + b with x [N,D], w [D,E], b [E].
template <typename S>
Var<S> dense(Var<S> x, Var<S> w, std::optional<Var<S>> b) {
  return detail::linear_impl(x, w, b, false);
}

/// y = x * w^T + b with w stored [E,D]; the layout used by the SE/SaE
/// squeeze and excitation weights.
template <typename S>
Var<S> dense_t(Var<S> x, Var<S> w, std::optional<Var<S>> b) {
  return detail::linear_impl(x, w, b, true);
}

/// Mean over the batch of -log softmax(logits)[label], stabilized by
/// max-subtraction. Gradient is (softmax - onehot) / N.
template <typename S>
Var<S> softmax_cross_entropy(Var<S> logits, const std::vector<int32_t>& labels) {
  const Tensor<S>& lv = logits.value();
  if (lv.rank() != 2)
    throw ShapeError("softmax_cross_entropy: expected 2-d logits, got " +
                     shape_str(lv.shape()));
  const int64_t n = lv.extent(0), k = lv.extent(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ContractError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(n) + " rows");
  Tensor<S> probs({n, k});
  S loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const int32_t y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k)
      throw ContractError("softmax_cross_entropy: label " + std::to_string(y) +
                          " out of range [0," + std::to_string(k) + ") at sample " +
                          std::to_string(i));
    const S* row = lv.data() + i * k;
    S mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    S denom = 0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const S log_denom = std::log(denom);
    for (int64_t j = 0; j < k; ++j)
      probs[i * k + j] = std::exp(row[j] - mx) / denom;
    loss += -(row[y] - mx - log_denom);
  }
  loss /= static_cast<S>(n);
  return logits.tape->record(
      Tensor<S>({1}, {loss}), {logits.id},
      [logits, labels, probs, n, k](Tape<S>& t, int32_t self) {
        if (auto* d = t.grad_sink(logits.id)) {
          const S g = t.grad(self)[0] / static_cast<S>(n);
          for (int64_t i = 0; i < n; ++i) {
            const int32_t y = labels[static_cast<size_t>(i)];
            for (int64_t j = 0; j < k; ++j)
              (*d)[i * k + j] += g * (probs[i * k + j] - (j == y ? S(1) : S(0)));
          }
        }
      });
}

}  // namespace saekit
