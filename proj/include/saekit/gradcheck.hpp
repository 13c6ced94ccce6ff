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

#include <functional>

#include "saekit/tape.hpp"

namespace saekit {

/// A scalar-valued differentiable function of one tensor: builds its result
/// on the given tape from a leaf holding x.
using GradCheckFn =
    std::function<Var<double>(Tape<double>&, Var<double>)>;

/// Relative error between the tape gradient of f at x and central
/// differences: max over elements of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
/// Double precision only; eps defaults to 1e-5.
inline double grad_check(const GradCheckFn& f, const TensorD& x,
                         double eps = 1e-5) {
  if (eps <= 0) throw ContractError("grad_check: eps must be > 0");

  auto eval = [&](const TensorD& point) {
    Tape<double> tape;
    Var<double> v = tape.leaf(point, /*requires_grad=*/false);
    Var<double> y = f(tape, v);
    if (y.value().size() != 1)
      throw ContractError("grad_check: f must be scalar-valued, got " +
                          shape_str(y.value().shape()));
    return y.value()[0];
  };

  TensorD analytic(x.shape());
  {
    Tape<double> tape;
    Var<double> v = tape.leaf(x, /*requires_grad=*/true);
    Var<double> y = f(tape, v);
    if (y.value().size() != 1)
      throw ContractError("grad_check: f must be scalar-valued, got " +
                          shape_str(y.value().shape()));
    tape.backward(y);
    if (tape.has_grad(v)) analytic = tape.grad(v);
  }

  double worst = 0;
  TensorD probe = x;
  for (int64_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2 * eps);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace saekit
