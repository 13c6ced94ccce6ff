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

#include <Eigen/Core>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "saekit/common.hpp"

namespace saekit {

/// Dense N-dimensional array, row-major, templated on the scalar type.
/// Single precision is the training type; double is used for gradient
/// checking. All extents must be >= 1.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<size_t>(numel(shape_)), Scalar(0));
  }

  Tensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (numel(shape_) != static_cast<int64_t>(data_.size()))
      throw ShapeError("tensor " + shape_str(shape_) + " expects " +
                       std::to_string(numel(shape_)) + " values, got " +
                       std::to_string(data_.size()));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    return Tensor(std::move(shape), std::vector<Scalar>(values));
  }

  static Tensor randn(Shape shape, Rng& rng, Scalar stddev = Scalar(1)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<Scalar>(rng.normal()) * stddev;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t extent(int64_t d) const { return shape_[static_cast<size_t>(d)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  Scalar operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Row-major offset of a full multi-index.
  int64_t offset(std::span<const int64_t> idx) const {
    int64_t off = 0;
    for (size_t d = 0; d < shape_.size(); ++d) off = off * shape_[d] + idx[d];
    return off;
  }

  Scalar& at(std::initializer_list<int64_t> idx) {
    return data_[static_cast<size_t>(offset({idx.begin(), idx.size()}))];
  }
  Scalar at(std::initializer_list<int64_t> idx) const {
    return data_[static_cast<size_t>(offset({idx.begin(), idx.size()}))];
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (int64_t i = 0; i < size(); ++i)
      out[i] = static_cast<T>(data_[static_cast<size_t>(i)]);
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  void validate_shape() const {
    if (shape_.empty())
      throw ShapeError("tensor rank must be >= 1");
    for (int64_t e : shape_)
      if (e < 1)
        throw ShapeError("tensor extents must be >= 1, got " +
                         shape_str(shape_));
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Views a tensor's flat storage as a rows x cols row-major Eigen matrix.
template <typename Scalar>
Eigen::Map<MatX<Scalar>> mat_view(Tensor<Scalar>& t, int64_t rows, int64_t cols) {
  return {t.data(), rows, cols};
}

template <typename Scalar>
Eigen::Map<const MatX<Scalar>> mat_view(const Tensor<Scalar>& t, int64_t rows,
                                        int64_t cols) {
  return {t.data(), rows, cols};
}

template <typename Scalar>
Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> arr_view(Tensor<Scalar>& t) {
  return {t.data(), t.size()};
}

template <typename Scalar>
Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> arr_view(
    const Tensor<Scalar>& t) {
  return {t.data(), t.size()};
}

}  // namespace saekit
