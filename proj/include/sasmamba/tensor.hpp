// Copyright 2026 The SasMamba Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sasmamba/error.hpp"

namespace sasmamba {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         std::multiplies<>());
}

std::string ShapeString(const Shape& shape);

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major tensor. The last axis is the channel axis; `matrix()` views
/// the data as (size / last) x last so that per-token maps are plain GEMMs.
template <typename Scalar>
class Tensor {
 public:
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    Validate();
    data_ = Vector<Scalar>::Zero(NumElements(shape_));
  }

  Tensor(Shape shape, Vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    Validate();
    if (data_.size() != NumElements(shape_)) {
      Fail(ErrorKind::kDimension,
           "data length " + std::to_string(data_.size()) +
               " does not match shape " + ShapeString(shape_));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape),
               Eigen::Map<const Vector<Scalar>>(values.begin(),
                                                static_cast<Index>(values.size()))) {}

  static Tensor Zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor Constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  bool empty() const { return shape_.empty(); }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const {
    return shape_.at(static_cast<std::size_t>(axis < 0 ? rank() + axis : axis));
  }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Vector<Scalar>& vec() { return data_; }
  const Vector<Scalar>& vec() const { return data_; }
  std::span<Scalar> span() { return {data_.data(), static_cast<std::size_t>(size())}; }
  std::span<const Scalar> span() const {
    return {data_.data(), static_cast<std::size_t>(size())};
  }

  Index cols() const { return shape_.empty() ? 0 : shape_.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }
  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(data_.data(), rows(), cols());
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename... Ix>
  Scalar& at(Ix... ix) {
    return data_[Offset({static_cast<Index>(ix)...})];
  }
  template <typename... Ix>
  Scalar at(Ix... ix) const {
    return data_[Offset({static_cast<Index>(ix)...})];
  }

  /// Same data, new shape of equal element count.
  Tensor Reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename Other>
  Tensor<Other> Cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool AllFinite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void Validate() const {
    for (Index d : shape_) {
      if (d <= 0) {
        Fail(ErrorKind::kDimension,
             "tensor dimensions must be positive, got " + ShapeString(shape_));
      }
    }
  }

  Index Offset(std::initializer_list<Index> ix) const {
    Index offset = 0;
    std::size_t axis = 0;
    for (Index i : ix) offset = offset * shape_[axis++] + i;
    return offset;
  }

  Shape shape_;
  Vector<Scalar> data_;
};

inline std::string ShapeString(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Checked mode rejects non-finite values at operation boundaries. It is on by
/// default and scoped per thread.
bool CheckedMode();
void SetCheckedMode(bool enabled);

class CheckedModeScope {
 public:
  explicit CheckedModeScope(bool enabled) : previous_(CheckedMode()) {
    SetCheckedMode(enabled);
  }
  ~CheckedModeScope() { SetCheckedMode(previous_); }
  CheckedModeScope(const CheckedModeScope&) = delete;
  CheckedModeScope& operator=(const CheckedModeScope&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
void CheckFinite(const Tensor<Scalar>& t, std::string_view where) {
  if (CheckedMode() && !t.AllFinite()) {
    Fail(ErrorKind::kValue, "non-finite value in " + std::string(where));
  }
}

inline void CheckShape(bool ok, std::string_view op, const Shape& a,
                       const Shape& b) {
  if (!ok) {
    Fail(ErrorKind::kDimension, std::string(op) + ": incompatible shapes " +
                                    ShapeString(a) + " and " + ShapeString(b));
  }
}

}  // namespace sasmamba
