// Copyright 2026 The qfake Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef QF_TENSOR_H_
#define QF_TENSOR_H_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qf {

using Shape = std::vector<std::size_t>;

std::size_t ShapeNumel(const Shape& shape);
std::string ShapeToString(const Shape& shape);

// Dense row-major tensor of doubles. The element count always equals the
// product of the extents; every extent is positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor Scalar(double value) { return Tensor({1}, {value}); }
  static Tensor FromList(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape with equal element count.
  Tensor Reshaped(Shape shape) const;

  // Throws NonFinite if any element is NaN or infinite.
  void CheckFinite(const char* where) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class ElementwiseOp { kAdd, kSub, kMul };

// Identical-shape or tensor-vs-scalar broadcasting only.
Tensor Elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor Elementwise(ElementwiseOp op, const Tensor& a, double b);

Tensor Add(const Tensor& a, const Tensor& b);
Tensor Add(const Tensor& a, double b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, double b);
Tensor Clamp(const Tensor& a, double lo, double hi);
Tensor Abs(const Tensor& a);
Tensor LeakyRelu(const Tensor& a, double slope);

// [m,k] x [k,n]; the k-sum runs in ascending index order.
Tensor Matmul(const Tensor& a, const Tensor& b);
Tensor Transpose2d(const Tensor& a);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation (no kernel flip) with zero padding.
// input [N,Cin,H,W], weight [Cout,Cin,kh,kw] -> [N,Cout,H',W'].
Tensor Conv2d(const Tensor& input, const Tensor& weight, Conv2dGeometry geom);
// Gradient of Conv2d with respect to its input, given the upstream gradient.
Tensor Conv2dBackwardInput(const Tensor& grad_out, const Tensor& weight,
                           const Shape& input_shape, Conv2dGeometry geom);
// Gradient of Conv2d with respect to its weight.
Tensor Conv2dBackwardWeight(const Tensor& grad_out, const Tensor& input,
                            const Shape& weight_shape, Conv2dGeometry geom);

// Rows along axis 0.
Tensor TakeRows(const Tensor& a, std::span<const std::size_t> rows);
Tensor ConcatRows(std::span<const Tensor> parts);
Tensor Row(const Tensor& a, std::size_t row);

double SumSquares(const Tensor& a);
double MeanSquaredError(const Tensor& a, const Tensor& b);
double MaxAbsDiff(const Tensor& a, const Tensor& b);

}  // namespace qf

#endif  // QF_TENSOR_H_
