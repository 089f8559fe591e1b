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

#include "qf/tensor.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "qf/error.h"

namespace qf {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kCorruptContainer: return "CorruptContainer";
    case ErrorCode::kInvalidParams: return "InvalidParams";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kQOutOfRange: return "QOutOfRange";
    case ErrorCode::kNotObserved: return "NotObserved";
    case ErrorCode::kMissingTrace: return "MissingTrace";
    case ErrorCode::kAlreadyQuantized: return "AlreadyQuantized";
    case ErrorCode::kDivergedLoss: return "DivergedLoss";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
  }
  return "Unknown";
}

std::size_t ShapeNumel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string ShapeToString(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void ValidateShape(const Shape& shape) {
  if (shape.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "tensor rank must be at least 1");
  }
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw Error(ErrorCode::kShapeMismatch,
                  "zero extent in shape " + ShapeToString(shape));
    }
  }
}

void RequireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(op) + ": " + ShapeToString(a.shape()) + " vs " +
                    ShapeToString(b.shape()));
  }
}

template <typename F>
Tensor Map(const Tensor& a, F f, const char* where) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  out.CheckFinite(where);
  return out;
}

double Apply(ElementwiseOp op, double x, double y) {
  switch (op) {
    case ElementwiseOp::kAdd: return x + y;
    case ElementwiseOp::kSub: return x - y;
    case ElementwiseOp::kMul: return x * y;
  }
  return 0.0;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  ValidateShape(shape_);
  data_.assign(ShapeNumel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  ValidateShape(shape_);
  if (data_.size() != ShapeNumel(shape_)) {
    throw Error(ErrorCode::kShapeMismatch,
                "data length " + std::to_string(data_.size()) +
                    " does not match shape " + ShapeToString(shape_));
  }
}

Tensor Tensor::FromList(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::Reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void Tensor::CheckFinite(const char* where) const {
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFinite,
                  std::string("non-finite value produced by ") + where);
    }
  }
}

Tensor Elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  if (b.numel() == 1 && a.shape() != b.shape()) {
    return Elementwise(op, a, b[0]);
  }
  if (a.numel() == 1 && a.shape() != b.shape()) {
    double x = a[0];
    return Map(b, [&](double y) { return Apply(op, x, y); }, "elementwise");
  }
  RequireSameShape(a, b, "elementwise");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = Apply(op, a[i], b[i]);
  out.CheckFinite("elementwise");
  return out;
}

Tensor Elementwise(ElementwiseOp op, const Tensor& a, double b) {
  return Map(a, [&](double x) { return Apply(op, x, b); }, "elementwise");
}

Tensor Add(const Tensor& a, const Tensor& b) {
  return Elementwise(ElementwiseOp::kAdd, a, b);
}
Tensor Add(const Tensor& a, double b) {
  return Elementwise(ElementwiseOp::kAdd, a, b);
}
Tensor Sub(const Tensor& a, const Tensor& b) {
  return Elementwise(ElementwiseOp::kSub, a, b);
}
Tensor Mul(const Tensor& a, const Tensor& b) {
  return Elementwise(ElementwiseOp::kMul, a, b);
}
Tensor Mul(const Tensor& a, double b) {
  return Elementwise(ElementwiseOp::kMul, a, b);
}

Tensor Clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw Error(ErrorCode::kInvalidParams, "clamp: lo > hi");
  return Map(a, [&](double x) { return std::clamp(x, lo, hi); }, "clamp");
}

Tensor Abs(const Tensor& a) {
  return Map(a, [](double x) { return std::fabs(x); }, "abs");
}

Tensor LeakyRelu(const Tensor& a, double slope) {
  return Map(a, [&](double x) { return x > 0.0 ? x : slope * x; },
             "leaky_relu");
}

Tensor Matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error(ErrorCode::kShapeMismatch,
                "matmul: " + ShapeToString(a.shape()) + " x " +
                    ShapeToString(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
  out.CheckFinite("matmul");
  return out;
}

Tensor Transpose2d(const Tensor& a) {
  if (a.rank() != 2) {
    throw Error(ErrorCode::kShapeMismatch, "transpose needs a rank-2 tensor");
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

namespace {

struct ConvDims {
  std::size_t n, cin, h, w, cout, kh, kw, oh, ow;
};

ConvDims CheckConv(const Shape& input, const Shape& weight,
                   Conv2dGeometry geom) {
  if (input.size() != 4 || weight.size() != 4 || input[1] != weight[1]) {
    throw Error(ErrorCode::kShapeMismatch,
                "conv2d: input " + ShapeToString(input) + " weight " +
                    ShapeToString(weight));
  }
  if (geom.stride == 0) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d: stride must be positive");
  }
  ConvDims d{input[0], input[1], input[2], input[3], weight[0],
             weight[2], weight[3], 0, 0};
  if (d.kh > d.h + 2 * geom.padding || d.kw > d.w + 2 * geom.padding) {
    throw Error(ErrorCode::kShapeMismatch,
                "conv2d: kernel larger than padded input");
  }
  d.oh = (d.h + 2 * geom.padding - d.kh) / geom.stride + 1;
  d.ow = (d.w + 2 * geom.padding - d.kw) / geom.stride + 1;
  return d;
}

}  // namespace

Tensor Conv2d(const Tensor& input, const Tensor& weight, Conv2dGeometry geom) {
  const ConvDims d = CheckConv(input.shape(), weight.shape(), geom);
  Tensor out({d.n, d.cout, d.oh, d.ow});
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      for (std::size_t oy = 0; oy < d.oh; ++oy) {
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * geom.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * geom.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                acc += input[((n * d.cin + ci) * d.h + iy) * d.w + ix] *
                       weight[((co * d.cin + ci) * d.kh + ky) * d.kw + kx];
              }
            }
          }
          out[((n * d.cout + co) * d.oh + oy) * d.ow + ox] = acc;
        }
      }
    }
  }
  out.CheckFinite("conv2d");
  return out;
}

Tensor Conv2dBackwardInput(const Tensor& grad_out, const Tensor& weight,
                           const Shape& input_shape, Conv2dGeometry geom) {
  const ConvDims d = CheckConv(input_shape, weight.shape(), geom);
  if (grad_out.shape() != Shape{d.n, d.cout, d.oh, d.ow}) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d backward: grad shape");
  }
  Tensor grad_in(input_shape);
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      for (std::size_t oy = 0; oy < d.oh; ++oy) {
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          const double g = grad_out[((n * d.cout + co) * d.oh + oy) * d.ow + ox];
          if (g == 0.0) continue;
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * geom.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * geom.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                grad_in[((n * d.cin + ci) * d.h + iy) * d.w + ix] +=
                    g * weight[((co * d.cin + ci) * d.kh + ky) * d.kw + kx];
              }
            }
          }
        }
      }
    }
  }
  return grad_in;
}

Tensor Conv2dBackwardWeight(const Tensor& grad_out, const Tensor& input,
                            const Shape& weight_shape, Conv2dGeometry geom) {
  const ConvDims d = CheckConv(input.shape(), weight_shape, geom);
  if (grad_out.shape() != Shape{d.n, d.cout, d.oh, d.ow}) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d backward: grad shape");
  }
  Tensor grad_w(weight_shape);
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  for (std::size_t co = 0; co < d.cout; ++co) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      for (std::size_t ky = 0; ky < d.kh; ++ky) {
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          double acc = 0.0;
          for (std::size_t n = 0; n < d.n; ++n) {
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * geom.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t ox = 0; ox < d.ow; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * geom.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                acc += grad_out[((n * d.cout + co) * d.oh + oy) * d.ow + ox] *
                       input[((n * d.cin + ci) * d.h + iy) * d.w + ix];
              }
            }
          }
          grad_w[((co * d.cin + ci) * d.kh + ky) * d.kw + kx] = acc;
        }
      }
    }
  }
  return grad_w;
}

Tensor TakeRows(const Tensor& a, std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error(ErrorCode::kShapeMismatch, "no rows taken");
  const std::size_t stride = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.dim(0)) {
      throw Error(ErrorCode::kShapeMismatch, "row index out of range");
    }
    std::copy_n(a.data().begin() + rows[r] * stride, stride,
                out.data().begin() + r * stride);
  }
  return out;
}

Tensor ConcatRows(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "nothing to concat");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> data;
  for (const Tensor& t : parts) {
    if (Shape(t.shape().begin() + 1, t.shape().end()) != tail) {
      throw Error(ErrorCode::kShapeMismatch,
                  "concat: " + ShapeToString(t.shape()) + " vs " +
                      ShapeToString(parts[0].shape()));
    }
    rows += t.dim(0);
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  Shape shape = parts[0].shape();
  shape[0] = rows;
  return Tensor(shape, std::move(data));
}

Tensor Row(const Tensor& a, std::size_t row) {
  const std::size_t idx[] = {row};
  return TakeRows(a, idx);
}

double SumSquares(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return acc;
}

double MeanSquaredError(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double MaxAbsDiff(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "max_abs");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace qf
