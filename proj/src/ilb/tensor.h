// ilb/tensor.h

// Copyright 2026  The ilb-asr authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef ILB_TENSOR_H_
#define ILB_TENSOR_H_

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ilb/common.h"
#include "ilb/rng.h"

namespace ilb {

using Dim = int64_t;
using Shape = std::vector<Dim>;

std::string ShapeStr(const Shape& s);
Dim ShapeNumel(const Shape& s);

class Tape;

namespace internal {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const Tape* tape = nullptr;  // tape that recorded the producing op
};
}  // namespace internal

// Dense row-major double tensor. Values are immutable once an op has consumed
// the tensor; gradients accumulate additively during Tape::Backward. Mutable
// access to the payload (raw()) is reserved for leaf construction and
// optimizer updates between tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Full(Shape shape, double value, bool requires_grad = false);
  static Tensor Scalar(double value, bool requires_grad = false);
  static Tensor FromData(Shape shape, std::vector<double> data,
                         bool requires_grad = false);
  // i.i.d. U(-scale, scale) from the given generator.
  static Tensor Uniform(Shape shape, double scale, Rng* rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Dim dim(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }
  Dim numel() const { return static_cast<Dim>(node_->data.size()); }

  std::span<const double> data() const { return node_->data; }
  // Mutable payload; only valid outside any recorded computation.
  double* raw() { return node_->data.data(); }

  // Gradient accumulated by the last Backward; zeros if the tensor was never
  // reached (materialized lazily on access).
  std::span<const double> grad() const;
  void ZeroGrad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  double item() const;
  double at(std::initializer_list<Dim> index) const;

  const std::shared_ptr<internal::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<internal::TensorNode> node)
      : node_(std::move(node)) {}
  friend class Tape;
  friend Tensor MakeTensor(Shape, std::vector<double>, bool);
  std::shared_ptr<internal::TensorNode> node_;
};

// Ordered record of executed differentiable ops. Backward replays the record
// in exact reverse execution order, which makes gradient accumulation
// deterministic. One tape is single-threaded; independent tapes may run on
// different threads as long as they share only frozen parameters.
class Tape {
 public:
  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Populates grads of every requires_grad tensor reachable from loss.
  void Backward(const Tensor& loss);

  size_t num_ops() const { return ops_.size(); }
  void Clear() { ops_.clear(); }

  static Tape* Current();

 private:
  friend struct TapeScope;
  friend struct NoGradScope;
  friend void RecordOp(std::function<void()> backward, const Tensor& out);
  friend void RecordMultiOutputOp(std::function<void()> backward,
                                  std::span<const Tensor> outs);
  std::vector<std::function<void()>> ops_;
};

// Installs a tape as the current recording target for this thread.
struct TapeScope {
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  Tape* prev;
};

// Suspends recording (forward evaluation only).
struct NoGradScope {
  NoGradScope();
  ~NoGradScope();
  Tape* prev;
};

// Registers a backward closure on the current tape. No-op when no tape is
// active or no output requires grad. Ops with hand-derived gradients (e.g.
// the CTC loss) call these directly.
void RecordOp(std::function<void()> backward, const Tensor& out);
void RecordMultiOutputOp(std::function<void()> backward,
                         std::span<const Tensor> outs);

// ---------------------------------------------------------------------------
// Forward ops. All throw ShapeError on non-conforming shapes (message carries
// both shapes) and NumericError if an op yields NaN/Inf from finite inputs.
// Softmax-family ops act over the last axis. Broadcasting is limited to
// trailing-shape expansion: the smaller operand's shape must equal a suffix
// of the larger one's.
// ---------------------------------------------------------------------------

Tensor MatMul(const Tensor& a, const Tensor& b);  // 2-D, or 3-D batched
Tensor Add(const Tensor& a, const Tensor& b);     // b may be a suffix shape
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);     // elementwise, same shape
Tensor Scale(const Tensor& a, double s);
Tensor ConcatLastDim(std::span<const Tensor> parts);
Tensor ConcatLastDim(const Tensor& a, const Tensor& b);
std::vector<Tensor> SplitLastDim(const Tensor& x, std::span<const Dim> sizes);
Tensor EmbeddingLookup(const Tensor& table, std::span<const int> ids);
Tensor Softmax(const Tensor& x);
Tensor LogSoftmax(const Tensor& x);
Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-5);
Tensor Swish(const Tensor& x);
Tensor Gelu(const Tensor& x);
Tensor Sigmoid(const Tensor& x);
// x: [T, C], weight: [K, C], K odd, zero-padded 'same' convolution per channel.
Tensor DepthwiseConv1d(const Tensor& x, const Tensor& weight);
// mask entries are 0 or 1/keep_prob, supplied by the caller's seeded RNG.
Tensor Dropout(const Tensor& x, const Tensor& mask);
Tensor Transpose(const Tensor& x, std::span<const int> perm);
Tensor Transpose(const Tensor& x);  // 2-D convenience
// mask: 1 byte per element (suffix broadcast allowed); 1 selects `value`.
Tensor MaskedFill(const Tensor& x, const std::vector<uint8_t>& mask,
                  double value);
Tensor Reshape(const Tensor& x, Shape shape);
Tensor Sum(const Tensor& x);  // -> scalar
// Gathers sliding windows over axis 0: [T, C] -> [T', kernel*C] with zero
// padding `pad` on both ends, T' = (T + 2*pad - kernel)/stride + 1.
Tensor UnfoldTime(const Tensor& x, Dim kernel, Dim stride, Dim pad);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued f at x. h must lie in [1e-7, 1e-3].
double FiniteDiffCheck(const std::function<Tensor(const Tensor&)>& f,
                       const Tensor& x, double h);

}  // namespace ilb

#endif  // ILB_TENSOR_H_
