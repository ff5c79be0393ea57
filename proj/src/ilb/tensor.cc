// ilb/tensor.cc

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

#include "ilb/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ilb {

namespace {

thread_local Tape* g_current_tape = nullptr;

using internal::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

void CheckFinite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(StrCat("non-finite output in op '", op, "'"));
    }
  }
}

[[noreturn]] void ThrowShape(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(StrCat("op '", op, "': shapes ", ShapeStr(a), " and ",
                          ShapeStr(b), " do not conform"));
}

[[noreturn]] void ThrowShape(const char* op, const Shape& a,
                             const std::string& detail) {
  throw ShapeError(StrCat("op '", op, "': shape ", ShapeStr(a), ": ", detail));
}

std::vector<double>& EnsureGrad(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
  return n->grad;
}

bool HasGrad(const NodePtr& n) { return !n->grad.empty(); }

}  // namespace

std::string ShapeStr(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Dim ShapeNumel(const Shape& s) {
  Dim n = 1;
  for (Dim d : s) n *= d;
  return n;
}

namespace {

NodePtr NewNode(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

}  // namespace

Tensor MakeTensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (Dim d : shape) {
    if (d <= 0) {
      throw ShapeError(
          StrCat("dimension sizes must be positive, got ", ShapeStr(shape)));
    }
  }
  if (ShapeNumel(shape) != static_cast<Dim>(data.size())) {
    throw ShapeError(StrCat("shape ", ShapeStr(shape), " implies ",
                            ShapeNumel(shape), " values, got ", data.size()));
  }
  return Tensor(NewNode(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::Zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(static_cast<size_t>(ShapeNumel(shape)), 0.0);
  return MakeTensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::Full(Shape shape, double value, bool requires_grad) {
  std::vector<double> d(static_cast<size_t>(ShapeNumel(shape)), value);
  return MakeTensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::Scalar(double value, bool requires_grad) {
  return MakeTensor({1}, {value}, requires_grad);
}

Tensor Tensor::FromData(Shape shape, std::vector<double> data,
                        bool requires_grad) {
  return MakeTensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::Uniform(Shape shape, double scale, Rng* rng,
                       bool requires_grad) {
  std::vector<double> d(static_cast<size_t>(ShapeNumel(shape)));
  for (double& v : d) v = rng->Uniform(-scale, scale);
  return MakeTensor(std::move(shape), std::move(d), requires_grad);
}

std::span<const double> Tensor::grad() const {
  EnsureGrad(node_);
  return node_->grad;
}

void Tensor::ZeroGrad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw UsageError(StrCat("item() on non-scalar tensor ", ShapeStr(shape())));
  }
  return node_->data[0];
}

double Tensor::at(std::initializer_list<Dim> index) const {
  const Shape& s = node_->shape;
  if (index.size() != s.size()) {
    throw UsageError(StrCat("at(): rank mismatch for ", ShapeStr(s)));
  }
  Dim flat = 0;
  size_t i = 0;
  for (Dim v : index) {
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->data[static_cast<size_t>(flat)];
}

// --------------------------------------------------------------------------
// Tape
// --------------------------------------------------------------------------

Tape* Tape::Current() { return g_current_tape; }

Tape::~Tape() = default;

TapeScope::TapeScope(Tape& tape) : prev(g_current_tape) {
  g_current_tape = &tape;
}
TapeScope::~TapeScope() { g_current_tape = prev; }

NoGradScope::NoGradScope() : prev(g_current_tape) { g_current_tape = nullptr; }
NoGradScope::~NoGradScope() { g_current_tape = prev; }

void RecordOp(std::function<void()> backward, const Tensor& out) {
  Tape* t = g_current_tape;
  if (t == nullptr || !out.requires_grad()) return;
  out.node()->tape = t;
  t->ops_.push_back(std::move(backward));
}

void RecordMultiOutputOp(std::function<void()> backward,
                         std::span<const Tensor> outs) {
  Tape* t = g_current_tape;
  if (t == nullptr) return;
  bool any = false;
  for (const Tensor& o : outs) any = any || o.requires_grad();
  if (!any) return;
  for (const Tensor& o : outs) o.node()->tape = t;
  t->ops_.push_back(std::move(backward));
}

void Tape::Backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("Backward requires a scalar loss");
  }
  if (loss.node()->tape != this) {
    throw UsageError(
        "Backward on a tensor that was not produced on this tape "
        "(tape-detached)");
  }
  EnsureGrad(loss.node())[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// --------------------------------------------------------------------------
// Op helpers
// --------------------------------------------------------------------------

namespace {

bool AnyRequiresGrad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor OutputLike(Shape shape, std::vector<double> data,
                  std::initializer_list<const Tensor*> inputs) {
  return MakeTensor(std::move(shape), std::move(data),
                    AnyRequiresGrad(inputs));
}

// Suffix broadcast: b's shape must equal the trailing part of a's shape.
bool SuffixCompatible(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  for (size_t i = 0; i < b.size(); ++i) {
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  }
  return true;
}

}  // namespace

// --------------------------------------------------------------------------
// MatMul
// --------------------------------------------------------------------------

namespace {

// c[m x n] += a[m x k] * b[k x n], optionally with a or b transposed.
void GemmAcc(const double* a, const double* b, double* c, Dim m, Dim k, Dim n,
             bool trans_a, bool trans_b) {
  for (Dim i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (Dim p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = trans_b ? nullptr : b + p * n;
      if (trans_b) {
        for (Dim j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        for (Dim j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

Tensor MatMul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (!((sa.size() == 2 && sb.size() == 2) ||
        (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0]))) {
    ThrowShape("matmul", sa, sb);
  }
  const bool batched = sa.size() == 3;
  const Dim batch = batched ? sa[0] : 1;
  const Dim m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const Dim kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (k != kb) ThrowShape("matmul", sa, sb);

  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(static_cast<size_t>(batch * m * n), 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (Dim bi = 0; bi < batch; ++bi) {
    GemmAcc(pa + bi * m * k, pb + bi * k * n, out.data() + bi * m * n, m, k, n,
            false, false);
  }
  CheckFinite("matmul", out);
  Tensor c = OutputLike(std::move(out_shape), std::move(out), {&a, &b});

  auto an = a.node(), bn = b.node(), cn = c.node();
  RecordOp(
      [an, bn, cn, batch, m, k, n]() {
        if (!HasGrad(cn)) return;
        const double* g = cn->grad.data();
        if (an->requires_grad) {
          double* da = EnsureGrad(an).data();
          // dA = G * B^T
          for (Dim bi = 0; bi < batch; ++bi) {
            GemmAcc(g + bi * m * n, bn->data.data() + bi * k * n,
                    da + bi * m * k, m, n, k, false, true);
          }
        }
        if (bn->requires_grad) {
          double* db = EnsureGrad(bn).data();
          // dB = A^T * G
          for (Dim bi = 0; bi < batch; ++bi) {
            GemmAcc(an->data.data() + bi * m * k, g + bi * m * n,
                    db + bi * k * n, k, m, n, true, false);
          }
        }
      },
      c);
  return c;
}

// --------------------------------------------------------------------------
// Elementwise & broadcasted arithmetic
// --------------------------------------------------------------------------

namespace {

Tensor AddLike(const char* opname, const Tensor& a, const Tensor& b,
               double bsign) {
  if (!SuffixCompatible(a.shape(), b.shape())) {
    ThrowShape(opname, a.shape(), b.shape());
  }
  const size_t na = a.data().size(), nb = b.data().size();
  std::vector<double> out(a.data().begin(), a.data().end());
  const double* pb = b.data().data();
  for (size_t i = 0; i < na; ++i) out[i] += bsign * pb[i % nb];
  CheckFinite(opname, out);
  Tensor c = OutputLike(a.shape(), std::move(out), {&a, &b});
  auto an = a.node(), bn = b.node(), cn = c.node();
  RecordOp(
      [an, bn, cn, na, nb, bsign]() {
        if (!HasGrad(cn)) return;
        const double* g = cn->grad.data();
        if (an->requires_grad) {
          double* da = EnsureGrad(an).data();
          for (size_t i = 0; i < na; ++i) da[i] += g[i];
        }
        if (bn->requires_grad) {
          double* db = EnsureGrad(bn).data();
          for (size_t i = 0; i < na; ++i) db[i % nb] += bsign * g[i];
        }
      },
      c);
  return c;
}

}  // namespace

Tensor Add(const Tensor& a, const Tensor& b) { return AddLike("add", a, b, 1.0); }

Tensor Sub(const Tensor& a, const Tensor& b) { return AddLike("sub", a, b, -1.0); }

Tensor Mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) ThrowShape("mul", a.shape(), b.shape());
  const size_t n = a.data().size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
  CheckFinite("mul", out);
  Tensor c = OutputLike(a.shape(), std::move(out), {&a, &b});
  auto an = a.node(), bn = b.node(), cn = c.node();
  RecordOp(
      [an, bn, cn, n]() {
        if (!HasGrad(cn)) return;
        const double* g = cn->grad.data();
        if (an->requires_grad) {
          double* da = EnsureGrad(an).data();
          for (size_t i = 0; i < n; ++i) da[i] += g[i] * bn->data[i];
        }
        if (bn->requires_grad) {
          double* db = EnsureGrad(bn).data();
          for (size_t i = 0; i < n; ++i) db[i] += g[i] * an->data[i];
        }
      },
      c);
  return c;
}

Tensor Scale(const Tensor& a, double s) {
  const size_t n = a.data().size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = s * pa[i];
  CheckFinite("scale", out);
  Tensor c = OutputLike(a.shape(), std::move(out), {&a});
  auto an = a.node(), cn = c.node();
  RecordOp(
      [an, cn, n, s]() {
        if (!HasGrad(cn) || !an->requires_grad) return;
        double* da = EnsureGrad(an).data();
        const double* g = cn->grad.data();
        for (size_t i = 0; i < n; ++i) da[i] += s * g[i];
      },
      c);
  return c;
}

// --------------------------------------------------------------------------
// Concat / split
// --------------------------------------------------------------------------

Tensor ConcatLastDim(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("concat_last_dim: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  Dim total_last = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) ThrowShape("concat_last_dim", parts[0].shape(), p.shape());
    total_last += p.shape().back();
    rg = rg || p.requires_grad();
  }
  const Dim rows = ShapeNumel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total_last);
  std::vector<double> out(static_cast<size_t>(rows * total_last));
  Dim offset = 0;
  for (const Tensor& p : parts) {
    const Dim w = p.shape().back();
    const double* pp = p.data().data();
    for (Dim r = 0; r < rows; ++r) {
      std::copy(pp + r * w, pp + (r + 1) * w,
                out.begin() + r * total_last + offset);
    }
    offset += w;
  }
  Tensor c = MakeTensor(std::move(out_shape), std::move(out), rg);

  std::vector<NodePtr> in_nodes;
  in_nodes.reserve(parts.size());
  for (const Tensor& p : parts) in_nodes.push_back(p.node());
  auto cn = c.node();
  RecordOp(
      [in_nodes, cn, rows, total_last]() {
        if (!HasGrad(cn)) return;
        const double* g = cn->grad.data();
        Dim offset = 0;
        for (const NodePtr& in : in_nodes) {
          const Dim w = in->shape.back();
          if (in->requires_grad) {
            double* di = EnsureGrad(in).data();
            for (Dim r = 0; r < rows; ++r) {
              const double* gr = g + r * total_last + offset;
              double* dr = di + r * w;
              for (Dim j = 0; j < w; ++j) dr[j] += gr[j];
            }
          }
          offset += w;
        }
      },
      c);
  return c;
}

Tensor ConcatLastDim(const Tensor& a, const Tensor& b) {
  Tensor parts[] = {a, b};
  return ConcatLastDim(std::span<const Tensor>(parts, 2));
}

std::vector<Tensor> SplitLastDim(const Tensor& x, std::span<const Dim> sizes) {
  Dim total = 0;
  for (Dim s : sizes) total += s;
  if (x.shape().empty() || total != x.shape().back()) {
    ThrowShape("split", x.shape(),
               StrCat("split sizes sum to ", total));
  }
  Shape lead(x.shape().begin(), x.shape().end() - 1);
  const Dim rows = ShapeNumel(lead);
  const Dim width = x.shape().back();
  const double* px = x.data().data();

  std::vector<Tensor> outs;
  Dim offset = 0;
  for (Dim s : sizes) {
    Shape os = lead;
    os.push_back(s);
    std::vector<double> d(static_cast<size_t>(rows * s));
    for (Dim r = 0; r < rows; ++r) {
      std::copy(px + r * width + offset, px + r * width + offset + s,
                d.begin() + r * s);
    }
    outs.push_back(MakeTensor(std::move(os), std::move(d), x.requires_grad()));
    offset += s;
  }

  auto xn = x.node();
  std::vector<NodePtr> out_nodes;
  for (const Tensor& o : outs) out_nodes.push_back(o.node());
  RecordMultiOutputOp(
      [xn, out_nodes, rows, width]() {
        if (!xn->requires_grad) return;
        bool any = false;
        for (const NodePtr& o : out_nodes) any = any || HasGrad(o);
        if (!any) return;
        double* dx = EnsureGrad(xn).data();
        Dim offset = 0;
        for (const NodePtr& o : out_nodes) {
          const Dim s = o->shape.back();
          if (HasGrad(o)) {
            const double* g = o->grad.data();
            for (Dim r = 0; r < rows; ++r) {
              double* dr = dx + r * width + offset;
              const double* gr = g + r * s;
              for (Dim j = 0; j < s; ++j) dr[j] += gr[j];
            }
          }
          offset += s;
        }
      },
      outs);
  return outs;
}

// --------------------------------------------------------------------------
// Embedding
// --------------------------------------------------------------------------

Tensor EmbeddingLookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    ThrowShape("embedding_lookup", table.shape(), "expected rank-2 table");
  }
  const Dim v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw UsageError(StrCat("embedding_lookup: id ", id,
                              " out of range [0, ", v, ")"));
    }
  }
  const Dim n = static_cast<Dim>(ids.size());
  std::vector<double> out(static_cast<size_t>(n * d));
  const double* pt = table.data().data();
  for (Dim i = 0; i < n; ++i) {
    std::copy(pt + ids[i] * d, pt + (ids[i] + 1) * d, out.begin() + i * d);
  }
  Tensor c = OutputLike({n, d}, std::move(out), {&table});
  auto tn = table.node(), cn = c.node();
  std::vector<int> ids_copy(ids.begin(), ids.end());
  RecordOp(
      [tn, cn, ids_copy, d]() {
        if (!HasGrad(cn) || !tn->requires_grad) return;
        double* dt = EnsureGrad(tn).data();
        const double* g = cn->grad.data();
        for (size_t i = 0; i < ids_copy.size(); ++i) {
          double* row = dt + static_cast<Dim>(ids_copy[i]) * d;
          const double* gr = g + static_cast<Dim>(i) * d;
          for (Dim j = 0; j < d; ++j) row[j] += gr[j];
        }
      },
      c);
  return c;
}

// --------------------------------------------------------------------------
// Softmax family
// --------------------------------------------------------------------------

namespace {

struct RowView {
  Dim rows, cols;
};

RowView LastAxisRows(const Tensor& x, const char* op) {
  if (x.rank() < 1) ThrowShape(op, x.shape(), "expected rank >= 1");
  Dim cols = x.shape().back();
  return {x.numel() / cols, cols};
}

}  // namespace

Tensor Softmax(const Tensor& x) {
  RowView rv = LastAxisRows(x, "softmax");
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  for (Dim r = 0; r < rv.rows; ++r) {
    const double* xr = px + r * rv.cols;
    double* yr = out.data() + r * rv.cols;
    double mx = xr[0];
    for (Dim j = 1; j < rv.cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (Dim j = 0; j < rv.cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (Dim j = 0; j < rv.cols; ++j) yr[j] /= sum;
  }
  CheckFinite("softmax", out);
  Tensor c = OutputLike(x.shape(), std::move(out), {&x});
  auto xn = x.node(), cn = c.node();
  RecordOp(
      [xn, cn, rv]() {
        if (!HasGrad(cn) || !xn->requires_grad) return;
        double* dx = EnsureGrad(xn).data();
        const double* g = cn->grad.data();
        const double* y = cn->data.data();
        for (Dim r = 0; r < rv.rows; ++r) {
          const double* gr = g + r * rv.cols;
          const double* yr = y + r * rv.cols;
          double dot = 0.0;
          for (Dim j = 0; j < rv.cols; ++j) dot += gr[j] * yr[j];
          double* dr = dx + r * rv.cols;
          for (Dim j = 0; j < rv.cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
      },
      c);
  return c;
}

Tensor LogSoftmax(const Tensor& x) {
  RowView rv = LastAxisRows(x, "log_softmax");
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  for (Dim r = 0; r < rv.rows; ++r) {
    const double* xr = px + r * rv.cols;
    double* yr = out.data() + r * rv.cols;
    double mx = xr[0];
    for (Dim j = 1; j < rv.cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (Dim j = 0; j < rv.cols; ++j) sum += std::exp(xr[j] - mx);
    const double lse = mx + std::log(sum);
    for (Dim j = 0; j < rv.cols; ++j) yr[j] = xr[j] - lse;
  }
  CheckFinite("log_softmax", out);
  Tensor c = OutputLike(x.shape(), std::move(out), {&x});
  auto xn = x.node(), cn = c.node();
  RecordOp(
      [xn, cn, rv]() {
        if (!HasGrad(cn) || !xn->requires_grad) return;
        double* dx = EnsureGrad(xn).data();
        const double* g = cn->grad.data();
        const double* y = cn->data.data();
        for (Dim r = 0; r < rv.rows; ++r) {
          const double* gr = g + r * rv.cols;
          const double* yr = y + r * rv.cols;
          double gsum = 0.0;
          for (Dim j = 0; j < rv.cols; ++j) gsum += gr[j];
          double* dr = dx + r * rv.cols;
          for (Dim j = 0; j < rv.cols; ++j) {
            dr[j] += gr[j] - std::exp(yr[j]) * gsum;
          }
        }
      },
      c);
  return c;
}

// --------------------------------------------------------------------------
// LayerNorm
// --------------------------------------------------------------------------

Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps) {
  RowView rv = LastAxisRows(x, "layer_norm");
  if (gain.rank() != 1 || gain.dim(0) != rv.cols ||
      bias.rank() != 1 || bias.dim(0) != rv.cols) {
    ThrowShape("layer_norm", x.shape(), gain.shape());
  }
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  const double* pg = gain.data().data();
  const double* pb = bias.data().data();
  for (Dim r = 0; r < rv.rows; ++r) {
    const double* xr = px + r * rv.cols;
    double* yr = out.data() + r * rv.cols;
    double mean = 0.0;
    for (Dim j = 0; j < rv.cols; ++j) mean += xr[j];
    mean /= static_cast<double>(rv.cols);
    double var = 0.0;
    for (Dim j = 0; j < rv.cols; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(rv.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (Dim j = 0; j < rv.cols; ++j) {
      yr[j] = pg[j] * ((xr[j] - mean) * inv) + pb[j];
    }
  }
  CheckFinite("layer_norm", out);
  Tensor c = OutputLike(x.shape(), std::move(out), {&x, &gain, &bias});
  auto xn = x.node(), gn = gain.node(), bn = bias.node(), cn = c.node();
  RecordOp(
      [xn, gn, bn, cn, rv, eps]() {
        if (!HasGrad(cn)) return;
        const double* g = cn->grad.data();
        const double* px = xn->data.data();
        const double* pg = gn->data.data();
        const double cols = static_cast<double>(rv.cols);
        std::vector<double> xhat(static_cast<size_t>(rv.cols));
        for (Dim r = 0; r < rv.rows; ++r) {
          const double* xr = px + r * rv.cols;
          const double* gr = g + r * rv.cols;
          double mean = 0.0;
          for (Dim j = 0; j < rv.cols; ++j) mean += xr[j];
          mean /= cols;
          double var = 0.0;
          for (Dim j = 0; j < rv.cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
          }
          var /= cols;
          const double inv = 1.0 / std::sqrt(var + eps);
          for (Dim j = 0; j < rv.cols; ++j) xhat[j] = (xr[j] - mean) * inv;

          if (gn->requires_grad) {
            double* dg = EnsureGrad(gn).data();
            for (Dim j = 0; j < rv.cols; ++j) dg[j] += gr[j] * xhat[j];
          }
          if (bn->requires_grad) {
            double* db = EnsureGrad(bn).data();
            for (Dim j = 0; j < rv.cols; ++j) db[j] += gr[j];
          }
          if (xn->requires_grad) {
            double* dx = EnsureGrad(xn).data() + r * rv.cols;
            double mean_dy = 0.0, mean_dyxh = 0.0;
            for (Dim j = 0; j < rv.cols; ++j) {
              const double dy = gr[j] * pg[j];
              mean_dy += dy;
              mean_dyxh += dy * xhat[j];
            }
            mean_dy /= cols;
            mean_dyxh /= cols;
            for (Dim j = 0; j < rv.cols; ++j) {
              const double dy = gr[j] * pg[j];
              dx[j] += inv * (dy - mean_dy - xhat[j] * mean_dyxh);
            }
          }
        }
      },
      c);
  return c;
}

// --------------------------------------------------------------------------
// Pointwise activations
// --------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor Pointwise(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
  const size_t n = x.data().size();
  std::vector<double> out(n);
  const double* px = x.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
  CheckFinite(name, out);
  Tensor c = OutputLike(x.shape(), std::move(out), {&x});
  auto xn = x.node(), cn = c.node();
  RecordOp(
      [xn, cn, n, bwd]() {
        if (!HasGrad(cn) || !xn->requires_grad) return;
        double* dx = EnsureGrad(xn).data();
        const double* g = cn->grad.data();
        const double* px = xn->data.data();
        const double* py = cn->data.data();
        for (size_t i = 0; i < n; ++i) dx[i] += g[i] * bwd(px[i], py[i]);
      },
      c);
  return c;
}

double SigmoidScalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Tensor Swish(const Tensor& x) {
  return Pointwise(
      "swish", x, [](double v) { return v * SigmoidScalar(v); },
      [](double v, double) {
        const double s = SigmoidScalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor Gelu(const Tensor& x) {
  return Pointwise(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double phi = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * phi;
      });
}

Tensor Sigmoid(const Tensor& x) {
  return Pointwise(
      "sigmoid", x, [](double v) { return SigmoidScalar(v); },
      [](double, double y) { return y * (1.0 - y); });
}

// --------------------------------------------------------------------------
// Depthwise conv / unfold
// --------------------------------------------------------------------------

Tensor DepthwiseConv1d(const Tensor& x, const Tensor& weight) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1) ||
      weight.dim(0) % 2 == 0) {
    ThrowShape("depthwise_conv1d", x.shape(), weight.shape());
  }
  const Dim t = x.dim(0), ch = x.dim(1), k = weight.dim(0);
  const Dim p = k / 2;
  std::vector<double> out(static_cast<size_t>(t * ch), 0.0);
  const double* px = x.data().data();
  const double* pw = weight.data().data();
  for (Dim i = 0; i < t; ++i) {
    double* yr = out.data() + i * ch;
    for (Dim kk = 0; kk < k; ++kk) {
      const Dim src = i + kk - p;
      if (src < 0 || src >= t) continue;
      const double* xr = px + src * ch;
      const double* wr = pw + kk * ch;
      for (Dim c = 0; c < ch; ++c) yr[c] += xr[c] * wr[c];
    }
  }
  CheckFinite("depthwise_conv1d", out);
  Tensor c = OutputLike(x.shape(), std::move(out), {&x, &weight});
  auto xn = x.node(), wn = weight.node(), cn = c.node();
  RecordOp(
      [xn, wn, cn, t, ch, k, p]() {
        if (!HasGrad(cn)) return;
        const double* g = cn->grad.data();
        if (xn->requires_grad) {
          double* dx = EnsureGrad(xn).data();
          const double* pw = wn->data.data();
          for (Dim i = 0; i < t; ++i) {
            const double* gr = g + i * ch;
            for (Dim kk = 0; kk < k; ++kk) {
              const Dim src = i + kk - p;
              if (src < 0 || src >= t) continue;
              double* dr = dx + src * ch;
              const double* wr = pw + kk * ch;
              for (Dim c2 = 0; c2 < ch; ++c2) dr[c2] += gr[c2] * wr[c2];
            }
          }
        }
        if (wn->requires_grad) {
          double* dw = EnsureGrad(wn).data();
          const double* px = xn->data.data();
          for (Dim i = 0; i < t; ++i) {
            const double* gr = g + i * ch;
            for (Dim kk = 0; kk < k; ++kk) {
              const Dim src = i + kk - p;
              if (src < 0 || src >= t) continue;
              const double* xr = px + src * ch;
              double* wr = dw + kk * ch;
              for (Dim c2 = 0; c2 < ch; ++c2) wr[c2] += gr[c2] * xr[c2];
            }
          }
        }
      },
      c);
  return c;
}

Tensor UnfoldTime(const Tensor& x, Dim kernel, Dim stride, Dim pad) {
  if (x.rank() != 2 || kernel < 1 || stride < 1 || pad < 0) {
    ThrowShape("unfold_time", x.shape(), "bad kernel/stride/pad");
  }
  const Dim t = x.dim(0), ch = x.dim(1);
  const Dim t_out = (t + 2 * pad - kernel) / stride + 1;
  if (t_out < 1) {
    ThrowShape("unfold_time", x.shape(),
               StrCat("input too short for kernel ", kernel));
  }
  std::vector<double> out(static_cast<size_t>(t_out * kernel * ch), 0.0);
  const double* px = x.data().data();
  for (Dim i = 0; i < t_out; ++i) {
    double* yr = out.data() + i * kernel * ch;
    for (Dim kk = 0; kk < kernel; ++kk) {
      const Dim src = i * stride + kk - pad;
      if (src < 0 || src >= t) continue;
      std::copy(px + src * ch, px + (src + 1) * ch, yr + kk * ch);
    }
  }
  Tensor c = OutputLike({t_out, kernel * ch}, std::move(out), {&x});
  auto xn = x.node(), cn = c.node();
  RecordOp(
      [xn, cn, t, ch, kernel, stride, pad, t_out]() {
        if (!HasGrad(cn) || !xn->requires_grad) return;
        double* dx = EnsureGrad(xn).data();
        const double* g = cn->grad.data();
        for (Dim i = 0; i < t_out; ++i) {
          const double* gr = g + i * kernel * ch;
          for (Dim kk = 0; kk < kernel; ++kk) {
            const Dim src = i * stride + kk - pad;
            if (src < 0 || src >= t) continue;
            double* dr = dx + src * ch;
            const double* gk = gr + kk * ch;
            for (Dim c2 = 0; c2 < ch; ++c2) dr[c2] += gk[c2];
          }
        }
      },
      c);
  return c;
}

// --------------------------------------------------------------------------
// Dropout / transpose / masked_fill / reshape / sum
// --------------------------------------------------------------------------

Tensor Dropout(const Tensor& x, const Tensor& mask) {
  if (x.shape() != mask.shape()) ThrowShape("dropout", x.shape(), mask.shape());
  return Mul(x, mask);
}

Tensor Transpose(const Tensor& x, std::span<const int> perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r || r < 2 || r > 3) {
    ThrowShape("transpose", x.shape(), "bad permutation");
  }
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) {
      ThrowShape("transpose", x.shape(), "bad permutation");
    }
    seen[static_cast<size_t>(p)] = true;
  }
  Shape in = x.shape();
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[i] = in[perm[i]];

  // strides of input
  std::vector<Dim> istr(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) istr[i] = istr[i + 1] * in[i + 1];

  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  std::vector<Dim> idx(static_cast<size_t>(r), 0);
  const Dim n = x.numel();
  for (Dim flat = 0; flat < n; ++flat) {
    // flat index in output -> multi-index -> input offset
    Dim rem = flat, src = 0;
    for (int i = 0; i < r; ++i) {
      Dim stride_out = 1;
      for (int j = i + 1; j < r; ++j) stride_out *= out_shape[j];
      const Dim coord = rem / stride_out;
      rem %= stride_out;
      src += coord * istr[perm[i]];
    }
    out[static_cast<size_t>(flat)] = px[src];
  }
  Tensor c = OutputLike(std::move(out_shape), std::move(out), {&x});
  auto xn = x.node(), cn = c.node();
  std::vector<int> perm_copy(perm.begin(), perm.end());
  RecordOp(
      [xn, cn, perm_copy, r]() {
        if (!HasGrad(cn) || !xn->requires_grad) return;
        double* dx = EnsureGrad(xn).data();
        const double* g = cn->grad.data();
        const Shape& os = cn->shape;
        std::vector<Dim> istr(static_cast<size_t>(r), 1);
        const Shape& in = xn->shape;
        for (int i = r - 2; i >= 0; --i) istr[i] = istr[i + 1] * in[i + 1];
        const Dim n = static_cast<Dim>(cn->data.size());
        for (Dim flat = 0; flat < n; ++flat) {
          Dim rem = flat, src = 0;
          for (int i = 0; i < r; ++i) {
            Dim stride_out = 1;
            for (int j = i + 1; j < r; ++j) stride_out *= os[j];
            const Dim coord = rem / stride_out;
            rem %= stride_out;
            src += coord * istr[perm_copy[i]];
          }
          dx[src] += g[flat];
        }
      },
      c);
  return c;
}

Tensor Transpose(const Tensor& x) {
  const int perm[] = {1, 0};
  return Transpose(x, std::span<const int>(perm, 2));
}

Tensor MaskedFill(const Tensor& x, const std::vector<uint8_t>& mask,
                  double value) {
  const size_t n = x.data().size();
  if (mask.empty() || n % mask.size() != 0) {
    ThrowShape("masked_fill", x.shape(),
               StrCat("mask size ", mask.size(), " does not tile ", n));
  }
  const size_t m = mask.size();
  std::vector<double> out(n);
  const double* px = x.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = mask[i % m] ? value : px[i];
  CheckFinite("masked_fill", out);
  Tensor c = OutputLike(x.shape(), std::move(out), {&x});
  auto xn = x.node(), cn = c.node();
  auto mask_copy = std::make_shared<std::vector<uint8_t>>(mask);
  RecordOp(
      [xn, cn, mask_copy, n, m]() {
        if (!HasGrad(cn) || !xn->requires_grad) return;
        double* dx = EnsureGrad(xn).data();
        const double* g = cn->grad.data();
        const uint8_t* pm = mask_copy->data();
        for (size_t i = 0; i < n; ++i) {
          if (!pm[i % m]) dx[i] += g[i];
        }
      },
      c);
  return c;
}

Tensor Reshape(const Tensor& x, Shape shape) {
  if (ShapeNumel(shape) != x.numel()) {
    ThrowShape("reshape", x.shape(), StrCat("target ", ShapeStr(shape)));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  Tensor c = OutputLike(std::move(shape), std::move(out), {&x});
  auto xn = x.node(), cn = c.node();
  RecordOp(
      [xn, cn]() {
        if (!HasGrad(cn) || !xn->requires_grad) return;
        double* dx = EnsureGrad(xn).data();
        const double* g = cn->grad.data();
        const size_t n = cn->data.size();
        for (size_t i = 0; i < n; ++i) dx[i] += g[i];
      },
      c);
  return c;
}

Tensor Sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  if (!std::isfinite(s)) throw NumericError("non-finite output in op 'sum'");
  Tensor c = OutputLike({1}, {s}, {&x});
  auto xn = x.node(), cn = c.node();
  RecordOp(
      [xn, cn]() {
        if (!HasGrad(cn) || !xn->requires_grad) return;
        double* dx = EnsureGrad(xn).data();
        const double g = cn->grad[0];
        const size_t n = xn->data.size();
        for (size_t i = 0; i < n; ++i) dx[i] += g;
      },
      c);
  return c;
}

// --------------------------------------------------------------------------
// Finite differences
// --------------------------------------------------------------------------

double FiniteDiffCheck(const std::function<Tensor(const Tensor&)>& f,
                       const Tensor& x, double h) {
  if (h < 1e-7 || h > 1e-3) {
    throw UsageError(StrCat("finite_diff_check: h=", h,
                            " outside [1e-7, 1e-3]"));
  }
  // Analytic gradient on a fresh tape.
  Tensor xg = Tensor::FromData(x.shape(),
                               std::vector<double>(x.data().begin(),
                                                   x.data().end()),
                               /*requires_grad=*/true);
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(xg);
    if (y.numel() != 1) {
      throw UsageError("finite_diff_check: f must be scalar-valued");
    }
    tape.Backward(y);
    auto g = xg.grad();
    analytic.assign(g.begin(), g.end());
  }

  NoGradScope no_grad;
  double max_rel = 0.0;
  std::vector<double> base(x.data().begin(), x.data().end());
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::FromData(x.shape(), std::move(plus))).item();
    const double fm = f(Tensor::FromData(x.shape(), std::move(minus))).item();
    const double numeric = (fp - fm) / (2.0 * h);
    const double rel = std::abs(analytic[i] - numeric) /
                       std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace ilb
