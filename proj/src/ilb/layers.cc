// ilb/layers.cc

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

#include "ilb/layers.h"

#include <cmath>

namespace ilb {

Tensor ParamBuilder::Init(const std::string& name, Shape shape, Dim fan_in) {
  Rng rng(DeriveSeed(root_seed_, "param:" + name));
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::Uniform(std::move(shape), scale, &rng,
                             /*requires_grad=*/true);
  registry_->emplace_back(name, t);
  return t;
}

Tensor ParamBuilder::Const(const std::string& name, Shape shape,
                           double value) {
  Tensor t = Tensor::Full(std::move(shape), value, /*requires_grad=*/true);
  registry_->emplace_back(name, t);
  return t;
}

Tensor MaybeDropout(const Tensor& x, const ForwardCtx& ctx) {
  if (ctx.dropout_rng == nullptr || ctx.dropout_rate <= 0.0) return x;
  const double keep = 1.0 - ctx.dropout_rate;
  std::vector<double> mask(static_cast<size_t>(x.numel()));
  for (double& m : mask) {
    m = ctx.dropout_rng->Uniform() < ctx.dropout_rate ? 0.0 : 1.0 / keep;
  }
  return Dropout(x, Tensor::FromData(x.shape(), std::move(mask)));
}

Tensor SinusoidalPe(Dim length, Dim dim) {
  std::vector<double> pe(static_cast<size_t>(length * dim));
  for (Dim pos = 0; pos < length; ++pos) {
    for (Dim i = 0; i < dim; i += 2) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe[pos * dim + i] = std::sin(static_cast<double>(pos) * rate);
      if (i + 1 < dim) {
        pe[pos * dim + i + 1] = std::cos(static_cast<double>(pos) * rate);
      }
    }
  }
  return Tensor::FromData({length, dim}, std::move(pe));
}

LinearLayer::LinearLayer(ParamBuilder* pb, const std::string& name, Dim in,
                         Dim out)
    : w(pb->Init(name + ".w", {in, out}, in)),
      b(pb->Const(name + ".b", {out}, 0.0)) {}

Tensor LinearLayer::operator()(const Tensor& x) const {
  return Add(MatMul(x, w), b);
}

NormLayer::NormLayer(ParamBuilder* pb, const std::string& name, Dim dim)
    : gain(pb->Const(name + ".gain", {dim}, 1.0)),
      bias(pb->Const(name + ".bias", {dim}, 0.0)) {}

Tensor NormLayer::operator()(const Tensor& x) const {
  return LayerNorm(x, gain, bias);
}

AttentionLayer::AttentionLayer(ParamBuilder* pb, const std::string& name,
                               Dim dim, Dim num_heads)
    : heads(num_heads),
      head_dim(dim / num_heads),
      q(pb, name + ".q", dim, dim),
      k(pb, name + ".k", dim, dim),
      v(pb, name + ".v", dim, dim),
      o(pb, name + ".o", dim, dim) {}

std::pair<Tensor, Tensor> AttentionLayer::operator()(const Tensor& query_x,
                                                     const Tensor& memory,
                                                     bool causal) const {
  const Dim tq = query_x.dim(0), tk = memory.dim(0);
  const Dim dim = heads * head_dim;
  auto split_heads = [&](const Tensor& t, Dim len) {
    const int perm[] = {1, 0, 2};
    return Transpose(Reshape(t, {len, heads, head_dim}),
                     std::span<const int>(perm, 3));
  };
  Tensor qh = split_heads(q(query_x), tq);           // [h, tq, dh]
  Tensor kh = split_heads(k(memory), tk);            // [h, tk, dh]
  Tensor vh = split_heads(v(memory), tk);            // [h, tk, dh]
  const int perm_kt[] = {0, 2, 1};
  Tensor scores = Scale(MatMul(qh, Transpose(kh, std::span<const int>(perm_kt, 3))),
                        1.0 / std::sqrt(static_cast<double>(head_dim)));
  if (causal) {
    // One [tq, tk] byte mask, tiled across heads by suffix broadcast.
    std::vector<uint8_t> mask(static_cast<size_t>(tq * tk), 0);
    for (Dim i = 0; i < tq; ++i) {
      for (Dim j = i + 1; j < tk; ++j) mask[i * tk + j] = 1;
    }
    // Finite fill keeps the finiteness checks meaningful; exp(-1e9 - max)
    // underflows to exactly zero weight.
    scores = MaskedFill(scores, mask, -1e9);
  }
  Tensor weights = Softmax(scores);                 // [h, tq, tk]
  Tensor ctx = MatMul(weights, vh);                 // [h, tq, dh]
  const int perm_back[] = {1, 0, 2};
  Tensor merged =
      Reshape(Transpose(ctx, std::span<const int>(perm_back, 3)), {tq, dim});
  return {o(merged), weights};
}

FfnLayer::FfnLayer(ParamBuilder* pb, const std::string& name, Dim dim,
                   Dim hidden, bool use_swish)
    : norm(pb, name + ".norm", dim),
      w1(pb, name + ".w1", dim, hidden),
      w2(pb, name + ".w2", hidden, dim),
      swish(use_swish) {}

Tensor FfnLayer::operator()(const Tensor& x, const ForwardCtx& ctx) const {
  Tensor h = w1(norm(x));
  h = swish ? Swish(h) : Gelu(h);
  return MaybeDropout(w2(h), ctx);
}

ConvModule::ConvModule(ParamBuilder* pb, const std::string& name, Dim dim,
                       Dim kernel)
    : norm(pb, name + ".norm", dim),
      pw1(pb, name + ".pw1", dim, 2 * dim),
      dw(pb->Init(name + ".dw", {kernel, dim}, kernel)),
      norm2(pb, name + ".norm2", dim),
      pw2(pb, name + ".pw2", dim, dim) {}

Tensor ConvModule::operator()(const Tensor& x, const ForwardCtx& ctx) const {
  Tensor h = pw1(norm(x));
  const Dim dim = x.dim(1);
  std::vector<Dim> halves = {dim, dim};
  auto gate = SplitLastDim(h, halves);
  h = Mul(gate[0], Sigmoid(gate[1]));  // GLU
  h = DepthwiseConv1d(h, dw);
  h = Swish(norm2(h));
  return MaybeDropout(pw2(h), ctx);
}

ConformerBlock::ConformerBlock(ParamBuilder* pb, const std::string& name,
                               Dim dim, Dim num_heads, Dim ffn_dim, Dim kernel)
    : ffn1(pb, name + ".ffn1", dim, ffn_dim, /*use_swish=*/true),
      attn_norm(pb, name + ".attn_norm", dim),
      attn(pb, name + ".attn", dim, num_heads),
      conv(pb, name + ".conv", dim, kernel),
      ffn2(pb, name + ".ffn2", dim, ffn_dim, /*use_swish=*/true),
      final_norm(pb, name + ".final_norm", dim) {}

Tensor ConformerBlock::operator()(const Tensor& x,
                                  const ForwardCtx& ctx) const {
  Tensor h = Add(x, Scale(ffn1(x, ctx), 0.5));
  Tensor normed = attn_norm(h);
  h = Add(h, MaybeDropout(attn(normed, normed, /*causal=*/false).first, ctx));
  h = Add(h, conv(h, ctx));
  h = Add(h, Scale(ffn2(h, ctx), 0.5));
  return final_norm(h);
}

DecoderBlock::DecoderBlock(ParamBuilder* pb, const std::string& name, Dim dim,
                           Dim num_heads, Dim ffn_dim)
    : self_norm(pb, name + ".self_norm", dim),
      self_attn(pb, name + ".self", dim, num_heads),
      cross_norm(pb, name + ".cross_norm", dim),
      cross_attn(pb, name + ".cross", dim, num_heads),
      ffn(pb, name + ".ffn", dim, ffn_dim, /*use_swish=*/false) {}

std::pair<Tensor, Tensor> DecoderBlock::operator()(
    const Tensor& x, const Tensor& memory, const ForwardCtx& ctx) const {
  Tensor normed = self_norm(x);
  Tensor h =
      Add(x, MaybeDropout(self_attn(normed, normed, /*causal=*/true).first,
                          ctx));
  auto [cross_out, cross_weights] =
      cross_attn(cross_norm(h), memory, /*causal=*/false);
  h = Add(h, MaybeDropout(cross_out, ctx));
  h = Add(h, ffn(h, ctx));
  return {h, cross_weights};
}

Subsampler::Subsampler(ParamBuilder* pb, const std::string& name,
                       Dim feature_dim, Dim model_dim, Dim subsample_factor)
    : factor(subsample_factor) {
  Dim in = feature_dim;
  int stages = 0;
  for (Dim f = factor; f > 1; f /= 2) ++stages;
  if (stages == 0) stages = 1;
  for (int i = 0; i < stages; ++i) {
    convs.emplace_back(pb, StrCat(name, ".", i), 3 * in, model_dim);
    in = model_dim;
  }
}

Dim Subsampler::OutputLength(Dim t) const {
  Dim len = t;
  for (Dim f = factor; f > 1; f /= 2) len = (len - 1) / 2 + 1;
  return len;
}

Tensor Subsampler::operator()(const Tensor& x) const {
  Tensor h = x;
  if (factor == 1) {
    h = Swish(convs[0](UnfoldTime(h, 3, 1, 1)));
    return h;
  }
  size_t stage = 0;
  for (Dim f = factor; f > 1; f /= 2) {
    h = Swish(convs[stage++](UnfoldTime(h, 3, 2, 1)));
  }
  return h;
}

}  // namespace ilb
