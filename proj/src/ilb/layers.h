// ilb/layers.h

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

#ifndef ILB_LAYERS_H_
#define ILB_LAYERS_H_

#include <string>
#include <utility>
#include <vector>

#include "ilb/tensor.h"

namespace ilb {

// Creates and registers named parameters. Every tensor is seeded from
// DeriveSeed(root, "param:" + name), so two builds that create the same
// parameter names in any order get bit-identical initial values.
class ParamBuilder {
 public:
  ParamBuilder(uint64_t root_seed,
               std::vector<std::pair<std::string, Tensor>>* registry)
      : root_seed_(root_seed), registry_(registry) {}

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor Init(const std::string& name, Shape shape, Dim fan_in);
  Tensor Const(const std::string& name, Shape shape, double value);

 private:
  uint64_t root_seed_;
  std::vector<std::pair<std::string, Tensor>>* registry_;
};

// Per-call forward options. A null rng disables dropout (evaluation mode);
// masks are drawn in forward order so a fixed rng stream fixes the run.
struct ForwardCtx {
  Rng* dropout_rng = nullptr;
  double dropout_rate = 0.0;
};

// Identity when disabled; otherwise inverted dropout with the ctx rate.
Tensor MaybeDropout(const Tensor& x, const ForwardCtx& ctx);

// Absolute sinusoidal positions, [length, dim], no gradient.
Tensor SinusoidalPe(Dim length, Dim dim);

struct LinearLayer {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
  LinearLayer() = default;
  LinearLayer(ParamBuilder* pb, const std::string& name, Dim in, Dim out);
  Tensor operator()(const Tensor& x) const;
};

struct NormLayer {
  Tensor gain, bias;
  NormLayer() = default;
  NormLayer(ParamBuilder* pb, const std::string& name, Dim dim);
  Tensor operator()(const Tensor& x) const;
};

// Multi-head scaled dot-product attention over full matrices. Returns the
// projected context and the post-softmax weights [heads, T_q, T_kv] so
// callers can export alignments.
struct AttentionLayer {
  Dim heads = 1;
  Dim head_dim = 1;
  LinearLayer q, k, v, o;
  AttentionLayer() = default;
  AttentionLayer(ParamBuilder* pb, const std::string& name, Dim dim,
                 Dim num_heads);
  std::pair<Tensor, Tensor> operator()(const Tensor& query_x,
                                       const Tensor& memory,
                                       bool causal) const;
};

// Pre-norm two-layer feed-forward. Swish for encoder blocks, GELU for
// decoder blocks.
struct FfnLayer {
  NormLayer norm;
  LinearLayer w1, w2;
  bool swish = true;
  FfnLayer() = default;
  FfnLayer(ParamBuilder* pb, const std::string& name, Dim dim, Dim hidden,
           bool use_swish);
  Tensor operator()(const Tensor& x, const ForwardCtx& ctx) const;
};

// Conformer convolution module: pointwise expand, GLU gate, depthwise conv,
// norm + swish, pointwise back to the model dim.
struct ConvModule {
  NormLayer norm;
  LinearLayer pw1;   // D -> 2D
  Tensor dw;         // [kernel, D]
  NormLayer norm2;
  LinearLayer pw2;   // D -> D
  ConvModule() = default;
  ConvModule(ParamBuilder* pb, const std::string& name, Dim dim, Dim kernel);
  Tensor operator()(const Tensor& x, const ForwardCtx& ctx) const;
};

// Macaron conformer block: half-weighted FFN, self-attention, convolution,
// half-weighted FFN, closing norm. Residual around each branch.
struct ConformerBlock {
  FfnLayer ffn1;
  NormLayer attn_norm;
  AttentionLayer attn;
  ConvModule conv;
  FfnLayer ffn2;
  NormLayer final_norm;
  ConformerBlock() = default;
  ConformerBlock(ParamBuilder* pb, const std::string& name, Dim dim,
                 Dim num_heads, Dim ffn_dim, Dim kernel);
  Tensor operator()(const Tensor& x, const ForwardCtx& ctx) const;
};

// Pre-norm transformer decoder block: causal self-attention, cross-attention
// over the encoder memory, feed-forward. Returns the block output and the
// cross-attention weights.
struct DecoderBlock {
  NormLayer self_norm;
  AttentionLayer self_attn;
  NormLayer cross_norm;
  AttentionLayer cross_attn;
  FfnLayer ffn;
  DecoderBlock() = default;
  DecoderBlock(ParamBuilder* pb, const std::string& name, Dim dim,
               Dim num_heads, Dim ffn_dim);
  std::pair<Tensor, Tensor> operator()(const Tensor& x, const Tensor& memory,
                                       const ForwardCtx& ctx) const;
};

// Strided convolutional front end: log2(factor) stride-2 kernel-3 layers,
// each halving the frame count as floor((T-1)/2) + 1. Factor 1 keeps a
// single stride-1 layer so every path maps F to the model dim.
struct Subsampler {
  std::vector<LinearLayer> convs;
  Dim factor = 1;
  Subsampler() = default;
  Subsampler(ParamBuilder* pb, const std::string& name, Dim feature_dim,
             Dim model_dim, Dim subsample_factor);
  Tensor operator()(const Tensor& x) const;
  // Frame count after subsampling an input of length t.
  Dim OutputLength(Dim t) const;
};

}  // namespace ilb

#endif  // ILB_LAYERS_H_
