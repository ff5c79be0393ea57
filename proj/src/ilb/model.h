// ilb/model.h

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

#ifndef ILB_MODEL_H_
#define ILB_MODEL_H_

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ilb/layers.h"
#include "ilb/tensor.h"

namespace ilb {

// Token id layout: 0 = blank (CTC only), 1 = unk, then the two language
// blocks, and the final id doubles as sos and eos. Language ids for the
// diarization head: 0 = language A, 1 = language B, last = sos/eos.
struct BiasFlags {
  bool multitask_ld = false;  // train an LD decoder alongside the ASR decoder
  bool encoder_bias = false;  // concat frame language posteriors onto H
  bool decoder_bias = false;  // concat token language posteriors onto W
  bool ctc_bias = false;      // CTC head reads the biased H' directly
};

struct ModelConfig {
  Dim feature_dim = 16;
  Dim model_dim = 64;
  Dim heads = 4;
  Dim encoder_layers = 4;
  Dim decoder_layers = 2;
  Dim ld_decoder_layers = 2;
  Dim ffn_dim = 256;
  Dim conv_kernel = 15;
  Dim vocab_size = 0;       // full id space incl. blank, unk, sos/eos
  Dim lang_vocab_size = 3;
  Dim subsample_factor = 4;
  BiasFlags flags;
  double dropout = 0.1;

  void Validate() const;  // throws ConfigError
  // Named ablation rows: "1.0" (no flags) through "1.6" (all four).
  void ApplyPreset(const std::string& preset);
  static const std::vector<std::string>& PresetNames();

  Dim sos_id() const { return vocab_size - 1; }
  Dim lang_eos_id() const { return lang_vocab_size - 1; }
};

// Model state on disk: the config, free-form metadata, and named tensors
// (parameters plus bookkeeping such as feature normalization stats). Writing
// the same checkpoint twice produces identical bytes.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void WriteCheckpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint ReadCheckpoint(const std::string& path);

// Hybrid CTC/attention model with optional interactive language biases.
// A frame-level LID layer turns encoder states into language posteriors that
// can be concatenated onto the encoder output (and fed to the CTC head); an
// LD decoder predicts per-token language posteriors that can be concatenated
// onto the ASR decoder's token embeddings.
class IlbModel {
 public:
  IlbModel(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }
  Dim sos_id() const { return config_.sos_id(); }

  // Copies values into same-named parameters; every model parameter must be
  // covered, extra tensors are ignored.
  void LoadTensors(const std::vector<std::pair<std::string, Tensor>>& named);

  // [T, F] features -> [T1, D] encoder states.
  Tensor Encode(const Tensor& features, const ForwardCtx& ctx) const;

  // H -> (H' = concat(H, p(l|h)), frame posteriors). encoder_bias only.
  std::pair<Tensor, Tensor> FrameBias(const Tensor& h) const;

  struct Encoded {
    Tensor h;                 // [T1, D]
    Tensor h_prime;           // [T1, D+V_ld], defined iff encoder_bias
    Tensor frame_posteriors;  // [T1, V_ld], defined iff encoder_bias
    Tensor memory;            // decoder memory: projected H' or plain H
    Tensor ctc_log_probs;     // [T1, V]
  };
  Encoded EncodeUtterance(const Tensor& features, const ForwardCtx& ctx) const;

  struct LdOut {
    Tensor log_probs;   // [P, V_ld]
    Tensor posteriors;  // [P, V_ld], softmax of the same logits
    Tensor attention;   // [heads, P, T1] last-layer cross-attention weights
  };
  // prefix = sos followed by tokens; position n predicts the language of the
  // next token, so these posteriors line up index-for-index with the ASR
  // decoder's inputs.
  LdOut LdDecode(std::span<const int> prefix, const Tensor& memory,
                 const ForwardCtx& ctx) const;

  // Concat token embeddings with language posteriors, project back to D.
  Tensor TokenBias(const Tensor& embeddings, const Tensor& ld_posteriors) const;

  // Teacher-forced next-token log distributions, [P, V]. ld_posteriors must
  // be given exactly when decoder_bias is set.
  Tensor AsrDecode(std::span<const int> prefix, const Tensor& memory,
                   const Tensor* ld_posteriors, const ForwardCtx& ctx) const;

  struct ForwardOutput {
    Tensor h;
    Tensor h_prime;           // iff encoder_bias
    Tensor frame_posteriors;  // iff encoder_bias
    Tensor ctc_log_probs;
    Tensor asr_log_probs;     // [N+1, V]
    Tensor ld_log_probs;      // [N+1, V_ld], iff multitask_ld
    Tensor ld_attention;      // iff multitask_ld
  };
  // tokens: the reference sequence w_1..w_N without specials.
  ForwardOutput ForwardAll(const Tensor& features, std::span<const int> tokens,
                           const ForwardCtx& ctx) const;

 private:
  Tensor EmbedPrefix(std::span<const int> prefix, const ForwardCtx& ctx) const;

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  Subsampler subsampler_;
  std::vector<ConformerBlock> encoder_;
  Tensor embed_;  // [V, D], shared by the ASR and LD decoders
  std::vector<DecoderBlock> decoder_;
  NormLayer decoder_norm_;
  LinearLayer asr_head_;
  LinearLayer ctc_head_;
  LinearLayer lid_;          // iff encoder_bias
  LinearLayer memory_proj_;  // iff encoder_bias
  LinearLayer token_proj_;   // iff decoder_bias
  std::vector<DecoderBlock> ld_decoder_;  // iff multitask_ld
  NormLayer ld_decoder_norm_;
  LinearLayer ld_head_;
};

}  // namespace ilb

#endif  // ILB_MODEL_H_
