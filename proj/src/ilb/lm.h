// ilb/lm.h

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

#ifndef ILB_LM_H_
#define ILB_LM_H_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ilb/data.h"
#include "ilb/layers.h"
#include "ilb/tensor.h"

namespace ilb {

// Causal transformer language model over the shared token vocabulary, used
// for shallow fusion at decode time. Trained on training transcripts only.
struct LmConfig {
  Dim vocab_size = 0;  // must match the recognizer's vocabulary
  Dim model_dim = 64;
  Dim heads = 4;
  Dim layers = 4;
  Dim ffn_dim = 256;
  double dropout = 0.1;

  void Validate() const;
};

class LmModel {
 public:
  LmModel(const LmConfig& config, uint64_t seed);

  const LmConfig& config() const { return config_; }
  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }
  void LoadTensors(const std::vector<std::pair<std::string, Tensor>>& named);

  // Next-token log probabilities for every prefix position, [P, V]. The
  // prefix must start with sos.
  Tensor Forward(std::span<const int> prefix, const ForwardCtx& ctx) const;

 private:
  struct Block {
    NormLayer self_norm;
    AttentionLayer attn;
    FfnLayer ffn;
  };

  LmConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  Tensor embed_;
  std::vector<Block> blocks_;
  NormLayer norm_final_;
  LinearLayer head_;
};

// Identifies the token id layout so a language model is never fused with a
// recognizer trained on a different vocabulary.
uint64_t VocabHash(const CorpusMeta& meta);

struct LmTrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double peak_lr = 1e-3;
  int warmup_steps = 400;
  uint64_t seed = 1;

  void Validate() const;
};

struct LmTrainResult {
  std::vector<std::pair<int, double>> dev_ce;  // epoch, mean cross entropy
  bool diverged = false;
};

// Plain cross entropy (no label smoothing) on [tokens..., eos] given
// [sos, tokens...]. Deterministic per seed, same batching scheme as the
// recognizer trainer.
LmTrainResult TrainLm(LmModel* model, const Corpus& corpus,
                      const LmTrainConfig& cfg, std::ostream* log);

struct LmCheckpoint {
  LmConfig config;
  uint64_t vocab_hash = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void WriteLmCheckpoint(const std::string& path, const LmCheckpoint& ckpt);
LmCheckpoint ReadLmCheckpoint(const std::string& path);

}  // namespace ilb

#endif  // ILB_LM_H_
