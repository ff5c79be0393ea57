// ilb/data.h

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

#ifndef ILB_DATA_H_
#define ILB_DATA_H_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ilb/tensor.h"

namespace ilb {

// Token id layout shared by every component: 0 is the blank symbol, 1 is
// unk, the next vocab_a ids belong to language A, the following vocab_b ids
// to language B, and the last id doubles as sos and eos.
struct CorpusMeta {
  int vocab_a = 30;
  int vocab_b = 30;
  int feature_dim = 16;

  int total_vocab() const { return vocab_a + vocab_b + 3; }
  int sos_id() const { return total_vocab() - 1; }
};

// Language label ids used by the diarization targets.
constexpr int kLangA = 0;
constexpr int kLangB = 1;
constexpr int kLangEos = 2;

// Language of one token id. unk counts as language A, sos/eos maps to the
// terminal label, blank is rejected.
int LangOfToken(int token, const CorpusMeta& meta);

// Diarization target for a token sequence: one label per token plus a
// terminal eos label, mirroring the recognition targets.
std::vector<int> DeriveLangLabels(const std::vector<int>& tokens,
                                  const CorpusMeta& meta);

struct SyntheticSpec {
  int vocab_a = 30;
  int vocab_b = 30;
  double switch_prob = 0.15;   // per-token switching intensity
  double ratio_a = 0.7;        // stationary share of language A tokens
  int min_frames = 6;          // frames per token
  int max_frames = 12;
  int feature_dim = 16;
  double noise = 0.1;          // white-noise sigma around token prototypes
  int min_tokens = 4;
  int max_tokens = 12;
  int train_size = 2000;
  int dev_size = 150;
  int test_size = 200;
  uint64_t seed = 1;

  void Validate() const;
  CorpusMeta meta() const { return {vocab_a, vocab_b, feature_dim}; }
};

struct Utterance {
  std::string id;
  Tensor features;  // [T, F]
  std::vector<int> tokens;
  std::vector<int> token_langs;
  std::vector<std::pair<int, int>> frame_spans;  // [start, end) per token
};

struct Corpus {
  CorpusMeta meta;
  std::vector<Utterance> train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
};

// Samples the full corpus. Token sequences come from per-language bigram
// samplers with Markov language switching whose stationary distribution
// matches ratio_a; features repeat a per-token prototype vector across the
// token's frame span plus white noise. Splits never share a token string.
Corpus GenerateCorpus(const SyntheticSpec& spec);

// Global per-dimension feature statistics, computed on the training split.
struct FeatureStats {
  Tensor mean;  // [F]
  Tensor std;   // [F], variance floored at 1e-8 before the square root
};

FeatureStats ComputeStats(const std::vector<Utterance>& train);
void NormalizeInPlace(std::vector<Utterance>* split, const FeatureStats& s);

void WriteCorpusFile(const std::string& path, const CorpusMeta& meta,
                     const std::vector<Utterance>& utts);
std::pair<CorpusMeta, std::vector<Utterance>> ReadCorpusFile(
    const std::string& path);

void WriteStatsFile(const std::string& path, const FeatureStats& stats);
FeatureStats ReadStatsFile(const std::string& path);

}  // namespace ilb

#endif  // ILB_DATA_H_
