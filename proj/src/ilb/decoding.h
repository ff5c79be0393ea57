// ilb/decoding.h

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

#ifndef ILB_DECODING_H_
#define ILB_DECODING_H_

#include <string>
#include <vector>

#include "ilb/lm.h"
#include "ilb/model.h"
#include "ilb/tensor.h"

namespace ilb {

struct DecodeConfig {
  double alpha = 0.4;          // CTC share of the combined score
  int beam = 10;
  double max_len_ratio = 1.5;  // output length cap, relative to T1
  double lm_weight = 0.0;      // 0 skips the language model entirely
  double length_penalty = 0.0;

  void Validate() const;
};

struct Hypothesis {
  std::vector<int> tokens;  // real ids, no sos/eos
  double total = 0;
  double ctc = 0;
  double att = 0;
  double lm = 0;
  bool finished = false;
};

struct DecodeResult {
  std::vector<Hypothesis> nbest;  // descending total, lexicographic ties
};

// Joint CTC/attention beam search. Every candidate token of every live
// hypothesis is scored through the CTC prefix scorer and the full-prefix
// attention decoder; models with decoder bias run their diarization decoder
// first on each extension, exactly as in teacher-forced training. Scores
// combine as alpha * ctc + (1 - alpha) * att + lm_weight * lm +
// length_penalty * length. If nothing finishes within the length cap the
// best live hypothesis is returned with finished = false.
DecodeResult JointBeamSearch(const IlbModel& model, const Tensor& features,
                             const DecodeConfig& cfg,
                             const LmModel* lm = nullptr);

// One line per hypothesis: utt_id rank total ctc att lm tokens...
std::string FormatNbest(const std::string& utt_id, const DecodeResult& res);

}  // namespace ilb

#endif  // ILB_DECODING_H_
