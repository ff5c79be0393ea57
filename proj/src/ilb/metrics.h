// ilb/metrics.h

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

#ifndef ILB_METRICS_H_
#define ILB_METRICS_H_

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "ilb/data.h"
#include "ilb/tensor.h"

namespace ilb {

// Token-level error counts from a minimal Levenshtein alignment. Reference
// side errors (substitutions, deletions) are attributed to the reference
// token's language, insertions to the inserted hypothesis token's language.
struct MerReport {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int ref_len = 0;
  std::array<int, 2> sub_by_lang{};
  std::array<int, 2> del_by_lang{};
  std::array<int, 2> ins_by_lang{};
  std::array<int, 2> ref_by_lang{};

  double mer() const;  // (S+I+D)/ref_len as a fraction
  void Merge(const MerReport& other);
};

// Both sequences must hold only real language tokens (specials stripped).
// The backtrace resolves cost ties in a fixed order so the breakdown is
// deterministic: diagonal step, then deletion, then insertion.
MerReport MixErrorRate(const std::vector<int>& hyp,
                       const std::vector<int>& ref, const CorpusMeta& meta);

// Human-readable summary followed by a machine-readable key=value block.
std::string FormatMerReport(const MerReport& report);

// Position-wise accuracy over the non-terminal labels.
double LdAccuracy(const std::vector<int>& pred, const std::vector<int>& ref);

// Quantities summarizing one utterance's diarization attention [H, N+1, T1].
// diagonality: mean over token rows of the attention mass landing within
// two subsampled frames of the token's oracle span. boundary_sharpness:
// mean total variation of the column-argmax language inside two-frame
// windows around oracle switch frames.
struct AttentionStats {
  std::vector<double> diagonality;
  std::vector<double> boundary_sharpness;
};

AttentionStats ComputeAttentionStats(const Tensor& attention,
                                     const Utterance& utt,
                                     int subsample_factor,
                                     const CorpusMeta& meta);

void WriteAttentionExport(std::ostream& os, const std::string& utt_id,
                          const Tensor& attention,
                          const AttentionStats& stats);

}  // namespace ilb

#endif  // ILB_METRICS_H_
