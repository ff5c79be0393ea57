// ilb/ctc.h

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

#ifndef ILB_CTC_H_
#define ILB_CTC_H_

#include <span>
#include <utility>
#include <vector>

#include "ilb/tensor.h"

namespace ilb {

// Connectionist temporal classification over per-frame log posteriors of
// shape [T1, V+1] where index 0 is the blank and token ids run 1..V. Rows
// must be valid log distributions.

struct CtcLossResult {
  // Negative log-likelihood of the target under the alignment sum,
  // differentiable w.r.t. log_probs. +inf when infeasible.
  Tensor loss;
  // False when T1 < N + repeats(target): no alignment exists. The loss is
  // +inf with zero gradient so degenerate utterances do not edit parameters
  // but also do not abort training.
  bool feasible = true;
};

CtcLossResult CtcLoss(const Tensor& log_probs, std::span<const int> target);

// Per-frame argmax, collapse consecutive repeats, delete blanks. Ties go to
// the lowest id so results are deterministic.
std::vector<int> CtcGreedyDecode(const Tensor& log_probs);

// Incremental prefix scoring: log p_ctc of a growing label prefix, evaluated
// token by token so a beam search can add CTC scores without rescoring the
// whole hypothesis. Holds a private copy of the log posteriors; scoring never
// touches the autodiff tape.
class CtcPrefixScorer {
 public:
  explicit CtcPrefixScorer(const Tensor& log_probs);

  struct State {
    // Log mass per frame of alignments that realize the prefix and end in a
    // nonblank (the prefix's last token) vs. a blank at that frame.
    std::vector<double> nonblank;
    std::vector<double> blank;
    // Prefix probability: log mass of all complete alignments whose collapse
    // starts with this prefix. Increments of this quantity are the scores.
    double prefix_score = 0.0;
    int last_token = -1;  // -1 for the empty prefix
    bool ended = false;
  };

  State Initial() const;

  // Appends token (in [1, V]) to the prefix. Returns the new state and the
  // incremental log score. Summing increments along a hypothesis and closing
  // with End reproduces -CtcLoss of the same label sequence.
  std::pair<State, double> Extend(const State& s, int token) const;

  // Terminates the hypothesis: scores the full-sequence probability of the
  // prefix as a complete label sequence.
  std::pair<State, double> End(const State& s) const;

  Dim frames() const { return t1_; }
  Dim vocab() const { return v_; }

 private:
  Dim t1_ = 0;
  Dim v_ = 0;  // nonblank vocabulary size; rows have v_ + 1 entries
  std::vector<double> logp_;
};

}  // namespace ilb

#endif  // ILB_CTC_H_
