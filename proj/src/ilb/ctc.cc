// ilb/ctc.cc

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

#include "ilb/ctc.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ilb {

namespace {

// Rows must be log distributions; tolerance is looser than the producers'
// (log_softmax emits rows normalized to machine precision).
void ValidateRows(const Tensor& log_probs, const char* who) {
  if (log_probs.rank() != 2 || log_probs.dim(1) < 2) {
    throw UsageError(StrCat(who, ": log_probs must be [T1, V+1] with V >= 1, "
                            "got ", ShapeStr(log_probs.shape())));
  }
  const Dim t1 = log_probs.dim(0), width = log_probs.dim(1);
  const double* p = log_probs.data().data();
  for (Dim t = 0; t < t1; ++t) {
    double lse = kNegInf;
    for (Dim k = 0; k < width; ++k) lse = LogAdd(lse, p[t * width + k]);
    if (std::abs(lse) > 1e-6) {
      throw UsageError(StrCat(who, ": row ", t,
                              " is not a log distribution (logsumexp = ", lse,
                              ")"));
    }
  }
}

int CountRepeats(std::span<const int> target) {
  int repeats = 0;
  for (size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++repeats;
  }
  return repeats;
}

}  // namespace

CtcLossResult CtcLoss(const Tensor& log_probs, std::span<const int> target) {
  ValidateRows(log_probs, "ctc_loss");
  const Dim t1 = log_probs.dim(0), width = log_probs.dim(1);
  const int v = static_cast<int>(width) - 1;
  for (int id : target) {
    if (id < 1 || id > v) {
      throw UsageError(StrCat("ctc_loss: target id ", id,
                              " outside [1, ", v, "]"));
    }
  }
  const Dim n = static_cast<Dim>(target.size());

  CtcLossResult res;
  if (t1 < n + CountRepeats(target)) {
    res.feasible = false;
    res.loss = Tensor::FromData({1}, {std::numeric_limits<double>::infinity()},
                                log_probs.requires_grad());
    RecordOp([]() {}, res.loss);
    return res;
  }

  // Extended label: blank, w1, blank, w2, ..., wN, blank.
  const Dim s_len = 2 * n + 1;
  auto label = [&](Dim s) -> int {
    return (s % 2 == 1) ? target[static_cast<size_t>(s / 2)] : 0;
  };
  const double* lp = log_probs.data().data();
  auto emit = [&](Dim t, Dim s) { return lp[t * width + label(s)]; };

  // Forward masses, inclusive of the emission at t.
  std::vector<double> alpha(static_cast<size_t>(t1 * s_len), kNegInf);
  alpha[0] = emit(0, 0);
  if (s_len > 1) alpha[1] = emit(0, 1);
  for (Dim t = 1; t < t1; ++t) {
    for (Dim s = 0; s < s_len; ++s) {
      double m = alpha[(t - 1) * s_len + s];
      if (s >= 1) m = LogAdd(m, alpha[(t - 1) * s_len + s - 1]);
      if (s >= 2 && label(s) != 0 && label(s) != label(s - 2)) {
        m = LogAdd(m, alpha[(t - 1) * s_len + s - 2]);
      }
      alpha[t * s_len + s] = m + emit(t, s);
    }
  }
  double log_p = alpha[(t1 - 1) * s_len + s_len - 1];
  if (s_len > 1) log_p = LogAdd(log_p, alpha[(t1 - 1) * s_len + s_len - 2]);

  if (log_p <= kNegInf) {
    // Unreachable for feasible targets with finite rows, but keep the same
    // degenerate contract as the infeasible case.
    res.feasible = false;
    res.loss = Tensor::FromData({1}, {std::numeric_limits<double>::infinity()},
                                log_probs.requires_grad());
    RecordOp([]() {}, res.loss);
    return res;
  }

  res.loss = Tensor::FromData({1}, {-log_p}, log_probs.requires_grad());

  if (Tape::Current() != nullptr && log_probs.requires_grad()) {
    // Backward masses, exclusive of the emission at t, so that
    // alpha[t][s] + beta[t][s] is the log mass of paths through (t, s).
    std::vector<double> beta(static_cast<size_t>(t1 * s_len), kNegInf);
    beta[(t1 - 1) * s_len + s_len - 1] = 0.0;
    if (s_len > 1) beta[(t1 - 1) * s_len + s_len - 2] = 0.0;
    for (Dim t = t1 - 2; t >= 0; --t) {
      for (Dim s = 0; s < s_len; ++s) {
        double m = beta[(t + 1) * s_len + s] + emit(t + 1, s);
        if (s + 1 < s_len) {
          m = LogAdd(m, beta[(t + 1) * s_len + s + 1] + emit(t + 1, s + 1));
        }
        if (s + 2 < s_len && label(s + 2) != 0 && label(s + 2) != label(s)) {
          m = LogAdd(m, beta[(t + 1) * s_len + s + 2] + emit(t + 1, s + 2));
        }
        beta[t * s_len + s] = m;
      }
    }
    // d(-log P)/d log_probs[t][k] = -exp(mass through symbol k at t - log P).
    auto dlogp = std::make_shared<std::vector<double>>(
        static_cast<size_t>(t1 * width), 0.0);
    for (Dim t = 0; t < t1; ++t) {
      for (Dim s = 0; s < s_len; ++s) {
        const double through =
            alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
        (*dlogp)[t * width + label(s)] -= std::exp(through);
      }
    }
    auto xn = log_probs.node();
    auto on = res.loss.node();
    RecordOp(
        [xn, on, dlogp]() {
          if (on->grad.empty()) return;
          const double g = on->grad[0];
          if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
          for (size_t i = 0; i < dlogp->size(); ++i) {
            xn->grad[i] += g * (*dlogp)[i];
          }
        },
        res.loss);
  } else {
    RecordOp([]() {}, res.loss);
  }
  return res;
}

std::vector<int> CtcGreedyDecode(const Tensor& log_probs) {
  if (log_probs.rank() != 2 || log_probs.dim(1) < 2) {
    throw UsageError(StrCat("ctc_greedy_decode: want [T1, V+1], got ",
                            ShapeStr(log_probs.shape())));
  }
  const Dim t1 = log_probs.dim(0), width = log_probs.dim(1);
  const double* p = log_probs.data().data();
  std::vector<int> out;
  int prev = 0;
  for (Dim t = 0; t < t1; ++t) {
    const double* row = p + t * width;
    int best = 0;
    for (Dim k = 1; k < width; ++k) {
      if (row[k] > row[best]) best = static_cast<int>(k);
    }
    if (best != 0 && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prefix scoring
// ---------------------------------------------------------------------------

CtcPrefixScorer::CtcPrefixScorer(const Tensor& log_probs) {
  ValidateRows(log_probs, "ctc_prefix_score");
  t1_ = log_probs.dim(0);
  v_ = log_probs.dim(1) - 1;
  logp_.assign(log_probs.data().begin(), log_probs.data().end());
}

CtcPrefixScorer::State CtcPrefixScorer::Initial() const {
  State s;
  s.nonblank.assign(static_cast<size_t>(t1_), kNegInf);
  s.blank.resize(static_cast<size_t>(t1_));
  double acc = 0.0;
  const Dim width = v_ + 1;
  for (Dim t = 0; t < t1_; ++t) {
    acc += logp_[t * width];
    s.blank[static_cast<size_t>(t)] = acc;
  }
  s.prefix_score = 0.0;  // log mass of "starts with empty prefix" = log 1
  s.last_token = -1;
  s.ended = false;
  return s;
}

std::pair<CtcPrefixScorer::State, double> CtcPrefixScorer::Extend(
    const State& s, int token) const {
  if (s.ended) throw UsageError("ctc_prefix_score: extend after end");
  if (token < 1 || token > v_) {
    throw UsageError(StrCat("ctc_prefix_score: token ", token,
                            " outside [1, ", v_, "]"));
  }
  const Dim width = v_ + 1;
  State h;
  h.nonblank.resize(static_cast<size_t>(t1_));
  h.blank.resize(static_cast<size_t>(t1_));
  h.last_token = token;
  h.ended = false;

  // phi(t-1): mass of alignments of the old prefix that a new token emitted
  // at frame t can legally follow. A repeat may not follow a nonblank ending
  // (that would collapse), so it needs the blank-ending mass only.
  const bool repeat = token == s.last_token;
  // phi(-1) = log 1 only for the empty prefix.
  h.nonblank[0] = s.last_token < 0 ? logp_[token] : kNegInf;
  h.blank[0] = kNegInf;
  double psi = h.nonblank[0];
  for (Dim t = 1; t < t1_; ++t) {
    const double phi =
        repeat ? s.blank[static_cast<size_t>(t - 1)]
               : LogAdd(s.blank[static_cast<size_t>(t - 1)],
                        s.nonblank[static_cast<size_t>(t - 1)]);
    const double lp_tok = logp_[t * width + token];
    h.nonblank[static_cast<size_t>(t)] =
        LogAdd(h.nonblank[static_cast<size_t>(t - 1)], phi) + lp_tok;
    h.blank[static_cast<size_t>(t)] =
        LogAdd(h.blank[static_cast<size_t>(t - 1)],
               h.nonblank[static_cast<size_t>(t - 1)]) +
        logp_[t * width];
    psi = LogAdd(psi, phi + lp_tok);
  }
  h.prefix_score = psi;
  const double inc =
      psi <= kNegInf ? kNegInf : psi - s.prefix_score;
  return {std::move(h), inc};
}

std::pair<CtcPrefixScorer::State, double> CtcPrefixScorer::End(
    const State& s) const {
  if (s.ended) throw UsageError("ctc_prefix_score: end after end");
  const double full = LogAdd(s.nonblank[static_cast<size_t>(t1_ - 1)],
                             s.blank[static_cast<size_t>(t1_ - 1)]);
  State h = s;
  h.ended = true;
  h.prefix_score = full;
  const double inc = full <= kNegInf ? kNegInf : full - s.prefix_score;
  return {std::move(h), inc};
}

}  // namespace ilb
