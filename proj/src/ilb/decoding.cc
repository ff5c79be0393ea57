// ilb/decoding.cc

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

#include "ilb/decoding.h"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "ilb/ctc.h"

namespace ilb {

void DecodeConfig::Validate() const {
  if (alpha < 0 || alpha > 1) {
    throw ConfigError("decode alpha must lie in [0, 1]");
  }
  if (beam < 1) throw ConfigError("beam must be at least 1");
  if (max_len_ratio <= 0) throw ConfigError("max_len_ratio must be positive");
  if (lm_weight < 0) throw ConfigError("lm_weight must be non-negative");
}

namespace {

struct BeamItem {
  std::vector<int> tokens;
  CtcPrefixScorer::State state;
  double ctc = 0;
  double att = 0;
  double lm = 0;
};

double Combine(const DecodeConfig& cfg, double ctc, double att, double lm,
               size_t len) {
  return cfg.alpha * ctc + (1.0 - cfg.alpha) * att + cfg.lm_weight * lm +
         cfg.length_penalty * static_cast<double>(len);
}

bool HypBefore(const Hypothesis& a, const Hypothesis& b) {
  if (a.total != b.total) return a.total > b.total;
  return a.tokens < b.tokens;
}

}  // namespace

DecodeResult JointBeamSearch(const IlbModel& model, const Tensor& features,
                             const DecodeConfig& cfg, const LmModel* lm) {
  cfg.Validate();
  const bool use_lm = cfg.lm_weight > 0;
  if (use_lm) {
    if (lm == nullptr) {
      throw UsageError("lm_weight is set but no language model was given");
    }
    if (lm->config().vocab_size != model.config().vocab_size) {
      throw ConfigError("language model vocabulary does not match the "
                        "recognizer");
    }
  }

  const auto enc = model.EncodeUtterance(features, {});
  CtcPrefixScorer scorer(enc.ctc_log_probs);
  const Dim t1 = enc.ctc_log_probs.shape()[0];
  const int max_len = std::max(
      1, static_cast<int>(cfg.max_len_ratio * static_cast<double>(t1)));
  const int sos = static_cast<int>(model.config().sos_id());
  const int vocab = static_cast<int>(model.config().vocab_size);
  const bool biased = model.config().flags.decoder_bias;

  std::vector<BeamItem> live;
  live.push_back({{}, scorer.Initial(), 0.0, 0.0, 0.0});
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> extended;  // scored live extensions
    std::vector<BeamItem> states;      // parallel CTC/decoder state
    for (const BeamItem& item : live) {
      std::vector<int> prefix;
      prefix.reserve(item.tokens.size() + 1);
      prefix.push_back(sos);
      prefix.insert(prefix.end(), item.tokens.begin(), item.tokens.end());

      Tensor ld_post;
      const Tensor* post = nullptr;
      if (biased) {
        ld_post = model.LdDecode(prefix, enc.memory, {}).posteriors;
        post = &ld_post;
      }
      const Tensor asr = model.AsrDecode(prefix, enc.memory, post, {});
      const Dim last = asr.shape()[0] - 1;
      Tensor lm_rows;
      if (use_lm) lm_rows = lm->Forward(prefix, {});

      for (int c = 1; c < vocab; ++c) {
        const double att_inc = asr.at({last, static_cast<Dim>(c)});
        const double lm_inc =
            use_lm ? lm_rows.at({last, static_cast<Dim>(c)}) : 0.0;
        if (c == sos) {
          auto [st, ctc_inc] = scorer.End(item.state);
          Hypothesis h;
          h.tokens = item.tokens;
          h.ctc = item.ctc + ctc_inc;
          h.att = item.att + att_inc;
          h.lm = item.lm + lm_inc;
          h.finished = true;
          h.total = Combine(cfg, h.ctc, h.att, h.lm, h.tokens.size());
          finished.push_back(std::move(h));
          continue;
        }
        auto [st, ctc_inc] = scorer.Extend(item.state, c);
        BeamItem child;
        child.tokens = item.tokens;
        child.tokens.push_back(c);
        child.state = std::move(st);
        child.ctc = item.ctc + ctc_inc;
        child.att = item.att + att_inc;
        child.lm = item.lm + lm_inc;
        Hypothesis h;
        h.tokens = child.tokens;
        h.ctc = child.ctc;
        h.att = child.att;
        h.lm = child.lm;
        h.finished = false;
        h.total = Combine(cfg, h.ctc, h.att, h.lm, h.tokens.size());
        extended.push_back(std::move(h));
        states.push_back(std::move(child));
      }
    }

    // Keep the best beam extensions, ties settled by token order.
    std::vector<size_t> index(extended.size());
    for (size_t i = 0; i < index.size(); ++i) index[i] = i;
    std::sort(index.begin(), index.end(), [&](size_t a, size_t b) {
      return HypBefore(extended[a], extended[b]);
    });
    if (index.size() > static_cast<size_t>(cfg.beam)) {
      index.resize(static_cast<size_t>(cfg.beam));
    }
    std::vector<BeamItem> pruned;
    pruned.reserve(index.size());
    double best_live = kNegInf;
    for (size_t i : index) {
      best_live = std::max(best_live, extended[i].total);
      pruned.push_back(std::move(states[i]));
    }
    live = std::move(pruned);

    // Extension increments are non-positive without a length reward, so a
    // finished hypothesis beating every live one cannot be overtaken.
    if (cfg.length_penalty <= 0 && !finished.empty() && !live.empty()) {
      double best_done = kNegInf;
      for (const auto& h : finished) best_done = std::max(best_done, h.total);
      if (best_done >= best_live) break;
    }
  }

  DecodeResult result;
  if (!finished.empty()) {
    std::sort(finished.begin(), finished.end(), HypBefore);
    if (finished.size() > static_cast<size_t>(cfg.beam)) {
      finished.resize(static_cast<size_t>(cfg.beam));
    }
    result.nbest = std::move(finished);
  } else {
    for (const BeamItem& item : live) {
      Hypothesis h;
      h.tokens = item.tokens;
      h.ctc = item.ctc;
      h.att = item.att;
      h.lm = item.lm;
      h.finished = false;
      h.total = Combine(cfg, h.ctc, h.att, h.lm, h.tokens.size());
      result.nbest.push_back(std::move(h));
    }
    std::sort(result.nbest.begin(), result.nbest.end(), HypBefore);
  }
  return result;
}

std::string FormatNbest(const std::string& utt_id, const DecodeResult& res) {
  std::ostringstream os;
  for (size_t i = 0; i < res.nbest.size(); ++i) {
    const Hypothesis& h = res.nbest[i];
    char buf[128];
    std::snprintf(buf, sizeof(buf), " %zu %.6f %.6f %.6f %.6f", i + 1,
                  h.total, h.ctc, h.att, h.lm);
    os << utt_id << buf;
    for (int tok : h.tokens) os << ' ' << tok;
    os << "\n";
  }
  return os.str();
}

}  // namespace ilb
