// ilb/metrics.cc

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

#include "ilb/metrics.h"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace ilb {

double MerReport::mer() const {
  if (ref_len <= 0) throw UsageError("MER undefined for empty reference");
  return static_cast<double>(substitutions + insertions + deletions) /
         ref_len;
}

void MerReport::Merge(const MerReport& other) {
  substitutions += other.substitutions;
  insertions += other.insertions;
  deletions += other.deletions;
  ref_len += other.ref_len;
  for (int l = 0; l < 2; ++l) {
    sub_by_lang[static_cast<size_t>(l)] +=
        other.sub_by_lang[static_cast<size_t>(l)];
    del_by_lang[static_cast<size_t>(l)] +=
        other.del_by_lang[static_cast<size_t>(l)];
    ins_by_lang[static_cast<size_t>(l)] +=
        other.ins_by_lang[static_cast<size_t>(l)];
    ref_by_lang[static_cast<size_t>(l)] +=
        other.ref_by_lang[static_cast<size_t>(l)];
  }
}

namespace {

int RealTokenLang(int token, const CorpusMeta& meta) {
  const int lang = LangOfToken(token, meta);
  if (lang != kLangA && lang != kLangB) {
    throw UsageError("special tokens must be stripped before scoring");
  }
  return lang;
}

}  // namespace

MerReport MixErrorRate(const std::vector<int>& hyp,
                       const std::vector<int>& ref, const CorpusMeta& meta) {
  if (ref.empty()) throw UsageError("MER undefined for empty reference");
  MerReport report;
  report.ref_len = static_cast<int>(ref.size());
  for (int tok : ref) {
    report.ref_by_lang[static_cast<size_t>(RealTokenLang(tok, meta))]++;
  }
  for (int tok : hyp) RealTokenLang(tok, meta);  // validate

  const size_t r = ref.size(), h = hyp.size();
  std::vector<std::vector<int>> dp(r + 1, std::vector<int>(h + 1, 0));
  for (size_t i = 0; i <= r; ++i) dp[i][0] = static_cast<int>(i);
  for (size_t j = 0; j <= h; ++j) dp[0][j] = static_cast<int>(j);
  for (size_t i = 1; i <= r; ++i) {
    for (size_t j = 1; j <= h; ++j) {
      const int diag = dp[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1] ? 1 : 0);
      const int del = dp[i - 1][j] + 1;
      const int ins = dp[i][j - 1] + 1;
      dp[i][j] = std::min({diag, del, ins});
    }
  }

  size_t i = r, j = h;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        dp[i][j] == dp[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1] ? 1 : 0)) {
      if (ref[i - 1] != hyp[j - 1]) {
        report.substitutions++;
        report.sub_by_lang[static_cast<size_t>(
            RealTokenLang(ref[i - 1], meta))]++;
      }
      --i;
      --j;
    } else if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
      report.deletions++;
      report.del_by_lang[static_cast<size_t>(
          RealTokenLang(ref[i - 1], meta))]++;
      --i;
    } else {
      report.insertions++;
      report.ins_by_lang[static_cast<size_t>(
          RealTokenLang(hyp[j - 1], meta))]++;
      --j;
    }
  }
  return report;
}

std::string FormatMerReport(const MerReport& report) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * report.mer());
  os << "MER " << buf << "% (S=" << report.substitutions
     << " I=" << report.insertions << " D=" << report.deletions
     << ", ref=" << report.ref_len << ")\n";
  const char* names[2] = {"A", "B"};
  for (size_t l = 0; l < 2; ++l) {
    os << "  lang " << names[l] << ": S=" << report.sub_by_lang[l]
       << " I=" << report.ins_by_lang[l] << " D=" << report.del_by_lang[l]
       << " ref=" << report.ref_by_lang[l] << "\n";
  }
  os << "mer_percent=" << buf << "\n";
  os << "subs=" << report.substitutions << "\n";
  os << "ins=" << report.insertions << "\n";
  os << "dels=" << report.deletions << "\n";
  os << "ref_len=" << report.ref_len << "\n";
  return os.str();
}

double LdAccuracy(const std::vector<int>& pred, const std::vector<int>& ref) {
  if (pred.size() != ref.size()) {
    throw UsageError("diarization sequences must have equal length");
  }
  int64_t correct = 0, total = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    if (ref[i] == kLangEos) continue;
    ++total;
    correct += pred[i] == ref[i];
  }
  if (total == 0) throw UsageError("no scorable diarization positions");
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

// Maps an original frame index to its subsampled index.
int SubIndex(int frame, int factor) { return frame / factor; }

}  // namespace

AttentionStats ComputeAttentionStats(const Tensor& attention,
                                     const Utterance& utt,
                                     int subsample_factor,
                                     const CorpusMeta& meta) {
  if (!attention.defined() || attention.shape().size() != 3) {
    throw ConfigError("attention export needs a [heads, N+1, T1] matrix");
  }
  const Dim heads = attention.shape()[0];
  const Dim p = attention.shape()[1];
  const Dim t1 = attention.shape()[2];
  const int n = static_cast<int>(utt.tokens.size());
  if (p != n + 1) {
    throw UsageError("attention rows do not match the token prefix");
  }
  for (Dim hh = 0; hh < heads; ++hh) {
    for (Dim row = 0; row < p; ++row) {
      double sum = 0;
      for (Dim t = 0; t < t1; ++t) {
        const double v = attention.at({hh, row, t});
        if (v < 0) throw UsageError("attention weights must be non-negative");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-6) {
        throw UsageError("attention rows must sum to one");
      }
    }
  }

  AttentionStats stats;
  for (Dim hh = 0; hh < heads; ++hh) {
    // Mass near the oracle span, averaged over the rows that have one. Row
    // k predicts token k+1, so its span is the (k+1)-th token's.
    double diag_sum = 0;
    for (int k = 0; k < n; ++k) {
      const auto [s, e] = utt.frame_spans[static_cast<size_t>(k)];
      const Dim lo = std::max<Dim>(0, SubIndex(s, subsample_factor) - 2);
      const Dim hi =
          std::min<Dim>(t1 - 1, SubIndex(e - 1, subsample_factor) + 2);
      double mass = 0;
      for (Dim t = lo; t <= hi; ++t) mass += attention.at({hh, k, t});
      diag_sum += mass;
    }
    stats.diagonality.push_back(n > 0 ? diag_sum / n : 0.0);

    // Language of the strongest row per frame column; sharp switches change
    // that language exactly once inside the window around each boundary.
    std::vector<int> column_lang(static_cast<size_t>(t1));
    const auto labels = DeriveLangLabels(utt.tokens, meta);
    for (Dim t = 0; t < t1; ++t) {
      Dim best_row = 0;
      double best = -1;
      for (Dim row = 0; row < p; ++row) {
        const double v = attention.at({hh, row, t});
        if (v > best) {
          best = v;
          best_row = row;
        }
      }
      column_lang[static_cast<size_t>(t)] =
          labels[static_cast<size_t>(best_row)];
    }
    double tv_sum = 0;
    int boundaries = 0;
    for (int k = 0; k + 1 < n; ++k) {
      if (utt.token_langs[static_cast<size_t>(k)] ==
          utt.token_langs[static_cast<size_t>(k + 1)]) {
        continue;
      }
      ++boundaries;
      const Dim b = SubIndex(utt.frame_spans[static_cast<size_t>(k + 1)].first,
                             subsample_factor);
      const Dim lo = std::max<Dim>(0, b - 2);
      const Dim hi = std::min<Dim>(t1 - 1, b + 2);
      for (Dim t = lo; t < hi; ++t) {
        tv_sum += column_lang[static_cast<size_t>(t)] !=
                  column_lang[static_cast<size_t>(t + 1)];
      }
    }
    stats.boundary_sharpness.push_back(boundaries > 0 ? tv_sum / boundaries
                                                      : 0.0);
  }
  return stats;
}

void WriteAttentionExport(std::ostream& os, const std::string& utt_id,
                          const Tensor& attention,
                          const AttentionStats& stats) {
  const Dim heads = attention.shape()[0];
  const Dim p = attention.shape()[1];
  const Dim t1 = attention.shape()[2];
  os << "# diagonality: mean attention mass within +-2 subsampled frames of "
        "the token's span\n";
  os << "# boundary_sharpness: mean total variation of column-argmax "
        "language in +-2 frame windows at switch frames\n";
  for (Dim hh = 0; hh < heads; ++hh) {
    os << "utt_id " << utt_id << "\n";
    os << "head " << hh << "\n";
    os << "shape " << p << ' ' << t1 << "\n";
    os << "diagonality " << stats.diagonality[static_cast<size_t>(hh)]
       << "\n";
    os << "boundary_sharpness "
       << stats.boundary_sharpness[static_cast<size_t>(hh)] << "\n";
    for (Dim row = 0; row < p; ++row) {
      for (Dim t = 0; t < t1; ++t) {
        if (t) os << ' ';
        os << attention.at({hh, row, t});
      }
      os << "\n";
    }
  }
}

}  // namespace ilb
