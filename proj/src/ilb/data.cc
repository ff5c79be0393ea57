// ilb/data.cc

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

#include "ilb/data.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include "ilb/rng.h"
#include "ilb/serialize.h"

namespace ilb {

int LangOfToken(int token, const CorpusMeta& meta) {
  if (token == 1) return kLangA;  // unk follows the primary language
  if (token >= 2 && token < 2 + meta.vocab_a) return kLangA;
  if (token >= 2 + meta.vocab_a && token < 2 + meta.vocab_a + meta.vocab_b) {
    return kLangB;
  }
  if (token == meta.sos_id()) return kLangEos;
  throw UsageError(StrCat("no language for token id ", token));
}

std::vector<int> DeriveLangLabels(const std::vector<int>& tokens,
                                  const CorpusMeta& meta) {
  std::vector<int> labels;
  labels.reserve(tokens.size() + 1);
  for (int tok : tokens) labels.push_back(LangOfToken(tok, meta));
  labels.push_back(kLangEos);
  return labels;
}

void SyntheticSpec::Validate() const {
  if (vocab_a < 2 || vocab_b < 2) {
    throw ConfigError("each language needs at least 2 tokens for a bigram");
  }
  if (switch_prob < 0 || switch_prob > 1 || ratio_a < 0 || ratio_a > 1) {
    throw ConfigError("switch_prob and ratio_a must lie in [0, 1]");
  }
  if (2 * switch_prob * (1 - ratio_a) > 1 || 2 * switch_prob * ratio_a > 1) {
    throw ConfigError("switch_prob too large for the requested ratio");
  }
  if (min_frames < 2 || max_frames < min_frames) {
    throw ConfigError("frames-per-token range invalid (min must be >= 2)");
  }
  if (min_tokens < 1 || max_tokens < min_tokens) {
    throw ConfigError("utterance length range invalid");
  }
  if (feature_dim < 1) throw ConfigError("feature_dim must be positive");
  if (noise < 0) throw ConfigError("noise must be non-negative");
  if (train_size < 0 || dev_size < 0 || test_size < 0) {
    throw ConfigError("split sizes must be non-negative");
  }
}

namespace {

struct BigramLm {
  std::vector<double> initial;
  std::vector<std::vector<double>> trans;
};

std::vector<double> SkewedRow(int v, Rng* rng) {
  std::vector<double> row(static_cast<size_t>(v));
  double sum = 0;
  for (double& p : row) {
    const double u = rng->Uniform();
    p = u * u;  // squared uniforms give a few dominant continuations
    sum += p;
  }
  if (sum <= 0) {
    std::fill(row.begin(), row.end(), 1.0 / v);
  } else {
    for (double& p : row) p /= sum;
  }
  return row;
}

BigramLm MakeBigram(int v, Rng* rng) {
  BigramLm lm;
  lm.initial = SkewedRow(v, rng);
  lm.trans.reserve(static_cast<size_t>(v));
  for (int i = 0; i < v; ++i) lm.trans.push_back(SkewedRow(v, rng));
  return lm;
}

int SampleRow(const std::vector<double>& row, Rng* rng) {
  const double u = rng->Uniform();
  double acc = 0;
  for (size_t i = 0; i < row.size(); ++i) {
    acc += row[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(row.size()) - 1;
}

double SquaredDistance(const std::vector<double>& a,
                       const std::vector<double>& b) {
  double d = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

// One prototype vector per real token id, resampled until all pairwise
// distances clear 10 sigma so distinct tokens stay separable under noise.
std::vector<std::vector<double>> MakePrototypes(const SyntheticSpec& spec,
                                                Rng* rng) {
  const int count = spec.vocab_a + spec.vocab_b;
  const double min_sq = 100.0 * spec.noise * spec.noise;
  std::vector<std::vector<double>> protos;
  protos.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000) {
        throw ConfigError(
            "cannot place separable token prototypes; lower noise or raise "
            "feature_dim");
      }
      std::vector<double> p(static_cast<size_t>(spec.feature_dim));
      for (double& x : p) x = rng->Uniform(-1.0, 1.0);
      bool ok = true;
      for (const auto& q : protos) {
        if (SquaredDistance(p, q) <= min_sq) {
          ok = false;
          break;
        }
      }
      if (ok) {
        protos.push_back(std::move(p));
        break;
      }
    }
  }
  return protos;
}

std::string TokenKey(const std::vector<int>& tokens) {
  std::string key;
  for (int t : tokens) {
    key += std::to_string(t);
    key += ',';
  }
  return key;
}

Utterance SampleUtterance(const SyntheticSpec& spec, const BigramLm& lm_a,
                          const BigramLm& lm_b,
                          const std::vector<std::vector<double>>& protos,
                          Rng* rng) {
  const double p_ab = 2 * spec.switch_prob * (1 - spec.ratio_a);
  const double p_ba = 2 * spec.switch_prob * spec.ratio_a;
  const int n = rng->UniformInt(spec.min_tokens, spec.max_tokens);

  Utterance utt;
  utt.tokens.reserve(static_cast<size_t>(n));
  utt.token_langs.reserve(static_cast<size_t>(n));
  int lang = rng->Uniform() < spec.ratio_a ? kLangA : kLangB;
  int prev_in_lang = -1;  // bigram state, reset whenever the language flips
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      const double p_switch = lang == kLangA ? p_ab : p_ba;
      if (rng->Uniform() < p_switch) {
        lang = lang == kLangA ? kLangB : kLangA;
        prev_in_lang = -1;
      }
    }
    const BigramLm& lm = lang == kLangA ? lm_a : lm_b;
    const int within = prev_in_lang < 0
                           ? SampleRow(lm.initial, rng)
                           : SampleRow(lm.trans[static_cast<size_t>(
                                           prev_in_lang)],
                                       rng);
    prev_in_lang = within;
    const int base = lang == kLangA ? 2 : 2 + spec.vocab_a;
    utt.tokens.push_back(base + within);
    utt.token_langs.push_back(lang);
  }

  int total_frames = 0;
  utt.frame_spans.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int len = rng->UniformInt(spec.min_frames, spec.max_frames);
    utt.frame_spans.emplace_back(total_frames, total_frames + len);
    total_frames += len;
  }

  utt.features = Tensor::Zeros({total_frames, spec.feature_dim});
  double* x = utt.features.raw();
  for (int i = 0; i < n; ++i) {
    const auto& proto = protos[static_cast<size_t>(utt.tokens[
        static_cast<size_t>(i)] - 2)];
    for (int t = utt.frame_spans[static_cast<size_t>(i)].first;
         t < utt.frame_spans[static_cast<size_t>(i)].second; ++t) {
      for (int f = 0; f < spec.feature_dim; ++f) {
        x[static_cast<size_t>(t) * static_cast<size_t>(spec.feature_dim) +
          static_cast<size_t>(f)] =
            proto[static_cast<size_t>(f)] + spec.noise * rng->Normal();
      }
    }
  }
  return utt;
}

std::vector<Utterance> SampleSplit(const SyntheticSpec& spec,
                                   const std::string& name, int size,
                                   const BigramLm& lm_a, const BigramLm& lm_b,
                                   const std::vector<std::vector<double>>&
                                       protos,
                                   std::unordered_set<std::string>* seen) {
  Rng rng(DeriveSeed(spec.seed, "split:" + name));
  std::vector<Utterance> utts;
  utts.reserve(static_cast<size_t>(size));
  for (int i = 0; i < size; ++i) {
    Utterance utt;
    int attempts = 0;
    for (;;) {
      if (++attempts > 10000) {
        throw ConfigError(
            "cannot sample distinct utterances; enlarge vocab or length "
            "range");
      }
      utt = SampleUtterance(spec, lm_a, lm_b, protos, &rng);
      if (seen->insert(TokenKey(utt.tokens)).second) break;
    }
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%06d", name.c_str(), i);
    utt.id = id;
    utts.push_back(std::move(utt));
  }
  return utts;
}

}  // namespace

Corpus GenerateCorpus(const SyntheticSpec& spec) {
  spec.Validate();
  Rng table_rng(DeriveSeed(spec.seed, "tables"));
  const BigramLm lm_a = MakeBigram(spec.vocab_a, &table_rng);
  const BigramLm lm_b = MakeBigram(spec.vocab_b, &table_rng);
  const auto protos = MakePrototypes(spec, &table_rng);

  Corpus corpus;
  corpus.meta = spec.meta();
  std::unordered_set<std::string> seen;
  corpus.train = SampleSplit(spec, "train", spec.train_size, lm_a, lm_b,
                             protos, &seen);
  corpus.dev =
      SampleSplit(spec, "dev", spec.dev_size, lm_a, lm_b, protos, &seen);
  corpus.test =
      SampleSplit(spec, "test", spec.test_size, lm_a, lm_b, protos, &seen);
  return corpus;
}

FeatureStats ComputeStats(const std::vector<Utterance>& train) {
  if (train.empty()) throw UsageError("stats need a nonempty training split");
  const Dim f = train.front().features.shape()[1];
  std::vector<double> sum(static_cast<size_t>(f), 0.0);
  std::vector<double> sq(static_cast<size_t>(f), 0.0);
  int64_t count = 0;
  for (const auto& utt : train) {
    const Dim t = utt.features.shape()[0];
    const double* x = utt.features.data().data();
    for (Dim i = 0; i < t; ++i) {
      for (Dim j = 0; j < f; ++j) {
        const double v = x[i * f + j];
        sum[static_cast<size_t>(j)] += v;
        sq[static_cast<size_t>(j)] += v * v;
      }
    }
    count += t;
  }
  FeatureStats stats;
  stats.mean = Tensor::Zeros({f});
  stats.std = Tensor::Zeros({f});
  for (Dim j = 0; j < f; ++j) {
    const double mean = sum[static_cast<size_t>(j)] / count;
    double var = sq[static_cast<size_t>(j)] / count - mean * mean;
    if (var < 1e-8) {
      std::cerr << "warning: flooring variance of feature dim " << j << "\n";
      var = 1e-8;
    }
    stats.mean.raw()[j] = mean;
    stats.std.raw()[j] = std::sqrt(var);
  }
  return stats;
}

void NormalizeInPlace(std::vector<Utterance>* split, const FeatureStats& s) {
  const Dim f = s.mean.numel();
  for (auto& utt : *split) {
    if (utt.features.shape()[1] != f) {
      throw ShapeError("feature width does not match the statistics");
    }
    const Dim t = utt.features.shape()[0];
    double* x = utt.features.raw();
    for (Dim i = 0; i < t; ++i) {
      for (Dim j = 0; j < f; ++j) {
        x[i * f + j] = (x[i * f + j] - s.mean.data()[j]) / s.std.data()[j];
      }
    }
  }
}

void WriteCorpusFile(const std::string& path, const CorpusMeta& meta,
                     const std::vector<Utterance>& utts) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(StrCat("cannot open ", path, " for writing"));
  os << "ilb-corpus-v1\n";
  os << "vocab_a " << meta.vocab_a << "\n";
  os << "vocab_b " << meta.vocab_b << "\n";
  os << "feature_dim " << meta.feature_dim << "\n";
  os << "utterances " << utts.size() << "\n";
  for (const auto& utt : utts) {
    os << "utt " << utt.id << "\n";
    os << "tokens";
    for (int t : utt.tokens) os << ' ' << t;
    os << "\nlangs";
    for (int l : utt.token_langs) os << ' ' << l;
    os << "\nspans";
    for (const auto& [s, e] : utt.frame_spans) os << ' ' << s << ':' << e;
    os << "\n";
    WriteTensor(os, utt.features);
  }
  if (!os) throw IoError(StrCat("failed writing ", path));
}

namespace {

std::vector<int> ParseInts(const std::string& line) {
  std::istringstream is(line);
  std::vector<int> out;
  int v;
  while (is >> v) out.push_back(v);
  return out;
}

}  // namespace

std::pair<CorpusMeta, std::vector<Utterance>> ReadCorpusFile(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(StrCat("cannot open ", path));
  std::string magic;
  if (!std::getline(is, magic) || magic != "ilb-corpus-v1") {
    throw IoError(StrCat(path, " is not a corpus file"));
  }
  CorpusMeta meta;
  meta.vocab_a = std::stoi(ReadHeaderLine(is, "vocab_a"));
  meta.vocab_b = std::stoi(ReadHeaderLine(is, "vocab_b"));
  meta.feature_dim = std::stoi(ReadHeaderLine(is, "feature_dim"));
  const int count = std::stoi(ReadHeaderLine(is, "utterances"));
  if (meta.vocab_a < 2 || meta.vocab_b < 2 || meta.feature_dim < 1 ||
      count < 0) {
    throw IoError(StrCat("corrupt corpus header in ", path));
  }

  std::vector<Utterance> utts;
  utts.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Utterance utt;
    utt.id = ReadHeaderLine(is, "utt");
    utt.tokens = ParseInts(ReadHeaderLine(is, "tokens"));
    utt.token_langs = ParseInts(ReadHeaderLine(is, "langs"));
    std::istringstream spans(ReadHeaderLine(is, "spans"));
    std::string pair;
    while (spans >> pair) {
      const size_t colon = pair.find(':');
      if (colon == std::string::npos) {
        throw IoError(StrCat("bad span in ", utt.id));
      }
      utt.frame_spans.emplace_back(std::stoi(pair.substr(0, colon)),
                                   std::stoi(pair.substr(colon + 1)));
    }
    utt.features = ReadTensor(is);

    if (utt.tokens.empty() ||
        utt.tokens.size() != utt.token_langs.size() ||
        utt.tokens.size() != utt.frame_spans.size()) {
      throw IoError(StrCat("inconsistent record ", utt.id));
    }
    if (utt.features.shape().size() != 2 ||
        utt.features.shape()[1] != meta.feature_dim) {
      throw IoError(StrCat("bad feature shape in ", utt.id));
    }
    int cursor = 0;
    for (size_t k = 0; k < utt.tokens.size(); ++k) {
      const int tok = utt.tokens[k];
      if (tok < 1 || tok >= meta.sos_id()) {
        throw IoError(StrCat("token id out of range in ", utt.id));
      }
      if (LangOfToken(tok, meta) != utt.token_langs[k]) {
        throw IoError(StrCat("language label mismatch in ", utt.id));
      }
      if (utt.frame_spans[k].first != cursor ||
          utt.frame_spans[k].second <= utt.frame_spans[k].first) {
        throw IoError(StrCat("spans do not tile the frames in ", utt.id));
      }
      cursor = utt.frame_spans[k].second;
    }
    if (cursor != utt.features.shape()[0]) {
      throw IoError(StrCat("spans do not cover the features in ", utt.id));
    }
    utts.push_back(std::move(utt));
  }
  return {meta, std::move(utts)};
}

void WriteStatsFile(const std::string& path, const FeatureStats& stats) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(StrCat("cannot open ", path, " for writing"));
  os << "ilb-stats-v1\n";
  WriteTensor(os, stats.mean);
  WriteTensor(os, stats.std);
  if (!os) throw IoError(StrCat("failed writing ", path));
}

FeatureStats ReadStatsFile(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(StrCat("cannot open ", path));
  std::string magic;
  if (!std::getline(is, magic) || magic != "ilb-stats-v1") {
    throw IoError(StrCat(path, " is not a stats file"));
  }
  FeatureStats stats;
  stats.mean = ReadTensor(is);
  stats.std = ReadTensor(is);
  if (stats.mean.shape() != stats.std.shape() ||
      stats.mean.shape().size() != 1) {
    throw IoError(StrCat("corrupt stats in ", path));
  }
  return stats;
}

}  // namespace ilb
