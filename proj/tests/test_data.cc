// ilb/tests/test_data.cc

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

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"

using namespace ilb;

namespace {

SyntheticSpec SmallSpec() {
  SyntheticSpec spec;
  spec.vocab_a = 12;
  spec.vocab_b = 12;
  spec.feature_dim = 8;
  spec.min_frames = 4;
  spec.max_frames = 8;
  spec.min_tokens = 3;
  spec.max_tokens = 8;
  spec.train_size = 60;
  spec.dev_size = 10;
  spec.test_size = 10;
  spec.seed = 11;
  return spec;
}

std::vector<double> SpanMean(const Utterance& utt, size_t k) {
  const Dim f = utt.features.shape()[1];
  const auto [s, e] = utt.frame_spans[k];
  std::vector<double> mean(static_cast<size_t>(f), 0.0);
  for (int t = s; t < e; ++t) {
    for (Dim j = 0; j < f; ++j) {
      mean[static_cast<size_t>(j)] += utt.features.data()[t * f + j];
    }
  }
  for (double& v : mean) v /= (e - s);
  return mean;
}

double Distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

}  // namespace

TEST_CASE("language labels follow the id layout") {
  CorpusMeta meta{4, 3, 8};
  CHECK_EQ(meta.total_vocab(), 10);
  CHECK_EQ(meta.sos_id(), 9);
  CHECK_EQ(LangOfToken(1, meta), kLangA);  // unk
  CHECK_EQ(LangOfToken(2, meta), kLangA);
  CHECK_EQ(LangOfToken(5, meta), kLangA);
  CHECK_EQ(LangOfToken(6, meta), kLangB);
  CHECK_EQ(LangOfToken(8, meta), kLangB);
  CHECK_EQ(LangOfToken(9, meta), kLangEos);
  CHECK_THROWS_AS(LangOfToken(0, meta), UsageError);
  CHECK_THROWS_AS(LangOfToken(10, meta), UsageError);

  std::vector<int> all_a = {2, 3, 4};
  CHECK_EQ(DeriveLangLabels(all_a, meta),
           std::vector<int>{kLangA, kLangA, kLangA, kLangEos});
  std::vector<int> alternating = {2, 6, 3, 7};
  CHECK_EQ(DeriveLangLabels(alternating, meta),
           std::vector<int>{kLangA, kLangB, kLangA, kLangB, kLangEos});
}

TEST_CASE("generation is deterministic per seed") {
  const SyntheticSpec spec = SmallSpec();
  Corpus a = GenerateCorpus(spec);
  Corpus b = GenerateCorpus(spec);
  REQUIRE_EQ(a.train.size(), b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK_EQ(a.train[i].id, b.train[i].id);
    CHECK_EQ(a.train[i].tokens, b.train[i].tokens);
    CHECK_EQ(a.train[i].frame_spans, b.train[i].frame_spans);
    REQUIRE_EQ(a.train[i].features.shape(), b.train[i].features.shape());
    bool same = true;
    for (Dim j = 0; j < a.train[i].features.numel(); ++j) {
      same = same &&
             a.train[i].features.data()[j] == b.train[i].features.data()[j];
    }
    CHECK(same);
  }
  SyntheticSpec other = spec;
  other.seed = 12;
  Corpus c = GenerateCorpus(other);
  CHECK_NE(c.train[0].tokens, a.train[0].tokens);
}

TEST_CASE("zero switch probability gives monolingual utterances") {
  SyntheticSpec spec = SmallSpec();
  spec.switch_prob = 0.0;
  spec.train_size = 200;
  Corpus corpus = GenerateCorpus(spec);
  for (const auto& utt : corpus.train) {
    const int lang = utt.token_langs.front();
    for (int l : utt.token_langs) CHECK_EQ(l, lang);
  }
}

TEST_CASE("language mix tracks the requested ratio") {
  SyntheticSpec spec = SmallSpec();
  spec.train_size = 1000;
  spec.dev_size = 0;
  spec.test_size = 0;
  spec.ratio_a = 0.7;
  Corpus corpus = GenerateCorpus(spec);
  int64_t a = 0, total = 0;
  int switched = 0;
  for (const auto& utt : corpus.train) {
    for (size_t i = 0; i < utt.token_langs.size(); ++i) {
      a += utt.token_langs[i] == kLangA;
      ++total;
      if (i > 0 && utt.token_langs[i] != utt.token_langs[i - 1]) ++switched;
    }
  }
  const double frac = static_cast<double>(a) / total;
  CHECK_GT(frac, 0.65);
  CHECK_LT(frac, 0.75);
  CHECK_GT(switched, 0);  // code-switching actually happens

  // Labels of the generated corpus match the id-derived labels exactly.
  for (const auto& utt : corpus.train) {
    auto derived = DeriveLangLabels(utt.tokens, corpus.meta);
    for (size_t i = 0; i < utt.tokens.size(); ++i) {
      CHECK_EQ(derived[i], utt.token_langs[i]);
    }
    CHECK_EQ(derived.back(), kLangEos);
  }
}

TEST_CASE("spans tile the frame axis and splits never share a sentence") {
  Corpus corpus = GenerateCorpus(SmallSpec());
  auto keys = [](const std::vector<Utterance>& utts) {
    std::set<std::vector<int>> out;
    for (const auto& u : utts) out.insert(u.tokens);
    return out;
  };
  auto train = keys(corpus.train), dev = keys(corpus.dev),
       test = keys(corpus.test);
  CHECK_EQ(train.size(), corpus.train.size());
  for (const auto& k : dev) CHECK_EQ(train.count(k), 0);
  for (const auto& k : test) {
    CHECK_EQ(train.count(k), 0);
    CHECK_EQ(dev.count(k), 0);
  }
  for (const auto& utt : corpus.train) {
    int cursor = 0;
    for (const auto& [s, e] : utt.frame_spans) {
      CHECK_EQ(s, cursor);
      CHECK_GT(e, s);
      cursor = e;
    }
    CHECK_EQ(cursor, utt.features.shape()[0]);
  }
}

TEST_CASE("token prototypes stay separable under the noise") {
  Corpus corpus = GenerateCorpus(SmallSpec());
  std::map<int, std::vector<double>> centroid;
  std::map<int, int> hits;
  for (const auto& utt : corpus.train) {
    for (size_t k = 0; k < utt.tokens.size(); ++k) {
      auto mean = SpanMean(utt, k);
      auto& c = centroid[utt.tokens[k]];
      if (c.empty()) c.assign(mean.size(), 0.0);
      for (size_t j = 0; j < mean.size(); ++j) c[j] += mean[j];
      hits[utt.tokens[k]]++;
    }
  }
  for (auto& [tok, c] : centroid) {
    for (double& v : c) v /= hits[tok];
  }
  // Every span's mean vector is closest to its own token's centroid.
  for (const auto& utt : corpus.train) {
    for (size_t k = 0; k < utt.tokens.size(); ++k) {
      auto mean = SpanMean(utt, k);
      int best = -1;
      double best_d = 1e300;
      for (const auto& [tok, c] : centroid) {
        const double d = Distance(mean, c);
        if (d < best_d) {
          best_d = d;
          best = tok;
        }
      }
      CHECK_EQ(best, utt.tokens[k]);
    }
  }
}

TEST_CASE("normalization standardizes the training split and inverts") {
  SyntheticSpec spec = SmallSpec();
  Corpus corpus = GenerateCorpus(spec);
  std::vector<Utterance> original;
  for (const auto& u : corpus.train) {
    Utterance copy = u;
    copy.features = Tensor::FromData(
        u.features.shape(),
        std::vector<double>(u.features.data().begin(),
                            u.features.data().end()));
    original.push_back(std::move(copy));
  }

  FeatureStats stats = ComputeStats(corpus.train);
  NormalizeInPlace(&corpus.train, stats);
  NormalizeInPlace(&corpus.dev, stats);

  FeatureStats after = ComputeStats(corpus.train);
  for (Dim j = 0; j < after.mean.numel(); ++j) {
    CHECK_LT(std::abs(after.mean.data()[j]), 1e-6);
    CHECK_EQ(after.std.data()[j], doctest::Approx(1.0).epsilon(1e-6));
  }

  // Undoing the transform recovers the raw features.
  for (size_t i = 0; i < corpus.train.size(); ++i) {
    const auto& norm = corpus.train[i].features;
    const auto& raw = original[i].features;
    const Dim f = norm.shape()[1];
    for (Dim idx = 0; idx < norm.numel(); ++idx) {
      const double undone =
          norm.data()[idx] * stats.std.data()[idx % f] +
          stats.mean.data()[idx % f];
      CHECK_LT(std::abs(undone - raw.data()[idx]), 1e-10);
    }
  }
}

TEST_CASE("constant feature dimensions are floored, not divided by zero") {
  Corpus corpus = GenerateCorpus(SmallSpec());
  for (auto& utt : corpus.train) {
    double* x = utt.features.raw();
    const Dim f = utt.features.shape()[1];
    for (Dim t = 0; t < utt.features.shape()[0]; ++t) x[t * f] = 3.5;
  }
  FeatureStats stats = ComputeStats(corpus.train);
  CHECK_EQ(stats.std.data()[0], doctest::Approx(1e-4).epsilon(1e-9));
  NormalizeInPlace(&corpus.train, stats);
  for (const auto& utt : corpus.train) {
    for (double v : utt.features.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("spec validation") {
  SyntheticSpec spec = SmallSpec();
  spec.vocab_a = 1;
  CHECK_THROWS_AS(spec.Validate(), ConfigError);
  spec = SmallSpec();
  spec.switch_prob = 0.9;  // 2 * 0.9 * 0.7 > 1
  CHECK_THROWS_AS(spec.Validate(), ConfigError);
  spec = SmallSpec();
  spec.min_frames = 1;
  CHECK_THROWS_AS(spec.Validate(), ConfigError);
  spec = SmallSpec();
  spec.min_tokens = 0;
  CHECK_THROWS_AS(spec.Validate(), ConfigError);
  spec = SmallSpec();
  spec.noise = -0.1;
  CHECK_THROWS_AS(spec.Validate(), ConfigError);
}

TEST_CASE("corpus files round-trip every field bit-exactly") {
  SyntheticSpec spec = SmallSpec();
  spec.train_size = 12;
  spec.dev_size = 0;
  spec.test_size = 0;
  Corpus corpus = GenerateCorpus(spec);
  const std::string path = "corpus_roundtrip.bin";
  WriteCorpusFile(path, corpus.meta, corpus.train);
  auto [meta, utts] = ReadCorpusFile(path);
  CHECK_EQ(meta.vocab_a, corpus.meta.vocab_a);
  CHECK_EQ(meta.vocab_b, corpus.meta.vocab_b);
  CHECK_EQ(meta.feature_dim, corpus.meta.feature_dim);
  REQUIRE_EQ(utts.size(), corpus.train.size());
  for (size_t i = 0; i < utts.size(); ++i) {
    CHECK_EQ(utts[i].id, corpus.train[i].id);
    CHECK_EQ(utts[i].tokens, corpus.train[i].tokens);
    CHECK_EQ(utts[i].token_langs, corpus.train[i].token_langs);
    CHECK_EQ(utts[i].frame_spans, corpus.train[i].frame_spans);
    bool same = true;
    for (Dim j = 0; j < utts[i].features.numel(); ++j) {
      same = same &&
             utts[i].features.data()[j] == corpus.train[i].features.data()[j];
    }
    CHECK(same);
  }
  std::remove(path.c_str());
}

TEST_CASE("corrupt corpus files are rejected") {
  SyntheticSpec spec = SmallSpec();
  spec.train_size = 3;
  spec.dev_size = 0;
  spec.test_size = 0;
  Corpus corpus = GenerateCorpus(spec);
  const std::string path = "corpus_corrupt.bin";
  WriteCorpusFile(path, corpus.meta, corpus.train);

  // Truncate the blob of the final record.
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 40));
  out.close();
  CHECK_THROWS_AS(ReadCorpusFile(path), IoError);

  std::ofstream bad(path, std::ios::binary);
  bad << "not-a-corpus\n";
  bad.close();
  CHECK_THROWS_AS(ReadCorpusFile(path), IoError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(ReadCorpusFile("missing_corpus.bin"), IoError);
}

TEST_CASE("stats files round-trip") {
  Rng rng(3);
  FeatureStats stats;
  stats.mean = Tensor::Uniform({8}, 1.0, &rng);
  stats.std = Tensor::Uniform({8}, 0.5, &rng);
  for (Dim i = 0; i < 8; ++i) stats.std.raw()[i] += 1.0;
  const std::string path = "stats_roundtrip.bin";
  WriteStatsFile(path, stats);
  FeatureStats loaded = ReadStatsFile(path);
  for (Dim i = 0; i < 8; ++i) {
    CHECK_EQ(loaded.mean.data()[i], stats.mean.data()[i]);
    CHECK_EQ(loaded.std.data()[i], stats.std.data()[i]);
  }
  std::remove(path.c_str());
}
