// ilb/test_lm.cc

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

#include "ilb/lm.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "ilb/data.h"
#include "ilb/rng.h"
#include "ilb/training.h"

using namespace ilb;

namespace {

LmConfig TinyConfig(Dim vocab) {
  LmConfig cfg;
  cfg.vocab_size = vocab;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.ffn_dim = 32;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("forward rows are normalized next-token distributions") {
  LmConfig cfg = TinyConfig(7);
  LmModel lm(cfg, 3);
  std::vector<int> prefix = {6, 1, 3, 2};
  Tensor out = lm.Forward(prefix, {});
  REQUIRE_EQ(out.shape(), Shape({4, 7}));
  for (Dim p = 0; p < 4; ++p) {
    double sum = 0;
    for (Dim v = 0; v < 7; ++v) {
      const double lp = out.at({p, v});
      CHECK_LE(lp, 1e-12);
      sum += std::exp(lp);
    }
    CHECK_LT(std::abs(sum - 1.0), 1e-9);
  }
}

TEST_CASE("forward is causal") {
  LmConfig cfg = TinyConfig(9);
  LmModel lm(cfg, 11);
  std::vector<int> a = {8, 2, 5, 3, 1};
  std::vector<int> b = {8, 2, 5, 7, 4};
  Tensor oa = lm.Forward(a, {});
  Tensor ob = lm.Forward(b, {});
  for (Dim p = 0; p < 3; ++p) {
    for (Dim v = 0; v < cfg.vocab_size; ++v) {
      CHECK_EQ(oa.at({p, v}), ob.at({p, v}));
    }
  }
  double diff = 0;
  for (Dim v = 0; v < cfg.vocab_size; ++v) {
    diff += std::abs(oa.at({3, v}) - ob.at({3, v}));
  }
  CHECK_GT(diff, 0.0);
}

TEST_CASE("prefix validation") {
  LmConfig cfg = TinyConfig(6);
  LmModel lm(cfg, 1);
  std::vector<int> empty;
  CHECK_THROWS_AS(lm.Forward(empty, {}), UsageError);
  std::vector<int> no_sos = {1, 2};
  CHECK_THROWS_AS(lm.Forward(no_sos, {}), UsageError);
  std::vector<int> blank = {5, 0};
  CHECK_THROWS_AS(lm.Forward(blank, {}), UsageError);
  std::vector<int> big = {5, 6};
  CHECK_THROWS_AS(lm.Forward(big, {}), UsageError);
}

TEST_CASE("config validation") {
  LmConfig cfg = TinyConfig(6);
  cfg.heads = 3;  // does not divide model_dim
  CHECK_THROWS_AS(LmModel(cfg, 1), ConfigError);
  cfg = TinyConfig(2);
  CHECK_THROWS_AS(LmModel(cfg, 1), ConfigError);
  cfg = TinyConfig(6);
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(LmModel(cfg, 1), ConfigError);
}

TEST_CASE("vocabulary hash separates token layouts") {
  CorpusMeta a;
  a.vocab_a = 30;
  a.vocab_b = 30;
  CorpusMeta b;
  b.vocab_a = 29;
  b.vocab_b = 31;  // same total, different split
  CorpusMeta c;
  c.vocab_a = 30;
  c.vocab_b = 30;
  CHECK_EQ(VocabHash(a), VocabHash(c));
  CHECK_NE(VocabHash(a), VocabHash(b));
}

TEST_CASE("gradients match finite differences") {
  LmConfig cfg = TinyConfig(7);
  cfg.layers = 1;
  LmModel lm(cfg, 17);
  std::vector<int> prefix = {6, 2, 4, 1};
  std::vector<int> targets = {2, 4, 1, 6};

  auto loss = [&]() { return LabelSmoothedCe(lm.Forward(prefix, {}), targets, 0.0); };
  {
    Tape tape;
    TapeScope scope(tape);
    tape.Backward(loss());
  }

  Rng pick(5);
  const double h = 1e-4;
  NoGradScope ng;
  for (int k = 0; k < 12; ++k) {
    auto& [name, param] = lm.params()[static_cast<size_t>(
        pick.UniformInt(0, static_cast<int>(lm.params().size()) - 1))];
    const Dim i = pick.UniformInt(0, static_cast<int>(param.numel()) - 1);
    const double saved = param.data()[static_cast<size_t>(i)];
    param.raw()[i] = saved + h;
    const double fp = loss().item();
    param.raw()[i] = saved - h;
    const double fm = loss().item();
    param.raw()[i] = saved;
    const double numeric = (fp - fm) / (2 * h);
    const double analytic = param.grad()[static_cast<size_t>(i)];
    const double rel =
        std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    CHECK_LT(rel, 1e-3);
  }
}

TEST_CASE("checkpoint round-trips and restores a model bit-exactly") {
  LmConfig cfg = TinyConfig(8);
  LmModel lm(cfg, 29);
  std::vector<int> prefix = {7, 3, 1};
  Tensor before = lm.Forward(prefix, {});

  LmCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.vocab_hash = 12345u;
  ckpt.tensors = lm.params();
  const std::string path = "lm_ckpt_roundtrip.bin";
  WriteLmCheckpoint(path, ckpt);

  LmCheckpoint loaded = ReadLmCheckpoint(path);
  CHECK_EQ(loaded.config.vocab_size, cfg.vocab_size);
  CHECK_EQ(loaded.config.model_dim, cfg.model_dim);
  CHECK_EQ(loaded.config.heads, cfg.heads);
  CHECK_EQ(loaded.config.layers, cfg.layers);
  CHECK_EQ(loaded.config.ffn_dim, cfg.ffn_dim);
  CHECK_EQ(loaded.config.dropout, cfg.dropout);
  CHECK_EQ(loaded.vocab_hash, 12345u);

  LmModel other(loaded.config, 999);  // different init, then overwritten
  other.LoadTensors(loaded.tensors);
  Tensor after = other.Forward(prefix, {});
  for (Dim p = 0; p < before.shape()[0]; ++p) {
    for (Dim v = 0; v < before.shape()[1]; ++v) {
      CHECK_EQ(before.at({p, v}), after.at({p, v}));
    }
  }

  loaded.tensors.pop_back();
  LmModel incomplete(loaded.config, 7);
  CHECK_THROWS_AS(incomplete.LoadTensors(loaded.tensors), IoError);
  std::remove(path.c_str());

  std::ofstream bad("lm_ckpt_bad.bin", std::ios::binary);
  bad << "not-a-checkpoint\n";
  bad.close();
  CHECK_THROWS_AS(ReadLmCheckpoint("lm_ckpt_bad.bin"), IoError);
  std::remove("lm_ckpt_bad.bin");
}

TEST_CASE("training lowers dev cross entropy deterministically") {
  SyntheticSpec spec;
  spec.vocab_a = 5;
  spec.vocab_b = 5;
  spec.min_tokens = 3;
  spec.max_tokens = 6;
  spec.train_size = 40;
  spec.dev_size = 10;
  spec.test_size = 4;
  spec.seed = 3;
  Corpus corpus = GenerateCorpus(spec);

  LmConfig mc = TinyConfig(corpus.meta.total_vocab());
  mc.layers = 1;
  LmTrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 8;
  tc.peak_lr = 2e-3;
  tc.warmup_steps = 10;
  tc.seed = 7;

  LmModel lm(mc, 13);
  std::ostringstream log;
  LmTrainResult res = TrainLm(&lm, corpus, tc, &log);
  CHECK_FALSE(res.diverged);
  REQUIRE_EQ(res.dev_ce.size(), 4);
  CHECK_LT(res.dev_ce.back().second, res.dev_ce.front().second);
  // Every epoch line is "<epoch> <dev_ce>".
  std::istringstream in(log.str());
  int epoch;
  double ce;
  int lines = 0;
  while (in >> epoch >> ce) {
    CHECK_EQ(epoch, lines + 1);
    ++lines;
  }
  CHECK_EQ(lines, 4);

  LmModel again(mc, 13);
  LmTrainResult res2 = TrainLm(&again, corpus, tc, nullptr);
  REQUIRE_EQ(res2.dev_ce.size(), res.dev_ce.size());
  for (size_t i = 0; i < res.dev_ce.size(); ++i) {
    CHECK_EQ(res.dev_ce[i].second, res2.dev_ce[i].second);
  }
}

TEST_CASE("training rejects a mismatched vocabulary") {
  SyntheticSpec spec;
  spec.vocab_a = 4;
  spec.vocab_b = 4;
  spec.train_size = 6;
  spec.dev_size = 2;
  spec.test_size = 2;
  spec.min_tokens = 2;
  spec.max_tokens = 4;
  Corpus corpus = GenerateCorpus(spec);
  LmConfig mc = TinyConfig(corpus.meta.total_vocab() + 1);
  LmModel lm(mc, 1);
  LmTrainConfig tc;
  CHECK_THROWS_AS(TrainLm(&lm, corpus, tc, nullptr), ConfigError);
}
