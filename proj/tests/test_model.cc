// ilb/tests/test_model.cc

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

#include "ilb/model.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"

using namespace ilb;

namespace {

ModelConfig MicroConfig(const std::string& preset) {
  ModelConfig cfg;
  cfg.feature_dim = 5;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.ld_decoder_layers = 1;
  cfg.ffn_dim = 32;
  cfg.conv_kernel = 7;
  cfg.vocab_size = 8;
  cfg.lang_vocab_size = 3;
  cfg.subsample_factor = 2;
  cfg.dropout = 0.0;
  cfg.ApplyPreset(preset);
  return cfg;
}

Tensor RandFeatures(Dim t, Dim f, uint64_t seed) {
  Rng rng(seed);
  return Tensor::Uniform({t, f}, 1.0, &rng);
}

bool AllFinite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool BitEqual(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (Dim i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config presets set exactly the advertised flags") {
  ModelConfig cfg = MicroConfig("1.0");
  CHECK_FALSE(cfg.flags.multitask_ld);
  cfg.ApplyPreset("1.1");
  CHECK(cfg.flags.multitask_ld);
  CHECK_FALSE(cfg.flags.encoder_bias);
  cfg.ApplyPreset("1.2");
  CHECK(cfg.flags.decoder_bias);
  CHECK_FALSE(cfg.flags.encoder_bias);
  cfg.ApplyPreset("1.3");
  CHECK(cfg.flags.encoder_bias);
  CHECK_FALSE(cfg.flags.decoder_bias);
  CHECK_FALSE(cfg.flags.ctc_bias);
  cfg.ApplyPreset("1.4");
  CHECK(cfg.flags.ctc_bias);
  CHECK_FALSE(cfg.flags.decoder_bias);
  cfg.ApplyPreset("1.5");
  CHECK(cfg.flags.decoder_bias);
  CHECK_FALSE(cfg.flags.ctc_bias);
  cfg.ApplyPreset("1.6");
  CHECK(cfg.flags.multitask_ld);
  CHECK(cfg.flags.encoder_bias);
  CHECK(cfg.flags.decoder_bias);
  CHECK(cfg.flags.ctc_bias);
  CHECK_THROWS_AS(cfg.ApplyPreset("2.0"), ConfigError);
}

TEST_CASE("config validation rejects inconsistent flag sets") {
  ModelConfig cfg = MicroConfig("1.0");
  cfg.flags.decoder_bias = true;
  CHECK_THROWS_AS(cfg.Validate(), ConfigError);
  cfg = MicroConfig("1.0");
  cfg.flags.multitask_ld = true;
  cfg.flags.ctc_bias = true;
  CHECK_THROWS_AS(cfg.Validate(), ConfigError);
  cfg = MicroConfig("1.0");
  cfg.model_dim = 10;  // not divisible by heads = 2? it is; use heads 3
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.Validate(), ConfigError);
  cfg = MicroConfig("1.0");
  cfg.subsample_factor = 3;
  CHECK_THROWS_AS(cfg.Validate(), ConfigError);
  cfg = MicroConfig("1.0");
  cfg.conv_kernel = 4;
  CHECK_THROWS_AS(cfg.Validate(), ConfigError);
}

TEST_CASE("encoder halves frame count per stride and rejects short input") {
  ModelConfig cfg = MicroConfig("1.0");
  cfg.subsample_factor = 4;
  IlbModel model(cfg, 1);
  Tensor x = RandFeatures(40, cfg.feature_dim, 9);
  Tensor h = model.Encode(x, {});
  CHECK_EQ(h.shape(), Shape{10, cfg.model_dim});
  CHECK_THROWS_AS(model.Encode(RandFeatures(7, cfg.feature_dim, 9), {}),
                  UsageError);
  CHECK_THROWS_AS(model.Encode(RandFeatures(40, 3, 9), {}), UsageError);
}

TEST_CASE("forward output shapes and normalization") {
  ModelConfig cfg = MicroConfig("1.6");
  IlbModel model(cfg, 7);
  Tensor x = RandFeatures(12, cfg.feature_dim, 3);
  std::vector<int> tokens = {2, 3, 4};
  auto out = model.ForwardAll(x, tokens, {});

  const Dim t1 = 6, p = 4;
  CHECK_EQ(out.h.shape(), Shape{t1, cfg.model_dim});
  CHECK_EQ(out.h_prime.shape(),
           Shape{t1, cfg.model_dim + cfg.lang_vocab_size});
  CHECK_EQ(out.frame_posteriors.shape(), Shape{t1, cfg.lang_vocab_size});
  CHECK_EQ(out.ctc_log_probs.shape(), Shape{t1, cfg.vocab_size});
  CHECK_EQ(out.asr_log_probs.shape(), Shape{p, cfg.vocab_size});
  CHECK_EQ(out.ld_log_probs.shape(), Shape{p, cfg.lang_vocab_size});
  CHECK_EQ(out.ld_attention.shape(), Shape{cfg.heads, p, t1});

  auto rows_normalized = [](const Tensor& lp) {
    const Dim cols = lp.shape().back();
    const Dim rows = lp.numel() / cols;
    for (Dim r = 0; r < rows; ++r) {
      double lse = kNegInf;
      for (Dim c = 0; c < cols; ++c) {
        lse = LogAdd(lse, lp.data()[r * cols + c]);
      }
      if (std::abs(lse) > 1e-6) return false;
    }
    return true;
  };
  CHECK(rows_normalized(out.ctc_log_probs));
  CHECK(rows_normalized(out.asr_log_probs));
  CHECK(rows_normalized(out.ld_log_probs));

  // Frame posteriors and attention weights sum to one directly.
  for (Dim t = 0; t < t1; ++t) {
    double sum = 0;
    for (Dim l = 0; l < cfg.lang_vocab_size; ++l) {
      sum += out.frame_posteriors.at({t, l});
    }
    CHECK_EQ(sum, doctest::Approx(1.0).epsilon(1e-12));
  }
  for (Dim h = 0; h < cfg.heads; ++h) {
    for (Dim n = 0; n < p; ++n) {
      double sum = 0;
      for (Dim t = 0; t < t1; ++t) sum += out.ld_attention.at({h, n, t});
      CHECK_EQ(sum, doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("biased encoder output keeps the unbiased rows intact") {
  ModelConfig cfg = MicroConfig("1.6");
  IlbModel model(cfg, 21);
  Tensor x = RandFeatures(12, cfg.feature_dim, 5);
  auto out = model.ForwardAll(x, std::vector<int>{2, 5}, {});
  std::vector<Dim> widths = {cfg.model_dim, cfg.lang_vocab_size};
  auto parts = SplitLastDim(out.h_prime, widths);
  CHECK(BitEqual(parts[0], out.h));
  CHECK(BitEqual(parts[1], out.frame_posteriors));
}

TEST_CASE("presets without language components never produce them") {
  ModelConfig cfg = MicroConfig("1.0");
  IlbModel model(cfg, 3);
  Tensor x = RandFeatures(12, cfg.feature_dim, 5);
  auto out = model.ForwardAll(x, std::vector<int>{2, 3}, {});
  CHECK_FALSE(out.h_prime.defined());
  CHECK_FALSE(out.frame_posteriors.defined());
  CHECK_FALSE(out.ld_log_probs.defined());
  CHECK_FALSE(out.ld_attention.defined());
  CHECK(out.asr_log_probs.defined());

  CHECK_THROWS_AS(model.FrameBias(out.h), ConfigError);
  std::vector<int> prefix = {static_cast<int>(cfg.sos_id()), 2};
  CHECK_THROWS_AS(model.LdDecode(prefix, out.h, {}), ConfigError);
}

TEST_CASE("ctc head width follows the ctc_bias flag") {
  auto head_shape = [](const std::string& preset) {
    ModelConfig cfg = MicroConfig(preset);
    IlbModel model(cfg, 1);
    for (const auto& [name, t] : model.params()) {
      if (name == "ctc_head.w") return t.shape();
    }
    return Shape{};
  };
  ModelConfig cfg = MicroConfig("1.0");
  const Dim d = cfg.model_dim, v = cfg.vocab_size, vl = cfg.lang_vocab_size;
  CHECK_EQ(head_shape("1.0"), Shape{d, v});
  CHECK_EQ(head_shape("1.3"), Shape{d, v});
  CHECK_EQ(head_shape("1.5"), Shape{d, v});
  CHECK_EQ(head_shape("1.4"), Shape{d + vl, v});
  CHECK_EQ(head_shape("1.6"), Shape{d + vl, v});
}

TEST_CASE("multitask-only preset leaves the recognition path untouched") {
  // Same seed, same parameter names for shared components, so the ASR half
  // of preset 1.1 must be bit-identical to preset 1.0 when no dropout runs.
  Tensor x = RandFeatures(16, 5, 77);
  std::vector<int> tokens = {2, 4, 6};
  IlbModel base(MicroConfig("1.0"), 99);
  IlbModel multi(MicroConfig("1.1"), 99);
  auto a = base.ForwardAll(x, tokens, {});
  auto b = multi.ForwardAll(x, tokens, {});
  CHECK(BitEqual(a.h, b.h));
  CHECK(BitEqual(a.ctc_log_probs, b.ctc_log_probs));
  CHECK(BitEqual(a.asr_log_probs, b.asr_log_probs));
  CHECK(b.ld_log_probs.defined());
}

TEST_CASE("decoders are causal in the token prefix") {
  ModelConfig cfg = MicroConfig("1.6");
  IlbModel model(cfg, 13);
  Tensor x = RandFeatures(12, cfg.feature_dim, 1);
  std::vector<int> tok_a = {2, 3, 4, 5};
  std::vector<int> tok_b = {2, 3, 4, 6};  // differs at the last position
  auto a = model.ForwardAll(x, tok_a, {});
  auto b = model.ForwardAll(x, tok_b, {});
  for (Dim n = 0; n < 4; ++n) {  // positions 0..3 see tokens before slot 4
    for (Dim vv = 0; vv < cfg.vocab_size; ++vv) {
      if (n < 4) {
        CHECK_EQ(a.asr_log_probs.at({n, vv}), b.asr_log_probs.at({n, vv}));
      }
    }
    for (Dim l = 0; l < cfg.lang_vocab_size; ++l) {
      CHECK_EQ(a.ld_log_probs.at({n, l}), b.ld_log_probs.at({n, l}));
    }
  }
  // The final position consumes the changed token.
  bool changed = false;
  for (Dim vv = 0; vv < cfg.vocab_size; ++vv) {
    changed = changed ||
              a.asr_log_probs.at({4, vv}) != b.asr_log_probs.at({4, vv});
  }
  CHECK(changed);
}

TEST_CASE("zeroed weights with identity norms still give finite outputs") {
  ModelConfig cfg = MicroConfig("1.6");
  IlbModel model(cfg, 55);
  for (auto& [name, param] : model.params()) {
    if (name.find(".gain") != std::string::npos ||
        name.find(".bias") != std::string::npos) {
      continue;
    }
    std::fill(param.raw(), param.raw() + param.numel(), 0.0);
  }
  Tensor x = RandFeatures(12, cfg.feature_dim, 5);
  auto out = model.ForwardAll(x, std::vector<int>{2, 3}, {});
  CHECK(AllFinite(out.h));
  CHECK(AllFinite(out.ctc_log_probs));
  CHECK(AllFinite(out.asr_log_probs));
  CHECK(AllFinite(out.ld_log_probs));
}

TEST_CASE("token bias feeds gradient to embeddings and posteriors alike") {
  ModelConfig cfg = MicroConfig("1.6");
  IlbModel model(cfg, 17);
  Rng rng(2);
  Tensor emb = Tensor::Uniform({3, cfg.model_dim}, 1.0, &rng, true);
  Tensor post = Tensor::Uniform({3, cfg.lang_vocab_size}, 0.5, &rng, true);
  Tape tape;
  TapeScope scope(tape);
  tape.Backward(Sum(model.TokenBias(emb, post)));
  double emb_norm = 0, post_norm = 0;
  for (double g : emb.grad()) emb_norm += g * g;
  for (double g : post.grad()) post_norm += g * g;
  CHECK_GT(emb_norm, 0);
  CHECK_GT(post_norm, 0);
  Tensor short_post = Tensor::Uniform({2, cfg.lang_vocab_size}, 0.5, &rng);
  CHECK_THROWS_AS(model.TokenBias(emb, short_post), ShapeError);
}

TEST_CASE("prefix validation") {
  ModelConfig cfg = MicroConfig("1.1");
  IlbModel model(cfg, 5);
  Tensor x = RandFeatures(12, cfg.feature_dim, 5);
  auto enc = model.EncodeUtterance(x, {});
  std::vector<int> empty;
  CHECK_THROWS_AS(model.AsrDecode(empty, enc.memory, nullptr, {}),
                  UsageError);
  std::vector<int> no_sos = {2, 3};
  CHECK_THROWS_AS(model.AsrDecode(no_sos, enc.memory, nullptr, {}),
                  UsageError);
  // Posterior argument must match the decoder_bias flag.
  std::vector<int> prefix = {static_cast<int>(cfg.sos_id()), 2};
  Tensor fake = Tensor::Zeros({2, cfg.lang_vocab_size});
  CHECK_THROWS_AS(model.AsrDecode(prefix, enc.memory, &fake, {}), UsageError);
  ModelConfig cfg2 = MicroConfig("1.2");
  IlbModel model2(cfg2, 5);
  auto enc2 = model2.EncodeUtterance(x, {});
  CHECK_THROWS_AS(model2.AsrDecode(prefix, enc2.memory, nullptr, {}),
                  UsageError);
}

TEST_CASE("encoder gradient w.r.t. features matches finite differences") {
  ModelConfig cfg = MicroConfig("1.0");
  cfg.encoder_layers = 1;
  IlbModel model(cfg, 23);
  Rng rng(4);
  Tensor w = Tensor::Uniform({5, cfg.model_dim}, 1.0, &rng);
  auto f = [&](const Tensor& feats) {
    return Sum(Mul(model.Encode(feats, {}), w));
  };
  Tensor x = RandFeatures(10, cfg.feature_dim, 31);
  CHECK_LT(FiniteDiffCheck(f, x, 1e-5), 1e-4);
}

TEST_CASE("full model gradient matches finite differences on a micro config") {
  ModelConfig cfg = MicroConfig("1.6");
  IlbModel model(cfg, 41);
  Tensor x = RandFeatures(10, cfg.feature_dim, 47);
  std::vector<int> tokens = {2, 4, 3};
  Rng rng(8);
  Tensor wa = Tensor::Uniform({4, cfg.vocab_size}, 1.0, &rng);
  Tensor wc = Tensor::Uniform({5, cfg.vocab_size}, 1.0, &rng);
  Tensor wl = Tensor::Uniform({4, cfg.lang_vocab_size}, 1.0, &rng);

  auto readout = [&]() {
    auto out = model.ForwardAll(x, tokens, {});
    return Add(Add(Sum(Mul(out.asr_log_probs, wa)),
                   Sum(Mul(out.ctc_log_probs, wc))),
               Sum(Mul(out.ld_log_probs, wl)));
  };

  // Analytic gradients for every parameter in one pass.
  {
    Tape tape;
    TapeScope scope(tape);
    tape.Backward(readout());
  }

  // Central differences on a sample of parameter coordinates.
  Rng pick(99);
  const double h = 1e-4;
  int checked = 0;
  NoGradScope ng;
  while (checked < 50) {
    auto& [name, param] =
        model.params()[static_cast<size_t>(pick.UniformInt(
            0, static_cast<int>(model.params().size()) - 1))];
    const Dim i = pick.UniformInt(0, static_cast<int>(param.numel()) - 1);
    const double saved = param.data()[static_cast<size_t>(i)];
    param.raw()[i] = saved + h;
    const double fp = readout().item();
    param.raw()[i] = saved - h;
    const double fm = readout().item();
    param.raw()[i] = saved;
    const double numeric = (fp - fm) / (2 * h);
    const double analytic = param.grad()[static_cast<size_t>(i)];
    const double rel =
        std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    CHECK_LT(rel, 1e-3);
    ++checked;
  }
}

TEST_CASE("checkpoints restore parameters bit-exactly and rewrite identically") {
  ModelConfig cfg = MicroConfig("1.6");
  IlbModel model(cfg, 61);
  Tensor x = RandFeatures(12, cfg.feature_dim, 2);
  std::vector<int> tokens = {2, 3};
  auto before = model.ForwardAll(x, tokens, {});

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.meta.emplace_back("purpose", "test");
  ckpt.tensors = model.params();
  Rng rng(5);
  ckpt.tensors.emplace_back("feat_mean",
                            Tensor::Uniform({cfg.feature_dim}, 1.0, &rng));

  const std::string path = "ckpt_roundtrip.bin";
  WriteCheckpoint(path, ckpt);
  Checkpoint loaded = ReadCheckpoint(path);
  CHECK_EQ(loaded.meta.size(), 1);
  CHECK_EQ(loaded.config.vocab_size, cfg.vocab_size);
  CHECK_EQ(loaded.config.flags.ctc_bias, cfg.flags.ctc_bias);
  CHECK_EQ(loaded.config.dropout, cfg.dropout);

  IlbModel fresh(loaded.config, 62);  // different seed, then overwritten
  fresh.LoadTensors(loaded.tensors);
  auto after = fresh.ForwardAll(x, tokens, {});
  CHECK(BitEqual(before.asr_log_probs, after.asr_log_probs));
  CHECK(BitEqual(before.ctc_log_probs, after.ctc_log_probs));
  CHECK(BitEqual(before.ld_log_probs, after.ld_log_probs));

  const std::string path2 = "ckpt_roundtrip2.bin";
  WriteCheckpoint(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK_EQ(s1.str(), s2.str());
  std::remove(path.c_str());
  std::remove(path2.c_str());

  // Missing parameters are an error.
  loaded.tensors.pop_back();  // drop feat_mean (fine, not a parameter)
  loaded.tensors.pop_back();  // drop a real parameter
  IlbModel incomplete(loaded.config, 63);
  CHECK_THROWS_AS(incomplete.LoadTensors(loaded.tensors), IoError);
}

TEST_CASE("dropout draws change outputs only in training mode") {
  ModelConfig cfg = MicroConfig("1.0");
  cfg.dropout = 0.2;
  IlbModel model(cfg, 71);
  Tensor x = RandFeatures(12, cfg.feature_dim, 5);
  std::vector<int> tokens = {2, 3};
  auto eval_a = model.ForwardAll(x, tokens, {});
  auto eval_b = model.ForwardAll(x, tokens, {});
  CHECK(BitEqual(eval_a.asr_log_probs, eval_b.asr_log_probs));

  Rng drop1(DeriveSeed(71, "dropout", 0, 0));
  ForwardCtx ctx1{&drop1, cfg.dropout};
  auto train_a = model.ForwardAll(x, tokens, ctx1);
  Rng drop2(DeriveSeed(71, "dropout", 0, 0));
  ForwardCtx ctx2{&drop2, cfg.dropout};
  auto train_b = model.ForwardAll(x, tokens, ctx2);
  CHECK(BitEqual(train_a.asr_log_probs, train_b.asr_log_probs));
  CHECK_FALSE(BitEqual(train_a.asr_log_probs, eval_a.asr_log_probs));
}
