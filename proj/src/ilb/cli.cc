// ilb/cli.cc

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

#include "ilb/cli.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ilb/data.h"
#include "ilb/decoding.h"
#include "ilb/lm.h"
#include "ilb/metrics.h"
#include "ilb/model.h"
#include "ilb/training.h"

namespace fs = std::filesystem;

namespace ilb {

namespace {

std::string FmtDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string JoinPath(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Relative corpus paths resolve against ILB_CORPUS_ROOT when it is set.
std::string ResolveCorpus(const std::string& path) {
  const char* root = std::getenv("ILB_CORPUS_ROOT");
  if (root != nullptr && *root != '\0' && fs::path(path).is_relative()) {
    return (fs::path(root) / path).string();
  }
  return path;
}

std::string DefaultRunDir(uint64_t seed) {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "runs/%04d%02d%02d-%02d%02d%02d-%llu",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec,
                static_cast<unsigned long long>(seed));
  return buf;
}

void RequireSameMeta(const CorpusMeta& a, const CorpusMeta& b,
                     const std::string& what) {
  if (a.vocab_a != b.vocab_a || a.vocab_b != b.vocab_b ||
      a.feature_dim != b.feature_dim) {
    throw ConfigError(StrCat("corpus metadata differs across ", what));
  }
}

Corpus LoadCorpusDir(const std::string& dir) {
  Corpus corpus;
  auto [meta_train, train] = ReadCorpusFile(JoinPath(dir, "train.bin"));
  auto [meta_dev, dev] = ReadCorpusFile(JoinPath(dir, "dev.bin"));
  auto [meta_test, test] = ReadCorpusFile(JoinPath(dir, "test.bin"));
  RequireSameMeta(meta_train, meta_dev, "train/dev");
  RequireSameMeta(meta_train, meta_test, "train/test");
  corpus.meta = meta_train;
  corpus.train = std::move(train);
  corpus.dev = std::move(dev);
  corpus.test = std::move(test);
  return corpus;
}

const std::vector<Utterance>& PickSplit(const Corpus& corpus,
                                        const std::string& split) {
  if (split == "train") return corpus.train;
  if (split == "dev") return corpus.dev;
  if (split == "test") return corpus.test;
  throw UsageError(StrCat("unknown split ", split));
}

double Median(std::vector<double> v) {
  if (v.empty()) throw UsageError("median of an empty sample");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Checks that a declared artifact exists and parses with its own reader, so
// a command cannot exit 0 after writing a truncated file.
void ValidateArtifact(const std::string& dir, const std::string& rel) {
  const std::string path = JoinPath(dir, rel);
  const std::string base = fs::path(rel).filename().string();
  if (base == "train.bin" || base == "dev.bin" || base == "test.bin") {
    ReadCorpusFile(path);
  } else if (base == "stats.bin") {
    ReadStatsFile(path);
  } else if (base == "lm.bin") {
    ReadLmCheckpoint(path);
  } else if (base.size() > 4 && base.substr(base.size() - 4) == ".bin") {
    ReadCheckpoint(path);
  } else {
    std::ifstream is(path, std::ios::binary);
    if (!is || is.peek() == std::ifstream::traits_type::eof()) {
      throw IoError(StrCat("artifact ", path, " is missing or empty"));
    }
  }
}

void ValidateArtifacts(const std::string& dir, const RunManifest& m) {
  for (const auto& rel : m.artifacts) ValidateArtifact(dir, rel);
}

void StartRun(const std::string& dir, const RunManifest& m) {
  fs::create_directories(dir);
  WriteManifest(JoinPath(dir, "manifest.txt"), m);
}

// Shared model-size and optimizer knobs for train and ablate.
struct TrainKnobs {
  TrainConfig tc;
  Dim model_dim = 64;
  Dim heads = 4;
  Dim encoder_layers = 4;
  Dim decoder_layers = 2;
  Dim ld_decoder_layers = 2;
  Dim ffn_dim = 256;
  Dim conv_kernel = 15;
  Dim subsample_factor = 4;
  double dropout = 0.1;
};

void AddTrainKnobs(CLI::App* cmd, TrainKnobs* k) {
  cmd->add_option("--seed", k->tc.seed, "root RNG seed")
      ->capture_default_str();
  cmd->add_option("--epochs", k->tc.epochs, "training epochs")
      ->capture_default_str();
  cmd->add_option("--batch-size", k->tc.batch_size, "utterances per step")
      ->capture_default_str();
  cmd->add_option("--peak-lr", k->tc.peak_lr, "peak learning rate")
      ->capture_default_str();
  cmd->add_option("--warmup-steps", k->tc.warmup_steps, "LR warmup steps")
      ->capture_default_str();
  cmd->add_option("--alpha", k->tc.alpha, "CTC weight in the joint loss")
      ->capture_default_str();
  cmd->add_option("--beta", k->tc.beta, "diarization loss weight")
      ->capture_default_str();
  cmd->add_option("--label-smoothing", k->tc.label_smoothing,
                  "cross-entropy smoothing mass")
      ->capture_default_str();
  cmd->add_option("--augment", k->tc.augment,
                  "apply time/feature masking (0 or 1)")
      ->capture_default_str();
  cmd->add_option("--time-mask-frac", k->tc.time_mask_frac,
                  "max masked share of frames")
      ->capture_default_str();
  cmd->add_option("--feat-mask-frac", k->tc.feat_mask_frac,
                  "max masked share of feature dims")
      ->capture_default_str();
  cmd->add_option("--average-top-k", k->tc.average_top_k,
                  "checkpoints averaged into the final model")
      ->capture_default_str();
  cmd->add_option("--model-dim", k->model_dim, "model width")
      ->capture_default_str();
  cmd->add_option("--heads", k->heads, "attention heads")
      ->capture_default_str();
  cmd->add_option("--encoder-layers", k->encoder_layers, "conformer blocks")
      ->capture_default_str();
  cmd->add_option("--decoder-layers", k->decoder_layers, "decoder blocks")
      ->capture_default_str();
  cmd->add_option("--ld-decoder-layers", k->ld_decoder_layers,
                  "diarization decoder blocks")
      ->capture_default_str();
  cmd->add_option("--ffn-dim", k->ffn_dim, "feed-forward width")
      ->capture_default_str();
  cmd->add_option("--conv-kernel", k->conv_kernel,
                  "depthwise convolution kernel")
      ->capture_default_str();
  cmd->add_option("--subsample-factor", k->subsample_factor,
                  "encoder frame subsampling")
      ->capture_default_str();
  cmd->add_option("--dropout", k->dropout, "dropout rate")
      ->capture_default_str();
}

void AppendTrainKnobOpts(const TrainKnobs& k, RunManifest* m) {
  auto& o = m->options;
  o.emplace_back("seed", std::to_string(k.tc.seed));
  o.emplace_back("epochs", std::to_string(k.tc.epochs));
  o.emplace_back("batch-size", std::to_string(k.tc.batch_size));
  o.emplace_back("peak-lr", FmtDouble(k.tc.peak_lr));
  o.emplace_back("warmup-steps", std::to_string(k.tc.warmup_steps));
  o.emplace_back("alpha", FmtDouble(k.tc.alpha));
  o.emplace_back("beta", FmtDouble(k.tc.beta));
  o.emplace_back("label-smoothing", FmtDouble(k.tc.label_smoothing));
  o.emplace_back("augment", k.tc.augment ? "1" : "0");
  o.emplace_back("time-mask-frac", FmtDouble(k.tc.time_mask_frac));
  o.emplace_back("feat-mask-frac", FmtDouble(k.tc.feat_mask_frac));
  o.emplace_back("average-top-k", std::to_string(k.tc.average_top_k));
  o.emplace_back("model-dim", std::to_string(k.model_dim));
  o.emplace_back("heads", std::to_string(k.heads));
  o.emplace_back("encoder-layers", std::to_string(k.encoder_layers));
  o.emplace_back("decoder-layers", std::to_string(k.decoder_layers));
  o.emplace_back("ld-decoder-layers", std::to_string(k.ld_decoder_layers));
  o.emplace_back("ffn-dim", std::to_string(k.ffn_dim));
  o.emplace_back("conv-kernel", std::to_string(k.conv_kernel));
  o.emplace_back("subsample-factor", std::to_string(k.subsample_factor));
  o.emplace_back("dropout", FmtDouble(k.dropout));
}

ModelConfig BuildModelConfig(const TrainKnobs& k, const CorpusMeta& meta,
                             const std::string& preset) {
  ModelConfig cfg;
  cfg.feature_dim = meta.feature_dim;
  cfg.vocab_size = meta.total_vocab();
  cfg.model_dim = k.model_dim;
  cfg.heads = k.heads;
  cfg.encoder_layers = k.encoder_layers;
  cfg.decoder_layers = k.decoder_layers;
  cfg.ld_decoder_layers = k.ld_decoder_layers;
  cfg.ffn_dim = k.ffn_dim;
  cfg.conv_kernel = k.conv_kernel;
  cfg.subsample_factor = k.subsample_factor;
  cfg.dropout = k.dropout;
  cfg.ApplyPreset(preset);
  cfg.Validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// gen

struct GenParams {
  SyntheticSpec spec;
  std::string out;
  bool force = false;
};

int CmdGen(const GenParams& p, std::ostream& out) {
  const std::string dir = p.out.empty() ? DefaultRunDir(p.spec.seed) : p.out;
  if (fs::exists(dir) && !fs::is_empty(dir) && !p.force) {
    throw UsageError(StrCat(dir, " exists and is not empty; use --force"));
  }

  RunManifest m;
  m.command = "gen";
  m.version = kVersion;
  m.seed = p.spec.seed;
  auto& o = m.options;
  o.emplace_back("vocab-a", std::to_string(p.spec.vocab_a));
  o.emplace_back("vocab-b", std::to_string(p.spec.vocab_b));
  o.emplace_back("switch-prob", FmtDouble(p.spec.switch_prob));
  o.emplace_back("ratio-a", FmtDouble(p.spec.ratio_a));
  o.emplace_back("min-frames", std::to_string(p.spec.min_frames));
  o.emplace_back("max-frames", std::to_string(p.spec.max_frames));
  o.emplace_back("feature-dim", std::to_string(p.spec.feature_dim));
  o.emplace_back("noise", FmtDouble(p.spec.noise));
  o.emplace_back("min-tokens", std::to_string(p.spec.min_tokens));
  o.emplace_back("max-tokens", std::to_string(p.spec.max_tokens));
  o.emplace_back("train-size", std::to_string(p.spec.train_size));
  o.emplace_back("dev-size", std::to_string(p.spec.dev_size));
  o.emplace_back("test-size", std::to_string(p.spec.test_size));
  o.emplace_back("seed", std::to_string(p.spec.seed));
  m.artifacts = {"train.bin", "dev.bin", "test.bin", "stats.bin"};
  StartRun(dir, m);

  Corpus corpus = GenerateCorpus(p.spec);
  FeatureStats stats = ComputeStats(corpus.train);
  NormalizeInPlace(&corpus.train, stats);
  NormalizeInPlace(&corpus.dev, stats);
  NormalizeInPlace(&corpus.test, stats);
  WriteCorpusFile(JoinPath(dir, "train.bin"), corpus.meta, corpus.train);
  WriteCorpusFile(JoinPath(dir, "dev.bin"), corpus.meta, corpus.dev);
  WriteCorpusFile(JoinPath(dir, "test.bin"), corpus.meta, corpus.test);
  WriteStatsFile(JoinPath(dir, "stats.bin"), stats);

  ValidateArtifacts(dir, m);
  out << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/"
      << corpus.test.size() << " train/dev/test utterances to " << dir
      << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainParams {
  TrainKnobs knobs;
  std::string corpus;
  std::string preset = "1.0";
  std::string out;
};

int CmdTrain(const TrainParams& p, std::ostream& out) {
  const std::string corpus_dir = ResolveCorpus(p.corpus);
  const Corpus corpus = LoadCorpusDir(corpus_dir);
  const ModelConfig cfg = BuildModelConfig(p.knobs, corpus.meta, p.preset);
  p.knobs.tc.Validate();
  const std::string dir =
      p.out.empty() ? DefaultRunDir(p.knobs.tc.seed) : p.out;

  RunManifest m;
  m.command = "train";
  m.version = kVersion;
  m.seed = p.knobs.tc.seed;
  m.options.emplace_back("corpus", corpus_dir);
  m.options.emplace_back("preset", p.preset);
  AppendTrainKnobOpts(p.knobs, &m);
  for (int e = 1; e <= p.knobs.tc.epochs; ++e) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch-%03d.bin", e);
    m.artifacts.emplace_back(name);
  }
  m.artifacts.emplace_back("final.bin");
  m.artifacts.emplace_back("metrics.log");
  StartRun(dir, m);

  IlbModel model(cfg, p.knobs.tc.seed);
  std::ofstream log(JoinPath(dir, "metrics.log"));
  if (!log) throw IoError(StrCat("cannot write under ", dir));
  TrainResult res = Train(&model, corpus, p.knobs.tc, dir, &log);
  if (res.diverged || res.history.empty()) {
    throw NumericError("training diverged; run artifacts are incomplete");
  }
  WriteCheckpoint(JoinPath(dir, "final.bin"), res.averaged);

  ValidateArtifacts(dir, m);
  const EpochRecord& last = res.history.back();
  out << "preset " << p.preset << " seed " << p.knobs.tc.seed
      << ": best epoch " << res.best_epoch << ", final dev loss "
      << last.dev_loss << ", dev MER " << last.dev_mer << "%";
  if (res.infeasible_ctc > 0) {
    out << " (" << res.infeasible_ctc << " CTC-infeasible utterances)";
  }
  out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeParams {
  std::string model;
  std::string corpus;
  std::string split = "test";
  std::string out;
  std::string lm;
  double lambda = 0.3;
  DecodeConfig dc;  // alpha, beam, max_len_ratio, length_penalty
};

int CmdDecode(const DecodeParams& p, std::ostream& out) {
  const std::string corpus_dir = ResolveCorpus(p.corpus);
  const Corpus corpus = LoadCorpusDir(corpus_dir);
  const std::vector<Utterance>& split = PickSplit(corpus, p.split);

  Checkpoint ck = ReadCheckpoint(p.model);
  if (ck.config.vocab_size != corpus.meta.total_vocab() ||
      ck.config.feature_dim != corpus.meta.feature_dim) {
    throw ConfigError("checkpoint does not match the corpus layout");
  }
  IlbModel model(ck.config, 0);
  model.LoadTensors(ck.tensors);

  LmModel* lm_ptr = nullptr;
  std::unique_ptr<LmModel> lm;
  DecodeConfig dc = p.dc;
  if (!p.lm.empty()) {
    LmCheckpoint lc = ReadLmCheckpoint(p.lm);
    if (lc.vocab_hash != VocabHash(corpus.meta)) {
      throw ConfigError("language model was trained on a different "
                        "vocabulary");
    }
    lm = std::make_unique<LmModel>(lc.config, 0);
    lm->LoadTensors(lc.tensors);
    lm_ptr = lm.get();
    dc.lm_weight = p.lambda;
  } else {
    dc.lm_weight = 0;
  }
  dc.Validate();

  const std::string dir = p.out.empty() ? DefaultRunDir(0) : p.out;
  RunManifest m;
  m.command = "decode";
  m.version = kVersion;
  m.seed = 0;
  m.options.emplace_back("model", p.model);
  m.options.emplace_back("corpus", corpus_dir);
  m.options.emplace_back("split", p.split);
  m.options.emplace_back("alpha", FmtDouble(dc.alpha));
  m.options.emplace_back("beam", std::to_string(dc.beam));
  m.options.emplace_back("max-len-ratio", FmtDouble(dc.max_len_ratio));
  m.options.emplace_back("length-penalty", FmtDouble(dc.length_penalty));
  if (!p.lm.empty()) m.options.emplace_back("lm", p.lm);
  m.options.emplace_back("lambda", FmtDouble(p.lambda));
  m.artifacts = {"nbest.txt", "report.txt"};
  StartRun(dir, m);

  std::ofstream nbest(JoinPath(dir, "nbest.txt"));
  if (!nbest) throw IoError(StrCat("cannot write under ", dir));
  MerReport total;
  for (const Utterance& utt : split) {
    DecodeResult res =
        JointBeamSearch(model, utt.features, dc, lm_ptr);
    nbest << FormatNbest(utt.id, res);
    total.Merge(MixErrorRate(res.nbest.front().tokens, utt.tokens,
                             corpus.meta));
  }
  nbest.close();
  std::ofstream report(JoinPath(dir, "report.txt"));
  report << "split " << p.split << " utterances " << split.size() << "\n"
         << FormatMerReport(total);
  report.close();

  ValidateArtifacts(dir, m);
  out << p.split << " MER " << FmtDouble(total.mer() * 100.0) << "% over "
      << split.size() << " utterances\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train-lm

struct TrainLmParams {
  std::string corpus;
  std::string out;
  LmConfig lc;
  LmTrainConfig tc;
};

int CmdTrainLm(const TrainLmParams& p, std::ostream& out) {
  const std::string corpus_dir = ResolveCorpus(p.corpus);
  const Corpus corpus = LoadCorpusDir(corpus_dir);
  LmConfig lc = p.lc;
  lc.vocab_size = corpus.meta.total_vocab();
  lc.Validate();
  p.tc.Validate();
  const std::string dir = p.out.empty() ? DefaultRunDir(p.tc.seed) : p.out;

  RunManifest m;
  m.command = "train-lm";
  m.version = kVersion;
  m.seed = p.tc.seed;
  auto& o = m.options;
  o.emplace_back("corpus", corpus_dir);
  o.emplace_back("seed", std::to_string(p.tc.seed));
  o.emplace_back("epochs", std::to_string(p.tc.epochs));
  o.emplace_back("batch-size", std::to_string(p.tc.batch_size));
  o.emplace_back("peak-lr", FmtDouble(p.tc.peak_lr));
  o.emplace_back("warmup-steps", std::to_string(p.tc.warmup_steps));
  o.emplace_back("layers", std::to_string(lc.layers));
  o.emplace_back("model-dim", std::to_string(lc.model_dim));
  o.emplace_back("heads", std::to_string(lc.heads));
  o.emplace_back("ffn-dim", std::to_string(lc.ffn_dim));
  o.emplace_back("dropout", FmtDouble(lc.dropout));
  m.artifacts = {"lm.bin", "metrics.log"};
  StartRun(dir, m);

  LmModel lm(lc, p.tc.seed);
  std::ofstream log(JoinPath(dir, "metrics.log"));
  if (!log) throw IoError(StrCat("cannot write under ", dir));
  LmTrainResult res = TrainLm(&lm, corpus, p.tc, &log);
  if (res.diverged || res.dev_ce.empty()) {
    throw NumericError("lm training diverged; run artifacts are incomplete");
  }
  LmCheckpoint ckpt;
  ckpt.config = lc;
  ckpt.vocab_hash = VocabHash(corpus.meta);
  ckpt.tensors = lm.params();
  WriteLmCheckpoint(JoinPath(dir, "lm.bin"), ckpt);

  ValidateArtifacts(dir, m);
  out << "lm dev cross entropy " << res.dev_ce.back().second << " after "
      << res.dev_ce.size() << " epochs\n";
  return 0;
}

// ---------------------------------------------------------------------------
// dump-attention

struct DumpParams {
  std::string model;
  std::string corpus;
  std::string split = "test";
  std::string utt;
  std::string out;
};

int CmdDumpAttention(const DumpParams& p, std::ostream& out) {
  const std::string corpus_dir = ResolveCorpus(p.corpus);
  const Corpus corpus = LoadCorpusDir(corpus_dir);
  const std::vector<Utterance>& split = PickSplit(corpus, p.split);
  const Utterance* utt = nullptr;
  for (const Utterance& u : split) {
    if (u.id == p.utt) {
      utt = &u;
      break;
    }
  }
  if (utt == nullptr) {
    throw UsageError(StrCat("utterance ", p.utt, " not in split ", p.split));
  }

  Checkpoint ck = ReadCheckpoint(p.model);
  if (!ck.config.flags.multitask_ld) {
    throw UsageError("model has no diarization decoder, so there is no "
                     "language attention to dump");
  }
  if (ck.config.vocab_size != corpus.meta.total_vocab() ||
      ck.config.feature_dim != corpus.meta.feature_dim) {
    throw ConfigError("checkpoint does not match the corpus layout");
  }
  IlbModel model(ck.config, 0);
  model.LoadTensors(ck.tensors);

  const std::string dir = p.out.empty() ? DefaultRunDir(0) : p.out;
  RunManifest m;
  m.command = "dump-attention";
  m.version = kVersion;
  m.seed = 0;
  m.options.emplace_back("model", p.model);
  m.options.emplace_back("corpus", corpus_dir);
  m.options.emplace_back("split", p.split);
  m.options.emplace_back("utt", p.utt);
  m.artifacts = {"attention.txt"};
  for (Dim h = 0; h < ck.config.heads; ++h) {
    m.artifacts.push_back(StrCat("attention-head-", h, ".txt"));
  }
  StartRun(dir, m);

  auto fwd = model.ForwardAll(utt->features, utt->tokens, {});
  AttentionStats stats = ComputeAttentionStats(
      fwd.ld_attention, *utt, static_cast<int>(ck.config.subsample_factor),
      corpus.meta);

  std::ofstream combined(JoinPath(dir, "attention.txt"));
  WriteAttentionExport(combined, utt->id, fwd.ld_attention, stats);
  combined.close();

  const Dim rows = fwd.ld_attention.shape()[1];
  const Dim cols = fwd.ld_attention.shape()[2];
  for (Dim h = 0; h < ck.config.heads; ++h) {
    std::ofstream hf(JoinPath(dir, StrCat("attention-head-", h, ".txt")));
    hf << "# utt " << utt->id << " head " << h << " diagonality "
       << FmtDouble(stats.diagonality[static_cast<size_t>(h)])
       << " boundary_sharpness "
       << FmtDouble(stats.boundary_sharpness[static_cast<size_t>(h)])
       << "\n";
    for (Dim r = 0; r < rows; ++r) {
      for (Dim c = 0; c < cols; ++c) {
        if (c > 0) hf << ' ';
        hf << FmtDouble(fwd.ld_attention.at({h, r, c}));
      }
      hf << "\n";
    }
  }

  ValidateArtifacts(dir, m);
  out << "wrote " << ck.config.heads << " attention heads for " << utt->id
      << " to " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateParams {
  TrainKnobs knobs;
  std::string corpus;
  std::string out;
  int seeds = 3;
  double decode_alpha = 0.4;
  int beam = 10;
  unsigned jobs = 0;  // 0 = hardware concurrency
};

struct AblateCell {
  std::string preset;
  uint64_t seed = 0;
  double dev_mer = 0;
  double test_mer = 0;
};

double SplitBeamMer(const IlbModel& model,
                    const std::vector<Utterance>& split,
                    const CorpusMeta& meta, const DecodeConfig& dc) {
  MerReport total;
  for (const Utterance& utt : split) {
    DecodeResult res = JointBeamSearch(model, utt.features, dc, nullptr);
    total.Merge(MixErrorRate(res.nbest.front().tokens, utt.tokens, meta));
  }
  return total.mer() * 100.0;
}

std::string FormatAblationReport(const std::vector<std::string>& presets,
                                 int seeds,
                                 const std::vector<AblateCell>& cells) {
  std::ostringstream os;
  os << "# mix error rate (%), median over " << seeds
     << " seeds, per-seed values in brackets\n";
  os << "# preset dev test\n";
  for (const std::string& preset : presets) {
    std::vector<double> dev, test;
    for (const AblateCell& c : cells) {
      if (c.preset == preset) {
        dev.push_back(c.dev_mer);
        test.push_back(c.test_mer);
      }
    }
    char line[128];
    std::snprintf(line, sizeof(line), "preset %s dev %.2f [", preset.c_str(),
                  Median(dev));
    os << line;
    for (size_t i = 0; i < dev.size(); ++i) {
      if (i > 0) os << ' ';
      std::snprintf(line, sizeof(line), "%.2f", dev[i]);
      os << line;
    }
    std::snprintf(line, sizeof(line), "] test %.2f [", Median(test));
    os << line;
    for (size_t i = 0; i < test.size(); ++i) {
      if (i > 0) os << ' ';
      std::snprintf(line, sizeof(line), "%.2f", test[i]);
      os << line;
    }
    os << "]\n";
  }
  return os.str();
}

int CmdAblate(const AblateParams& p, std::ostream& out) {
  const std::string corpus_dir = ResolveCorpus(p.corpus);
  const Corpus corpus = LoadCorpusDir(corpus_dir);
  if (p.seeds < 1) throw ConfigError("--seeds must be at least 1");
  p.knobs.tc.Validate();
  const std::vector<std::string>& presets = ModelConfig::PresetNames();
  const std::string dir =
      p.out.empty() ? DefaultRunDir(p.knobs.tc.seed) : p.out;

  RunManifest m;
  m.command = "ablate";
  m.version = kVersion;
  m.seed = p.knobs.tc.seed;
  m.options.emplace_back("corpus", corpus_dir);
  m.options.emplace_back("seeds", std::to_string(p.seeds));
  AppendTrainKnobOpts(p.knobs, &m);
  m.options.emplace_back("decode-alpha", FmtDouble(p.decode_alpha));
  m.options.emplace_back("beam", std::to_string(p.beam));

  std::vector<AblateCell> cells;
  for (const std::string& preset : presets) {
    for (int s = 0; s < p.seeds; ++s) {
      AblateCell cell;
      cell.preset = preset;
      cell.seed = p.knobs.tc.seed + static_cast<uint64_t>(s);
      cells.push_back(cell);
    }
  }
  for (const AblateCell& c : cells) {
    const std::string sub = StrCat("runs/", c.preset, "-s", c.seed);
    m.artifacts.push_back(sub + "/final.bin");
    m.artifacts.push_back(sub + "/metrics.log");
  }
  m.artifacts.emplace_back("report.txt");
  StartRun(dir, m);

  DecodeConfig dc;
  dc.alpha = p.decode_alpha;
  dc.beam = p.beam;
  dc.Validate();

  std::atomic<size_t> next{0};
  std::mutex io_mutex;
  std::vector<std::string> failures;
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      AblateCell& cell = cells[i];
      try {
        const std::string sub =
            JoinPath(dir, StrCat("runs/", cell.preset, "-s", cell.seed));
        fs::create_directories(sub);
        ModelConfig cfg =
            BuildModelConfig(p.knobs, corpus.meta, cell.preset);
        TrainConfig tc = p.knobs.tc;
        tc.seed = cell.seed;
        IlbModel model(cfg, tc.seed);
        std::ofstream log(JoinPath(sub, "metrics.log"));
        TrainResult res = Train(&model, corpus, tc, sub, &log);
        if (res.diverged || res.history.empty()) {
          throw NumericError("training diverged");
        }
        WriteCheckpoint(JoinPath(sub, "final.bin"), res.averaged);

        IlbModel final_model(cfg, 0);
        final_model.LoadTensors(res.averaged.tensors);
        cell.dev_mer = SplitBeamMer(final_model, corpus.dev, corpus.meta, dc);
        cell.test_mer =
            SplitBeamMer(final_model, corpus.test, corpus.meta, dc);
        std::lock_guard<std::mutex> lock(io_mutex);
        out << "preset " << cell.preset << " seed " << cell.seed << " dev "
            << cell.dev_mer << "% test " << cell.test_mer << "%\n";
      } catch (const Error& e) {
        std::lock_guard<std::mutex> lock(io_mutex);
        failures.push_back(
            StrCat(cell.preset, " seed ", cell.seed, ": ", e.what()));
      }
    }
  };

  unsigned n_jobs = p.jobs != 0 ? p.jobs : std::thread::hardware_concurrency();
  if (n_jobs == 0) n_jobs = 1;
  n_jobs = std::min<unsigned>(n_jobs, static_cast<unsigned>(cells.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  if (!failures.empty()) {
    std::string msg = "ablation jobs failed:";
    for (const auto& f : failures) msg += StrCat("\n  ", f);
    throw NumericError(msg);
  }

  std::ofstream report(JoinPath(dir, "report.txt"));
  report << FormatAblationReport(presets, p.seeds, cells);
  report.close();

  ValidateArtifacts(dir, m);
  out << FormatAblationReport(presets, p.seeds, cells);
  return 0;
}

// ---------------------------------------------------------------------------
// rerun

struct RerunParams {
  std::string manifest;
  std::string out;
};

int CmdRerun(const RerunParams& p, std::ostream& out, std::ostream& err) {
  RunManifest m = ReadManifest(p.manifest);
  std::vector<std::string> args;
  args.push_back(m.command);
  for (const auto& [key, value] : m.options) {
    args.push_back("--" + key);
    args.push_back(value);
  }
  args.push_back("--out");
  args.push_back(p.out);
  if (m.command == "gen") args.push_back("--force");
  return RunCli(std::move(args), out, err);
}

std::string Strip(const std::string& s) {
  const size_t from = s.find_first_not_of(" \t\r");
  if (from == std::string::npos) return "";
  const size_t to = s.find_last_not_of(" \t\r");
  return s.substr(from, to - from + 1);
}

// Expands a --config key=value file into --key=value args before parsing.
// Keys already given on the command line are skipped, so explicit flags win
// over the file and the file wins over built-in defaults.
void ApplyConfigFile(const CLI::App& app, std::vector<std::string>* args) {
  if (args->empty()) return;
  const CLI::App* sub = app.get_subcommand_no_throw((*args)[0]);
  if (sub == nullptr || sub->get_option_no_throw("--config") == nullptr) {
    return;
  }
  std::string file;
  for (size_t i = 0; i < args->size(); ++i) {
    const std::string& a = (*args)[i];
    if (a == "--config" && i + 1 < args->size()) {
      file = (*args)[i + 1];
    } else if (a.rfind("--config=", 0) == 0) {
      file = a.substr(9);
    }
  }
  if (file.empty()) return;
  std::ifstream is(file);
  if (!is) throw IoError(StrCat("cannot open config file ", file));
  std::string line;
  while (std::getline(is, line)) {
    line = Strip(line);
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(StrCat("config line is not key=value: ", line));
    }
    const std::string key = Strip(line.substr(0, eq));
    const std::string flag = StrCat("--", key);
    if (key.empty() || key == "config") {
      throw ConfigError(StrCat("bad config key in line: ", line));
    }
    if (sub->get_option_no_throw(flag) == nullptr) {
      throw ConfigError(StrCat("unknown config key ", key, " for ",
                               (*args)[0]));
    }
    bool given = false;
    for (const std::string& a : *args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    }
    if (!given) args->push_back(StrCat(flag, "=", Strip(line.substr(eq + 1))));
  }
}

}  // namespace

void WriteManifest(const std::string& path, const RunManifest& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(StrCat("cannot open ", path, " for writing"));
  os << "ilb-manifest-v1\n";
  os << "command " << m.command << "\n";
  os << "version " << m.version << "\n";
  os << "seed " << m.seed << "\n";
  for (const auto& [key, value] : m.options) {
    os << "opt " << key << "=" << value << "\n";
  }
  for (const auto& a : m.artifacts) os << "artifact " << a << "\n";
  if (!os) throw IoError(StrCat("failed writing ", path));
}

RunManifest ReadManifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(StrCat("cannot open ", path));
  std::string magic;
  if (!std::getline(is, magic) || magic != "ilb-manifest-v1") {
    throw IoError(StrCat(path, " is not a run manifest"));
  }
  RunManifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("command ", 0) == 0) {
      m.command = line.substr(8);
    } else if (line.rfind("version ", 0) == 0) {
      m.version = line.substr(8);
    } else if (line.rfind("seed ", 0) == 0) {
      m.seed = std::stoull(line.substr(5));
    } else if (line.rfind("opt ", 0) == 0) {
      const std::string kv = line.substr(4);
      const size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        throw IoError(StrCat("bad manifest option line: ", line));
      }
      m.options.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    } else if (line.rfind("artifact ", 0) == 0) {
      m.artifacts.push_back(line.substr(9));
    } else {
      throw IoError(StrCat("unexpected manifest line: ", line));
    }
  }
  if (m.command.empty()) throw IoError(StrCat(path, " names no command"));
  return m;
}

int RunCli(std::vector<std::string> args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"code-switching speech recognizer with language biases"};
  app.name("ilb");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  GenParams gp;
  CLI::App* gen = app.add_subcommand(
      "gen", "generate a synthetic code-switching corpus");
  gen->add_option("--config", "key=value option overrides");
  gen->add_option("--vocab-a", gp.spec.vocab_a, "language A vocabulary size")
      ->capture_default_str();
  gen->add_option("--vocab-b", gp.spec.vocab_b, "language B vocabulary size")
      ->capture_default_str();
  gen->add_option("--switch-prob", gp.spec.switch_prob,
                  "per-token switching intensity")
      ->capture_default_str();
  gen->add_option("--ratio-a", gp.spec.ratio_a,
                  "stationary share of language A")
      ->capture_default_str();
  gen->add_option("--min-frames", gp.spec.min_frames, "min frames per token")
      ->capture_default_str();
  gen->add_option("--max-frames", gp.spec.max_frames, "max frames per token")
      ->capture_default_str();
  gen->add_option("--feature-dim", gp.spec.feature_dim, "feature dimension")
      ->capture_default_str();
  gen->add_option("--noise", gp.spec.noise, "feature noise sigma")
      ->capture_default_str();
  gen->add_option("--min-tokens", gp.spec.min_tokens, "min tokens")
      ->capture_default_str();
  gen->add_option("--max-tokens", gp.spec.max_tokens, "max tokens")
      ->capture_default_str();
  gen->add_option("--train-size", gp.spec.train_size, "train utterances")
      ->capture_default_str();
  gen->add_option("--dev-size", gp.spec.dev_size, "dev utterances")
      ->capture_default_str();
  gen->add_option("--test-size", gp.spec.test_size, "test utterances")
      ->capture_default_str();
  gen->add_option("--seed", gp.spec.seed, "corpus seed")
      ->capture_default_str();
  gen->add_option("--out", gp.out, "output directory");
  gen->add_flag("--force", gp.force, "overwrite a non-empty directory");

  TrainParams tp;
  CLI::App* train =
      app.add_subcommand("train", "train one recognizer preset");
  train->add_option("--config", "key=value option overrides");
  train->add_option("--corpus", tp.corpus, "corpus directory")->required();
  train->add_option("--preset", tp.preset, "ablation preset 1.0 .. 1.6")
      ->required()
      ->check(CLI::IsMember(ModelConfig::PresetNames()));
  train->add_option("--out", tp.out, "run directory");
  AddTrainKnobs(train, &tp.knobs);

  AblateParams ap;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "train every preset over several seeds and tabulate MER");
  ablate->add_option("--config", "key=value option overrides");
  ablate->add_option("--corpus", ap.corpus, "corpus directory")->required();
  ablate->add_option("--seeds", ap.seeds, "seeds per preset")
      ->capture_default_str();
  ablate->add_option("--out", ap.out, "run directory");
  ablate->add_option("--decode-alpha", ap.decode_alpha,
                     "CTC weight at decode time")
      ->capture_default_str();
  ablate->add_option("--beam", ap.beam, "beam width")->capture_default_str();
  ablate->add_option("--jobs", ap.jobs, "parallel jobs (0 = all cores)")
      ->capture_default_str();
  AddTrainKnobs(ablate, &ap.knobs);

  DecodeParams dp;
  CLI::App* decode = app.add_subcommand(
      "decode", "beam-decode a split and score its mix error rate");
  decode->add_option("--config", "key=value option overrides");
  decode->add_option("--model", dp.model, "recognizer checkpoint")
      ->required();
  decode->add_option("--corpus", dp.corpus, "corpus directory")->required();
  decode->add_option("--split", dp.split, "train, dev or test")
      ->check(CLI::IsMember(std::vector<std::string>{"train", "dev", "test"}))
      ->capture_default_str();
  decode->add_option("--out", dp.out, "run directory");
  decode->add_option("--alpha", dp.dc.alpha, "CTC weight at decode time")
      ->capture_default_str();
  decode->add_option("--beam", dp.dc.beam, "beam width")
      ->capture_default_str();
  decode->add_option("--max-len-ratio", dp.dc.max_len_ratio,
                     "output length cap as a share of encoder frames")
      ->capture_default_str();
  decode->add_option("--length-penalty", dp.dc.length_penalty,
                     "per-token score adjustment")
      ->capture_default_str();
  decode->add_option("--lm", dp.lm, "language model checkpoint for fusion");
  decode->add_option("--lambda", dp.lambda, "fusion weight")
      ->capture_default_str();

  TrainLmParams lp;
  CLI::App* train_lm = app.add_subcommand(
      "train-lm", "train the external language model on the transcripts");
  train_lm->add_option("--config", "key=value option overrides");
  train_lm->add_option("--corpus", lp.corpus, "corpus directory")
      ->required();
  train_lm->add_option("--out", lp.out, "run directory");
  train_lm->add_option("--seed", lp.tc.seed, "root RNG seed")
      ->capture_default_str();
  train_lm->add_option("--epochs", lp.tc.epochs, "training epochs")
      ->capture_default_str();
  train_lm->add_option("--batch-size", lp.tc.batch_size,
                       "utterances per step")
      ->capture_default_str();
  train_lm->add_option("--peak-lr", lp.tc.peak_lr, "peak learning rate")
      ->capture_default_str();
  train_lm->add_option("--warmup-steps", lp.tc.warmup_steps,
                       "LR warmup steps")
      ->capture_default_str();
  train_lm->add_option("--layers", lp.lc.layers, "transformer blocks")
      ->capture_default_str();
  train_lm->add_option("--model-dim", lp.lc.model_dim, "model width")
      ->capture_default_str();
  train_lm->add_option("--heads", lp.lc.heads, "attention heads")
      ->capture_default_str();
  train_lm->add_option("--ffn-dim", lp.lc.ffn_dim, "feed-forward width")
      ->capture_default_str();
  train_lm->add_option("--dropout", lp.lc.dropout, "dropout rate")
      ->capture_default_str();

  DumpParams xp;
  CLI::App* dump = app.add_subcommand(
      "dump-attention", "export diarization attention for one utterance");
  dump->add_option("--config", "key=value option overrides");
  dump->add_option("--model", xp.model, "recognizer checkpoint")->required();
  dump->add_option("--corpus", xp.corpus, "corpus directory")->required();
  dump->add_option("--split", xp.split, "train, dev or test")
      ->check(CLI::IsMember(std::vector<std::string>{"train", "dev", "test"}))
      ->capture_default_str();
  dump->add_option("--utt", xp.utt, "utterance id")->required();
  dump->add_option("--out", xp.out, "run directory");

  RerunParams rp;
  CLI::App* rerun = app.add_subcommand(
      "rerun", "replay a command from its manifest");
  rerun->add_option("--manifest", rp.manifest, "manifest file")->required();
  rerun->add_option("--out", rp.out, "run directory")->required();

  try {
    ApplyConfigFile(app, &args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return CmdGen(gp, out);
    if (train->parsed()) return CmdTrain(tp, out);
    if (ablate->parsed()) return CmdAblate(ap, out);
    if (decode->parsed()) return CmdDecode(dp, out);
    if (train_lm->parsed()) return CmdTrainLm(lp, out);
    if (dump->parsed()) return CmdDumpAttention(xp, out);
    if (rerun->parsed()) return CmdRerun(rp, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "error: no command\n";
  return 1;
}

}  // namespace ilb
