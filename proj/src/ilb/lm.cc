// ilb/lm.cc

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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "ilb/rng.h"
#include "ilb/serialize.h"
#include "ilb/training.h"

namespace ilb {

void LmConfig::Validate() const {
  if (vocab_size < 3) throw ConfigError("lm vocab_size must be at least 3");
  if (model_dim < 1 || heads < 1 || layers < 1 || ffn_dim < 1) {
    throw ConfigError("lm dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    throw ConfigError("lm model_dim must be divisible by heads");
  }
  if (dropout < 0 || dropout >= 1) {
    throw ConfigError("lm dropout must lie in [0, 1)");
  }
}

LmModel::LmModel(const LmConfig& config, uint64_t seed) : config_(config) {
  config_.Validate();
  ParamBuilder pb(seed, &params_);
  embed_ = pb.Init("lm.embed.table", {config_.vocab_size, config_.model_dim},
                   config_.model_dim);
  for (Dim i = 0; i < config_.layers; ++i) {
    const std::string base = StrCat("lm.block.", i);
    Block block;
    block.self_norm = NormLayer(&pb, base + ".self_norm", config_.model_dim);
    block.attn = AttentionLayer(&pb, base + ".attn", config_.model_dim,
                                config_.heads);
    block.ffn = FfnLayer(&pb, base + ".ffn", config_.model_dim,
                         config_.ffn_dim, false);
    blocks_.push_back(std::move(block));
  }
  norm_final_ = NormLayer(&pb, "lm.norm_final", config_.model_dim);
  head_ = LinearLayer(&pb, "lm.head", config_.model_dim, config_.vocab_size);
}

void LmModel::LoadTensors(
    const std::vector<std::pair<std::string, Tensor>>& named) {
  std::map<std::string, const Tensor*> index;
  for (const auto& [name, t] : named) index[name] = &t;
  for (auto& [name, param] : params_) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw IoError(StrCat("lm checkpoint is missing parameter ", name));
    }
    if (it->second->shape() != param.shape()) {
      throw IoError(StrCat("lm checkpoint shape mismatch for ", name));
    }
    std::copy(it->second->data().begin(), it->second->data().end(),
              param.raw());
  }
}

Tensor LmModel::Forward(std::span<const int> prefix,
                        const ForwardCtx& ctx) const {
  if (prefix.empty() || prefix.front() != config_.vocab_size - 1) {
    throw UsageError("lm prefix must start with sos");
  }
  for (int tok : prefix) {
    if (tok < 1 || tok >= config_.vocab_size) {
      throw UsageError(StrCat("lm token id ", tok, " out of range"));
    }
  }
  const Dim p = static_cast<Dim>(prefix.size());
  Tensor h = EmbeddingLookup(embed_, prefix);
  h = Add(Scale(h, std::sqrt(static_cast<double>(config_.model_dim))),
          SinusoidalPe(p, config_.model_dim));
  h = MaybeDropout(h, ctx);
  for (const auto& block : blocks_) {
    Tensor normed = block.self_norm(h);
    h = Add(h, MaybeDropout(block.attn(normed, normed, true).first, ctx));
    h = Add(h, block.ffn(h, ctx));
  }
  return LogSoftmax(head_(norm_final_(h)));
}

uint64_t VocabHash(const CorpusMeta& meta) {
  uint64_t h = 1469598103934665603ull;
  for (uint64_t v : {static_cast<uint64_t>(meta.vocab_a),
                     static_cast<uint64_t>(meta.vocab_b),
                     static_cast<uint64_t>(meta.total_vocab())}) {
    h ^= v;
    h *= 1099511628211ull;
  }
  return h;
}

void LmTrainConfig::Validate() const {
  if (epochs < 1 || batch_size < 1) {
    throw ConfigError("lm epochs and batch_size must be positive");
  }
  if (peak_lr <= 0 || warmup_steps < 1) {
    throw ConfigError("lm lr schedule invalid");
  }
}

LmTrainResult TrainLm(LmModel* model, const Corpus& corpus,
                      const LmTrainConfig& cfg, std::ostream* log) {
  cfg.Validate();
  if (corpus.train.empty() || corpus.dev.empty()) {
    throw UsageError("lm training needs train and dev transcripts");
  }
  if (model->config().vocab_size != corpus.meta.total_vocab()) {
    throw ConfigError("lm vocabulary does not match the corpus");
  }
  const int sos = corpus.meta.sos_id();
  const double dropout = model->config().dropout;

  LmTrainResult result;
  AdamOptimizer opt(&model->params(), cfg.peak_lr, cfg.warmup_steps);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order(corpus.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(DeriveSeed(cfg.seed, "lm-shuffle",
                           static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(
          shuffle.UniformInt(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    try {
      for (size_t start = 0; start < order.size();
           start += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(
            order.size(), start + static_cast<size_t>(cfg.batch_size));
        const double inv_batch = 1.0 / static_cast<double>(end - start);
        for (size_t pos = start; pos < end; ++pos) {
          const Utterance& utt = corpus.train[order[pos]];
          std::vector<int> prefix = {sos};
          prefix.insert(prefix.end(), utt.tokens.begin(), utt.tokens.end());
          std::vector<int> targets = utt.tokens;
          targets.push_back(sos);

          Rng drop_rng(DeriveSeed(cfg.seed, "lm-dropout",
                                  static_cast<uint64_t>(epoch), pos));
          ForwardCtx ctx{dropout > 0 ? &drop_rng : nullptr, dropout};
          Tape tape;
          TapeScope scope(tape);
          Tensor loss =
              LabelSmoothedCe(model->Forward(prefix, ctx), targets, 0.0);
          tape.Backward(Scale(loss, inv_batch));
        }
        opt.Step();
      }

      double dev_sum = 0;
      for (const auto& utt : corpus.dev) {
        std::vector<int> prefix = {sos};
        prefix.insert(prefix.end(), utt.tokens.begin(), utt.tokens.end());
        std::vector<int> targets = utt.tokens;
        targets.push_back(sos);
        dev_sum +=
            LabelSmoothedCe(model->Forward(prefix, {}), targets, 0.0).item();
      }
      const double dev_ce = dev_sum / static_cast<double>(corpus.dev.size());
      result.dev_ce.emplace_back(epoch, dev_ce);
      if (log) {
        (*log) << epoch << ' ' << dev_ce << "\n";
        log->flush();
      }
    } catch (const NumericError& e) {
      std::cerr << "lm training diverged in epoch " << epoch << ": "
                << e.what() << "\n";
      result.diverged = true;
      break;
    }
  }
  return result;
}

namespace {

std::string FormatDoubleExact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void WriteLmCheckpoint(const std::string& path, const LmCheckpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(StrCat("cannot open ", path, " for writing"));
  os << "ilb-lm-checkpoint-v1\n";
  os << "config vocab_size=" << ckpt.config.vocab_size << "\n";
  os << "config model_dim=" << ckpt.config.model_dim << "\n";
  os << "config heads=" << ckpt.config.heads << "\n";
  os << "config layers=" << ckpt.config.layers << "\n";
  os << "config ffn_dim=" << ckpt.config.ffn_dim << "\n";
  os << "config dropout=" << FormatDoubleExact(ckpt.config.dropout) << "\n";
  os << "meta vocab_hash=" << ckpt.vocab_hash << "\n";
  os << "tensors " << ckpt.tensors.size() << "\n";
  for (const auto& [name, t] : ckpt.tensors) {
    os << "name " << name << "\n";
    WriteTensor(os, t);
  }
  if (!os) throw IoError(StrCat("failed writing ", path));
}

LmCheckpoint ReadLmCheckpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(StrCat("cannot open ", path));
  std::string magic;
  if (!std::getline(is, magic) || magic != "ilb-lm-checkpoint-v1") {
    throw IoError(StrCat(path, " is not an lm checkpoint"));
  }
  LmCheckpoint ckpt;
  std::string line;
  size_t count = 0;
  while (std::getline(is, line)) {
    if (line.rfind("config ", 0) == 0) {
      const std::string kv = line.substr(7);
      const size_t eq = kv.find('=');
      if (eq == std::string::npos) throw IoError("bad lm config line");
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      if (key == "vocab_size") ckpt.config.vocab_size = std::stoll(value);
      else if (key == "model_dim") ckpt.config.model_dim = std::stoll(value);
      else if (key == "heads") ckpt.config.heads = std::stoll(value);
      else if (key == "layers") ckpt.config.layers = std::stoll(value);
      else if (key == "ffn_dim") ckpt.config.ffn_dim = std::stoll(value);
      else if (key == "dropout") ckpt.config.dropout = std::stod(value);
      else throw IoError(StrCat("unknown lm config key ", key));
    } else if (line.rfind("meta vocab_hash=", 0) == 0) {
      ckpt.vocab_hash = std::stoull(line.substr(16));
    } else if (line.rfind("tensors ", 0) == 0) {
      count = std::stoull(line.substr(8));
      break;
    } else {
      throw IoError(StrCat("unexpected lm checkpoint line: ", line));
    }
  }
  for (size_t i = 0; i < count; ++i) {
    std::string name = ReadHeaderLine(is, "name");
    ckpt.tensors.emplace_back(std::move(name), ReadTensor(is));
  }
  return ckpt;
}

}  // namespace ilb
