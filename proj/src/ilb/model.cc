// ilb/model.cc

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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ilb/serialize.h"

namespace ilb {

namespace {

bool IsPowerOfTwo(Dim v) { return v >= 1 && (v & (v - 1)) == 0; }

std::string FormatDouble(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void ModelConfig::Validate() const {
  if (model_dim < 1 || heads < 1 || model_dim % heads != 0) {
    throw ConfigError(StrCat("model_dim ", model_dim,
                             " must be a positive multiple of heads ", heads));
  }
  if (lang_vocab_size < 2) {
    throw ConfigError("lang_vocab_size must be at least 2");
  }
  if (vocab_size < 3) {
    throw ConfigError("vocab_size must cover blank, unk and sos/eos");
  }
  if (!IsPowerOfTwo(subsample_factor)) {
    throw ConfigError(StrCat("subsample_factor ", subsample_factor,
                             " must be a power of two"));
  }
  if (conv_kernel < 1 || conv_kernel % 2 == 0) {
    throw ConfigError(StrCat("conv_kernel ", conv_kernel, " must be odd"));
  }
  if (feature_dim < 1 || ffn_dim < 1 || encoder_layers < 1 ||
      decoder_layers < 1 || ld_decoder_layers < 1) {
    throw ConfigError("dimensions and layer counts must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError(StrCat("dropout ", dropout, " outside [0, 1)"));
  }
  if ((flags.encoder_bias || flags.decoder_bias || flags.ctc_bias) &&
      !flags.multitask_ld) {
    throw ConfigError("language biases require multitask_ld");
  }
  if (flags.ctc_bias && !flags.encoder_bias) {
    throw ConfigError("ctc_bias requires encoder_bias");
  }
}

void ModelConfig::ApplyPreset(const std::string& preset) {
  flags = BiasFlags{};
  if (preset == "1.0") {
  } else if (preset == "1.1") {
    flags.multitask_ld = true;
  } else if (preset == "1.2") {
    flags.multitask_ld = flags.decoder_bias = true;
  } else if (preset == "1.3") {
    flags.multitask_ld = flags.encoder_bias = true;
  } else if (preset == "1.4") {
    flags.multitask_ld = flags.encoder_bias = flags.ctc_bias = true;
  } else if (preset == "1.5") {
    flags.multitask_ld = flags.encoder_bias = flags.decoder_bias = true;
  } else if (preset == "1.6") {
    flags.multitask_ld = flags.encoder_bias = flags.decoder_bias =
        flags.ctc_bias = true;
  } else {
    throw ConfigError(StrCat("unknown preset '", preset, "'"));
  }
}

const std::vector<std::string>& ModelConfig::PresetNames() {
  static const std::vector<std::string> names = {"1.0", "1.1", "1.2", "1.3",
                                                 "1.4", "1.5", "1.6"};
  return names;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "ilb-checkpoint-v1";

std::vector<std::pair<std::string, std::string>> ConfigToKv(
    const ModelConfig& c) {
  return {
      {"feature_dim", std::to_string(c.feature_dim)},
      {"model_dim", std::to_string(c.model_dim)},
      {"heads", std::to_string(c.heads)},
      {"encoder_layers", std::to_string(c.encoder_layers)},
      {"decoder_layers", std::to_string(c.decoder_layers)},
      {"ld_decoder_layers", std::to_string(c.ld_decoder_layers)},
      {"ffn_dim", std::to_string(c.ffn_dim)},
      {"conv_kernel", std::to_string(c.conv_kernel)},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"lang_vocab_size", std::to_string(c.lang_vocab_size)},
      {"subsample_factor", std::to_string(c.subsample_factor)},
      {"dropout", FormatDouble(c.dropout)},
      {"multitask_ld", c.flags.multitask_ld ? "1" : "0"},
      {"encoder_bias", c.flags.encoder_bias ? "1" : "0"},
      {"decoder_bias", c.flags.decoder_bias ? "1" : "0"},
      {"ctc_bias", c.flags.ctc_bias ? "1" : "0"},
  };
}

void ApplyConfigKv(ModelConfig* c, const std::string& key,
                   const std::string& value) {
  auto as_dim = [&]() { return static_cast<Dim>(std::stoll(value)); };
  auto as_flag = [&]() { return value == "1"; };
  if (key == "feature_dim") c->feature_dim = as_dim();
  else if (key == "model_dim") c->model_dim = as_dim();
  else if (key == "heads") c->heads = as_dim();
  else if (key == "encoder_layers") c->encoder_layers = as_dim();
  else if (key == "decoder_layers") c->decoder_layers = as_dim();
  else if (key == "ld_decoder_layers") c->ld_decoder_layers = as_dim();
  else if (key == "ffn_dim") c->ffn_dim = as_dim();
  else if (key == "conv_kernel") c->conv_kernel = as_dim();
  else if (key == "vocab_size") c->vocab_size = as_dim();
  else if (key == "lang_vocab_size") c->lang_vocab_size = as_dim();
  else if (key == "subsample_factor") c->subsample_factor = as_dim();
  else if (key == "dropout") c->dropout = std::stod(value);
  else if (key == "multitask_ld") c->flags.multitask_ld = as_flag();
  else if (key == "encoder_bias") c->flags.encoder_bias = as_flag();
  else if (key == "decoder_bias") c->flags.decoder_bias = as_flag();
  else if (key == "ctc_bias") c->flags.ctc_bias = as_flag();
  else throw IoError(StrCat("unknown config key '", key, "'"));
}

}  // namespace

void WriteCheckpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(StrCat("cannot open '", path, "' for writing"));
  os << kCheckpointMagic << '\n';
  for (const auto& [k, v] : ckpt.meta) os << "meta " << k << '=' << v << '\n';
  for (const auto& [k, v] : ConfigToKv(ckpt.config)) {
    os << "config " << k << '=' << v << '\n';
  }
  os << "tensors " << ckpt.tensors.size() << '\n';
  for (const auto& [name, tensor] : ckpt.tensors) {
    os << "name " << name << '\n';
    WriteTensor(os, tensor);
  }
  if (!os) throw IoError(StrCat("write to '", path, "' failed"));
}

Checkpoint ReadCheckpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(StrCat("cannot open '", path, "'"));
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw IoError(StrCat("'", path, "' is not a checkpoint"));
  }
  Checkpoint ckpt;
  size_t count = 0;
  while (std::getline(is, line)) {
    if (line.rfind("meta ", 0) == 0) {
      const std::string kv = line.substr(5);
      const size_t eq = kv.find('=');
      if (eq == std::string::npos) throw IoError("malformed meta line");
      ckpt.meta.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    } else if (line.rfind("config ", 0) == 0) {
      const std::string kv = line.substr(7);
      const size_t eq = kv.find('=');
      if (eq == std::string::npos) throw IoError("malformed config line");
      ApplyConfigKv(&ckpt.config, kv.substr(0, eq), kv.substr(eq + 1));
    } else if (line.rfind("tensors ", 0) == 0) {
      count = static_cast<size_t>(std::stoull(line.substr(8)));
      break;
    } else {
      throw IoError(StrCat("unexpected checkpoint line '", line, "'"));
    }
  }
  for (size_t i = 0; i < count; ++i) {
    std::string name = ReadHeaderLine(is, "name ");
    ckpt.tensors.emplace_back(std::move(name), ReadTensor(is));
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// IlbModel
// ---------------------------------------------------------------------------

IlbModel::IlbModel(const ModelConfig& config, uint64_t seed)
    : config_(config) {
  config_.Validate();
  ParamBuilder pb(seed, &params_);
  const Dim d = config_.model_dim;
  const Dim biased = d + config_.lang_vocab_size;

  subsampler_ = Subsampler(&pb, "subsample", config_.feature_dim, d,
                           config_.subsample_factor);
  for (Dim i = 0; i < config_.encoder_layers; ++i) {
    encoder_.emplace_back(&pb, StrCat("encoder.", i), d, config_.heads,
                          config_.ffn_dim, config_.conv_kernel);
  }
  embed_ = pb.Init("embed.table", {config_.vocab_size, d}, d);
  for (Dim i = 0; i < config_.decoder_layers; ++i) {
    decoder_.emplace_back(&pb, StrCat("decoder.", i), d, config_.heads,
                          config_.ffn_dim);
  }
  decoder_norm_ = NormLayer(&pb, "decoder.norm_final", d);
  asr_head_ = LinearLayer(&pb, "asr_head", d, config_.vocab_size);
  ctc_head_ = LinearLayer(&pb, "ctc_head",
                          config_.flags.ctc_bias ? biased : d,
                          config_.vocab_size);
  if (config_.flags.encoder_bias) {
    lid_ = LinearLayer(&pb, "lid", d, config_.lang_vocab_size);
    memory_proj_ = LinearLayer(&pb, "memory_proj", biased, d);
  }
  if (config_.flags.decoder_bias) {
    token_proj_ = LinearLayer(&pb, "token_proj", biased, d);
  }
  if (config_.flags.multitask_ld) {
    for (Dim i = 0; i < config_.ld_decoder_layers; ++i) {
      ld_decoder_.emplace_back(&pb, StrCat("ld_decoder.", i), d,
                               config_.heads, config_.ffn_dim);
    }
    ld_decoder_norm_ = NormLayer(&pb, "ld_decoder.norm_final", d);
    ld_head_ = LinearLayer(&pb, "ld_head", d, config_.lang_vocab_size);
  }
}

void IlbModel::LoadTensors(
    const std::vector<std::pair<std::string, Tensor>>& named) {
  std::map<std::string, const Tensor*> index;
  for (const auto& [name, tensor] : named) index[name] = &tensor;
  for (auto& [name, param] : params_) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw IoError(StrCat("checkpoint is missing parameter '", name, "'"));
    }
    const Tensor& src = *it->second;
    if (src.shape() != param.shape()) {
      throw IoError(StrCat("parameter '", name, "' has shape ",
                           ShapeStr(src.shape()), ", model wants ",
                           ShapeStr(param.shape())));
    }
    std::copy(src.data().begin(), src.data().end(), param.raw());
  }
}

Tensor IlbModel::Encode(const Tensor& features, const ForwardCtx& ctx) const {
  if (features.rank() != 2 || features.dim(1) != config_.feature_dim) {
    throw UsageError(StrCat("encode: want [T, ", config_.feature_dim,
                            "] features, got ", ShapeStr(features.shape())));
  }
  if (features.dim(0) < 2 * config_.subsample_factor) {
    throw UsageError(StrCat("encode: ", features.dim(0),
                            " frames is too short for subsample factor ",
                            config_.subsample_factor));
  }
  Tensor h = subsampler_(features);
  h = Add(Scale(h, std::sqrt(static_cast<double>(config_.model_dim))),
          SinusoidalPe(h.dim(0), config_.model_dim));
  h = MaybeDropout(h, ctx);
  for (const auto& block : encoder_) h = block(h, ctx);
  return h;
}

std::pair<Tensor, Tensor> IlbModel::FrameBias(const Tensor& h) const {
  if (!config_.flags.encoder_bias) {
    throw ConfigError("frame_bias requires encoder_bias");
  }
  Tensor posteriors = Softmax(lid_(h));
  return {ConcatLastDim(h, posteriors), posteriors};
}

IlbModel::Encoded IlbModel::EncodeUtterance(const Tensor& features,
                                            const ForwardCtx& ctx) const {
  Encoded out;
  out.h = Encode(features, ctx);
  Tensor ctc_in = out.h;
  if (config_.flags.encoder_bias) {
    auto [h_prime, posteriors] = FrameBias(out.h);
    out.h_prime = h_prime;
    out.frame_posteriors = posteriors;
    out.memory = memory_proj_(h_prime);
    if (config_.flags.ctc_bias) ctc_in = h_prime;
  } else {
    out.memory = out.h;
  }
  out.ctc_log_probs = LogSoftmax(ctc_head_(ctc_in));
  return out;
}

Tensor IlbModel::EmbedPrefix(std::span<const int> prefix,
                             const ForwardCtx& ctx) const {
  if (prefix.empty()) throw UsageError("decoder prefix is empty");
  if (prefix[0] != static_cast<int>(sos_id())) {
    throw UsageError(StrCat("decoder prefix must start with sos id ",
                            sos_id(), ", got ", prefix[0]));
  }
  Tensor emb = EmbeddingLookup(embed_, prefix);
  emb = Add(Scale(emb, std::sqrt(static_cast<double>(config_.model_dim))),
            SinusoidalPe(static_cast<Dim>(prefix.size()), config_.model_dim));
  return MaybeDropout(emb, ctx);
}

IlbModel::LdOut IlbModel::LdDecode(std::span<const int> prefix,
                                   const Tensor& memory,
                                   const ForwardCtx& ctx) const {
  if (!config_.flags.multitask_ld) {
    throw ConfigError("ld_decode requires multitask_ld");
  }
  Tensor x = EmbedPrefix(prefix, ctx);
  Tensor attention;
  for (const auto& block : ld_decoder_) {
    auto [next, weights] = block(x, memory, ctx);
    x = next;
    attention = weights;
  }
  Tensor logits = ld_head_(ld_decoder_norm_(x));
  LdOut out;
  out.log_probs = LogSoftmax(logits);
  out.posteriors = Softmax(logits);
  out.attention = attention;
  return out;
}

Tensor IlbModel::TokenBias(const Tensor& embeddings,
                           const Tensor& ld_posteriors) const {
  if (!config_.flags.decoder_bias) {
    throw ConfigError("token_bias requires decoder_bias");
  }
  if (embeddings.dim(0) != ld_posteriors.dim(0)) {
    throw ShapeError(StrCat("token_bias: ", embeddings.dim(0),
                            " embeddings vs ", ld_posteriors.dim(0),
                            " posteriors"));
  }
  return token_proj_(ConcatLastDim(embeddings, ld_posteriors));
}

Tensor IlbModel::AsrDecode(std::span<const int> prefix, const Tensor& memory,
                           const Tensor* ld_posteriors,
                           const ForwardCtx& ctx) const {
  if (config_.flags.decoder_bias && ld_posteriors == nullptr) {
    throw UsageError("asr_decode: decoder_bias is set but no language "
                     "posteriors were supplied");
  }
  if (!config_.flags.decoder_bias && ld_posteriors != nullptr) {
    throw UsageError("asr_decode: language posteriors supplied without "
                     "decoder_bias");
  }
  Tensor x = EmbedPrefix(prefix, ctx);
  if (ld_posteriors != nullptr) x = TokenBias(x, *ld_posteriors);
  for (const auto& block : decoder_) x = block(x, memory, ctx).first;
  return LogSoftmax(asr_head_(decoder_norm_(x)));
}

IlbModel::ForwardOutput IlbModel::ForwardAll(const Tensor& features,
                                             std::span<const int> tokens,
                                             const ForwardCtx& ctx) const {
  for (int id : tokens) {
    if (id < 1 || id >= static_cast<int>(sos_id())) {
      throw UsageError(StrCat("forward: token id ", id,
                              " outside the non-special range [1, ",
                              sos_id() - 1, "]"));
    }
  }
  Encoded enc = EncodeUtterance(features, ctx);
  std::vector<int> prefix;
  prefix.reserve(tokens.size() + 1);
  prefix.push_back(static_cast<int>(sos_id()));
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());

  ForwardOutput out;
  out.h = enc.h;
  out.h_prime = enc.h_prime;
  out.frame_posteriors = enc.frame_posteriors;
  out.ctc_log_probs = enc.ctc_log_probs;

  const Tensor* bias = nullptr;
  LdOut ld;
  if (config_.flags.multitask_ld) {
    ld = LdDecode(prefix, enc.memory, ctx);
    out.ld_log_probs = ld.log_probs;
    out.ld_attention = ld.attention;
    if (config_.flags.decoder_bias) bias = &ld.posteriors;
  }
  out.asr_log_probs = AsrDecode(prefix, enc.memory, bias, ctx);
  return out;
}

}  // namespace ilb
