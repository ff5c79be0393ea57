// ilb/training.cc

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

#include "ilb/training.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>

#include "ilb/ctc.h"
#include "ilb/metrics.h"
#include "ilb/rng.h"

namespace ilb {

void TrainConfig::Validate() const {
  if (alpha < 0 || alpha > 1) throw ConfigError("alpha must lie in [0, 1]");
  if (beta < 0) throw ConfigError("beta must be non-negative");
  if (label_smoothing < 0 || label_smoothing >= 1) {
    throw ConfigError("label_smoothing must lie in [0, 1)");
  }
  if (peak_lr <= 0) throw ConfigError("peak_lr must be positive");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be positive");
  if (batch_size < 1 || epochs < 1) {
    throw ConfigError("batch_size and epochs must be positive");
  }
  if (time_mask_frac < 0 || time_mask_frac > 1 || feat_mask_frac < 0 ||
      feat_mask_frac > 1) {
    throw ConfigError("mask fractions must lie in [0, 1]");
  }
  if (average_top_k < 1) throw ConfigError("average_top_k must be >= 1");
}

Tensor LabelSmoothedCe(const Tensor& log_probs,
                       const std::vector<int>& targets, double eps) {
  if (log_probs.shape().size() != 2) {
    throw UsageError("cross entropy expects [positions, classes] log probs");
  }
  const Dim p = log_probs.shape()[0];
  const Dim c = log_probs.shape()[1];
  if (static_cast<Dim>(targets.size()) != p) {
    throw UsageError("target count does not match log prob rows");
  }
  if (p == 0) throw UsageError("cross entropy over zero positions");
  if (eps < 0 || eps >= 1) throw UsageError("eps must lie in [0, 1)");
  if (eps > 0 && c < 2) throw UsageError("smoothing needs at least 2 classes");

  Tensor q = Tensor::Zeros({p, c});
  const double off = c > 1 ? eps / static_cast<double>(c - 1) : 0.0;
  for (Dim i = 0; i < p; ++i) {
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= c) throw UsageError(StrCat("target id ", t,
                                                 " out of range"));
    for (Dim j = 0; j < c; ++j) {
      q.raw()[i * c + j] = j == t ? 1.0 - eps : off;
    }
  }
  return Scale(Sum(Mul(log_probs, q)), -1.0 / static_cast<double>(p));
}

JointLossResult JointLoss(const IlbModel::ForwardOutput& fwd,
                          const std::vector<int>& tokens,
                          const ModelConfig& model_cfg,
                          const TrainConfig& cfg, const CorpusMeta& meta) {
  if (tokens.empty()) throw UsageError("joint loss needs target tokens");
  if (model_cfg.flags.multitask_ld && !fwd.ld_log_probs.defined()) {
    throw ConfigError("diarization loss requested but outputs are missing");
  }

  std::vector<int> asr_targets = tokens;
  asr_targets.push_back(static_cast<int>(model_cfg.sos_id()));
  Tensor att = LabelSmoothedCe(fwd.asr_log_probs, asr_targets,
                               cfg.label_smoothing);

  CtcLossResult ctc = CtcLoss(fwd.ctc_log_probs, tokens);

  JointLossResult result;
  result.att = att.item();
  result.ctc_feasible = ctc.feasible;
  if (ctc.feasible) result.ctc = ctc.loss.item();

  Tensor total = Scale(att, 1.0 - cfg.alpha);
  if (ctc.feasible) {
    total = Add(total, Scale(ctc.loss, cfg.alpha));
  }
  if (model_cfg.flags.multitask_ld) {
    Tensor ld = LabelSmoothedCe(fwd.ld_log_probs,
                                DeriveLangLabels(tokens, meta),
                                cfg.label_smoothing);
    result.ld = ld.item();
    total = Add(total, Scale(ld, cfg.beta));
  }
  result.total = total;
  return result;
}

Tensor AugmentFeatures(const Tensor& features, const TrainConfig& cfg,
                       Rng* rng) {
  const Dim t = features.shape()[0];
  const Dim f = features.shape()[1];
  Tensor out = Tensor::FromData(
      features.shape(),
      std::vector<double>(features.data().begin(), features.data().end()));

  const int max_t = static_cast<int>(cfg.time_mask_frac * t);
  const int wt = max_t > 0 ? rng->UniformInt(0, max_t) : 0;
  const int st = wt < t ? rng->UniformInt(0, static_cast<int>(t) - wt) : 0;
  for (int i = st; i < st + wt; ++i) {
    for (Dim j = 0; j < f; ++j) out.raw()[i * f + j] = 0.0;
  }

  const int max_f = static_cast<int>(cfg.feat_mask_frac * f);
  const int wf = max_f > 0 ? rng->UniformInt(0, max_f) : 0;
  const int sf = wf < f ? rng->UniformInt(0, static_cast<int>(f) - wf) : 0;
  for (Dim i = 0; i < t; ++i) {
    for (int j = sf; j < sf + wf; ++j) out.raw()[i * f + j] = 0.0;
  }
  return out;
}

AdamOptimizer::AdamOptimizer(
    std::vector<std::pair<std::string, Tensor>>* params, double peak_lr,
    int warmup_steps)
    : params_(params), peak_lr_(peak_lr), warmup_(warmup_steps) {
  if (peak_lr <= 0 || warmup_steps < 1) {
    throw ConfigError("optimizer needs a positive lr and warmup");
  }
  for (const auto& kv : *params_) {
    m_.emplace_back(static_cast<size_t>(kv.second.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(kv.second.numel()), 0.0);
  }
}

double AdamOptimizer::CurrentLr() const {
  const double s = std::max(1, step_);
  return peak_lr_ * std::min(s / warmup_, std::sqrt(warmup_ / s));
}

void AdamOptimizer::Step() {
  ++step_;
  const double lr = CurrentLr();
  constexpr double kBeta1 = 0.9, kBeta2 = 0.98, kEps = 1e-9;
  const double bc1 = 1.0 - std::pow(kBeta1, step_);
  const double bc2 = 1.0 - std::pow(kBeta2, step_);
  for (size_t k = 0; k < params_->size(); ++k) {
    Tensor& p = (*params_)[k].second;
    auto grad = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < m.size(); ++i) {
      const double g = grad[i];
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
      p.raw()[static_cast<Dim>(i)] -=
          lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
    }
    p.ZeroGrad();
  }
}

std::string FormatEpochLine(const EpochRecord& rec) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d %.6f %.4f %.6f %.6f %.6f %.6f",
                rec.epoch, rec.dev_loss, rec.dev_mer, rec.dev_ld_acc,
                rec.train_ctc, rec.train_att, rec.train_ld);
  return buf;
}

DevEval EvaluateSplit(IlbModel* model, const std::vector<Utterance>& split,
                      const CorpusMeta& meta, const TrainConfig& cfg) {
  if (split.empty()) throw UsageError("evaluation needs utterances");
  DevEval eval;
  MerReport mer_total;
  int64_t ld_correct = 0, ld_total = 0;
  int ctc_feasible = 0;
  for (const auto& utt : split) {
    auto fwd = model->ForwardAll(utt.features, utt.tokens, {});
    JointLossResult loss =
        JointLoss(fwd, utt.tokens, model->config(), cfg, meta);
    eval.joint += loss.total.item();
    eval.att += loss.att;
    eval.ld += loss.ld;
    if (loss.ctc_feasible) {
      eval.ctc += loss.ctc;
      ++ctc_feasible;
    }

    std::vector<int> hyp = CtcGreedyDecode(fwd.ctc_log_probs);
    std::erase_if(hyp, [&](int tok) { return tok >= meta.sos_id(); });
    MerReport report = MixErrorRate(hyp, utt.tokens, meta);
    mer_total.Merge(report);

    if (fwd.ld_log_probs.defined()) {
      const auto ref = DeriveLangLabels(utt.tokens, meta);
      const Dim c = fwd.ld_log_probs.shape()[1];
      for (size_t i = 0; i < ref.size(); ++i) {
        if (ref[i] == kLangEos) continue;
        Dim best = 0;
        for (Dim j = 1; j < c; ++j) {
          if (fwd.ld_log_probs.at({static_cast<Dim>(i), j}) >
              fwd.ld_log_probs.at({static_cast<Dim>(i), best})) {
            best = j;
          }
        }
        ld_correct += best == ref[i];
        ++ld_total;
      }
    }
  }
  const double n = static_cast<double>(split.size());
  eval.joint /= n;
  eval.att /= n;
  eval.ld /= n;
  if (ctc_feasible > 0) eval.ctc /= ctc_feasible;
  eval.mer_percent = 100.0 * mer_total.mer();
  eval.ld_acc = ld_total > 0
                    ? static_cast<double>(ld_correct) /
                          static_cast<double>(ld_total)
                    : 0.0;
  return eval;
}

TrainResult Train(IlbModel* model, const Corpus& corpus,
                  const TrainConfig& cfg, const std::string& ckpt_dir,
                  std::ostream* log) {
  cfg.Validate();
  if (corpus.train.empty()) throw UsageError("training split is empty");
  if (corpus.dev.empty()) throw UsageError("dev split is empty");
  if (model->config().vocab_size != corpus.meta.total_vocab()) {
    throw ConfigError("model vocabulary does not match the corpus");
  }

  TrainResult result;
  AdamOptimizer opt(&model->params(), cfg.peak_lr, cfg.warmup_steps);
  const double dropout = model->config().dropout;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order(corpus.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(DeriveSeed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(
          shuffle.UniformInt(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double sum_ctc = 0, sum_att = 0, sum_ld = 0;
    int64_t n_ctc = 0;
    bool epoch_ok = true;
    try {
      for (size_t start = 0; start < order.size();
           start += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(
            order.size(), start + static_cast<size_t>(cfg.batch_size));
        const double inv_batch = 1.0 / static_cast<double>(end - start);
        for (size_t pos = start; pos < end; ++pos) {
          const Utterance& utt = corpus.train[order[pos]];
          Rng aug_rng(DeriveSeed(cfg.seed, "augment",
                                 static_cast<uint64_t>(epoch), pos));
          const Tensor feats = cfg.augment
                                   ? AugmentFeatures(utt.features, cfg,
                                                     &aug_rng)
                                   : utt.features;
          Rng drop_rng(DeriveSeed(cfg.seed, "dropout",
                                  static_cast<uint64_t>(epoch), pos));
          ForwardCtx ctx{dropout > 0 ? &drop_rng : nullptr, dropout};

          Tape tape;
          TapeScope scope(tape);
          auto fwd = model->ForwardAll(feats, utt.tokens, ctx);
          JointLossResult loss =
              JointLoss(fwd, utt.tokens, model->config(), cfg, corpus.meta);
          if (!std::isfinite(loss.total.item())) {
            throw NumericError("loss diverged");
          }
          sum_att += loss.att;
          sum_ld += loss.ld;
          if (loss.ctc_feasible) {
            sum_ctc += loss.ctc;
            ++n_ctc;
          } else {
            ++result.infeasible_ctc;
          }
          tape.Backward(Scale(loss.total, inv_batch));
        }
        opt.Step();
      }
    } catch (const NumericError& e) {
      std::cerr << "training diverged in epoch " << epoch << ": " << e.what()
                << "\n";
      result.diverged = true;
      epoch_ok = false;
    }
    if (!epoch_ok) break;

    EpochRecord rec;
    rec.epoch = epoch;
    const int64_t trained = static_cast<int64_t>(order.size());
    rec.train_att = sum_att / static_cast<double>(trained);
    rec.train_ld = sum_ld / static_cast<double>(trained);
    rec.train_ctc = n_ctc > 0 ? sum_ctc / static_cast<double>(n_ctc) : 0.0;

    try {
      DevEval dev = EvaluateSplit(model, corpus.dev, corpus.meta, cfg);
      rec.dev_loss = dev.joint;
      rec.dev_mer = dev.mer_percent;
      rec.dev_ld_acc = dev.ld_acc;
    } catch (const NumericError& e) {
      std::cerr << "validation diverged in epoch " << epoch << ": "
                << e.what() << "\n";
      result.diverged = true;
      break;
    }

    char name[64];
    std::snprintf(name, sizeof(name), "/epoch-%03d.bin", epoch);
    rec.ckpt_path = ckpt_dir + name;
    Checkpoint ckpt;
    ckpt.config = model->config();
    ckpt.meta.emplace_back("epoch", std::to_string(epoch));
    char score[32];
    std::snprintf(score, sizeof(score), "%.17g", rec.dev_loss);
    ckpt.meta.emplace_back("dev_loss", score);
    ckpt.meta.emplace_back("seed", std::to_string(cfg.seed));
    ckpt.tensors = model->params();
    WriteCheckpoint(rec.ckpt_path, ckpt);

    result.history.push_back(rec);
    if (log) {
      (*log) << FormatEpochLine(rec) << "\n";
      log->flush();
    }
  }

  if (!result.history.empty()) {
    int best = 0;
    for (size_t i = 1; i < result.history.size(); ++i) {
      if (result.history[i].dev_loss <
          result.history[static_cast<size_t>(best)].dev_loss) {
        best = static_cast<int>(i);
      }
    }
    result.best_epoch = result.history[static_cast<size_t>(best)].epoch;
    result.averaged = AverageCheckpoints(result.history, cfg.average_top_k);
  }
  return result;
}

Checkpoint AverageCheckpoints(const std::vector<EpochRecord>& history,
                              int k) {
  if (history.empty()) throw UsageError("no checkpoints to average");
  if (k > static_cast<int>(history.size())) {
    std::cerr << "warning: only " << history.size()
              << " checkpoints available, averaging all of them\n";
    k = static_cast<int>(history.size());
  }
  std::vector<EpochRecord> ranked = history;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const EpochRecord& a, const EpochRecord& b) {
                     if (a.dev_loss != b.dev_loss) {
                       return a.dev_loss < b.dev_loss;
                     }
                     return a.epoch < b.epoch;
                   });
  ranked.resize(static_cast<size_t>(k));

  Checkpoint avg = ReadCheckpoint(ranked.front().ckpt_path);
  std::string members = std::to_string(ranked.front().epoch);
  for (size_t m = 1; m < ranked.size(); ++m) {
    Checkpoint ckpt = ReadCheckpoint(ranked[m].ckpt_path);
    if (ckpt.tensors.size() != avg.tensors.size()) {
      throw IoError("checkpoint parameter lists differ");
    }
    for (size_t i = 0; i < avg.tensors.size(); ++i) {
      if (ckpt.tensors[i].first != avg.tensors[i].first ||
          ckpt.tensors[i].second.shape() != avg.tensors[i].second.shape()) {
        throw IoError("checkpoint parameter lists differ");
      }
      for (Dim j = 0; j < avg.tensors[i].second.numel(); ++j) {
        avg.tensors[i].second.raw()[j] += ckpt.tensors[i].second.data()[j];
      }
    }
    members += "," + std::to_string(ranked[m].epoch);
  }
  const double inv = 1.0 / static_cast<double>(k);
  for (auto& [name, t] : avg.tensors) {
    for (Dim j = 0; j < t.numel(); ++j) t.raw()[j] *= inv;
  }
  avg.meta.clear();
  avg.meta.emplace_back("averaged_epochs", members);
  return avg;
}

}  // namespace ilb
