// ilb/training.h

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

#ifndef ILB_TRAINING_H_
#define ILB_TRAINING_H_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ilb/data.h"
#include "ilb/model.h"
#include "ilb/tensor.h"

namespace ilb {

struct TrainConfig {
  double alpha = 0.3;            // CTC weight in the joint loss
  double beta = 0.8;             // diarization weight
  double label_smoothing = 0.1;  // applied to both cross-entropy terms
  double peak_lr = 1e-3;
  int warmup_steps = 800;
  int batch_size = 16;
  int epochs = 20;
  bool augment = true;
  double time_mask_frac = 0.1;  // one mask, at most this share of T
  double feat_mask_frac = 0.2;  // one mask, at most this share of F
  int average_top_k = 10;
  uint64_t seed = 1;

  void Validate() const;
};

// Cross entropy against the smoothed target distribution: mass 1-eps on the
// target class, eps/(C-1) on the rest, averaged over positions.
Tensor LabelSmoothedCe(const Tensor& log_probs, const std::vector<int>& targets,
                       double eps);

struct JointLossResult {
  Tensor total;
  double ctc = 0;
  double att = 0;
  double ld = 0;
  bool ctc_feasible = true;
};

// alpha * L_ctc + (1-alpha) * L_att + beta * L_ld. The diarization term is
// present exactly when the model runs its diarization decoder. Utterances
// too short for CTC keep the attention terms and drop the CTC one so the
// composed loss stays finite.
JointLossResult JointLoss(const IlbModel::ForwardOutput& fwd,
                          const std::vector<int>& tokens,
                          const ModelConfig& model_cfg,
                          const TrainConfig& cfg, const CorpusMeta& meta);

// Copy of the features with one zeroed time stripe and one zeroed feature
// stripe, both width-bounded and drawn from rng. Masks zero normalized
// values, which is the global mean.
Tensor AugmentFeatures(const Tensor& features, const TrainConfig& cfg,
                       Rng* rng);

// Adam with the inverse-square-root warmup schedule:
// lr(step) = peak * min(step / warmup, sqrt(warmup / step)).
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::pair<std::string, Tensor>>* params,
                double peak_lr, int warmup_steps);

  void Step();  // applies accumulated gradients, then clears them
  int step_count() const { return step_; }
  double CurrentLr() const;

 private:
  std::vector<std::pair<std::string, Tensor>>* params_;
  double peak_lr_;
  int warmup_;
  int step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double dev_loss = 0;
  double dev_mer = 0;     // percent
  double dev_ld_acc = 0;  // zero when the model has no diarization decoder
  double train_ctc = 0;
  double train_att = 0;
  double train_ld = 0;
  std::string ckpt_path;
};

std::string FormatEpochLine(const EpochRecord& rec);

struct TrainResult {
  std::vector<EpochRecord> history;
  bool diverged = false;
  int64_t infeasible_ctc = 0;
  int best_epoch = 0;          // 1-based, lowest dev loss
  Checkpoint averaged;         // mean of the top-k checkpoints by dev loss
};

// Runs the full loop: shuffled batches, per-utterance gradient accumulation,
// one optimizer step per batch, per-epoch dev evaluation and checkpointing
// under ckpt_dir. Divergence stops training with the finished epochs kept.
// Every random draw derives from cfg.seed, so equal inputs give bit-equal
// checkpoints. Dev MER uses the greedy CTC decode as a fast proxy.
TrainResult Train(IlbModel* model, const Corpus& corpus,
                  const TrainConfig& cfg, const std::string& ckpt_dir,
                  std::ostream* log);

// Parameter-wise mean of the k best checkpoints by dev loss; k larger than
// the history is clamped with a warning.
Checkpoint AverageCheckpoints(const std::vector<EpochRecord>& history, int k);

// Shared by training-time validation and the evaluation commands.
struct DevEval {
  double joint = 0;
  double ctc = 0;
  double att = 0;
  double ld = 0;
  double mer_percent = 0;
  double ld_acc = 0;
};

DevEval EvaluateSplit(IlbModel* model, const std::vector<Utterance>& split,
                      const CorpusMeta& meta, const TrainConfig& cfg);

}  // namespace ilb

#endif  // ILB_TRAINING_H_
