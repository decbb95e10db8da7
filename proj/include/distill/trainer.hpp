// Copyright 2026  The distill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// CE training and teacher-student adaptation.
//
// Every procedure shares one loop: bucketed mini-batches, Adam with global
// norm clipping, a dev-TER evaluation before the first epoch and every
// `eval_every` epochs after it, learning-rate halving on plateaus, early
// stopping, and retention of the best-dev parameters. Teacher outputs used as
// adaptation targets are computed once per run with the frozen teacher in
// inference mode.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill/aed.hpp"
#include "distill/corpus.hpp"
#include "distill/eval.hpp"

namespace distill {

enum class TrainMode { CE, TokenTs, SeqTs, Its, Cts, Ats };

const char* mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);

struct EpochMetrics {
  int epoch = 0;                // 0 is the evaluation before training
  std::optional<double> loss;   // mean training loss of the epoch
  double dev_ter = 0.0;
  double learning_rate = 0.0;
  double sampling_probability = 0.0;
  std::size_t steps = 0;
  double wall_seconds = 0.0;    // excluded from to_json()

  nlohmann::json to_json() const;
};

struct TrainConfig {
  TrainMode mode = TrainMode::CE;
  std::optional<double> lambda;      // ATS only
  std::optional<double> its_weight;  // ITS only
  int epochs = 50;
  int batch_size = 32;
  // 1e-3 for CE and 1e-4 for adaptation modes when unset.
  std::optional<double> learning_rate;
  double lr_decay = 0.5;
  // Linear learning-rate ramp over the first optimizer steps of a run.
  int warmup_steps = 0;
  int decay_patience = 2;
  int early_stop_patience = 5;
  double label_smoothing = 0.1;
  // Linear ramp from start (epoch 0) to end (epoch ramp_epochs and later).
  // Used by CE training only.
  double sampling_start = 0.0;
  double sampling_end = 0.4;
  int sampling_ramp_epochs = 10;
  double dropout = 0.1;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  int eval_every = 1;
  // CE only: which frames the model trains and is evaluated on.
  Side side = Side::Source;
  // ITS/CTS/ATS: start from a token-level T/S run.
  bool token_ts_init = true;
  int max_decode_length = 20;
  int eval_batch_size = 64;
  // Called after every epoch; not serialized.
  std::function<void(const EpochMetrics&)> on_epoch;

  bool adaptation() const { return mode != TrainMode::CE; }
  bool supervised() const { return mode == TrainMode::Its || mode == TrainMode::Cts || mode == TrainMode::Ats; }
  double effective_learning_rate() const;
  double sampling_probability(int epoch) const;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

// Global L2 norm over all gradients; parameters without a gradient count as
// zero. Throws DivergenceError naming the first non-finite gradient.
double global_grad_norm(std::span<const NamedTensor> params);

// Rescales every gradient so the global norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(std::span<const NamedTensor> params, double max_norm);

class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamConfig config);

  // Clips, updates and zeroes the gradients. Returns the pre-clip norm.
  double step();

  double learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<NamedTensor> params_;
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  std::int64_t t_ = 0;
};


struct RunMetrics {
  std::string mode;
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_dev_ter = 0.0;
  std::string stop_reason;
  std::size_t train_utterances = 0;
  // Token/seq T/S: utterances whose teacher hypothesis was empty.
  std::size_t skipped_empty = 0;
  // Largest per-batch gap of the mode's definitional identity: SEQ_TS against
  // CE on the teacher tokens, CTS against ATS with indicator weights.
  std::optional<double> identity_max_error;
  std::string teacher_hash_before;
  std::string teacher_hash_after;

  bool teacher_unchanged() const { return teacher_hash_before == teacher_hash_after; }
  double wall_seconds() const;
  // Deterministic summary: no wall-clock fields.
  nlohmann::json to_json() const;
};

// One JSON object per evaluation, wall time excluded.
void write_metrics_jsonl(const std::filesystem::path& path, const RunMetrics& metrics);

struct TrainResult {
  AedModel model;
  RunMetrics metrics;
  // Supervised modes with token_ts_init: the initialization run.
  std::optional<RunMetrics> init_metrics;
};

// Parallel data with the labels withheld. Unsupervised adaptation only sees
// this view, so it cannot read Y^G.
class UnlabeledParallelView {
 public:
  explicit UnlabeledParallelView(std::span<const ParallelUtterance> utts) : utts_(utts) {}
  std::size_t size() const { return utts_.size(); }
  std::uint64_t id(std::size_t i) const { return utts_[i].id; }
  const Matrix& source(std::size_t i) const { return utts_[i].source; }
  const Matrix& target(std::size_t i) const { return utts_[i].target; }

 private:
  std::span<const ParallelUtterance> utts_;
};

// Greedy teacher hypotheses on X^T: conditioning [<sos>, y_1, ..., y_{L-1}],
// one-best targets [y_1, ..., y_L] and the recorded per-step posteriors.
struct TeacherTargets {
  std::uint64_t id = 0;
  const Matrix* frames = nullptr;  // student input X^S
  std::vector<int> cond;
  std::vector<int> tokens;
  Matrix posteriors;
};

struct TeacherDecodeResult {
  std::vector<TeacherTargets> targets;
  std::size_t skipped_empty = 0;
};

TeacherDecodeResult teacher_one_best(const AedModel& teacher, const UnlabeledParallelView& data, int max_length,
                                     std::size_t batch_size = 64);

// Teacher posteriors on X^T conditioned on Y^G.
std::vector<Matrix> teacher_forced_posteriors(const AedModel& teacher, std::span<const ParallelUtterance> data,
                                              std::size_t batch_size = 64);

// Trains `init` (random or a warm start) with label-smoothed CE on
// config.side frames, with scheduled sampling.
TrainResult train_ce(const AedModel& init, std::span<const ParallelUtterance> train,
                     std::span<const ParallelUtterance> dev, const TrainConfig& config);

AedModel clone_student(const AedModel& teacher);

// Student on X^S, teacher-forced on the teacher's one-best Y^T, minimizing
// token-level KL to the teacher posteriors.
TrainResult adapt_token_ts(const AedModel& teacher, const AedModel& student, const UnlabeledParallelView& data,
                           std::span<const ParallelUtterance> dev, const TrainConfig& config);

// As adapt_token_ts with one-hot Y^T targets.
TrainResult adapt_seq_ts(const AedModel& teacher, const AedModel& student, const UnlabeledParallelView& data,
                         std::span<const ParallelUtterance> dev, const TrainConfig& config);

// ITS, CTS or ATS on Y^G conditioning, starting from `student` as given.
TrainResult adapt_supervised(const AedModel& teacher, const AedModel& student,
                             std::span<const ParallelUtterance> data, std::span<const ParallelUtterance> dev,
                             const TrainConfig& config);

// Dispatch on config.mode. The student is cloned from the teacher; supervised
// modes first run token-level T/S when config.token_ts_init is set.
TrainResult adapt(const AedModel& teacher, std::span<const ParallelUtterance> data,
                  std::span<const ParallelUtterance> dev, const TrainConfig& config);

}  // namespace distill
