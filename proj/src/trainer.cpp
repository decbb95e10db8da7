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


#include "distill/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "distill/checkpoint.hpp"
#include "distill/errors.hpp"
#include "distill/losses.hpp"
#include "distill/ops.hpp"

namespace distill {
namespace {

using Index = Eigen::Index;

constexpr double kDefaultCeLearningRate = 1e-3;
constexpr double kDefaultAdaptLearningRate = 1e-4;

const std::vector<std::string> kConfigKeys = {
    "mode",          "lambda",         "its_weight",       "epochs",
    "batch_size",    "learning_rate",  "lr_decay",         "decay_patience", "warmup_steps",
    "early_stop_patience", "label_smoothing", "scheduled_sampling", "dropout",
    "clip_norm",     "seed",           "eval_every",       "side",
    "token_ts_init", "max_decode_length", "eval_batch_size"};

// One training utterance with whatever targets its mode needs. Hard targets
// and soft rows are aligned with the conditioning steps.
struct Example {
  std::uint64_t id = 0;
  const Matrix* frames = nullptr;
  std::vector<int> cond;
  std::vector<int> hard;
  const Matrix* soft = nullptr;
};

struct BatchTargets {
  std::vector<int> hard;  // step-major, kIgnoreToken on padding
  Matrix soft;            // step-major rows, zero on padding
  std::vector<unsigned char> valid;
};

BatchTargets stack_targets(const std::vector<const Example*>& batch, std::size_t steps, std::size_t vocab,
                           bool with_soft) {
  const std::size_t b_count = batch.size();
  BatchTargets t;
  t.hard.assign(steps * b_count, kIgnoreToken);
  t.valid.assign(steps * b_count, 0);
  if (with_soft) t.soft = Matrix::Zero(static_cast<Index>(steps * b_count), static_cast<Index>(vocab));
  for (std::size_t b = 0; b < b_count; ++b) {
    const Example& ex = *batch[b];
    for (std::size_t l = 0; l < ex.cond.size(); ++l) {
      const std::size_t row = l * b_count + b;
      t.hard[row] = ex.hard[l];
      t.valid[row] = 1;
      if (with_soft) t.soft.row(static_cast<Index>(row)) = ex.soft->row(static_cast<Index>(l));
    }
  }
  return t;
}

// Buckets by (frame count, id), cuts batches, and leaves the batch order to
// the caller's shuffle.
std::vector<std::vector<const Example*>> make_batches(const std::vector<Example>& examples, int batch_size) {
  std::vector<const Example*> sorted;
  for (const auto& ex : examples) sorted.push_back(&ex);
  std::sort(sorted.begin(), sorted.end(), [](const Example* a, const Example* b) {
    const auto na = a->frames->rows(), nb = b->frames->rows();
    return na != nb ? na < nb : a->id < b->id;
  });
  std::vector<std::vector<const Example*>> batches;
  for (std::size_t s = 0; s < sorted.size(); s += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(sorted.size(), s + static_cast<std::size_t>(batch_size));
    batches.emplace_back(sorted.begin() + static_cast<std::ptrdiff_t>(s),
                         sorted.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return batches;
}

struct BatchLoss {
  Tensor loss;
  std::optional<double> identity_gap;
};

using LossFn = std::function<BatchLoss(const Tensor& log_probs, const BatchTargets& targets)>;

LossFn loss_for(const TrainConfig& config) {
  switch (config.mode) {
    case TrainMode::CE:
      return [s = config.label_smoothing](const Tensor& lp, const BatchTargets& t) {
        return BatchLoss{ce_loss(lp, t.hard, s), std::nullopt};
      };
    case TrainMode::TokenTs:
      return [](const Tensor& lp, const BatchTargets& t) {
        return BatchLoss{kl_token_ts_loss(SoftTarget(t.soft, t.valid), lp), std::nullopt};
      };
    case TrainMode::SeqTs:
      return [](const Tensor& lp, const BatchTargets& t) {
        Tensor loss = seq_ts_loss(lp, t.hard);
        NoGradGuard guard;
        const double ce = ce_loss(lp, t.hard, 0.0).item();
        return BatchLoss{loss, std::abs(loss.item() - ce)};
      };
    case TrainMode::Its:
      return [w = *config.its_weight](const Tensor& lp, const BatchTargets& t) {
        return BatchLoss{its_loss(SoftTarget(t.soft, t.valid), t.hard, lp, w), std::nullopt};
      };
    case TrainMode::Cts:
      return [](const Tensor& lp, const BatchTargets& t) {
        SoftTarget teacher(t.soft, t.valid);
        Tensor loss = cts_loss(teacher, t.hard, lp);
        NoGradGuard guard;
        const auto w = cts_indicator_weights(teacher, t.hard);
        const double ats = ats_loss_with_weights(teacher, t.hard, lp, w).item();
        return BatchLoss{loss, std::abs(loss.item() - ats)};
      };
    case TrainMode::Ats:
      return [lambda = *config.lambda](const Tensor& lp, const BatchTargets& t) {
        return BatchLoss{ats_loss(SoftTarget(t.soft, t.valid), t.hard, lp, lambda), std::nullopt};
      };
  }
  throw ContractError("unknown training mode");
}

double dev_ter(const AedModel& model, std::span<const ParallelUtterance> dev, Side side, const TrainConfig& config) {
  return corpus_ter(model, dev, side, config.max_decode_length, static_cast<std::size_t>(config.eval_batch_size))
      .ter;
}

std::string diagnostic(const TrainConfig& config, int epoch, std::size_t step, const std::string& what) {
  std::ostringstream os;
  os << mode_name(config.mode) << " epoch " << epoch << " step " << step << ": " << what;
  return os.str();
}

// The shared loop. `model` is updated in place and ends holding the best-dev
// parameters.
RunMetrics run_loop(AedModel& model, const std::vector<Example>& examples, std::span<const ParallelUtterance> dev,
                    Side eval_side, const TrainConfig& config) {
  if (examples.empty()) throw ContractError("training set is empty");
  if (dev.empty()) throw ContractError("dev set is empty");
  const bool with_soft = config.mode != TrainMode::CE && config.mode != TrainMode::SeqTs;
  const LossFn loss_fn = loss_for(config);
  const std::size_t vocab = model.vocab().size();
  const auto params = model.params().named();
  for (auto p : params) p.tensor.zero_grad();

  Adam adam(params, AdamConfig{config.effective_learning_rate(), 0.9, 0.999, 1e-8, config.clip_norm});
  Rng shuffle_rng(mix_seed(config.seed, 11));
  Rng noise_rng(mix_seed(config.seed, 12));
  auto batches = make_batches(examples, config.batch_size);

  RunMetrics metrics;
  metrics.mode = mode_name(config.mode);
  metrics.train_utterances = examples.size();

  using Clock = std::chrono::steady_clock;
  auto t0 = Clock::now();
  EpochMetrics initial;
  initial.dev_ter = dev_ter(model, dev, eval_side, config);
  initial.learning_rate = adam.learning_rate();
  initial.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  metrics.epochs.push_back(initial);

  AedParams best = model.params();
  metrics.best_dev_ter = initial.dev_ter;
  metrics.best_epoch = 0;
  int since_best = 0;
  double trained_best = std::numeric_limits<double>::infinity();
  metrics.stop_reason = "max_epochs";

  double loss_sum = 0.0;
  std::size_t loss_steps = 0;
  double scheduled_lr = adam.learning_rate();
  std::size_t global_step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    t0 = Clock::now();
    const double sampling = config.mode == TrainMode::CE ? config.sampling_probability(epoch - 1) : 0.0;
    std::shuffle(batches.begin(), batches.end(), shuffle_rng.engine());
    for (const auto& batch : batches) {
      std::vector<const Matrix*> frames;
      std::vector<std::vector<int>> cond;
      std::size_t steps = 0;
      for (const Example* ex : batch) {
        frames.push_back(ex->frames);
        cond.push_back(ex->cond);
        steps = std::max(steps, ex->cond.size());
      }
      const BatchTargets targets = stack_targets(batch, steps, vocab, with_soft);
      ForwardOptions opts{config.dropout, &noise_rng};
      ScheduledSampling ss{sampling, &noise_rng};
      const auto out = forward_teacher_forced(model, FrameBatch::from(frames), cond, opts, ss);
      const BatchLoss bl = loss_fn(out.stacked_log_probs(), targets);
      const double value = bl.loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError(diagnostic(config, epoch, loss_steps, "non-finite loss"));
      }
      if (bl.identity_gap) {
        metrics.identity_max_error = std::max(metrics.identity_max_error.value_or(0.0), *bl.identity_gap);
      }
      backward(bl.loss);
      ++global_step;
      if (global_step <= static_cast<std::size_t>(config.warmup_steps)) {
        adam.set_learning_rate(scheduled_lr * static_cast<double>(global_step) / config.warmup_steps);
      }
      try {
        adam.step();
      } catch (const DivergenceError& e) {
        throw DivergenceError(diagnostic(config, epoch, loss_steps, e.what()));
      }
      loss_sum += value;
      ++loss_steps;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.loss = loss_sum / static_cast<double>(loss_steps);
    em.steps = loss_steps;
    em.learning_rate = adam.learning_rate();
    em.sampling_probability = sampling;
    loss_sum = 0.0;
    loss_steps = 0;

    const bool evaluate = epoch % config.eval_every == 0 || epoch == config.epochs;
    if (!evaluate) {
      em.dev_ter = metrics.epochs.back().dev_ter;
      em.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
      metrics.epochs.push_back(em);
      if (config.on_epoch) config.on_epoch(em);
      continue;
    }
    em.dev_ter = dev_ter(model, dev, eval_side, config);
    em.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    metrics.epochs.push_back(em);
    if (config.on_epoch) config.on_epoch(em);

    if (em.dev_ter < metrics.best_dev_ter) {
      metrics.best_dev_ter = em.dev_ter;
      metrics.best_epoch = epoch;
      best = model.params();
    }
    // Patience tracks the trained epochs only, so a strong starting point
    // does not end a run that is still recovering from its first updates.
    if (em.dev_ter < trained_best) {
      trained_best = em.dev_ter;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= config.early_stop_patience) {
        metrics.stop_reason = "early_stop";
        break;
      }
      if (since_best % config.decay_patience == 0) {
        scheduled_lr *= config.lr_decay;
        adam.set_learning_rate(scheduled_lr);
      }
    }
  }
  model.params() = best;
  return metrics;
}

std::vector<Example> teacher_examples(const TeacherDecodeResult& decoded, bool soft) {
  std::vector<Example> out;
  for (const auto& t : decoded.targets) {
    out.push_back({t.id, t.frames, t.cond, t.tokens, soft ? &t.posteriors : nullptr});
  }
  return out;
}

void check_labels(const ParallelUtterance& u, const Vocab& vocab) {
  if (u.labels.size() < 2 || u.labels.front() != vocab.sos() || u.labels.back() != vocab.eos()) {
    throw ContractError("utterance " + std::to_string(u.id) + " has no ground-truth label sequence");
  }
}

std::vector<int> conditioning(const std::vector<int>& labels) { return {labels.begin(), labels.end() - 1}; }
std::vector<int> next_tokens(const std::vector<int>& labels) { return {labels.begin() + 1, labels.end()}; }

void require_mode(const TrainConfig& config, std::initializer_list<TrainMode> modes, const char* fn) {
  for (TrainMode m : modes) {
    if (config.mode == m) return;
  }
  throw ConfigError(std::string(fn) + " does not run mode " + mode_name(config.mode));
}

TrainResult unsupervised(const AedModel& teacher, const AedModel& student, const UnlabeledParallelView& data,
                         std::span<const ParallelUtterance> dev, const TrainConfig& config) {
  config.validate();
  const std::string before = teacher.checkpoint_hash();
  const auto decoded = teacher_one_best(teacher, data, config.max_decode_length,
                                        static_cast<std::size_t>(config.eval_batch_size));
  AedModel model = clone_student(student);
  RunMetrics metrics =
      run_loop(model, teacher_examples(decoded, config.mode == TrainMode::TokenTs), dev, Side::Target, config);
  metrics.skipped_empty = decoded.skipped_empty;
  metrics.teacher_hash_before = before;
  metrics.teacher_hash_after = teacher.checkpoint_hash();
  return {std::move(model), std::move(metrics), std::nullopt};
}

}  // namespace

const char* mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::CE: return "CE";
    case TrainMode::TokenTs: return "TOKEN_TS";
    case TrainMode::SeqTs: return "SEQ_TS";
    case TrainMode::Its: return "ITS";
    case TrainMode::Cts: return "CTS";
    case TrainMode::Ats: return "ATS";
  }
  return "?";
}

TrainMode parse_mode(const std::string& name) {
  for (TrainMode m : {TrainMode::CE, TrainMode::TokenTs, TrainMode::SeqTs, TrainMode::Its, TrainMode::Cts,
                      TrainMode::Ats}) {
    if (name == mode_name(m)) return m;
  }
  throw ConfigError("unknown mode \"" + name + "\"");
}

double TrainConfig::effective_learning_rate() const {
  if (learning_rate) return *learning_rate;
  return adaptation() ? kDefaultAdaptLearningRate : kDefaultCeLearningRate;
}

double TrainConfig::sampling_probability(int epoch) const {
  if (epoch <= 0) return sampling_start;
  if (epoch >= sampling_ramp_epochs) return sampling_end;
  const double frac = static_cast<double>(epoch) / static_cast<double>(sampling_ramp_epochs);
  return sampling_start + (sampling_end - sampling_start) * frac;
}

void TrainConfig::validate() const {
  if (mode == TrainMode::Ats) {
    if (!lambda) throw ConfigError("mode ATS requires lambda");
    if (!(*lambda > 0.0) || !std::isfinite(*lambda)) throw ConfigError("lambda must be positive");
  } else if (lambda) {
    throw ConfigError(std::string("lambda is only valid for mode ATS, not ") + mode_name(mode));
  }
  if (mode == TrainMode::Its) {
    if (!its_weight) throw ConfigError("mode ITS requires its_weight");
    if (!(*its_weight >= 0.0 && *its_weight <= 1.0)) throw ConfigError("its_weight must be in [0, 1]");
  } else if (its_weight) {
    throw ConfigError(std::string("its_weight is only valid for mode ITS, not ") + mode_name(mode));
  }
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(effective_learning_rate() > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
  if (decay_patience < 1 || early_stop_patience < 1) throw ConfigError("patience values must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
  if (!(sampling_start >= 0.0 && sampling_start <= 1.0 && sampling_end >= 0.0 && sampling_end <= 1.0)) {
    throw ConfigError("scheduled sampling probabilities must be in [0, 1]");
  }
  if (sampling_ramp_epochs < 1) throw ConfigError("scheduled_sampling.ramp_epochs must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
  if (eval_every < 1) throw ConfigError("eval_every must be positive");
  if (max_decode_length < 1) throw ConfigError("max_decode_length must be positive");
  if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"mode", mode_name(mode)},
                      {"epochs", epochs},
                      {"batch_size", batch_size},
                      {"learning_rate", effective_learning_rate()},
                      {"lr_decay", lr_decay},
                      {"decay_patience", decay_patience},
                      {"warmup_steps", warmup_steps},
                      {"early_stop_patience", early_stop_patience},
                      {"label_smoothing", label_smoothing},
                      {"scheduled_sampling",
                       {{"start", sampling_start}, {"end", sampling_end}, {"ramp_epochs", sampling_ramp_epochs}}},
                      {"dropout", dropout},
                      {"clip_norm", clip_norm},
                      {"seed", seed},
                      {"eval_every", eval_every},
                      {"side", side_name(side)},
                      {"token_ts_init", token_ts_init},
                      {"max_decode_length", max_decode_length},
                      {"eval_batch_size", eval_batch_size}};
  if (lambda) j["lambda"] = *lambda;
  if (its_weight) j["its_weight"] = *its_weight;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end()) {
      throw ConfigError("unknown training config key \"" + key + "\"");
    }
  }
  TrainConfig c;
  try {
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
    if (j.contains("its_weight")) c.its_weight = j.at("its_weight").get<double>();
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.decay_patience = j.value("decay_patience", c.decay_patience);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    if (j.contains("scheduled_sampling")) {
      const auto& s = j.at("scheduled_sampling");
      c.sampling_start = s.value("start", c.sampling_start);
      c.sampling_end = s.value("end", c.sampling_end);
      c.sampling_ramp_epochs = s.value("ramp_epochs", c.sampling_ramp_epochs);
    }
    c.dropout = j.value("dropout", c.dropout);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    if (j.contains("side")) c.side = parse_side(j.at("side").get<std::string>());
    c.token_ts_init = j.value("token_ts_init", c.token_ts_init);
    c.max_decode_length = j.value("max_decode_length", c.max_decode_length);
    c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

double global_grad_norm(std::span<const NamedTensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    const Matrix& g = p.tensor.grad();
    if (!g.allFinite()) throw DivergenceError("non-finite gradient in " + p.name);
    sq += g.squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<const NamedTensor> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.accumulate_grad(p.tensor.grad() * (scale - 1.0));
    }
  }
  return norm;
}

Adam::Adam(std::vector<NamedTensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    v_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
  }
}

double Adam::step() {
  const double norm = clip_grad_norm(params_, config_.clip_norm);
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    const Matrix& g = p.grad();
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        config_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.epsilon);
    p.zero_grad();
  }
  return norm;
}

nlohmann::json EpochMetrics::to_json() const {
  return {{"epoch", epoch},
          {"loss", loss ? nlohmann::json(*loss) : nlohmann::json()},
          {"dev_ter", dev_ter},
          {"learning_rate", learning_rate},
          {"sampling_probability", sampling_probability},
          {"steps", steps}};
}

double RunMetrics::wall_seconds() const {
  double s = 0.0;
  for (const auto& e : epochs) s += e.wall_seconds;
  return s;
}

nlohmann::json RunMetrics::to_json() const {
  nlohmann::json j = {{"mode", mode},
                      {"epochs_run", epochs.empty() ? 0 : epochs.back().epoch},
                      {"best_epoch", best_epoch},
                      {"best_dev_ter", best_dev_ter},
                      {"stop_reason", stop_reason},
                      {"train_utterances", train_utterances},
                      {"skipped_empty", skipped_empty}};
  if (identity_max_error) j["identity_max_error"] = *identity_max_error;
  if (!teacher_hash_before.empty()) {
    j["teacher_hash_before"] = teacher_hash_before;
    j["teacher_hash_after"] = teacher_hash_after;
    j["teacher_unchanged"] = teacher_unchanged();
  }
  return j;
}

void write_metrics_jsonl(const std::filesystem::path& path, const RunMetrics& metrics) {
  std::string out;
  for (const auto& e : metrics.epochs) out += e.to_json().dump() + "\n";
  write_file(path, out);
}

TeacherDecodeResult teacher_one_best(const AedModel& teacher, const UnlabeledParallelView& data, int max_length,
                                     std::size_t batch_size) {
  TeacherDecodeResult result;
  const int sos = teacher.vocab().sos();
  const int eos = teacher.vocab().eos();
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const Matrix*> frames;
    for (std::size_t i = start; i < end; ++i) frames.push_back(&data.source(i));
    auto hyps = greedy_decode(teacher, FrameBatch::from(frames), max_length);
    for (std::size_t i = start; i < end; ++i) {
      Hypothesis& h = hyps[i - start];
      if (h.tokens.empty() || (h.tokens.size() == 1 && h.tokens.front() == eos)) {
        ++result.skipped_empty;
        continue;
      }
      TeacherTargets t;
      t.id = data.id(i);
      t.frames = &data.target(i);
      t.cond.push_back(sos);
      t.cond.insert(t.cond.end(), h.tokens.begin(), h.tokens.end() - 1);
      t.tokens = std::move(h.tokens);
      t.posteriors = std::move(h.posteriors);
      result.targets.push_back(std::move(t));
    }
  }
  return result;
}

std::vector<Matrix> teacher_forced_posteriors(const AedModel& teacher, std::span<const ParallelUtterance> data,
                                              std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<Matrix> out;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const Matrix*> frames;
    std::vector<std::vector<int>> cond;
    for (std::size_t i = start; i < end; ++i) {
      check_labels(data[i], teacher.vocab());
      frames.push_back(&data[i].source);
      cond.push_back(conditioning(data[i].labels));
    }
    const auto tf = forward_teacher_forced(teacher, FrameBatch::from(frames), cond);
    for (std::size_t b = 0; b < cond.size(); ++b) out.push_back(tf.posteriors(b));
  }
  return out;
}

TrainResult train_ce(const AedModel& init, std::span<const ParallelUtterance> train,
                     std::span<const ParallelUtterance> dev, const TrainConfig& config) {
  config.validate();
  require_mode(config, {TrainMode::CE}, "train_ce");
  std::vector<Example> examples;
  for (const auto& u : train) {
    check_labels(u, init.vocab());
    examples.push_back({u.id, config.side == Side::Source ? &u.source : &u.target, conditioning(u.labels),
                        next_tokens(u.labels), nullptr});
  }
  AedModel model = clone_student(init);
  RunMetrics metrics = run_loop(model, examples, dev, config.side, config);
  return {std::move(model), std::move(metrics), std::nullopt};
}

AedModel clone_student(const AedModel& teacher) {
  return AedModel(teacher.arch(), teacher.vocab(), AedParams(teacher.params()));
}

TrainResult adapt_token_ts(const AedModel& teacher, const AedModel& student, const UnlabeledParallelView& data,
                           std::span<const ParallelUtterance> dev, const TrainConfig& config) {
  require_mode(config, {TrainMode::TokenTs}, "adapt_token_ts");
  return unsupervised(teacher, student, data, dev, config);
}

TrainResult adapt_seq_ts(const AedModel& teacher, const AedModel& student, const UnlabeledParallelView& data,
                         std::span<const ParallelUtterance> dev, const TrainConfig& config) {
  require_mode(config, {TrainMode::SeqTs}, "adapt_seq_ts");
  return unsupervised(teacher, student, data, dev, config);
}

TrainResult adapt_supervised(const AedModel& teacher, const AedModel& student,
                             std::span<const ParallelUtterance> data, std::span<const ParallelUtterance> dev,
                             const TrainConfig& config) {
  config.validate();
  require_mode(config, {TrainMode::Its, TrainMode::Cts, TrainMode::Ats}, "adapt_supervised");
  const std::string before = teacher.checkpoint_hash();
  const auto posteriors = teacher_forced_posteriors(teacher, data, static_cast<std::size_t>(config.eval_batch_size));
  std::vector<Example> examples;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& u = data[i];
    examples.push_back({u.id, &u.target, conditioning(u.labels), next_tokens(u.labels), &posteriors[i]});
  }
  AedModel model = clone_student(student);
  RunMetrics metrics = run_loop(model, examples, dev, Side::Target, config);
  metrics.teacher_hash_before = before;
  metrics.teacher_hash_after = teacher.checkpoint_hash();
  return {std::move(model), std::move(metrics), std::nullopt};
}

TrainResult adapt(const AedModel& teacher, std::span<const ParallelUtterance> data,
                  std::span<const ParallelUtterance> dev, const TrainConfig& config) {
  config.validate();
  const AedModel student = clone_student(teacher);
  switch (config.mode) {
    case TrainMode::TokenTs:
      return adapt_token_ts(teacher, student, UnlabeledParallelView(data), dev, config);
    case TrainMode::SeqTs:
      return adapt_seq_ts(teacher, student, UnlabeledParallelView(data), dev, config);
    case TrainMode::Its:
    case TrainMode::Cts:
    case TrainMode::Ats: {
      if (!config.token_ts_init) return adapt_supervised(teacher, student, data, dev, config);
      TrainConfig init_config = config;
      init_config.mode = TrainMode::TokenTs;
      init_config.lambda.reset();
      init_config.its_weight.reset();
      TrainResult init = adapt_token_ts(teacher, student, UnlabeledParallelView(data), dev, init_config);
      TrainResult result = adapt_supervised(teacher, init.model, data, dev, config);
      result.init_metrics = std::move(init.metrics);
      return result;
    }
    case TrainMode::CE:
      break;
  }
  throw ConfigError("adapt requires an adaptation mode, got CE");
}

}  // namespace distill
