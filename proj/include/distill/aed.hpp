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

// Attention-based encoder-decoder.
//
// Encoder: stacked bi-directional GRU; forward and backward outputs are
// summed, then layer-normalized per layer. Attention: additive,
// score(q, h) = v^T tanh(W_q q + W_h h + b). Decoder: uni-directional GRU
// stack fed with e_{l-1} + z_{l-1}; the output layer reads q_l + z_l.
//
// All entry points work on padded batches. Sequences of different length
// share a batch; padded encoder frames are masked out of attention and do
// not advance the recurrent state.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill/rng.hpp"
#include "distill/tensor.hpp"
#include "distill/vocab.hpp"

namespace distill {

struct ArchConfig {
  int input_dim = 24;
  int vocab_size = 32;
  // Shared by embeddings, encoder/decoder hidden states and the context.
  int model_dim = 64;
  int attention_dim = 64;
  int encoder_layers = 2;
  int decoder_layers = 1;
  bool layer_norm = true;
  double init_scale = 0.08;

  void validate() const;
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
};

struct GruWeights {
  Tensor w_ih;  // in x 3d, gate order [reset | update | candidate]
  Tensor w_hh;  // d x 3d
  Tensor b_ih;  // 3d
  Tensor b_hh;  // 3d
};

struct EncoderLayer {
  GruWeights fwd;
  GruWeights bwd;
  Tensor ln_gain;
  Tensor ln_bias;
};

// Learnable parameters of one AED. Copies are deep.
struct AedParams {
  Tensor embedding;  // |U| x d
  std::vector<EncoderLayer> encoder;
  Tensor att_query;  // d x a
  Tensor att_key;    // d x a
  Tensor att_bias;   // a
  Tensor att_score;  // a x 1
  std::vector<GruWeights> decoder;
  Tensor out_weight;  // d x |U|
  Tensor out_bias;    // |U|

  AedParams() = default;
  AedParams(const AedParams& other);
  AedParams& operator=(const AedParams& other);
  AedParams(AedParams&&) = default;
  AedParams& operator=(AedParams&&) = default;

  // Uniform(-scale, scale) for every weight and bias; layer-norm gains 1 and
  // biases 0.
  static AedParams random(const ArchConfig& arch, std::uint64_t seed);
  static AedParams zeros(const ArchConfig& arch);

  // Handles in a fixed order; gradients and updates go through these.
  std::vector<NamedTensor> named() const;
  // Replaces values by name; shapes must match.
  void assign(const std::vector<NamedTensor>& values);
};

class AedModel {
 public:
  AedModel(ArchConfig arch, Vocab vocab, AedParams params);
  static AedModel create(const ArchConfig& arch, const Vocab& vocab, std::uint64_t seed);

  const ArchConfig& arch() const { return arch_; }
  const Vocab& vocab() const { return vocab_; }
  const AedParams& params() const { return params_; }
  AedParams& params() { return params_; }

  // Writes <stem>.adtn (tensors) and <stem>.json (architecture + vocab).
  void save(const std::filesystem::path& stem) const;
  static AedModel load(const std::filesystem::path& stem);
  // Hash of the serialized tensors; identical iff parameters are bit-identical.
  std::string checkpoint_hash() const;

 private:
  ArchConfig arch_;
  Vocab vocab_;
  AedParams params_;
};

struct ForwardOptions {
  // Dropout on encoder layer outputs and on the decoder output features.
  double dropout = 0.0;
  Rng* rng = nullptr;
};

// Time-major padded batch: frames[t] is batch x input_dim.
struct FrameBatch {
  std::vector<Matrix> frames;
  std::vector<int> lengths;

  static FrameBatch from(std::span<const Matrix* const> utterances);
  static FrameBatch single(const Matrix& utterance);
  std::size_t size() const { return lengths.size(); }
  int max_length() const { return static_cast<int>(frames.size()); }
};

struct EncoderOutput {
  std::vector<Tensor> features;  // H: one batch x d tensor per frame
  std::vector<Tensor> keys;      // W_h h_n + b, cached for attention
  Matrix score_mask;             // batch x N_max; 0 or a large negative
  std::vector<int> lengths;

  // Rows of H belonging to one utterance, lengths[b] x d.
  Matrix utterance_features(std::size_t b) const;
};

struct AttentionResult {
  Tensor weights;  // batch x N_max, zero on padding
  Tensor context;  // batch x d
};

struct DecoderState {
  std::vector<Tensor> hidden;  // per decoder layer, batch x d
  Tensor context;              // z of the previous step
  int step = 0;
};

struct StepOutput {
  DecoderState state;
  AttentionResult attention;
  Tensor logits;     // batch x |U|
  Tensor log_probs;  // log-softmax of logits

  Matrix posterior() const;
};

EncoderOutput encode(const AedModel& model, const FrameBatch& batch, const ForwardOptions& opts = {});

AttentionResult attend(const AedModel& model, const Tensor& query, const EncoderOutput& enc);

DecoderState initial_state(const AedModel& model, std::size_t batch_size);

StepOutput decode_step(const AedModel& model, const DecoderState& state,
                       std::span<const int> prev_tokens, const EncoderOutput& enc,
                       const ForwardOptions& opts = {});

// Replaces a conditioning token by a sample from the model's previous-step
// posterior with probability `probability`.
struct ScheduledSampling {
  double probability = 0.0;
  Rng* rng = nullptr;
};

struct TeacherForcedOutput {
  std::vector<Tensor> step_log_probs;  // one batch x |U| tensor per step
  std::vector<int> lengths;            // per utterance conditioning length

  // Step-major stacking: row l * batch + b.
  Tensor stacked_log_probs() const;
  // L_b x |U| posterior rows of utterance b.
  Matrix posteriors(std::size_t b) const;
};

// Each conditioning sequence starts with <sos>; row l of the output is the
// posterior after consuming cond[0..l].
TeacherForcedOutput forward_teacher_forced(const AedModel& model, const FrameBatch& batch,
                                           std::span<const std::vector<int>> cond,
                                           const ForwardOptions& opts = {},
                                           const ScheduledSampling& sampling = {});

struct Hypothesis {
  std::vector<int> tokens;  // emitted tokens, <eos> included when reached
  Matrix posteriors;        // one row per emitted token
  bool hit_max_length = false;
};

// Argmax decoding, ties to the smallest id. Stops at <eos> or max_length.
std::vector<Hypothesis> greedy_decode(const AedModel& model, const FrameBatch& batch, int max_length);

// Index of the largest entry, smallest index on ties.
int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row);

}  // namespace distill
