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

#include "distill/aed.hpp"

#include <algorithm>
#include <cmath>

#include "distill/checkpoint.hpp"
#include "distill/errors.hpp"
#include "distill/ops.hpp"

namespace distill {
namespace {

using Index = Eigen::Index;

// Added to attention scores of padded frames.
constexpr double kMaskedScore = -1e30;

template <typename Params, typename F>
void visit_gru(Params& g, const std::string& prefix, F&& f) {
  f(prefix + ".w_ih", g.w_ih);
  f(prefix + ".w_hh", g.w_hh);
  f(prefix + ".b_ih", g.b_ih);
  f(prefix + ".b_hh", g.b_hh);
}

// Visits every parameter in checkpoint order.
template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  f(std::string("embedding"), p.embedding);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i);
    visit_gru(p.encoder[i].fwd, prefix + ".fwd", f);
    visit_gru(p.encoder[i].bwd, prefix + ".bwd", f);
    f(prefix + ".ln.gain", p.encoder[i].ln_gain);
    f(prefix + ".ln.bias", p.encoder[i].ln_bias);
  }
  f(std::string("attention.query"), p.att_query);
  f(std::string("attention.key"), p.att_key);
  f(std::string("attention.bias"), p.att_bias);
  f(std::string("attention.score"), p.att_score);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    visit_gru(p.decoder[i], "decoder." + std::to_string(i), f);
  }
  f(std::string("output.weight"), p.out_weight);
  f(std::string("output.bias"), p.out_bias);
}

Tensor param(Shape shape) {
  auto [r, c] = storage_dims(shape);
  return Tensor::parameter(std::move(shape), Matrix::Zero(r, c));
}

std::size_t dim(int v) { return static_cast<std::size_t>(v); }

GruWeights gru_shapes(int in, int d) {
  return {param({dim(in), dim(3 * d)}), param({dim(d), dim(3 * d)}), param({dim(3 * d)}),
          param({dim(3 * d)})};
}

AedParams allocate(const ArchConfig& a) {
  AedParams p;
  const int d = a.model_dim;
  p.embedding = param({dim(a.vocab_size), dim(d)});
  for (int l = 0; l < a.encoder_layers; ++l) {
    const int in = l == 0 ? a.input_dim : d;
    EncoderLayer layer{gru_shapes(in, d), gru_shapes(in, d), param({dim(d)}), param({dim(d)})};
    layer.ln_gain.mutable_value().setOnes();
    p.encoder.push_back(std::move(layer));
  }
  p.att_query = param({dim(d), dim(a.attention_dim)});
  p.att_key = param({dim(d), dim(a.attention_dim)});
  p.att_bias = param({dim(a.attention_dim)});
  p.att_score = param({dim(a.attention_dim), 1});
  for (int l = 0; l < a.decoder_layers; ++l) p.decoder.push_back(gru_shapes(d, d));
  p.out_weight = param({dim(d), dim(a.vocab_size)});
  p.out_bias = param({dim(a.vocab_size)});
  return p;
}

bool is_layer_norm(const std::string& name) { return name.find(".ln.") != std::string::npos; }

Tensor gru_cell(const GruWeights& w, const Tensor& x, const Tensor& h) {
  return gru_gates(add(matmul(x, w.w_ih), w.b_ih), add(matmul(h, w.w_hh), w.b_hh), h);
}

Tensor zeros(std::size_t rows, int cols) {
  return Tensor::constant(Matrix::Zero(static_cast<Index>(rows), cols));
}

int sample_categorical(const Eigen::Ref<const Eigen::RowVectorXd>& probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

}  // namespace

void ArchConfig::validate() const {
  if (input_dim < 1 || model_dim < 1 || attention_dim < 1) throw ConfigError("dimensions must be positive");
  if (vocab_size < 5) throw ConfigError("vocab_size must be at least 5");
  if (encoder_layers < 1 || decoder_layers < 1) throw ConfigError("need at least one encoder and decoder layer");
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
}

nlohmann::json ArchConfig::to_json() const {
  return {{"input_dim", input_dim},         {"vocab_size", vocab_size},
          {"model_dim", model_dim},         {"attention_dim", attention_dim},
          {"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
          {"layer_norm", layer_norm},       {"init_scale", init_scale}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.input_dim = j.value("input_dim", a.input_dim);
  a.vocab_size = j.value("vocab_size", a.vocab_size);
  a.model_dim = j.value("model_dim", a.model_dim);
  a.attention_dim = j.value("attention_dim", a.attention_dim);
  a.encoder_layers = j.value("encoder_layers", a.encoder_layers);
  a.decoder_layers = j.value("decoder_layers", a.decoder_layers);
  a.layer_norm = j.value("layer_norm", a.layer_norm);
  a.init_scale = j.value("init_scale", a.init_scale);
  a.validate();
  return a;
}

AedParams::AedParams(const AedParams& other) : AedParams() { *this = other; }

AedParams& AedParams::operator=(const AedParams& other) {
  if (this == &other) return *this;
  embedding = other.embedding;
  encoder = other.encoder;
  att_query = other.att_query;
  att_key = other.att_key;
  att_bias = other.att_bias;
  att_score = other.att_score;
  decoder = other.decoder;
  out_weight = other.out_weight;
  out_bias = other.out_bias;
  visit_params(*this, [](const std::string&, Tensor& t) {
    t = Tensor::parameter(t.shape(), t.value());
  });
  return *this;
}

AedParams AedParams::random(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  AedParams p = allocate(arch);
  Rng rng(seed);
  visit_params(p, [&](const std::string& name, Tensor& t) {
    if (is_layer_norm(name)) return;
    Matrix& v = t.mutable_value();
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-arch.init_scale, arch.init_scale);
  });
  return p;
}

AedParams AedParams::zeros(const ArchConfig& arch) {
  arch.validate();
  return allocate(arch);
}

std::vector<NamedTensor> AedParams::named() const {
  std::vector<NamedTensor> out;
  visit_params(*this, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

void AedParams::assign(const std::vector<NamedTensor>& values) {
  std::size_t matched = 0;
  visit_params(*this, [&](const std::string& name, Tensor& t) {
    auto it = std::find_if(values.begin(), values.end(), [&](const NamedTensor& v) { return v.name == name; });
    if (it == values.end()) throw IoError("checkpoint lacks parameter '" + name + "'");
    if (it->tensor.shape() != t.shape()) {
      throw IoError("parameter '" + name + "' has shape " + shape_string(it->tensor.shape()) +
                    ", expected " + shape_string(t.shape()));
    }
    t.mutable_value() = it->tensor.value();
    ++matched;
  });
  if (matched != values.size()) throw IoError("checkpoint has unexpected extra parameters");
}

AedModel::AedModel(ArchConfig arch, Vocab vocab, AedParams params)
    : arch_(arch), vocab_(std::move(vocab)), params_(std::move(params)) {
  arch_.validate();
  if (vocab_.size() != static_cast<std::size_t>(arch_.vocab_size)) {
    throw ConfigError("vocabulary size " + std::to_string(vocab_.size()) +
                      " does not match vocab_size " + std::to_string(arch_.vocab_size));
  }
}

AedModel AedModel::create(const ArchConfig& arch, const Vocab& vocab, std::uint64_t seed) {
  return AedModel(arch, vocab, AedParams::random(arch, seed));
}

void AedModel::save(const std::filesystem::path& stem) const {
  save_tensors(stem.string() + ".adtn", params_.named());
  nlohmann::json side = {{"format", "distill-aed"}, {"version", 1}, {"arch", arch_.to_json()},
                         {"vocab", vocab_.to_json()}};
  write_file(stem.string() + ".json", side.dump(2) + "\n");
}

AedModel AedModel::load(const std::filesystem::path& stem) {
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file(stem.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad model sidecar " + stem.string() + ".json: " + e.what());
  }
  ArchConfig arch = ArchConfig::from_json(side.at("arch"));
  AedParams params = AedParams::zeros(arch);
  params.assign(load_tensors(stem.string() + ".adtn"));
  return AedModel(arch, Vocab::from_json(side.at("vocab")), std::move(params));
}

std::string AedModel::checkpoint_hash() const { return content_hash(serialize_tensors(params_.named())); }

FrameBatch FrameBatch::from(std::span<const Matrix* const> utterances) {
  if (utterances.empty()) throw ContractError("empty batch");
  FrameBatch batch;
  Index dim = utterances[0]->cols();
  int max_len = 0;
  for (const Matrix* u : utterances) {
    if (u->rows() < 1) throw ContractError("utterance with no frames");
    if (u->cols() != dim) throw DimensionError("utterances in a batch differ in frame dimension");
    batch.lengths.push_back(static_cast<int>(u->rows()));
    max_len = std::max(max_len, static_cast<int>(u->rows()));
  }
  const auto b = static_cast<Index>(utterances.size());
  batch.frames.assign(static_cast<std::size_t>(max_len), Matrix::Zero(b, dim));
  for (Index i = 0; i < b; ++i) {
    const Matrix& u = *utterances[static_cast<std::size_t>(i)];
    for (Index t = 0; t < u.rows(); ++t) batch.frames[static_cast<std::size_t>(t)].row(i) = u.row(t);
  }
  return batch;
}

FrameBatch FrameBatch::single(const Matrix& utterance) {
  const Matrix* p = &utterance;
  return from(std::span<const Matrix* const>(&p, 1));
}

Matrix EncoderOutput::utterance_features(std::size_t b) const {
  const int n = lengths.at(b);
  Matrix out(n, features.front().cols());
  for (int t = 0; t < n; ++t) out.row(t) = features[static_cast<std::size_t>(t)].value().row(static_cast<Index>(b));
  return out;
}

EncoderOutput encode(const AedModel& model, const FrameBatch& batch, const ForwardOptions& opts) {
  const auto& arch = model.arch();
  const auto& p = model.params();
  if (batch.size() == 0 || batch.frames.empty()) throw ContractError("encode: empty input");
  for (int len : batch.lengths) {
    if (len < 1) throw ContractError("encode: utterance with no frames");
  }
  if (batch.frames[0].cols() != arch.input_dim) {
    throw DimensionError("encode: frame dimension " + std::to_string(batch.frames[0].cols()) +
                         " does not match input_dim " + std::to_string(arch.input_dim));
  }
  if (opts.dropout > 0.0 && opts.rng == nullptr) throw ContractError("dropout requires an rng");

  const std::size_t steps = batch.frames.size();
  const std::size_t bsz = batch.size();
  std::vector<Tensor> masks(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Matrix m(static_cast<Index>(bsz), 1);
    bool padded = false;
    for (std::size_t b = 0; b < bsz; ++b) {
      const bool real = static_cast<int>(t) < batch.lengths[b];
      m(static_cast<Index>(b), 0) = real ? 1.0 : 0.0;
      padded = padded || !real;
    }
    if (padded) masks[t] = Tensor::constant(std::move(m));
  }
  auto masked_update = [&](std::size_t t, const Tensor& h_prev, const Tensor& h_new) {
    if (!masks[t].defined()) return h_new;
    return add(h_prev, mul(masks[t], sub(h_new, h_prev)));
  };

  std::vector<Tensor> inputs;
  inputs.reserve(steps);
  for (const auto& f : batch.frames) inputs.push_back(Tensor::constant(f));

  for (const auto& layer : p.encoder) {
    std::vector<Tensor> fwd(steps), bwd(steps);
    Tensor h = zeros(bsz, arch.model_dim);
    for (std::size_t t = 0; t < steps; ++t) {
      h = masked_update(t, h, gru_cell(layer.fwd, inputs[t], h));
      fwd[t] = h;
    }
    h = zeros(bsz, arch.model_dim);
    for (std::size_t t = steps; t-- > 0;) {
      h = masked_update(t, h, gru_cell(layer.bwd, inputs[t], h));
      bwd[t] = h;
    }
    for (std::size_t t = 0; t < steps; ++t) {
      Tensor o = add(fwd[t], bwd[t]);
      if (arch.layer_norm) o = layer_norm(o, layer.ln_gain, layer.ln_bias);
      if (opts.dropout > 0.0) o = dropout_mask(o, opts.dropout, *opts.rng);
      inputs[t] = std::move(o);
    }
  }

  EncoderOutput enc;
  enc.features = std::move(inputs);
  enc.lengths = batch.lengths;
  enc.keys.reserve(steps);
  for (const auto& h : enc.features) enc.keys.push_back(add(matmul(h, p.att_key), p.att_bias));
  enc.score_mask = Matrix::Zero(static_cast<Index>(bsz), static_cast<Index>(steps));
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t t = static_cast<std::size_t>(batch.lengths[b]); t < steps; ++t) {
      enc.score_mask(static_cast<Index>(b), static_cast<Index>(t)) = kMaskedScore;
    }
  }
  return enc;
}

AttentionResult attend(const AedModel& model, const Tensor& query, const EncoderOutput& enc) {
  const auto& p = model.params();
  if (enc.features.empty()) throw ContractError("attend: empty encoder output");
  Tensor projected = matmul(query, p.att_query);
  std::vector<Tensor> scores;
  scores.reserve(enc.keys.size());
  for (const auto& key : enc.keys) scores.push_back(matmul(tanh(add(key, projected)), p.att_score));
  Tensor logits = concat(scores, 1);
  if ((enc.score_mask.array() != 0.0).any()) logits = add(logits, Tensor::constant(enc.score_mask));
  Tensor weights = softmax(logits, 1);
  Tensor context;
  for (std::size_t n = 0; n < enc.features.size(); ++n) {
    Tensor term = mul(slice(weights, 1, n, n + 1), enc.features[n]);
    context = context.defined() ? add(context, term) : term;
  }
  return {weights, context};
}

DecoderState initial_state(const AedModel& model, std::size_t batch_size) {
  DecoderState s;
  for (int l = 0; l < model.arch().decoder_layers; ++l) s.hidden.push_back(zeros(batch_size, model.arch().model_dim));
  s.context = zeros(batch_size, model.arch().model_dim);
  return s;
}

Matrix StepOutput::posterior() const { return log_probs.value().array().exp().matrix(); }

StepOutput decode_step(const AedModel& model, const DecoderState& state, std::span<const int> prev_tokens,
                       const EncoderOutput& enc, const ForwardOptions& opts) {
  const auto& p = model.params();
  if (prev_tokens.size() != static_cast<std::size_t>(state.context.rows())) {
    throw ContractError("decode_step: token count does not match batch size");
  }
  for (int tok : prev_tokens) {
    if (tok < 0 || tok >= model.arch().vocab_size) {
      throw ContractError("decode_step: token id " + std::to_string(tok) + " outside vocabulary");
    }
  }
  if (opts.dropout > 0.0 && opts.rng == nullptr) throw ContractError("dropout requires an rng");

  StepOutput out;
  Tensor input = add(embedding_lookup(p.embedding, prev_tokens), state.context);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    input = gru_cell(p.decoder[l], input, state.hidden[l]);
    out.state.hidden.push_back(input);
  }
  out.attention = attend(model, input, enc);
  Tensor features = add(input, out.attention.context);
  if (opts.dropout > 0.0) features = dropout_mask(features, opts.dropout, *opts.rng);
  out.logits = add(matmul(features, p.out_weight), p.out_bias);
  out.log_probs = log_softmax(out.logits, 1);
  out.state.context = out.attention.context;
  out.state.step = state.step + 1;
  return out;
}

Tensor TeacherForcedOutput::stacked_log_probs() const { return concat(step_log_probs, 0); }

Matrix TeacherForcedOutput::posteriors(std::size_t b) const {
  const int len = lengths.at(b);
  Matrix out(len, step_log_probs.front().cols());
  for (int l = 0; l < len; ++l) {
    out.row(l) = step_log_probs[static_cast<std::size_t>(l)].value().row(static_cast<Index>(b)).array().exp();
  }
  return out;
}

TeacherForcedOutput forward_teacher_forced(const AedModel& model, const FrameBatch& batch,
                                           std::span<const std::vector<int>> cond,
                                           const ForwardOptions& opts, const ScheduledSampling& sampling) {
  if (cond.size() != batch.size()) throw ContractError("conditioning count does not match batch size");
  const int sos = model.vocab().sos();
  const int eos = model.vocab().eos();
  TeacherForcedOutput out;
  std::size_t max_len = 0;
  for (const auto& c : cond) {
    if (c.empty()) throw ContractError("empty conditioning sequence");
    if (c.front() != sos) throw ContractError("conditioning sequence must start with <sos>");
    out.lengths.push_back(static_cast<int>(c.size()));
    max_len = std::max(max_len, c.size());
  }
  if (sampling.probability > 0.0 && sampling.rng == nullptr) {
    throw ContractError("scheduled sampling requires an rng");
  }

  EncoderOutput enc = encode(model, batch, opts);
  DecoderState state = initial_state(model, batch.size());
  std::vector<int> tokens(batch.size());
  Matrix previous;
  for (std::size_t l = 0; l < max_len; ++l) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (l >= cond[b].size()) {
        tokens[b] = eos;
        continue;
      }
      tokens[b] = cond[b][l];
      if (l > 0 && sampling.probability > 0.0 && sampling.rng->bernoulli(sampling.probability)) {
        tokens[b] = sample_categorical(previous.row(static_cast<Index>(b)), *sampling.rng);
      }
    }
    StepOutput step = decode_step(model, state, tokens, enc, opts);
    if (sampling.probability > 0.0) previous = step.posterior();
    out.step_log_probs.push_back(step.log_probs);
    state = std::move(step.state);
  }
  return out;
}

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Index best = 0;
  for (Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = i;
  }
  return static_cast<int>(best);
}

std::vector<Hypothesis> greedy_decode(const AedModel& model, const FrameBatch& batch, int max_length) {
  if (max_length < 1) throw ContractError("greedy_decode: max_length must be >= 1");
  NoGradGuard no_grad;
  const int eos = model.vocab().eos();
  const std::size_t bsz = batch.size();
  EncoderOutput enc = encode(model, batch);
  DecoderState state = initial_state(model, bsz);
  std::vector<int> tokens(bsz, model.vocab().sos());
  std::vector<bool> finished(bsz, false);
  std::vector<std::vector<Eigen::RowVectorXd>> rows(bsz);
  std::vector<Hypothesis> hyps(bsz);
  for (int step = 0; step < max_length; ++step) {
    StepOutput out = decode_step(model, state, tokens, enc);
    const Matrix post = out.posterior();
    bool all_done = true;
    for (std::size_t b = 0; b < bsz; ++b) {
      if (finished[b]) continue;
      const int y = argmax(post.row(static_cast<Index>(b)));
      hyps[b].tokens.push_back(y);
      rows[b].push_back(post.row(static_cast<Index>(b)));
      tokens[b] = y;
      finished[b] = y == eos;
      all_done = all_done && finished[b];
    }
    if (all_done) break;
    state = std::move(out.state);
  }
  for (std::size_t b = 0; b < bsz; ++b) {
    hyps[b].hit_max_length = !finished[b];
    hyps[b].posteriors.resize(static_cast<Index>(rows[b].size()), model.arch().vocab_size);
    for (std::size_t l = 0; l < rows[b].size(); ++l) hyps[b].posteriors.row(static_cast<Index>(l)) = rows[b][l];
  }
  return hyps;
}

}  // namespace distill
