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


#include "commands.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "distill/checkpoint.hpp"
#include "distill/compare.hpp"
#include "distill/errors.hpp"
#include "distill/gradcheck_suite.hpp"
#include "distill/trainer.hpp"
#include "schema.hpp"

namespace distill::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModelStem = "model";
// Largest tolerated gap of the SEQ_TS and CTS definitional identities.
constexpr double kIdentityTolerance = 1e-12;

std::ostream& out(const Context& ctx) { return *ctx.out; }

bool show_progress(const Context& ctx) { return ctx.verbosity != Verbosity::Quiet && ctx.log; }

std::string pick(const std::string& flag, const json& config, const char* key, const char* what) {
  if (!flag.empty()) return flag;
  if (config.contains(key)) return config.at(key).get<std::string>();
  throw ConfigError(std::string("no ") + what + " given: set \"" + key + "\" in the config or pass --" + key);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

// Wall-clock figures live apart from run_report.json so reruns reproduce
// every other output byte for byte.
void write_timing(const fs::path& dir, double seconds, const RunMetrics* run = nullptr) {
  json timing{{"wall_seconds", seconds}};
  if (run) {
    json epochs = json::array();
    for (const auto& e : run->epochs) epochs.push_back({{"epoch", e.epoch}, {"wall_seconds", e.wall_seconds}});
    timing["epochs"] = std::move(epochs);
  }
  write_json(dir / "timing.json", timing);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::function<void(const EpochMetrics&)> epoch_logger(const Context& ctx, std::string label) {
  if (!show_progress(ctx)) return {};
  return [&ctx, label = std::move(label)](const EpochMetrics& e) {
    *ctx.log << label << " epoch " << e.epoch << " loss " << (e.loss ? fixed(*e.loss) : "NA") << " dev_ter "
             << fixed(e.dev_ter) << " lr " << e.learning_rate;
    if (ctx.verbosity == Verbosity::Verbose) *ctx.log << " steps " << e.steps << " " << fixed(e.wall_seconds, 2) << "s";
    *ctx.log << "\n" << std::flush;
  };
}

json ter_json(const TerResult& r) {
  return {{"ter", r.ter},
          {"substitutions", r.counts.substitutions},
          {"insertions", r.counts.insertions},
          {"deletions", r.counts.deletions},
          {"ref_tokens", r.ref_tokens}};
}

// Applies the seed precedence to the "seed" key of a training object.
void apply_seed(json& train, std::optional<std::uint64_t> flag) {
  std::optional<std::uint64_t> from_config;
  if (train.contains("seed")) from_config = train.at("seed").get<std::uint64_t>();
  train["seed"] = resolve_seed(flag, from_config, TrainConfig{}.seed);
}

ArchConfig arch_for(const json& config, const CorpusSplit& split) {
  ArchConfig arch;
  arch.input_dim = split.spec.stacked_dim();
  arch.vocab_size = static_cast<int>(split.vocab.size());
  if (config.contains("arch")) {
    json merged = arch.to_json();
    merged.merge_patch(config.at("arch"));
    arch = ArchConfig::from_json(merged);
  }
  if (arch.input_dim != split.spec.stacked_dim() || arch.vocab_size != static_cast<int>(split.vocab.size())) {
    throw ConfigError("arch input_dim/vocab_size disagree with the corpus (" +
                      std::to_string(split.spec.stacked_dim()) + ", " + std::to_string(split.vocab.size()) + ")");
  }
  return arch;
}

void check_compatible(const AedModel& model, const CorpusSplit& split, const std::string& what) {
  if (model.arch().input_dim != split.spec.stacked_dim() ||
      model.arch().vocab_size != static_cast<int>(split.vocab.size())) {
    throw ConfigError(what + " does not match the corpus frame dimension or vocabulary");
  }
}

}  // namespace

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config,
                           std::uint64_t fallback) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* env = std::getenv("DISTILL_SEED"); env && *env) {
    std::uint64_t v = 0;
    std::istringstream in(env);
    if (!(in >> v) || !in.eof()) throw ConfigError(std::string("DISTILL_SEED is not an unsigned integer: ") + env);
    return v;
  }
  return fallback;
}

int cmd_gen_data(const GenDataOptions& o, const Context& ctx) {
  json spec_json = json::object();
  if (!o.spec.empty()) spec_json = load_config(o.spec, "corpus_spec.schema.json");
  std::optional<std::uint64_t> config_seed;
  if (spec_json.contains("seed")) config_seed = spec_json.at("seed").get<std::uint64_t>();
  spec_json["seed"] = resolve_seed(o.seed, config_seed, CorpusSpec{}.seed);
  const CorpusSpec spec = CorpusSpec::from_json(spec_json);

  const CorpusSummary s = write_corpus(spec, o.out);
  out(ctx) << "corpus " << o.out << "\n"
           << "utterances " << s.utterances << " (train " << s.split_sizes[0] << ", adapt " << s.split_sizes[1]
           << ", dev " << s.split_sizes[2] << ", test " << s.split_sizes[3] << ")\n"
           << "frames " << s.frames << " stacked_dim " << spec.stacked_dim() << "\n"
           << "vocab " << s.vocab_size << "\n"
           << "noise_sigma " << fixed(spec.noise_sigma) << " mean_clean_corrupt_distance " << fixed(s.mean_distance)
           << "\n";
  return 0;
}

int cmd_train(const TrainOptions& o, const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  json config = load_config(o.config, "train.schema.json");
  json train_json = config.value("train", json::object());
  apply_seed(train_json, o.seed);
  const TrainConfig parsed = TrainConfig::from_json(train_json);
  const fs::path corpus = pick(o.corpus, config, "corpus", "corpus directory");
  const fs::path out_dir = pick(o.out, config, "out", "output directory");
  const std::string split_name = config.value("split", std::string("train"));

  const CorpusSplit train = read_split(corpus, split_name);
  const CorpusSplit dev = read_split(corpus, "dev");
  const CorpusSplit test = read_split(corpus, "test");
  const ArchConfig arch = arch_for(config, train);

  std::string init_path = o.init.empty() ? config.value("init", std::string()) : o.init;
  const AedModel init = init_path.empty() ? AedModel::create(arch, train.vocab, parsed.seed) : AedModel::load(init_path);
  check_compatible(init, train, "initial model");

  TrainConfig cfg = parsed;
  cfg.on_epoch = epoch_logger(ctx, "train");
  TrainResult r = train_ce(init, train.utterances, dev.utterances, cfg);

  fs::create_directories(out_dir);
  r.model.save(out_dir / kModelStem);
  write_metrics_jsonl(out_dir / "metrics.jsonl", r.metrics);
  const TerResult dev_ter = corpus_ter(r.model, dev.utterances, cfg.side, cfg.max_decode_length);
  const TerResult test_ter = corpus_ter(r.model, test.utterances, cfg.side, cfg.max_decode_length);
  write_json(out_dir / "run_report.json",
             {{"command", "train"},
              {"corpus", corpus.string()},
              {"split", split_name},
              {"init", init_path.empty() ? json(nullptr) : json(init_path)},
              {"arch", arch.to_json()},
              {"train", parsed.to_json()},
              {"run", r.metrics.to_json()},
              {"checkpoint", (out_dir / kModelStem).string()},
              {"checkpoint_hash", r.model.checkpoint_hash()},
              {"dev", ter_json(dev_ter)},
              {"test", ter_json(test_ter)}});
  write_timing(out_dir, seconds_since(start), &r.metrics);

  out(ctx) << "trained " << side_name(cfg.side) << " side, best epoch " << r.metrics.best_epoch << " ("
           << r.metrics.stop_reason << ")\n"
           << "dev TER " << fixed(dev_ter.ter) << " test TER " << fixed(test_ter.ter) << "\n"
           << "checkpoint " << (out_dir / kModelStem).string() << "\n";
  return 0;
}

int cmd_adapt(const AdaptOptions& o, const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  json config = load_config(o.config, "adapt.schema.json");
  json train_json = config.at("train");
  apply_seed(train_json, o.seed);
  train_json["side"] = "target";
  const TrainConfig parsed = TrainConfig::from_json(train_json);
  const fs::path corpus = pick(o.corpus, config, "corpus", "corpus directory");
  const fs::path teacher_path = pick(o.teacher, config, "teacher", "teacher checkpoint");
  const fs::path out_dir = pick(o.out, config, "out", "output directory");

  const CorpusSplit adapt_split = read_split(corpus, "adapt");
  const CorpusSplit dev = read_split(corpus, "dev");
  const CorpusSplit test = read_split(corpus, "test");
  const AedModel teacher = AedModel::load(teacher_path);
  check_compatible(teacher, adapt_split, "teacher");

  TrainConfig cfg = parsed;
  cfg.on_epoch = epoch_logger(ctx, mode_name(cfg.mode));
  TrainResult r = adapt(teacher, adapt_split.utterances, dev.utterances, cfg);

  fs::create_directories(out_dir);
  r.model.save(out_dir / kModelStem);
  write_metrics_jsonl(out_dir / "metrics.jsonl", r.metrics);
  if (r.init_metrics) write_metrics_jsonl(out_dir / "init_metrics.jsonl", *r.init_metrics);
  const TerResult dev_ter = corpus_ter(r.model, dev.utterances, Side::Target, cfg.max_decode_length);
  const TerResult test_ter = corpus_ter(r.model, test.utterances, Side::Target, cfg.max_decode_length);
  json report = {{"command", "adapt"},
                 {"corpus", corpus.string()},
                 {"teacher", teacher_path.string()},
                 {"train", parsed.to_json()},
                 {"run", r.metrics.to_json()},
                 {"teacher_unchanged", r.metrics.teacher_unchanged()},
                 {"checkpoint", (out_dir / kModelStem).string()},
                 {"checkpoint_hash", r.model.checkpoint_hash()},
                 {"dev", ter_json(dev_ter)},
                 {"test", ter_json(test_ter)}};
  if (r.init_metrics) report["init_run"] = r.init_metrics->to_json();
  if (r.metrics.identity_max_error) {
    report["identity_check"] = {{"max_error", *r.metrics.identity_max_error},
                                {"tolerance", kIdentityTolerance},
                                {"passed", *r.metrics.identity_max_error < kIdentityTolerance}};
  }
  write_json(out_dir / "run_report.json", report);
  write_timing(out_dir, seconds_since(start), &r.metrics);

  out(ctx) << mode_name(cfg.mode) << " adapted, best epoch " << r.metrics.best_epoch << " (" << r.metrics.stop_reason
           << ")\n"
           << "dev TER " << fixed(dev_ter.ter) << " test TER " << fixed(test_ter.ter) << "\n"
           << "teacher unchanged " << (r.metrics.teacher_unchanged() ? "true" : "false") << "\n";
  if (r.metrics.identity_max_error) {
    out(ctx) << "identity check max error " << *r.metrics.identity_max_error << "\n";
  }
  out(ctx) << "checkpoint " << (out_dir / kModelStem).string() << "\n";
  return r.metrics.teacher_unchanged() ? 0 : 2;
}

int cmd_eval(const EvalOptions& o, const Context& ctx) {
  json config = json::object();
  if (!o.config.empty()) config = load_config(o.config, "eval.schema.json");
  const fs::path model_path = pick(o.model, config, "model", "model checkpoint");
  const fs::path corpus = pick(o.corpus, config, "corpus", "corpus directory");
  const Side side = parse_side(!o.side.empty() ? o.side : config.value("side", std::string("target")));
  std::vector<std::string> splits = o.splits;
  if (splits.empty()) splits = config.value("splits", std::vector<std::string>{"test"});
  const int max_len = config.value("max_decode_length", TrainConfig{}.max_decode_length);
  const auto batch = config.value("batch_size", std::size_t{64});
  if (max_len < 1 || batch < 1) throw ConfigError("max_decode_length and batch_size must be positive");

  const AedModel model = AedModel::load(model_path);
  json results = json::object();
  for (const auto& name : splits) {
    const CorpusSplit split = read_split(corpus, name);
    check_compatible(model, split, "model");
    const TerResult r = corpus_ter(model, split.utterances, side, max_len, batch);
    out(ctx) << name << " " << side_name(side) << " TER " << fixed(r.ter) << " (S " << r.counts.substitutions
             << " I " << r.counts.insertions << " D " << r.counts.deletions << " / " << r.ref_tokens << ")\n";
    json utts = json::array();
    for (const auto& u : r.utterances) {
      utts.push_back({{"id", u.id},
                      {"ref", u.ref},
                      {"hyp", u.hyp},
                      {"substitutions", u.counts.substitutions},
                      {"insertions", u.counts.insertions},
                      {"deletions", u.counts.deletions},
                      {"hit_max_length", u.hit_max_length}});
    }
    json entry = ter_json(r);
    entry["utterances"] = std::move(utts);
    results[name] = std::move(entry);
  }
  const std::string out_path = !o.out.empty() ? o.out : config.value("out", std::string());
  if (!out_path.empty()) {
    write_json(out_path, {{"model", model_path.string()},
                          {"checkpoint_hash", model.checkpoint_hash()},
                          {"side", side_name(side)},
                          {"metric", "TER"},
                          {"splits", results}});
  }
  return 0;
}

int cmd_compare(const CompareOptions& o, const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  json config = load_config(o.config, "compare.schema.json");
  CompareConfig grid = CompareConfig::from_json(config.value("grid", json::object()));
  if (o.workers) grid.workers = *o.workers;
  grid.validate();
  const fs::path corpus = pick(o.corpus, config, "corpus", "corpus directory");
  const fs::path teacher_path = pick(o.teacher, config, "teacher", "teacher checkpoint");
  const fs::path out_dir = pick(o.out, config, "out", "output directory");

  CorpusSplits splits;
  for (std::size_t i = 1; i < 4; ++i) splits[i] = read_split(corpus, kSplitNames[i]).utterances;
  const AedModel teacher = AedModel::load(teacher_path);
  check_compatible(teacher, read_split(corpus, "dev"), "teacher");

  std::size_t failures = 0;
  const CompareResult result = run_compare(teacher, splits, grid, [&](const CellResult& c) {
    if (!c.error.empty()) ++failures;
    if (!show_progress(ctx)) return;
    *ctx.log << "seed " << c.seed << " " << c.method;
    if (c.error.empty()) {
      *ctx.log << " dev " << fixed(*c.dev_ter) << " test " << fixed(*c.test_ter);
      if (c.metrics) *ctx.log << " best epoch " << c.metrics->best_epoch;
    } else {
      *ctx.log << " FAILED: " << c.error;
    }
    *ctx.log << " (" << fixed(seconds_since(start), 0) << "s)\n" << std::flush;
  });
  emit_report(result.report, out_dir);
  write_json(out_dir / "grid.json", grid.to_json());
  write_timing(out_dir, seconds_since(start));

  out(ctx) << std::left << std::setw(20) << "method" << std::setw(10) << "dev TER" << std::setw(10) << "test TER"
           << "WERR vs " << result.report.baseline << " (%)\n";
  for (const auto& row : result.report.rows) {
    const auto dev = row.mean_dev_ter();
    const auto test = row.mean_test_ter();
    const auto werr = result.report.werr(row.method);
    out(ctx) << std::left << std::setw(20) << row.method << std::setw(10) << (dev ? fixed(*dev) : "NA")
             << std::setw(10) << (test ? fixed(*test) : "NA") << (werr ? fixed(*werr, 1) : "NA") << "\n";
  }
  out(ctx) << "report " << (out_dir / "report.json").string() << "\n";
  if (failures > 0) {
    out(ctx) << failures << " cell(s) failed; see the errors in report.json\n";
    return 2;
  }
  return 0;
}

int cmd_gradcheck(const GradcheckOptions& o, const Context& ctx) {
  SuiteOptions options;
  options.negative_control = o.negative_control;
  options.op_trials = o.op_trials;
  options.seed = o.seed;
  const SuiteReport report = run_gradcheck_suite(options);
  for (const auto& c : report.checks) {
    out(ctx) << std::left << std::setw(8) << c.group << std::setw(24) << c.name << " max_rel_err "
             << std::scientific << std::setprecision(3) << c.max_rel_error << std::defaultfloat << "  "
             << (c.passed ? "PASS" : "FAIL") << (c.expect_failure ? " (negative control, must be rejected)" : "")
             << "\n";
  }
  out(ctx) << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (" << report.checks.size()
           << " checks, eps " << report.epsilon << ", tol " << report.tolerance << ", "
           << fixed(report.wall_seconds, 1) << "s)\n";
  if (!o.json.empty()) write_json(o.json, report.to_json());
  return report.passed() ? 0 : 2;
}

}  // namespace distill::cli
