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


#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "distill/errors.hpp"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  using namespace distill::cli;

  CLI::App app{"Teacher-student domain adaptation for attention encoder-decoder models"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Per-epoch detail in progress output");
  app.add_flag("-q,--quiet", quiet, "No progress output");

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Simulate a parallel clean/corrupted corpus");
  gen_cmd->add_option("--spec", gen.spec, "Corpus spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output corpus directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Overrides the spec seed");

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a model with label-smoothed cross-entropy");
  train_cmd->add_option("--config", train.config, "Train config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--corpus", train.corpus, "Overrides the corpus directory");
  train_cmd->add_option("--out", train.out, "Overrides the output directory");
  train_cmd->add_option("--init", train.init, "Overrides the initial checkpoint");
  train_cmd->add_option("--seed", train.seed, "Overrides the config seed");

  AdaptOptions adapt;
  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a student to the corrupted domain from a frozen teacher");
  adapt_cmd->add_option("--config", adapt.config, "Adapt config JSON")->required()->check(CLI::ExistingFile);
  adapt_cmd->add_option("--corpus", adapt.corpus, "Overrides the corpus directory");
  adapt_cmd->add_option("--teacher", adapt.teacher, "Overrides the teacher checkpoint");
  adapt_cmd->add_option("--out", adapt.out, "Overrides the output directory");
  adapt_cmd->add_option("--seed", adapt.seed, "Overrides the config seed");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy-decode a split and report token error rate");
  eval_cmd->add_option("--config", eval.config, "Eval config JSON")->check(CLI::ExistingFile);
  eval_cmd->add_option("--model", eval.model, "Checkpoint stem");
  eval_cmd->add_option("--corpus", eval.corpus, "Corpus directory");
  eval_cmd->add_option("--split", eval.splits, "Split(s) to score")
      ->check(CLI::IsMember({"train", "adapt", "dev", "test"}));
  eval_cmd->add_option("--side", eval.side, "source (clean) or target (corrupted) frames")
      ->check(CLI::IsMember({"source", "target"}));
  eval_cmd->add_option("--out", eval.out, "Per-utterance JSON report");

  CompareOptions compare;
  auto* compare_cmd = app.add_subcommand("compare", "Run the method comparison grid over several seeds");
  compare_cmd->add_option("--config", compare.config, "Compare config JSON")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--corpus", compare.corpus, "Overrides the corpus directory");
  compare_cmd->add_option("--teacher", compare.teacher, "Overrides the teacher checkpoint");
  compare_cmd->add_option("--out", compare.out, "Overrides the report directory");
  compare_cmd->add_option("--workers", compare.workers, "Seeds run concurrently")->check(CLI::PositiveNumber);

  GradcheckOptions grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op, loss and a micro model");
  grad_cmd->add_flag("--negative-control", grad.negative_control, "Include a broken op that must be rejected");
  grad_cmd->add_option("--json", grad.json, "Write the report as JSON");
  grad_cmd->add_option("--trials", grad.op_trials, "Random draws per op")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--seed", grad.seed, "Seed for the random draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  Context ctx;
  ctx.verbosity = quiet ? Verbosity::Quiet : verbose ? Verbosity::Verbose : Verbosity::Normal;
  ctx.out = &std::cout;
  ctx.log = &std::cerr;
  try {
    if (*gen_cmd) return cmd_gen_data(gen, ctx);
    if (*train_cmd) return cmd_train(train, ctx);
    if (*adapt_cmd) return cmd_adapt(adapt, ctx);
    if (*eval_cmd) return cmd_eval(eval, ctx);
    if (*compare_cmd) return cmd_compare(compare, ctx);
    if (*grad_cmd) return cmd_gradcheck(grad, ctx);
  } catch (const distill::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
