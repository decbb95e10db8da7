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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "distill/checkpoint.hpp"
#include "distill/corpus.hpp"

namespace fs = std::filesystem;
using distill::read_file;
using distill::write_file;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path log = fs::temp_directory_path() / ("distill_cli_" + std::to_string(counter++) + ".log");
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" DISTILL_CLI_PATH "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = read_file(log);
  fs::remove(log);
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "distill_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json json_at(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

// A small corpus plus a briefly trained teacher, shared by several cases.
const fs::path& fixture() {
  static const fs::path dir = [] {
    const fs::path d = scratch("fixture");
    write_file(d / "spec.json", R"({"utterances": 80, "split_fractions": [0.4, 0.4, 0.1, 0.1]})");
    write_file(d / "train.json", R"({"corpus": "corpus", "out": "teacher",
      "arch": {"model_dim": 12, "attention_dim": 12, "encoder_layers": 1}, "train": {"epochs": 1}})");
    REQUIRE(run("-q gen-data --spec " + (d / "spec.json").string() + " --out " + (d / "corpus").string()).code == 0);
    REQUIRE(run("-q train --config " + (d / "train.json").string() + " --corpus " + (d / "corpus").string() +
                " --out " + (d / "teacher").string())
                .code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help").code == 0);
  CHECK(run("").code == 1);
  CHECK(run("no-such-command").code == 1);
  CHECK(run("train").code == 1);  // --config is required
  CHECK(run("gradcheck --trials 0").code == 1);
}

TEST_CASE("config files are validated against their schema") {
  const fs::path d = scratch("schema");
  const fs::path& f = fixture();

  write_file(d / "unknown_key.json", R"({"corpus": "c", "out": "o", "epochs": 3})");
  Run r = run("-q train --config " + (d / "unknown_key.json").string());
  CHECK(r.code == 1);
  CHECK(r.output.find("train.schema.json") != std::string::npos);

  write_file(d / "bad_type.json", R"({"corpus": "c", "out": "o", "train": {"epochs": "ten"}})");
  r = run("-q train --config " + (d / "bad_type.json").string());
  CHECK(r.code == 1);
  CHECK(r.output.find("at #/train") != std::string::npos);

  write_file(d / "ce_adapt.json", R"({"corpus": "c", "teacher": "t", "out": "o", "train": {"mode": "CE"}})");
  CHECK(run("-q adapt --config " + (d / "ce_adapt.json").string()).code == 1);

  write_file(d / "lambda_grid.json", R"({"corpus": "c", "teacher": "t", "out": "o",
    "grid": {"adaptation": {"lambda": 0.5}}})");
  CHECK(run("-q compare --config " + (d / "lambda_grid.json").string()).code == 1);

  write_file(d / "not_json.json", "{ corpus: ");
  CHECK(run("-q train --config " + (d / "not_json.json").string()).code == 1);

  // Semantically invalid values that the schema admits still fail as config errors.
  write_file(d / "its_no_weight.json", R"({"corpus": "corpus", "teacher": "teacher/model", "out": "o",
    "train": {"mode": "ITS", "epochs": 1}})");
  CHECK(run("-q adapt --config " + (d / "its_no_weight.json").string() + " --corpus " +
            (f / "corpus").string() + " --teacher " + (f / "teacher" / "model").string() + " --out " +
            (d / "o").string())
            .code == 1);
}

TEST_CASE("runtime failures exit with status 2") {
  const fs::path d = scratch("runtime");
  const fs::path& f = fixture();
  write_file(d / "adapt.json", R"({"corpus": "corpus", "teacher": "missing/model", "out": "o",
    "train": {"mode": "TOKEN_TS", "epochs": 1}})");
  CHECK(run("-q adapt --config " + (d / "adapt.json").string() + " --corpus " + (f / "corpus").string() +
            " --out " + (d / "o").string())
            .code == 2);
  CHECK(run("-q eval --model " + (d / "missing").string() + " --corpus " + (f / "corpus").string()).code == 2);
}

TEST_CASE("seed precedence: flag, then config, then DISTILL_SEED") {
  const fs::path d = scratch("seed");
  const fs::path& f = fixture();
  const std::string base = "-q train --corpus " + (f / "corpus").string();
  auto seed_of = [&](const std::string& config, const std::string& extra, const std::string& env,
                     const std::string& out) {
    REQUIRE(run(base + " --config " + (d / config).string() + " --out " + (d / out).string() + extra, env).code ==
            0);
    return json_at(d / out / "run_report.json")["train"]["seed"].get<int>();
  };
  write_file(d / "plain.json", R"({"corpus": "c", "out": "o",
    "arch": {"model_dim": 8, "attention_dim": 8, "encoder_layers": 1}, "train": {"epochs": 0}})");
  write_file(d / "seeded.json", R"({"corpus": "c", "out": "o",
    "arch": {"model_dim": 8, "attention_dim": 8, "encoder_layers": 1}, "train": {"epochs": 0, "seed": 5}})");

  CHECK(seed_of("plain.json", "", "", "a") == 1);
  CHECK(seed_of("plain.json", "", "DISTILL_SEED=7", "b") == 7);
  CHECK(seed_of("seeded.json", "", "DISTILL_SEED=7", "c") == 5);
  CHECK(seed_of("seeded.json", " --seed 9", "DISTILL_SEED=7", "d") == 9);
  CHECK(run(base + " --config " + (d / "plain.json").string() + " --out " + (d / "e").string(),
            "DISTILL_SEED=banana")
            .code == 1);
}

TEST_CASE("gen-data: larger corruption moves the two views further apart") {
  const fs::path d = scratch("sigma");
  double previous = -1.0;
  for (const char* sigma : {"0", "0.1", "0.5", "1", "2"}) {
    const fs::path spec = d / (std::string("spec_") + sigma + ".json");
    write_file(spec, std::string(R"({"utterances": 40, "noise_sigma": )") + sigma + "}");
    const fs::path out = d / (std::string("corpus_") + sigma);
    REQUIRE(run("-q gen-data --spec " + spec.string() + " --out " + out.string()).code == 0);
    const auto train = distill::read_split(out, "train");
    const double distance = distill::mean_frame_distance(train.utterances);
    CAPTURE(sigma);
    CHECK(distance > previous);
    previous = distance;
  }
}

TEST_CASE("adapt reports the identity check and an unchanged teacher") {
  const fs::path d = scratch("adapt");
  const fs::path& f = fixture();
  write_file(d / "adapt.json", R"({"corpus": "corpus", "teacher": "teacher/model", "out": "o",
    "train": {"mode": "SEQ_TS", "epochs": 1}})");
  REQUIRE(run("-q adapt --config " + (d / "adapt.json").string() + " --corpus " + (f / "corpus").string() +
              " --teacher " + (f / "teacher" / "model").string() + " --out " + (d / "o").string())
              .code == 0);
  const auto report = json_at(d / "o" / "run_report.json");
  CHECK(report["teacher_unchanged"].get<bool>());
  CHECK(report["identity_check"]["passed"].get<bool>());
  CHECK(report["identity_check"]["max_error"].get<double>() < 1e-12);
  CHECK(fs::exists(d / "o" / "model.adtn"));
  CHECK(fs::exists(d / "o" / "metrics.jsonl"));
}

TEST_CASE("gradcheck exits 0 and writes a JSON report") {
  const fs::path d = scratch("gradcheck");
  const Run r = run("gradcheck --trials 2 --negative-control --json " + (d / "g.json").string());
  CHECK(r.code == 0);
  const auto report = json_at(d / "g.json");
  CHECK(report["passed"].get<bool>());
  CHECK(r.output.find("broken_square") != std::string::npos);
}
