// Copyright 2026 The Maple Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "maple/pipeline.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "maple/markers.hpp"
#include "maple/privacy.hpp"
#include "maple/schema.hpp"
#include "support/fixture.hpp"

namespace {

using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace fs = std::filesystem;

using maple_test::TempDir;
using maple_test::count_lines;
using maple_test::fixture_config;
using maple_test::pipeline_schema;
using maple_test::read_file;
using maple_test::write_file;

std::size_t count_label_prefix(const std::vector<maple::SpendLedger::Entry>& entries,
                               const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& e : entries) {
    if (e.label.rfind(prefix, 0) == 0) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("ingest_jsonl preserves order and tolerates blank lines", "[pipeline]") {
  TempDir dir;
  write_file(dir.path / "docs.jsonl",
             "{\"text\": \"alpha\"}\n"
             "\n"
             "   \t\r\n"
             "{\"text\": \"beta\", \"extra\": 1}\n"
             "{\"text\": \"gamma\"}\n");
  std::vector<std::string> texts = maple::ingest_jsonl(dir.path / "docs.jsonl");
  REQUIRE(texts == std::vector<std::string>{"alpha", "beta", "gamma"});

  write_file(dir.path / "empty.jsonl", "");
  CHECK(maple::ingest_jsonl(dir.path / "empty.jsonl").empty());

  CHECK_THROWS_AS(maple::ingest_jsonl(dir.path / "missing.jsonl"), maple::ConfigError);
}

TEST_CASE("ingest_jsonl reports every malformed line at once", "[pipeline]") {
  TempDir dir;
  write_file(dir.path / "bad.jsonl",
             "{\"text\": \"ok\"}\n"
             "not json at all\n"
             "{\"body\": \"no text key\"}\n"
             "{\"text\": \"fine\"}\n"
             "{\"text\": \"\"}\n");
  REQUIRE_THROWS_WITH(maple::ingest_jsonl(dir.path / "bad.jsonl"),
                      ContainsSubstring("line 2") && ContainsSubstring("line 3") &&
                          ContainsSubstring("line 5"));
}

TEST_CASE("ingest_donated_jsonl validates against the active schema", "[pipeline]") {
  TempDir dir;
  maple::MetadataSchema schema = pipeline_schema();

  SECTION("keys outside the schema are dropped before validation") {
    write_file(dir.path / "donated.jsonl",
               "{\"text\": \"a\", \"metadata\": {\"topic\": \"genomics\", "
               "\"style\": \"formal\", \"region\": \"north\", \"venue\": \"x\"}}\n");
    auto pairs = maple::ingest_donated_jsonl(dir.path / "donated.jsonl", schema);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].metadata.values == std::vector<std::uint32_t>{1, 0, 0});
    CHECK(pairs[0].text == "a");
  }

  SECTION("a subset schema accepts full-width donations") {
    maple::MetadataSchema narrow = schema.subset(std::vector<std::string>{"topic"});
    write_file(dir.path / "donated.jsonl",
               "{\"text\": \"a\", \"metadata\": {\"topic\": \"ecology\", "
               "\"style\": \"formal\", \"region\": \"south\"}}\n");
    auto pairs = maple::ingest_donated_jsonl(dir.path / "donated.jsonl", narrow);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].metadata.values == std::vector<std::uint32_t>{2});
  }

  SECTION("all invalid lines are listed") {
    write_file(dir.path / "donated.jsonl",
               "{\"text\": \"a\", \"metadata\": {\"topic\": \"genomics\", "
               "\"style\": \"formal\", \"region\": \"north\"}}\n"
               "{\"text\": \"b\", \"metadata\": {\"topic\": \"astrology\", "
               "\"style\": \"formal\", \"region\": \"north\"}}\n"
               "{\"text\": \"c\"}\n"
               "{\"text\": \"d\", \"metadata\": {\"topic\": \"ecology\"}}\n");
    REQUIRE_THROWS_WITH(
        maple::ingest_donated_jsonl(dir.path / "donated.jsonl", schema),
        ContainsSubstring("line 2") && ContainsSubstring("line 3") &&
            ContainsSubstring("line 4"));
  }
}

TEST_CASE("pipeline config round trips through json", "[pipeline]") {
  maple::PipelineConfig config;
  config.run_id = "roundtrip";
  config.mode = maple::PipelineMode::kAugpeM;
  config.private_path = "p.jsonl";
  config.schema_path = "s.json";
  config.output_dir = "out";
  config.budget.epsilon = 4.0;
  config.budget.delta = 1e-5;
  config.metadata_fraction = 0.25;
  config.n_syn = 123;
  config.iterations = 7;
  config.k_incontext = 3;
  config.seed = 99;
  config.backend.mock.p_drift = 0.2;

  maple::PipelineConfig back = maple::PipelineConfig::from_json(config.to_json());
  CHECK(back.run_id == config.run_id);
  CHECK(back.mode == config.mode);
  CHECK(back.budget.epsilon == config.budget.epsilon);
  CHECK(back.budget.delta == config.budget.delta);
  REQUIRE(back.metadata_fraction.has_value());
  CHECK(*back.metadata_fraction == 0.25);
  CHECK(back.n_syn == 123);
  CHECK(back.iterations == 7);
  CHECK(back.backend.mock.p_drift == 0.2);

  SECTION("infinite epsilon serializes as the string inf") {
    config.budget.epsilon = maple::kInfiniteBudget;
    nlohmann::ordered_json j = config.to_json();
    CHECK(j["epsilon"] == "inf");
    maple::PipelineConfig infinite = maple::PipelineConfig::from_json(j);
    CHECK(std::isinf(infinite.budget.epsilon));
  }

  SECTION("unknown keys are rejected by name") {
    nlohmann::ordered_json j = config.to_json();
    j["iteraitons"] = 3;
    REQUIRE_THROWS_WITH(maple::PipelineConfig::from_json(j),
                        ContainsSubstring("iteraitons"));
    nlohmann::ordered_json b = config.to_json();
    b["backend"]["p_drfit"] = 0.5;
    CHECK_THROWS_AS(maple::PipelineConfig::from_json(b), maple::ConfigError);
  }
}

TEST_CASE("pipeline config validation rejects mode mismatches", "[pipeline]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  REQUIRE_NOTHROW(config.validate());

  SECTION("split ratio on a non-split mode") {
    config.mode = maple::PipelineMode::kAugpe;
    config.donated_path.clear();
    config.metadata_fraction = 0.2;
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
  }
  SECTION("zero-shot modes take no refinement iterations") {
    config.mode = maple::PipelineMode::kZeroShot;
    config.donated_path.clear();
    config.iterations = 2;
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
  }
  SECTION("example modes need donations and a positive k") {
    config.donated_path.clear();
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
    config = fixture_config(dir);
    config.k_incontext = 0;
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
  }
  SECTION("run ids stay directory- and csv-safe") {
    config.run_id = "bad,id";
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
    config.run_id = "bad/id";
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
    config.run_id = "";
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
  }
  SECTION("fraction bounds") {
    config.metadata_fraction = 1.0;
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
    config.metadata_fraction = 0.0;
    CHECK_THROWS_AS(config.validate(), maple::ConfigError);
  }
}

TEST_CASE("resolve_budget allocates the calibrated budget per mode", "[pipeline]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.budget.epsilon = 1.0;

  SECTION("delta defaults to one over the private count") {
    maple::BudgetResolution r = maple::resolve_budget(config, 200);
    CHECK(r.delta == Approx(1.0 / 200.0));
    CHECK(r.rho_total == maple::calibrate_rho(1.0, 1.0 / 200.0));
  }
  SECTION("an explicit delta wins") {
    config.budget.delta = 1e-6;
    maple::BudgetResolution r = maple::resolve_budget(config, 200);
    CHECK(r.delta == 1e-6);
  }
  SECTION("split modes divide exactly") {
    config.metadata_fraction = 0.25;
    maple::BudgetResolution r = maple::resolve_budget(config, 200);
    CHECK(r.rho_meta + r.rho_pe == r.rho_total);
    CHECK(r.rho_meta == Approx(0.25 * r.rho_total));
    CHECK(maple::compose(std::vector<double>{r.rho_meta, r.rho_pe}) <= r.rho_total);
  }
  SECTION("split modes with no refinement passes are infeasible") {
    config.iterations = 0;
    CHECK_THROWS_AS(maple::resolve_budget(config, 200), maple::ConfigError);
    config.mode = maple::PipelineMode::kAugpeM;
    config.donated_path.clear();
    CHECK_THROWS_AS(maple::resolve_budget(config, 200), maple::ConfigError);
  }
  SECTION("single-consumer modes take everything") {
    config.mode = maple::PipelineMode::kAugpe;
    maple::BudgetResolution r = maple::resolve_budget(config, 200);
    CHECK(r.rho_meta == 0.0);
    CHECK(r.rho_pe == r.rho_total);

    config.iterations = 0;  // iteration sweeps hit T = 0 for these modes
    r = maple::resolve_budget(config, 200);
    CHECK(r.rho_pe == 0.0);

    config.mode = maple::PipelineMode::kZeroShotMe;
    r = maple::resolve_budget(config, 200);
    CHECK(r.rho_meta == r.rho_total);
    CHECK(r.rho_pe == 0.0);

    config.mode = maple::PipelineMode::kZeroShot;
    r = maple::resolve_budget(config, 200);
    CHECK(r.rho_meta == 0.0);
    CHECK(r.rho_pe == 0.0);
  }
  SECTION("an empty private set cannot be resolved") {
    CHECK_THROWS_AS(maple::resolve_budget(config, 0), maple::ConfigError);
    CHECK_THROWS_AS(maple::resolve_budget(config, 1), maple::ConfigError);
  }
}

TEST_CASE("maple run produces a complete, budget-safe run directory",
          "[pipeline][endtoend]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  maple::PipelineOutcome outcome = maple::run_pipeline(config);

  const fs::path run = config.output_dir;
  for (const char* rel :
       {"config.json", "manifest.json", "ledger.json", "extract/table.json",
        "fit-metadata/synthetic_metadata.json", "synthesize/iter_0.jsonl",
        "synthesize/iter_1.jsonl", "synthesize/iter_2.jsonl", "synthesize/final.jsonl",
        "synthesize/prompts_sample.json", "evaluate/report.json",
        "evaluate/metrics.csv"}) {
    INFO(rel);
    CHECK(fs::exists(run / rel));
  }
  CHECK_FALSE(fs::exists(run / ".lock"));

  CHECK(outcome.rho_spent <= outcome.budget.rho_total);
  CHECK(outcome.rho_spent > 0.0);
  REQUIRE(outcome.report.has_value());
  CHECK(outcome.report->sample_sizes.first == config.n_syn);
  CHECK(count_label_prefix(outcome.entries, "aim/") >= 3);
  CHECK(count_label_prefix(outcome.entries, "pe/histogram/iter") == 2);

  std::string csv = read_file(run / "evaluate" / "metrics.csv");
  CHECK(count_lines(csv) == 1 + 3);  // header + iterations 0..2
  CHECK(csv.rfind("run_id,mode,epsilon,iteration,avg_jsd,mauve_lite,rho_spent\n", 0) == 0);
  CHECK_THAT(csv, ContainsSubstring("t,maple,2.0,0,") &&
                      ContainsSubstring("t,maple,2.0,1,") &&
                      ContainsSubstring("t,maple,2.0,2,"));

  CHECK(count_lines(read_file(run / "synthesize" / "final.jsonl")) == config.n_syn);

  nlohmann::json prompts =
      nlohmann::json::parse(read_file(run / "synthesize" / "prompts_sample.json"));
  REQUIRE(prompts.at("random").size() >= 1);
  std::string sample = prompts.at("random").at(0).get<std::string>();
  CHECK_THAT(sample, ContainsSubstring(maple::kTargetMetadataHeader));
  CHECK_THAT(sample, ContainsSubstring("Metadata:"));  // in-context example block
  REQUIRE(prompts.at("variation").size() == 1);
  CHECK_THAT(prompts.at("variation").at(0).get<std::string>(),
             ContainsSubstring(maple::kVariationTaskMarker));
}

TEST_CASE("zero-shot modes spend nothing on the refinement loop", "[pipeline]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.iterations = 0;

  SECTION("plain zero-shot never touches the ledger") {
    config.mode = maple::PipelineMode::kZeroShot;
    config.donated_path.clear();
    config.output_dir = dir.path / "zs";
    maple::PipelineOutcome outcome = maple::run_pipeline(config);
    CHECK(outcome.entries.empty());
    CHECK(outcome.rho_spent == 0.0);
    CHECK_FALSE(fs::exists(config.output_dir / "extract"));
    CHECK(fs::exists(config.output_dir / "synthesize" / "iter_0.jsonl"));
    REQUIRE(outcome.report.has_value());

    nlohmann::json prompts = nlohmann::json::parse(
        read_file(config.output_dir / "synthesize" / "prompts_sample.json"));
    std::string sample = prompts.at("random").at(0).get<std::string>();
    CHECK_THAT(sample, !ContainsSubstring(maple::kTargetMetadataHeader));
    CHECK_THAT(sample, !ContainsSubstring("Metadata:"));  // no example blocks
    CHECK(prompts.at("variation").empty());
  }

  SECTION("metadata-and-examples zero-shot spends only on the metadata model") {
    config.mode = maple::PipelineMode::kZeroShotMe;
    config.output_dir = dir.path / "zsme";
    maple::PipelineOutcome outcome = maple::run_pipeline(config);
    CHECK(outcome.entries.size() == count_label_prefix(outcome.entries, "aim/"));
    CHECK(count_label_prefix(outcome.entries, "pe/") == 0);
    CHECK(outcome.rho_spent > 0.0);
    CHECK(outcome.rho_spent <= outcome.budget.rho_total);
  }
}

TEST_CASE("infinite budget completes and records infinite charges", "[pipeline]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.budget.epsilon = maple::kInfiniteBudget;
  maple::PipelineOutcome outcome = maple::run_pipeline(config);

  CHECK(std::isinf(outcome.budget.rho_total));
  CHECK(std::isinf(outcome.rho_spent));
  REQUIRE(outcome.report.has_value());
  bool any_infinite = false;
  for (const auto& e : outcome.entries) any_infinite = any_infinite || std::isinf(e.rho);
  CHECK(any_infinite);

  std::string csv = read_file(config.output_dir / "evaluate" / "metrics.csv");
  CHECK_THAT(csv, ContainsSubstring(",inf\n"));
  CHECK_THAT(csv, ContainsSubstring("t,maple,inf,"));
}

TEST_CASE("interrupted runs resume into byte-identical outputs", "[pipeline][resume]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);

  // Partial run (extract + fit only), then completion, in directory A.
  config.output_dir = dir.path / "resumed";
  maple::run_pipeline(config, maple::Stage::kFitMetadata);
  CHECK_FALSE(fs::exists(config.output_dir / "synthesize"));
  std::string extract_before = read_file(config.output_dir / "extract" / "table.json");
  maple::PipelineOutcome resumed = maple::run_pipeline(config);

  // Fresh end-to-end run in directory B.
  maple::PipelineConfig fresh = config;
  fresh.output_dir = dir.path / "fresh";
  maple::PipelineOutcome full = maple::run_pipeline(fresh);

  CHECK(read_file(config.output_dir / "extract" / "table.json") == extract_before);
  for (const char* rel :
       {"extract/table.json", "fit-metadata/synthetic_metadata.json",
        "synthesize/iter_0.jsonl", "synthesize/final.jsonl", "ledger.json",
        "evaluate/report.json", "evaluate/metrics.csv"}) {
    INFO(rel);
    CHECK(read_file(config.output_dir / rel) == read_file(fresh.output_dir / rel));
  }
  CHECK(resumed.rho_spent == full.rho_spent);

  // A no-op rerun replays checkpoints and leaves every byte alone.
  maple::RunManifest before =
      maple::RunManifest::load_or_empty(config.output_dir / "manifest.json");
  maple::PipelineOutcome rerun = maple::run_pipeline(config);
  maple::RunManifest after =
      maple::RunManifest::load_or_empty(config.output_dir / "manifest.json");
  CHECK(rerun.rho_spent == full.rho_spent);
  for (const auto& [name, checkpoint] : before.stages) {
    INFO(name);
    CHECK(after.stages.at(name).completed_at == checkpoint.completed_at);
    CHECK(after.stages.at(name).input_hash == checkpoint.input_hash);
  }
}

TEST_CASE("changed inputs invalidate only downstream stages", "[pipeline][resume]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  maple::run_pipeline(config);
  maple::RunManifest before =
      maple::RunManifest::load_or_empty(config.output_dir / "manifest.json");

  config.mauve.scale_c = 3.0;  // evaluation-only knob
  maple::run_pipeline(config);
  maple::RunManifest after =
      maple::RunManifest::load_or_empty(config.output_dir / "manifest.json");

  for (const char* stage : {"extract", "fit-metadata", "synthesize"}) {
    INFO(stage);
    CHECK(after.stages.at(stage).input_hash == before.stages.at(stage).input_hash);
    CHECK(after.stages.at(stage).completed_at == before.stages.at(stage).completed_at);
  }
  CHECK(after.stages.at("evaluate").input_hash != before.stages.at("evaluate").input_hash);
}

TEST_CASE("the run directory lock excludes concurrent runs", "[pipeline]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  fs::create_directories(config.output_dir);
  write_file(config.output_dir / ".lock", "");
  CHECK_THROWS_AS(maple::run_pipeline(config), maple::PipelineError);
  fs::remove(config.output_dir / ".lock");
  CHECK_NOTHROW(maple::run_pipeline(config));
}

TEST_CASE("stages outside the mode's plan are rejected", "[pipeline]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.mode = maple::PipelineMode::kAugpe;
  config.donated_path.clear();
  CHECK_THROWS_AS(maple::run_pipeline(config, maple::Stage::kExtract),
                  maple::ConfigError);
}

TEST_CASE("sweeps merge member metrics under one csv", "[pipeline][sweep]") {
  TempDir dir;
  maple::PipelineConfig base = fixture_config(dir);
  base.output_dir = dir.path / "sweep";
  base.iterations = 1;

  maple::SweepOutcome outcome =
      maple::run_sweep(base, maple::SweepAxis::kEpsilon, {"1", "inf"});
  REQUIRE(outcome.members.size() == 2);
  CHECK(outcome.members[0].completed);
  CHECK(outcome.members[1].completed);
  CHECK(fs::exists(dir.path / "sweep" / "epsilon=1" / "synthesize" / "final.jsonl"));
  CHECK(fs::exists(dir.path / "sweep" / "epsilon=inf" / "evaluate" / "report.json"));

  std::string merged = read_file(outcome.merged_csv);
  CHECK(merged.rfind("axis,value,run_id,mode,epsilon,iteration,avg_jsd,mauve_lite,"
                     "rho_spent\n",
                     0) == 0);
  CHECK(count_lines(merged) == 1 + 2 * 2);  // header + two members x (T + 1) rows
  CHECK_THAT(merged, ContainsSubstring("epsilon,1,t-epsilon=1,maple,1.0,0,"));
  CHECK_THAT(merged, ContainsSubstring("epsilon,inf,t-epsilon=inf,maple,inf,1,"));
}

TEST_CASE("a failing sweep member aborts after recording completed members",
          "[pipeline][sweep]") {
  TempDir dir;
  maple::PipelineConfig base = fixture_config(dir);
  base.output_dir = dir.path / "sweep";
  base.iterations = 1;

  // iterations = 0 is infeasible for maple, so the second member fails.
  CHECK_THROWS_AS(
      maple::run_sweep(base, maple::SweepAxis::kIterations, {"1", "0", "2"}),
      maple::ConfigError);
  std::string merged = read_file(dir.path / "sweep" / "sweep_metrics.csv");
  CHECK(count_lines(merged) == 1 + 2);  // header + the completed member's rows
  CHECK_THAT(merged, ContainsSubstring("iterations,1,"));
  CHECK_FALSE(fs::exists(dir.path / "sweep" / "iterations=2"));

  SECTION("unsafe axis values are rejected up front") {
    CHECK_THROWS_AS(maple::run_sweep(base, maple::SweepAxis::kEpsilon, {"1,2"}),
                    maple::ConfigError);
    CHECK_THROWS_AS(maple::run_sweep(base, maple::SweepAxis::kEpsilon, {}),
                    maple::ConfigError);
  }
}

TEST_CASE("subset schemas narrow modeling but not evaluation", "[pipeline]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.schema_subset = 2;
  config.output_dir = dir.path / "subset";
  maple::PipelineOutcome outcome = maple::run_pipeline(config);

  nlohmann::json table = nlohmann::json::parse(
      read_file(config.output_dir / "extract" / "table.json"));
  CHECK(table.at("schema").at("attributes").size() == 2);

  // Evaluation still reports the full schema's attributes.
  REQUIRE(outcome.report.has_value());
  CHECK(outcome.report->per_attribute_jsd.size() == 3);
  CHECK(outcome.report->per_attribute_jsd.count("region") == 1);

  CHECK_THROWS_AS(
      [&] {
        maple::PipelineConfig bad = config;
        bad.schema_subset = 9;
        bad.output_dir = dir.path / "subset-bad";
        maple::run_pipeline(bad);
      }(),
      maple::ConfigError);
}

TEST_CASE("shipped presets and templates are loadable", "[pipeline][data]") {
  const fs::path data_dir = MAPLE_TEST_DATA_DIR;

  for (const char* name : {"biorxiv", "openreview"}) {
    INFO(name);
    maple::PipelineConfig preset = maple::PipelineConfig::load(
        data_dir / "presets" / (std::string(name) + ".json"));
    CHECK(preset.mode == maple::PipelineMode::kMaple);
    CHECK(preset.iterations >= 1);
    CHECK(preset.max_tokens == 512);
    CHECK(preset.k_incontext == 10);
    REQUIRE(preset.metadata_fraction.has_value());
    CHECK(*preset.metadata_fraction == 0.1);
    CHECK(preset.budget.delta == 0.0);  // resolves to 1/|private| at run time

    maple::MetadataSchema schema = maple::MetadataSchema::load(
        data_dir / "schemas" / (std::string(name) + ".json"));
    CHECK(schema.attribute_index(maple::kWordCountAttribute).has_value());
  }

  // The template directory must drive the pipeline end to end: same
  // placeholders, same task markers the annotation backends dispatch on.
  maple::PromptTemplates templates = maple::PromptTemplates::load_dir(
      data_dir / "templates");
  CHECK_THAT(templates.random_template, ContainsSubstring(maple::kGenerationTaskMarker));
  CHECK_THAT(templates.variation_template,
             ContainsSubstring(maple::kVariationTaskMarker));

  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.iterations = 1;
  config.templates_dir = data_dir / "templates";
  maple::PipelineOutcome outcome = maple::run_pipeline(config);
  CHECK(outcome.report.has_value());
}
