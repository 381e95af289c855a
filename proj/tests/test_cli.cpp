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

#include <sys/wait.h>

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "maple/pipeline.hpp"
#include "support/fixture.hpp"

namespace {

namespace fs = std::filesystem;

using maple_test::TempDir;
using maple_test::fixture_config;
using maple_test::write_file;

// Exit status of the command line binary, output silenced.
int cli(const std::string& arguments) {
  std::string command = std::string(MAPLE_CLI_PATH) + " " + arguments +
                        " > /dev/null 2> /dev/null";
  int status = std::system(command.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

// Writes config to dir and returns the invocation fragment pointing at it.
std::string config_arg(const TempDir& dir, const maple::PipelineConfig& config,
                       const std::string& name = "config.json") {
  write_file(dir.path / name, config.to_json().dump(2) + "\n");
  return "--config " + (dir.path / name).string();
}

}  // namespace

TEST_CASE("cli runs a configured pipeline to completion", "[cli]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.iterations = 1;
  REQUIRE(cli("run " + config_arg(dir, config)) == 0);
  CHECK(fs::exists(config.output_dir / "evaluate" / "metrics.csv"));
  CHECK(fs::exists(config.output_dir / "synthesize" / "final.jsonl"));

  SECTION("stage subcommands stop at their stage") {
    maple::PipelineConfig partial = config;
    partial.output_dir = dir.path / "partial";
    REQUIRE(cli("fit-metadata " + config_arg(dir, partial, "partial.json")) == 0);
    CHECK(fs::exists(partial.output_dir / "fit-metadata" / "synthetic_metadata.json"));
    CHECK_FALSE(fs::exists(partial.output_dir / "synthesize"));
    REQUIRE(cli("synthesize " + config_arg(dir, partial, "partial.json")) == 0);
    CHECK(fs::exists(partial.output_dir / "synthesize" / "final.jsonl"));
    CHECK_FALSE(fs::exists(partial.output_dir / "evaluate"));
  }

  SECTION("overrides redirect the run directory") {
    fs::path other = dir.path / "redirected";
    REQUIRE(cli("run " + config_arg(dir, config) + " --output " + other.string() +
                " --seed 123") == 0);
    CHECK(fs::exists(other / "evaluate" / "report.json"));
  }
}

TEST_CASE("cli maps error families to exit codes", "[cli]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.iterations = 1;

  SECTION("usage and configuration errors exit 2") {
    CHECK(cli("run --config " + (dir.path / "absent.json").string()) == 2);
    CHECK(cli("run --bogus-flag") == 2);
    CHECK(cli("sweep " + config_arg(dir, config) + " --axis nonsense --values 1") == 2);

    maple::PipelineConfig invalid = config;
    invalid.mode = maple::PipelineMode::kZeroShot;  // iterations now mismatch
    CHECK(cli("run " + config_arg(dir, invalid, "invalid.json")) == 2);

    write_file(dir.path / "broken.json", "{ not json");
    CHECK(cli("run --config " + (dir.path / "broken.json").string()) == 2);
  }

  SECTION("a zero calibrated budget with refinement passes exits 2") {
    // Epsilon small enough that the calibrated rho underflows to zero: the
    // refinement loop would have nothing to spend, which is a configuration
    // error before any backend work.
    maple::PipelineConfig starved = config;
    starved.mode = maple::PipelineMode::kAugpe;
    starved.donated_path.clear();
    starved.budget.epsilon = 1e-300;
    starved.output_dir = dir.path / "starved";
    CHECK(cli("run " + config_arg(dir, starved, "starved.json")) == 2);
  }

  SECTION("a run directory that already spent the grant exits 4") {
    // Complete extract and fit, then inflate the recorded extract spend to
    // the whole grant. The replayed ledger leaves the refinement loop no
    // room, so its first charge reports budget exhaustion.
    maple::PipelineConfig tampered = config;
    tampered.output_dir = dir.path / "tampered";
    REQUIRE(cli("fit-metadata " + config_arg(dir, tampered, "tampered.json")) == 0);
    fs::path manifest_path = tampered.output_dir / "manifest.json";
    nlohmann::json manifest =
        nlohmann::json::parse(maple_test::read_file(manifest_path));
    manifest["stages"]["extract"]["entries"] = nlohmann::json::array(
        {nlohmann::json{{"label", "external/spend"}, {"rho", 1e9}}});
    write_file(manifest_path, manifest.dump(2));
    CHECK(cli("run " + config_arg(dir, tampered, "tampered.json")) == 4);
  }

  SECTION("an unreachable backend exits 3") {
    maple::PipelineConfig offline = config;
    offline.mode = maple::PipelineMode::kZeroShot;
    offline.iterations = 0;
    offline.donated_path.clear();
    offline.backend.kind = "http";
    offline.backend.http.base_url = "http://127.0.0.1:9";  // discard port
    offline.backend.http.model = "m";
    offline.output_dir = dir.path / "offline";
    CHECK(cli("run " + config_arg(dir, offline, "offline.json")) == 3);
  }

  SECTION("help exits 0") {
    CHECK(cli("--help") == 0);
    CHECK(cli("run --help") == 0);
  }
}

TEST_CASE("cli sweep writes merged metrics", "[cli]") {
  TempDir dir;
  maple::PipelineConfig config = fixture_config(dir);
  config.iterations = 1;
  config.output_dir = dir.path / "sweep";
  REQUIRE(cli("sweep " + config_arg(dir, config) + " --axis epsilon --values 1,2") == 0);
  std::string merged = maple_test::read_file(dir.path / "sweep" / "sweep_metrics.csv");
  CHECK(maple_test::count_lines(merged) == 1 + 2 * 2);
  CHECK(merged.find("epsilon,2,") != std::string::npos);
}
