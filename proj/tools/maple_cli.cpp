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

// Command line front end. Exit codes: 0 success, 2 configuration error,
// 3 backend failure, 4 privacy budget exhausted, 1 anything else.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maple/error.hpp"
#include "maple/pipeline.hpp"

namespace {

struct CliArgs {
  std::string config_path;
  std::string output_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  std::string axis;
  std::vector<std::string> values;
};

maple::PipelineConfig load_config(const CliArgs& args) {
  maple::PipelineConfig config = maple::PipelineConfig::load(args.config_path);
  if (!args.output_override.empty()) config.output_dir = args.output_override;
  if (args.seed_set) config.seed = args.seed_override;
  return config;
}

void print_outcome(const maple::PipelineOutcome& outcome, maple::Stage through) {
  std::printf("completed through %s: %s\n", maple::stage_name(through),
              outcome.run_dir.string().c_str());
  std::printf("rho spent: %s of %s (delta %s)\n",
              maple::pipeline_detail::real_to_text(outcome.rho_spent).c_str(),
              maple::pipeline_detail::real_to_text(outcome.budget.rho_total).c_str(),
              maple::pipeline_detail::real_to_text(outcome.budget.delta).c_str());
  if (outcome.report.has_value()) {
    std::printf("avg_jsd %s  mauve_lite %s  (%zu synthetic vs %zu private)\n",
                maple::pipeline_detail::real_to_text(outcome.report->avg_jsd).c_str(),
                maple::pipeline_detail::real_to_text(outcome.report->mauve_lite).c_str(),
                outcome.report->sample_sizes.first, outcome.report->sample_sizes.second);
    std::printf("metrics: %s\n", outcome.metrics_csv.string().c_str());
  }
}

int run_through(const CliArgs& args, maple::Stage through) {
  maple::PipelineOutcome outcome = maple::run_pipeline(load_config(args), through);
  print_outcome(outcome, through);
  return 0;
}

int run_sweep_command(const CliArgs& args) {
  maple::PipelineConfig base = load_config(args);
  maple::SweepAxis axis = maple::parse_sweep_axis(args.axis);
  maple::SweepOutcome outcome = maple::run_sweep(base, axis, args.values);
  for (const maple::SweepMember& member : outcome.members) {
    std::printf("sweep member %s=%s: %s\n", maple::sweep_axis_name(axis),
                member.value.c_str(), member.completed ? "ok" : "failed");
  }
  std::printf("merged metrics: %s\n", outcome.merged_csv.string().c_str());
  return 0;
}

void add_common_options(CLI::App* cmd, CliArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration JSON file")
      ->required();
  cmd->add_option("--output", args.output_override,
                  "Override the configured output directory");
  cmd->add_option("--seed", args.seed_override, "Override the configured seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private synthetic text via API-only model access"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "maple 0.1.0");

  CliArgs args;
  struct Command {
    const char* name;
    const char* help;
    std::optional<maple::Stage> through;  // nullopt: sweep
  };
  const Command commands[] = {
      {"extract", "Annotate the private corpus (stops after the extract stage)",
       maple::Stage::kExtract},
      {"fit-metadata", "Fit the private metadata model (stops after fitting)",
       maple::Stage::kFitMetadata},
      {"synthesize", "Generate and refine synthetic text (stops before evaluation)",
       maple::Stage::kSynthesize},
      {"evaluate", "Run every stage including evaluation", maple::Stage::kEvaluate},
      {"run", "Run every stage of the configured mode", maple::Stage::kEvaluate},
      {"sweep", "Run one pipeline per axis value and merge their metrics", std::nullopt},
  };

  std::optional<maple::Stage> selected;
  bool sweep_selected = false;
  for (const Command& command : commands) {
    CLI::App* sub = app.add_subcommand(command.name, command.help);
    add_common_options(sub, args);
    if (command.through.has_value()) {
      maple::Stage through = *command.through;
      sub->callback([&selected, through]() { selected = through; });
    } else {
      sub->add_option("--axis", args.axis,
                      "Sweep axis: epsilon, iterations, mode, or schema_subset")
          ->required();
      sub->add_option("--values", args.values, "Axis values (comma separated)")
          ->required()
          ->delimiter(',');
      sub->callback([&sweep_selected]() { sweep_selected = true; });
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sweep_selected) return run_sweep_command(args);
    return run_through(args, selected.value());
  } catch (const maple::BudgetError& e) {
    std::fprintf(stderr, "maple: %s\n", e.what());
    return 4;
  } catch (const maple::BackendError& e) {
    std::fprintf(stderr, "maple: %s\n", e.what());
    return 3;
  } catch (const maple::ConfigError& e) {
    std::fprintf(stderr, "maple: %s\n", e.what());
    return 2;
  } catch (const maple::ValidationError& e) {
    std::fprintf(stderr, "maple: %s\n", e.what());
    return 2;
  } catch (const maple::InvalidArgument& e) {
    std::fprintf(stderr, "maple: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "maple: %s\n", e.what());
    return 1;
  }
}
