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

// Shared test fixtures: scratch directories and mock-compatible corpora.

#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maple/mock_backend.hpp"
#include "maple/pipeline.hpp"
#include "maple/prompts.hpp"
#include "maple/rng.hpp"
#include "maple/schema.hpp"

namespace maple_test {

// Unique scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("maple-test-" + std::to_string(++counter) + "-" +
            std::to_string(static_cast<unsigned>(::getpid())));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) {
    if (c == '\n') ++n;
  }
  return n;
}

// Draws a record with option j weighted 1/(j+2): skewed enough that the
// metadata distribution is worth learning, flat enough that every option
// appears in moderate samples.
inline maple::MetadataRecord skewed_record(const maple::MetadataSchema& schema,
                                           maple::Rng& rng) {
  maple::MetadataRecord record;
  for (std::size_t a = 0; a < schema.attribute_count(); ++a) {
    std::size_t options = schema.attribute(a).options.size();
    double total = 0.0;
    for (std::size_t j = 0; j < options; ++j) total += 1.0 / static_cast<double>(j + 2);
    double u = rng.uniform() * total;
    double mass = 0.0;
    std::uint32_t v = static_cast<std::uint32_t>(options - 1);
    for (std::size_t j = 0; j < options; ++j) {
      mass += 1.0 / static_cast<double>(j + 2);
      if (u <= mass) {
        v = static_cast<std::uint32_t>(j);
        break;
      }
    }
    record.values.push_back(v);
  }
  return record;
}

// Mock-generated corpus conditioned on skewed records, so every text plants
// recoverable tokens for all schema attributes.
inline std::vector<std::string> make_corpus(const maple::MetadataSchema& schema,
                                            std::size_t n, std::uint64_t seed,
                                            std::size_t words = 24) {
  maple::MockParams params;
  params.seed = 99;
  params.default_words = words;
  maple::MockCompletionBackend mock(schema, params);
  maple::Rng rng(seed);
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < n; ++i) {
    maple::MetadataRecord record = skewed_record(schema, rng);
    maple::PromptPlan plan;
    plan.mode = maple::PromptMode::kMetadataOnly;
    std::string prompt = maple::build_random_prompt(maple::PromptTemplates::builtin(),
                                                    plan, schema, &record);
    maple::CompletionRequest request;
    request.prompt = prompt;
    request.seed = static_cast<std::int64_t>(1000 + i);
    texts.push_back(mock.complete(request));
  }
  return texts;
}

inline void write_private_jsonl(const std::filesystem::path& path,
                                const std::vector<std::string>& texts) {
  std::string out;
  for (const std::string& t : texts) {
    nlohmann::ordered_json j;
    j["text"] = t;
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

inline void write_donated_jsonl(const std::filesystem::path& path,
                                const maple::MetadataSchema& schema, std::size_t n,
                                std::uint64_t seed) {
  std::vector<std::string> texts = make_corpus(schema, n, seed);
  maple::Rng rng(seed ^ 0x5eedULL);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    for (std::size_t a = 0; a < schema.attribute_count(); ++a) {
      const auto& attr = schema.attribute(a);
      meta[attr.name] = attr.options[rng.uniform_index(attr.options.size())];
    }
    nlohmann::ordered_json j;
    j["text"] = texts[i];
    j["metadata"] = std::move(meta);
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

inline maple::MetadataSchema pipeline_schema() {
  return maple::MetadataSchema({
      {"topic", {"neuroscience", "genomics", "ecology"}},
      {"style", {"formal", "casual"}},
      {"region", {"north", "south"}},
  });
}

// Full fixture: schema.json, private.jsonl, donated.jsonl under dir, plus a
// small fast maple configuration pointing at them.
inline maple::PipelineConfig fixture_config(const TempDir& dir) {
  maple::MetadataSchema schema = pipeline_schema();
  write_file(dir.path / "schema.json", schema.to_json().dump(2));
  write_private_jsonl(dir.path / "private.jsonl", make_corpus(schema, 30, 41));
  write_donated_jsonl(dir.path / "donated.jsonl", schema, 6, 42);

  maple::PipelineConfig config;
  config.run_id = "t";
  config.mode = maple::PipelineMode::kMaple;
  config.private_path = dir.path / "private.jsonl";
  config.donated_path = dir.path / "donated.jsonl";
  config.schema_path = dir.path / "schema.json";
  config.output_dir = dir.path / "run";
  config.budget.epsilon = 2.0;
  config.n_syn = 6;
  config.iterations = 2;
  config.k_incontext = 2;
  config.max_tokens = 64;
  config.seed = 7;
  config.backend.kind = "mock";
  config.backend.mock.seed = 5;
  config.backend.mock.default_words = 24;
  config.backend.embed_dim = 32;
  return config;
}

}  // namespace maple_test
