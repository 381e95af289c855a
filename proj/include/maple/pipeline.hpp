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

// Orchestration: run configuration, JSONL ingestion, privacy budget
// resolution, staged execution (extract -> fit-metadata -> synthesize ->
// evaluate) with content-hash checkpoints, and experiment sweeps.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maple/aim.hpp"
#include "maple/annotator.hpp"
#include "maple/backends.hpp"
#include "maple/error.hpp"
#include "maple/eval.hpp"
#include "maple/hash_embedder.hpp"
#include "maple/http_backend.hpp"
#include "maple/mock_backend.hpp"
#include "maple/pe.hpp"
#include "maple/privacy.hpp"
#include "maple/prompts.hpp"
#include "maple/rng.hpp"
#include "maple/schema.hpp"

namespace maple {

// ---------------------------------------------------------------------------
// Modes

enum class PipelineMode { kAugpe, kAugpeM, kAugpeE, kMaple, kZeroShot, kZeroShotMe };

inline const char* pipeline_mode_name(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::kAugpe: return "augpe";
    case PipelineMode::kAugpeM: return "augpe_m";
    case PipelineMode::kAugpeE: return "augpe_e";
    case PipelineMode::kMaple: return "maple";
    case PipelineMode::kZeroShot: return "zero_shot";
    case PipelineMode::kZeroShotMe: return "zero_shot_me";
  }
  throw InvalidArgument("pipeline_mode_name: unknown mode");
}

inline PipelineMode parse_pipeline_mode(const std::string& name) {
  if (name == "augpe") return PipelineMode::kAugpe;
  if (name == "augpe_m") return PipelineMode::kAugpeM;
  if (name == "augpe_e") return PipelineMode::kAugpeE;
  if (name == "maple") return PipelineMode::kMaple;
  if (name == "zero_shot") return PipelineMode::kZeroShot;
  if (name == "zero_shot_me") return PipelineMode::kZeroShotMe;
  throw ConfigError("unknown mode '" + name +
                    "' (expected augpe, augpe_m, augpe_e, maple, zero_shot, "
                    "or zero_shot_me)");
}

// Modes that fit a private metadata model and condition prompts on it.
inline bool mode_uses_metadata(PipelineMode mode) {
  return mode == PipelineMode::kAugpeM || mode == PipelineMode::kMaple ||
         mode == PipelineMode::kZeroShotMe;
}

// Modes that place donated in-context examples in the prompt.
inline bool mode_uses_examples(PipelineMode mode) {
  return mode == PipelineMode::kAugpeE || mode == PipelineMode::kMaple ||
         mode == PipelineMode::kZeroShotMe;
}

// Modes that divide the budget between the metadata model and the
// refinement loop. All other modes give everything to a single consumer.
inline bool mode_splits_budget(PipelineMode mode) {
  return mode == PipelineMode::kMaple || mode == PipelineMode::kAugpeM;
}

inline bool mode_is_zero_shot(PipelineMode mode) {
  return mode == PipelineMode::kZeroShot || mode == PipelineMode::kZeroShotMe;
}

inline PromptMode prompt_mode_for(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::kAugpe:
    case PipelineMode::kZeroShot:
      return PromptMode::kPlain;
    case PipelineMode::kAugpeM: return PromptMode::kMetadataOnly;
    case PipelineMode::kAugpeE: return PromptMode::kExamplesOnly;
    case PipelineMode::kMaple:
    case PipelineMode::kZeroShotMe:
      return PromptMode::kMaple;
  }
  throw InvalidArgument("prompt_mode_for: unknown mode");
}

// ---------------------------------------------------------------------------
// Detail helpers

namespace pipeline_detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << content;
  if (!out) throw PipelineError("failed while writing " + path.string());
}

inline std::string file_digest(const std::filesystem::path& path) {
  return hex64(fnv1a(read_text_file(path)));
}

// Infinity is representable in the accountant but not in JSON numbers, so
// real-valued fields serialize infinities as the string "inf".
inline nlohmann::ordered_json real_to_json(double v) {
  if (std::isinf(v)) return v > 0.0 ? "inf" : "-inf";
  return v;
}

inline double real_from_json(const nlohmann::json& j, const std::string& what) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ConfigError(what + ": expected a number or \"inf\", got \"" + s + "\"");
  }
  if (!j.is_number()) throw ConfigError(what + ": expected a number or \"inf\"");
  return j.get<double>();
}

inline double real_from_text(const std::string& text, const std::string& what) {
  if (text == "inf" || text == "Infinity") {
    return std::numeric_limits<double>::infinity();
  }
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": expected a number or \"inf\", got \"" + text + "\"");
  }
}

// CSV cell for a real value; finite values use the shortest round-trip form.
inline std::string real_to_text(double v) {
  if (std::isinf(v)) return v > 0.0 ? "inf" : "-inf";
  return nlohmann::json(v).dump();
}

inline std::size_t size_from_text(const std::string& text, const std::string& what) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(what + ": expected a nonnegative integer, got \"" + text + "\"");
  }
  return static_cast<std::size_t>(std::stoull(text));
}

inline std::string now_iso8601() {
  std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return key == k;
        }) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

// Exclusive ownership of a run directory. The lock file is removed on
// destruction; a crash leaves it behind and the next run reports the path.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (f == nullptr) {
      throw PipelineError("run directory is locked by another process (remove " +
                          path_.string() + " if stale)");
    }
    std::fclose(f);
  }

  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

  ~DirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Data ingestion

// Order-preserving JSONL load of {"text": ...} records. Whitespace-only
// lines are skipped; every other malformed line is collected so one error
// reports them all (fail fast, but completely, on private data).
inline std::vector<std::string> ingest_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::string> texts;
  std::vector<std::string> problems;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      problems.push_back("line " + std::to_string(line_no) + ": not valid JSON");
      continue;
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string() ||
        j["text"].get<std::string>().empty()) {
      problems.push_back("line " + std::to_string(line_no) +
                         ": missing nonempty \"text\" field");
      continue;
    }
    texts.push_back(j["text"].get<std::string>());
  }
  if (!problems.empty()) {
    std::string msg = path.string() + ": ";
    for (std::size_t i = 0; i < problems.size(); ++i) {
      if (i > 0) msg += "; ";
      msg += problems[i];
    }
    throw ConfigError(msg);
  }
  return texts;
}

// Donated pairs: {"text": ..., "metadata": {attribute: option, ...}} per
// line. Metadata keys outside the active schema are dropped before
// validation so one donated file serves both full and subset schemas.
inline std::vector<DonatedPair> ingest_donated_jsonl(const std::filesystem::path& path,
                                                     const MetadataSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<DonatedPair> pairs;
  std::vector<std::string> problems;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      problems.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      fail("not valid JSON");
      continue;
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string() ||
        j["text"].get<std::string>().empty()) {
      fail("missing nonempty \"text\" field");
      continue;
    }
    if (!j.contains("metadata") || !j["metadata"].is_object()) {
      fail("missing \"metadata\" object");
      continue;
    }
    std::map<std::string, std::string> raw;
    for (const auto& [key, value] : j["metadata"].items()) {
      if (!schema.attribute_index(key)) continue;
      auto text = annotate_detail::value_as_string(value);
      if (text) raw[key] = *text;
    }
    try {
      DonatedPair pair;
      pair.metadata = validate_record(schema, raw);
      pair.text = j["text"].get<std::string>();
      pairs.push_back(std::move(pair));
    } catch (const ValidationError& e) {
      fail(e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = path.string() + ": ";
    for (std::size_t i = 0; i < problems.size(); ++i) {
      if (i > 0) msg += "; ";
      msg += problems[i];
    }
    throw ConfigError(msg);
  }
  return pairs;
}

inline nlohmann::ordered_json table_to_json(const MetadataTable& table) {
  nlohmann::ordered_json j;
  j["schema"] = table.schema.to_json();
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const MetadataRecord& r : table.rows) {
    rows.push_back(r.values);
  }
  j["rows"] = std::move(rows);
  return j;
}

inline MetadataTable table_from_json(const nlohmann::json& j) {
  MetadataTable table;
  table.schema = MetadataSchema::from_json(j.at("schema"));
  for (const auto& row : j.at("rows")) {
    MetadataRecord record;
    for (const auto& v : row) record.values.push_back(v.get<std::uint32_t>());
    table.append(std::move(record));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Backends

struct BackendSettings {
  std::string kind = "mock";  // "mock" or "http"
  MockParams mock;
  std::size_t embed_dim = 64;
  HttpBackendConfig http;

  void validate() const {
    if (kind != "mock" && kind != "http") {
      throw ConfigError("backend.kind must be \"mock\" or \"http\", got \"" + kind + "\"");
    }
    if (kind == "mock") {
      mock.validate();
      if (embed_dim < 2) throw ConfigError("backend.embed_dim must be >= 2");
    } else {
      HttpBackendConfig resolved = http;
      apply_backend_env(resolved);
      resolved.validate();
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = kind;
    if (kind == "mock") {
      j["p_drift"] = mock.p_drift;
      j["seed"] = mock.seed;
      j["default_words"] = mock.default_words;
      j["embed_dim"] = embed_dim;
    } else {
      j["base_url"] = http.base_url;
      j["model"] = http.model;
      j["completion_path"] = http.completion_path;
      j["embedding_path"] = http.embedding_path;
      j["redact_text"] = http.redact_text;
    }
    return j;
  }

  static BackendSettings from_json(const nlohmann::json& j) {
    BackendSettings s;
    if (!j.is_object()) throw ConfigError("backend: expected an object");
    s.kind = j.value("kind", std::string("mock"));
    if (s.kind == "mock") {
      pipeline_detail::require_keys(
          j, {"kind", "p_drift", "seed", "default_words", "embed_dim"}, "backend");
      s.mock.p_drift = j.value("p_drift", s.mock.p_drift);
      s.mock.seed = j.value("seed", s.mock.seed);
      s.mock.default_words = j.value("default_words", s.mock.default_words);
      s.embed_dim = j.value("embed_dim", s.embed_dim);
    } else {
      pipeline_detail::require_keys(j,
                                    {"kind", "base_url", "model", "completion_path",
                                     "embedding_path", "api_key", "redact_text"},
                                    "backend");
      s.http.base_url = j.value("base_url", std::string());
      s.http.model = j.value("model", std::string());
      s.http.completion_path = j.value("completion_path", s.http.completion_path);
      s.http.embedding_path = j.value("embedding_path", s.http.embedding_path);
      s.http.api_key = j.value("api_key", std::string());
      s.http.redact_text = j.value("redact_text", s.http.redact_text);
    }
    return s;
  }

  // Stable identity used in stage input hashes; environment overrides for
  // the http kind are resolved first so credential-free configs still hash
  // to the endpoint they will actually call.
  nlohmann::ordered_json identity() const {
    if (kind == "mock") return to_json();
    HttpBackendConfig resolved = http;
    apply_backend_env(resolved);
    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["base_url"] = resolved.base_url;
    j["model"] = resolved.model;
    j["completion_path"] = resolved.completion_path;
    j["embedding_path"] = resolved.embedding_path;
    return j;
  }
};

struct BackendBundle {
  std::unique_ptr<CompletionBackend> completion;
  std::unique_ptr<EmbeddingBackend> embedder;
};

// The mock completion backend models the whole world, so it always gets the
// full schema: prompts built from a subset schema condition the subset
// attributes and the background distribution fills in the rest.
inline BackendBundle make_backends(const BackendSettings& settings,
                                   const MetadataSchema& full_schema) {
  settings.validate();
  BackendBundle bundle;
  if (settings.kind == "mock") {
    bundle.completion = std::make_unique<MockCompletionBackend>(full_schema, settings.mock);
    bundle.embedder = std::make_unique<HashEmbedder>(settings.embed_dim);
  } else {
    HttpBackendConfig resolved = settings.http;
    apply_backend_env(resolved);
    bundle.completion = std::make_unique<HttpCompletionBackend>(resolved);
    bundle.embedder = std::make_unique<HttpEmbeddingBackend>(resolved);
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  std::string run_id = "run";
  PipelineMode mode = PipelineMode::kMaple;
  std::filesystem::path private_path;
  std::filesystem::path donated_path;
  std::filesystem::path schema_path;
  std::filesystem::path output_dir;
  std::filesystem::path templates_dir;  // empty: built-in prompt templates
  PrivacyBudget budget{1.0, 0.0};       // delta 0: defaults to 1/|private set|
  std::optional<double> metadata_fraction;  // split modes only; default 0.1
  std::size_t n_syn = 100;
  std::size_t iterations = 0;
  std::size_t variations_per_selected = 1;
  std::size_t k_incontext = 10;
  std::size_t schema_subset = 0;  // 0: full schema; N: first N attributes
  std::size_t max_tokens = 512;
  double temperature = 1.0;
  std::size_t concurrency = 1;
  std::string corpus_description = "a document";
  std::uint64_t seed = 0;
  BackendSettings backend;
  AimParams aim;  // seed and rho_global are overwritten per run
  double max_annotation_failure = 0.2;
  MauveParams mauve;  // seed is overwritten per run

  void validate() const {
    if (run_id.empty()) throw ConfigError("run_id must be nonempty");
    for (char c : run_id) {
      bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '=' || c == '.';
      if (!ok) {
        throw ConfigError("run_id may only contain letters, digits, '-', '_', '=', '.'");
      }
    }
    if (private_path.empty()) throw ConfigError("private_path is required");
    if (schema_path.empty()) throw ConfigError("schema_path is required");
    if (output_dir.empty()) throw ConfigError("output_dir is required");
    if (mode_uses_examples(mode)) {
      if (donated_path.empty()) {
        throw ConfigError(std::string("mode ") + pipeline_mode_name(mode) +
                          " requires donated_path");
      }
      if (k_incontext == 0) {
        throw ConfigError(std::string("mode ") + pipeline_mode_name(mode) +
                          " requires k_incontext >= 1");
      }
    }
    if (std::isnan(budget.epsilon) || !(budget.epsilon > 0.0)) {
      throw ConfigError("epsilon must be positive (\"inf\" allowed)");
    }
    if (std::isnan(budget.delta) || budget.delta < 0.0 || budget.delta >= 1.0) {
      throw ConfigError("delta must lie in [0, 1); 0 means 1/|private set|");
    }
    if (metadata_fraction.has_value()) {
      if (!mode_splits_budget(mode)) {
        throw ConfigError(std::string("metadata_fraction only applies to modes that "
                                      "split the budget (maple, augpe_m); mode is ") +
                          pipeline_mode_name(mode));
      }
      if (!(*metadata_fraction > 0.0) || !(*metadata_fraction < 1.0)) {
        throw ConfigError("metadata_fraction must lie in (0, 1)");
      }
    }
    if (mode_is_zero_shot(mode) && iterations != 0) {
      throw ConfigError(std::string("mode ") + pipeline_mode_name(mode) +
                        " requires iterations = 0");
    }
    if (n_syn < 1) throw ConfigError("n_syn must be >= 1");
    if (variations_per_selected < 1) throw ConfigError("variations_per_selected must be >= 1");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
    if (std::isnan(temperature) || temperature < 0.0) {
      throw ConfigError("temperature must be non-negative");
    }
    if (std::isnan(max_annotation_failure) || max_annotation_failure < 0.0 ||
        max_annotation_failure > 1.0) {
      throw ConfigError("max_annotation_failure must lie in [0, 1]");
    }
    backend.validate();
    mauve.validate();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["mode"] = pipeline_mode_name(mode);
    j["private_path"] = private_path.string();
    if (!donated_path.empty()) j["donated_path"] = donated_path.string();
    j["schema_path"] = schema_path.string();
    j["output_dir"] = output_dir.string();
    if (!templates_dir.empty()) j["templates_dir"] = templates_dir.string();
    j["epsilon"] = pipeline_detail::real_to_json(budget.epsilon);
    j["delta"] = budget.delta;
    if (metadata_fraction.has_value()) j["metadata_fraction"] = *metadata_fraction;
    j["n_syn"] = n_syn;
    j["iterations"] = iterations;
    j["variations_per_selected"] = variations_per_selected;
    j["k_incontext"] = k_incontext;
    j["schema_subset"] = schema_subset;
    j["max_tokens"] = max_tokens;
    j["temperature"] = temperature;
    j["concurrency"] = concurrency;
    j["corpus_description"] = corpus_description;
    j["seed"] = seed;
    j["backend"] = backend.to_json();
    nlohmann::ordered_json aim_j;
    aim_j["initial_rounds"] = aim.initial_rounds;
    aim_j["init_fraction"] = aim.init_fraction;
    aim_j["model_cell_cap"] = aim.model_cell_cap;
    aim_j["anneal_factor"] = aim.anneal_factor;
    aim_j["max_rounds"] = aim.max_rounds;
    j["aim"] = std::move(aim_j);
    nlohmann::ordered_json eval_j;
    eval_j["max_annotation_failure"] = max_annotation_failure;
    eval_j["mauve_k"] = mauve.k_clusters;
    eval_j["mauve_scale_c"] = mauve.scale_c;
    eval_j["mauve_grid"] = mauve.lambda_grid_size;
    j["eval"] = std::move(eval_j);
    return j;
  }

  static PipelineConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    pipeline_detail::require_keys(
        j,
        {"run_id", "mode", "private_path", "donated_path", "schema_path", "output_dir",
         "templates_dir", "epsilon", "delta", "metadata_fraction", "n_syn", "iterations",
         "variations_per_selected", "k_incontext", "schema_subset", "max_tokens",
         "temperature", "concurrency", "corpus_description", "seed", "backend", "aim",
         "eval"},
        "config");
    PipelineConfig c;
    c.run_id = j.value("run_id", c.run_id);
    if (j.contains("mode")) c.mode = parse_pipeline_mode(j.at("mode").get<std::string>());
    c.private_path = j.value("private_path", std::string());
    c.donated_path = j.value("donated_path", std::string());
    c.schema_path = j.value("schema_path", std::string());
    c.output_dir = j.value("output_dir", std::string());
    c.templates_dir = j.value("templates_dir", std::string());
    if (j.contains("epsilon")) {
      c.budget.epsilon = pipeline_detail::real_from_json(j.at("epsilon"), "epsilon");
    }
    c.budget.delta = j.value("delta", 0.0);
    if (j.contains("metadata_fraction")) {
      c.metadata_fraction = j.at("metadata_fraction").get<double>();
    }
    c.n_syn = j.value("n_syn", c.n_syn);
    c.iterations = j.value("iterations", c.iterations);
    c.variations_per_selected = j.value("variations_per_selected", c.variations_per_selected);
    c.k_incontext = j.value("k_incontext", c.k_incontext);
    c.schema_subset = j.value("schema_subset", c.schema_subset);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.temperature = j.value("temperature", c.temperature);
    c.concurrency = j.value("concurrency", c.concurrency);
    c.corpus_description = j.value("corpus_description", c.corpus_description);
    c.seed = j.value("seed", c.seed);
    if (j.contains("backend")) c.backend = BackendSettings::from_json(j.at("backend"));
    if (j.contains("aim")) {
      const nlohmann::json& a = j.at("aim");
      pipeline_detail::require_keys(a,
                                    {"initial_rounds", "init_fraction", "model_cell_cap",
                                     "anneal_factor", "max_rounds"},
                                    "aim");
      c.aim.initial_rounds = a.value("initial_rounds", c.aim.initial_rounds);
      c.aim.init_fraction = a.value("init_fraction", c.aim.init_fraction);
      c.aim.model_cell_cap = a.value("model_cell_cap", c.aim.model_cell_cap);
      c.aim.anneal_factor = a.value("anneal_factor", c.aim.anneal_factor);
      c.aim.max_rounds = a.value("max_rounds", c.aim.max_rounds);
    }
    if (j.contains("eval")) {
      const nlohmann::json& e = j.at("eval");
      pipeline_detail::require_keys(
          e, {"max_annotation_failure", "mauve_k", "mauve_scale_c", "mauve_grid"}, "eval");
      c.max_annotation_failure = e.value("max_annotation_failure", c.max_annotation_failure);
      c.mauve.k_clusters = e.value("mauve_k", c.mauve.k_clusters);
      c.mauve.scale_c = e.value("mauve_scale_c", c.mauve.scale_c);
      c.mauve.lambda_grid_size = e.value("mauve_grid", c.mauve.lambda_grid_size);
    }
    return c;
  }

  static PipelineConfig load(const std::filesystem::path& path) {
    std::string text = pipeline_detail::read_text_file(path);
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
    return from_json(j);
  }
};

// ---------------------------------------------------------------------------
// Budget resolution

struct BudgetResolution {
  double delta = 0.0;
  double rho_total = 0.0;
  double rho_meta = 0.0;
  double rho_pe = 0.0;
};

// Allocation per mode: split modes divide rho_total between the metadata
// model and the refinement loop (metadata_fraction : rest, default 0.1);
// augpe and augpe_e give everything to the loop; zero_shot spends nothing;
// zero_shot_me gives everything to the metadata model. Split modes with
// iterations = 0 would allocate loop budget with no pass to spend it, which
// is rejected before any backend is constructed.
inline BudgetResolution resolve_budget(const PipelineConfig& config, std::size_t n_private) {
  if (n_private == 0) throw ConfigError("private corpus is empty");
  BudgetResolution r;
  r.delta = config.budget.delta > 0.0 ? config.budget.delta
                                      : 1.0 / static_cast<double>(n_private);
  if (!(r.delta > 0.0) || !(r.delta < 1.0)) {
    throw ConfigError("resolved delta must lie in (0, 1); private set of size " +
                      std::to_string(n_private) + " is too small for the default");
  }
  r.rho_total = calibrate_rho(config.budget.epsilon, r.delta);
  switch (config.mode) {
    case PipelineMode::kAugpe:
    case PipelineMode::kAugpeE:
      r.rho_pe = config.iterations >= 1 ? r.rho_total : 0.0;
      break;
    case PipelineMode::kZeroShot:
      break;
    case PipelineMode::kZeroShotMe:
      r.rho_meta = r.rho_total;
      break;
    case PipelineMode::kMaple:
    case PipelineMode::kAugpeM: {
      if (config.iterations == 0) {
        throw ConfigError(std::string("mode ") + pipeline_mode_name(config.mode) +
                          " allocates refinement budget but iterations is 0; use "
                          "zero_shot or zero_shot_me for the 0-shot arms");
      }
      double f = config.metadata_fraction.value_or(0.1);
      auto [meta, pe] = split_budget(r.rho_total, f, 1.0 - f);
      r.rho_meta = meta;
      r.rho_pe = pe;
      break;
    }
  }
  if (config.iterations >= 1 && !(r.rho_pe > 0.0)) {
    throw ConfigError("epsilon " + pipeline_detail::real_to_text(config.budget.epsilon) +
                      " calibrates to zero refinement budget for " +
                      std::to_string(config.iterations) + " iterations");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stages and checkpoints

enum class Stage { kExtract = 0, kFitMetadata = 1, kSynthesize = 2, kEvaluate = 3 };

inline const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::kExtract: return "extract";
    case Stage::kFitMetadata: return "fit-metadata";
    case Stage::kSynthesize: return "synthesize";
    case Stage::kEvaluate: return "evaluate";
  }
  throw InvalidArgument("stage_name: unknown stage");
}

inline Stage parse_stage(const std::string& name) {
  if (name == "extract") return Stage::kExtract;
  if (name == "fit-metadata") return Stage::kFitMetadata;
  if (name == "synthesize") return Stage::kSynthesize;
  if (name == "evaluate") return Stage::kEvaluate;
  throw ConfigError("unknown stage '" + name + "'");
}

inline std::vector<Stage> stages_for(PipelineMode mode) {
  if (mode_uses_metadata(mode)) {
    return {Stage::kExtract, Stage::kFitMetadata, Stage::kSynthesize, Stage::kEvaluate};
  }
  return {Stage::kSynthesize, Stage::kEvaluate};
}

// One completed stage: what it saw, what it wrote, what it spent.
struct Checkpoint {
  std::string stage;
  std::string input_hash;
  std::vector<std::string> outputs;  // run-directory-relative paths
  std::vector<SpendLedger::Entry> entries;
  std::string completed_at;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["input_hash"] = input_hash;
    j["outputs"] = outputs;
    nlohmann::ordered_json spends = nlohmann::ordered_json::array();
    for (const SpendLedger::Entry& e : entries) {
      nlohmann::ordered_json s;
      s["label"] = e.label;
      s["rho"] = pipeline_detail::real_to_json(e.rho);
      spends.push_back(std::move(s));
    }
    j["entries"] = std::move(spends);
    j["completed_at"] = completed_at;
    return j;
  }

  static Checkpoint from_json(const nlohmann::json& j) {
    Checkpoint c;
    c.stage = j.at("stage").get<std::string>();
    c.input_hash = j.at("input_hash").get<std::string>();
    for (const auto& o : j.at("outputs")) c.outputs.push_back(o.get<std::string>());
    for (const auto& s : j.at("entries")) {
      c.entries.push_back(SpendLedger::Entry{
          s.at("label").get<std::string>(),
          pipeline_detail::real_from_json(s.at("rho"), "ledger entry rho")});
    }
    c.completed_at = j.value("completed_at", std::string());
    return c;
  }
};

struct RunManifest {
  std::map<std::string, Checkpoint> stages;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [name, checkpoint] : stages) s[name] = checkpoint.to_json();
    j["stages"] = std::move(s);
    return j;
  }

  static RunManifest load_or_empty(const std::filesystem::path& path) {
    RunManifest m;
    if (!std::filesystem::exists(path)) return m;
    nlohmann::json j =
        nlohmann::json::parse(pipeline_detail::read_text_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("stages")) {
      throw PipelineError(path.string() + ": corrupt manifest (delete it to restart)");
    }
    for (const auto& [name, checkpoint] : j.at("stages").items()) {
      m.stages[name] = Checkpoint::from_json(checkpoint);
    }
    return m;
  }

  void save(const std::filesystem::path& path) const {
    pipeline_detail::write_text_file(path, to_json().dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineOutcome {
  std::filesystem::path run_dir;
  BudgetResolution budget;
  std::vector<SpendLedger::Entry> entries;  // completed stages, stage order
  double rho_spent = 0.0;
  std::optional<EvalReport> report;         // present when evaluate completed
  std::filesystem::path metrics_csv;        // nonempty when evaluate completed
};

namespace pipeline_detail {

inline void write_jsonl_texts(const std::filesystem::path& path,
                              const std::vector<std::string>& texts) {
  std::string out;
  for (const std::string& t : texts) {
    nlohmann::ordered_json j;
    j["text"] = t;
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

inline nlohmann::ordered_json entries_to_json(const std::vector<SpendLedger::Entry>& entries) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const SpendLedger::Entry& e : entries) {
    nlohmann::ordered_json j;
    j["label"] = e.label;
    j["rho"] = real_to_json(e.rho);
    arr.push_back(std::move(j));
  }
  return arr;
}

struct StageContext {
  const PipelineConfig& config;
  const BudgetResolution& budget;
  const std::filesystem::path& dir;
  const MetadataSchema& full_schema;
  const MetadataSchema& active_schema;
  const std::vector<std::string>& private_texts;
  BackendBundle& backends;
  SpendLedger& ledger;
  RunManifest& manifest;
};

inline AnnotateOptions annotate_options_for(const PipelineConfig& config) {
  AnnotateOptions options;
  options.max_tokens = config.max_tokens;
  options.concurrency = config.concurrency;
  options.description = config.corpus_description;
  return options;
}

// Annotates texts and enforces the representativeness ceiling shared with
// the evaluation contract.
inline MetadataTable annotate_with_ceiling(const std::vector<std::string>& texts,
                                           CompletionBackend& backend,
                                           const MetadataSchema& schema,
                                           const PipelineConfig& config,
                                           const std::string& which) {
  AnnotationRun run =
      annotate_corpus(texts, backend, schema, annotate_options_for(config));
  double rate =
      static_cast<double>(run.failure_count()) / static_cast<double>(texts.size());
  if (rate > config.max_annotation_failure) {
    std::ostringstream msg;
    msg << which << ": annotation failure rate " << rate << " exceeds ceiling "
        << config.max_annotation_failure << " (" << run.failure_count() << " of "
        << texts.size() << " texts)";
    throw EvalError(msg.str());
  }
  return std::move(run.table);
}

inline std::string hash_of(const nlohmann::ordered_json& j) {
  return hex64(fnv1a(j.dump()));
}

inline nlohmann::ordered_json pe_identity(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["n_syn"] = c.n_syn;
  j["iterations"] = c.iterations;
  j["variations_per_selected"] = c.variations_per_selected;
  j["max_tokens"] = c.max_tokens;
  j["temperature"] = c.temperature;
  return j;
}

inline nlohmann::ordered_json templates_identity(const PipelineConfig& c) {
  if (c.templates_dir.empty()) return "builtin";
  nlohmann::ordered_json j;
  j["random"] = file_digest(c.templates_dir / "random_prompt.tmpl");
  j["variation"] = file_digest(c.templates_dir / "variation_prompt.tmpl");
  return j;
}

inline std::string stage_input_hash(Stage stage, const StageContext& ctx) {
  const PipelineConfig& c = ctx.config;
  nlohmann::ordered_json j;
  j["stage"] = stage_name(stage);
  j["schema"] = ctx.active_schema.to_json();
  switch (stage) {
    case Stage::kExtract: {
      j["private"] = file_digest(c.private_path);
      j["backend"] = c.backend.identity();
      j["max_tokens"] = c.max_tokens;
      j["description"] = c.corpus_description;
      j["ceiling"] = c.max_annotation_failure;
      break;
    }
    case Stage::kFitMetadata: {
      j["table"] = file_digest(ctx.dir / "extract" / "table.json");
      j["rho_meta"] = real_to_json(ctx.budget.rho_meta);
      j["rho_total"] = real_to_json(ctx.budget.rho_total);
      j["n_syn"] = c.n_syn;
      j["seed"] = c.seed;
      nlohmann::ordered_json aim_j;
      aim_j["initial_rounds"] = c.aim.initial_rounds;
      aim_j["init_fraction"] = c.aim.init_fraction;
      aim_j["model_cell_cap"] = c.aim.model_cell_cap;
      aim_j["anneal_factor"] = c.aim.anneal_factor;
      aim_j["max_rounds"] = c.aim.max_rounds;
      j["aim"] = std::move(aim_j);
      break;
    }
    case Stage::kSynthesize: {
      j["mode"] = pipeline_mode_name(c.mode);
      if (mode_uses_metadata(c.mode)) {
        j["metadata"] = file_digest(ctx.dir / "fit-metadata" / "synthetic_metadata.json");
      }
      if (mode_uses_examples(c.mode)) {
        j["donated"] = file_digest(c.donated_path);
        j["k_incontext"] = c.k_incontext;
      }
      j["private"] = file_digest(c.private_path);
      j["backend"] = c.backend.identity();
      j["templates"] = templates_identity(c);
      j["pe"] = pe_identity(c);
      j["rho_pe"] = real_to_json(ctx.budget.rho_pe);
      j["rho_total"] = real_to_json(ctx.budget.rho_total);
      j["seed"] = c.seed;
      break;
    }
    case Stage::kEvaluate: {
      j["schema"] = ctx.full_schema.to_json();  // evaluation always full width
      j["mode"] = pipeline_mode_name(c.mode);
      j["run_id"] = c.run_id;
      j["epsilon"] = real_to_json(c.budget.epsilon);
      j["private"] = file_digest(c.private_path);
      auto synth = ctx.manifest.stages.find(stage_name(Stage::kSynthesize));
      if (synth == ctx.manifest.stages.end()) {
        throw PipelineError("evaluate: synthesize checkpoint is missing");
      }
      nlohmann::ordered_json outputs = nlohmann::ordered_json::array();
      for (const std::string& rel : synth->second.outputs) {
        outputs.push_back(file_digest(ctx.dir / rel));
      }
      j["synthesize"] = std::move(outputs);
      // Upstream spends feed the rho_spent column.
      nlohmann::ordered_json spends = nlohmann::ordered_json::array();
      for (Stage upstream :
           {Stage::kExtract, Stage::kFitMetadata, Stage::kSynthesize}) {
        auto it = ctx.manifest.stages.find(stage_name(upstream));
        if (it != ctx.manifest.stages.end()) {
          spends.push_back(entries_to_json(it->second.entries));
        }
      }
      j["spends"] = std::move(spends);
      if (mode_uses_metadata(c.mode) && c.schema_subset == 0) {
        j["table"] = file_digest(ctx.dir / "extract" / "table.json");
      }
      j["backend"] = c.backend.identity();
      nlohmann::ordered_json eval_j;
      eval_j["ceiling"] = c.max_annotation_failure;
      eval_j["mauve_k"] = c.mauve.k_clusters;
      eval_j["mauve_scale_c"] = c.mauve.scale_c;
      eval_j["mauve_grid"] = c.mauve.lambda_grid_size;
      eval_j["seed"] = c.seed;
      j["eval"] = std::move(eval_j);
      break;
    }
  }
  return hash_of(j);
}

inline Checkpoint run_extract_stage(StageContext& ctx) {
  MetadataTable table = annotate_with_ceiling(ctx.private_texts, *ctx.backends.completion,
                                              ctx.active_schema, ctx.config, "extract");
  if (table.size() == 0) throw PipelineError("extract: no text could be annotated");
  nlohmann::ordered_json j = table_to_json(table);
  j["annotated"] = ctx.private_texts.size();
  j["failures"] = ctx.private_texts.size() - table.size();
  write_text_file(ctx.dir / "extract" / "table.json", j.dump(2) + "\n");
  Checkpoint cp;
  cp.stage = stage_name(Stage::kExtract);
  cp.outputs = {"extract/table.json"};
  return cp;
}

inline Checkpoint run_fit_stage(StageContext& ctx) {
  MetadataTable table = table_from_json(nlohmann::json::parse(
      read_text_file(ctx.dir / "extract" / "table.json")));
  AimParams params = ctx.config.aim;
  params.seed = mix64(ctx.config.seed ^ mix64(11));
  params.rho_global = ctx.budget.rho_total;
  LogLinearModel model = run_aim(table, default_workload(table.schema),
                                 ctx.budget.rho_meta, params, &ctx.ledger);
  MetadataTable synthetic =
      sample_synthetic(model, ctx.config.n_syn, mix64(ctx.config.seed ^ mix64(12)));
  write_text_file(ctx.dir / "fit-metadata" / "synthetic_metadata.json",
                  table_to_json(synthetic).dump(2) + "\n");
  Checkpoint cp;
  cp.stage = stage_name(Stage::kFitMetadata);
  cp.outputs = {"fit-metadata/synthetic_metadata.json"};
  return cp;
}

inline Checkpoint run_synthesize_stage(StageContext& ctx) {
  const PipelineConfig& c = ctx.config;

  std::vector<DonatedPair> donated;
  if (mode_uses_examples(c.mode)) {
    donated = ingest_donated_jsonl(c.donated_path, ctx.active_schema);
    if (donated.empty()) throw ConfigError(c.donated_path.string() + ": no donated pairs");
  }
  PromptPlan plan = make_prompt_plan(prompt_mode_for(c.mode), std::move(donated),
                                     c.k_incontext, mix64(c.seed ^ mix64(13)),
                                     ctx.active_schema);

  MetadataTable synthetic_metadata;
  if (mode_uses_metadata(c.mode)) {
    synthetic_metadata = table_from_json(nlohmann::json::parse(
        read_text_file(ctx.dir / "fit-metadata" / "synthetic_metadata.json")));
    if (synthetic_metadata.size() < c.n_syn) {
      throw PipelineError("synthesize: synthetic metadata has fewer rows than n_syn");
    }
  }

  PromptTemplates templates = c.templates_dir.empty()
                                  ? PromptTemplates::builtin()
                                  : PromptTemplates::load_dir(c.templates_dir);
  PromptSource source = [&](std::size_t i) {
    const MetadataRecord* record =
        mode_uses_metadata(c.mode) ? &synthetic_metadata.rows[i] : nullptr;
    return build_random_prompt(templates, plan, ctx.active_schema, record);
  };

  PeParams params;
  params.n_syn = c.n_syn;
  params.iterations = c.iterations;
  params.variations_per_selected = c.variations_per_selected;
  params.rho_pe = ctx.budget.rho_pe;
  params.rho_global = ctx.budget.rho_total;
  params.seed = mix64(c.seed ^ mix64(14));
  params.max_tokens = c.max_tokens;
  params.temperature = c.temperature;
  params.concurrency = c.concurrency;

  PeBackends backends{*ctx.backends.completion, *ctx.backends.embedder, templates};
  CandidatePool init = random_init(c.n_syn, source, backends, params);

  Checkpoint cp;
  cp.stage = stage_name(Stage::kSynthesize);
  write_jsonl_texts(ctx.dir / "synthesize" / "iter_0.jsonl", init.texts);
  cp.outputs.push_back("synthesize/iter_0.jsonl");

  nlohmann::ordered_json prompts;
  prompts["mode"] = pipeline_mode_name(c.mode);
  nlohmann::ordered_json random_prompts = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(10, c.n_syn); ++i) {
    random_prompts.push_back(source(i));
  }
  prompts["random"] = std::move(random_prompts);
  nlohmann::ordered_json variation_prompts = nlohmann::ordered_json::array();
  if (c.iterations >= 1) {
    variation_prompts.push_back(build_variation_prompt(templates, init.texts.front()));
  }
  prompts["variation"] = std::move(variation_prompts);
  write_text_file(ctx.dir / "synthesize" / "prompts_sample.json", prompts.dump(2) + "\n");

  PeObserver observer = [&](const PeIterationInfo& info) {
    std::string rel =
        "synthesize/iter_" + std::to_string(info.iteration) + ".jsonl";
    write_jsonl_texts(ctx.dir / rel, info.selected.texts);
    cp.outputs.push_back(rel);
  };
  PeResult result =
      run_pe(ctx.private_texts, init, params, backends, &ctx.ledger, observer);

  write_jsonl_texts(ctx.dir / "synthesize" / "final.jsonl", result.pool.texts);
  cp.outputs.push_back("synthesize/final.jsonl");
  cp.outputs.push_back("synthesize/prompts_sample.json");
  return cp;
}

inline Checkpoint run_evaluate_stage(StageContext& ctx) {
  const PipelineConfig& c = ctx.config;

  // Private side: reuse the extract table only when it was built on the
  // full schema; evaluation always measures the full metadata width.
  MetadataTable private_table;
  if (mode_uses_metadata(c.mode) && c.schema_subset == 0) {
    nlohmann::json j =
        nlohmann::json::parse(read_text_file(ctx.dir / "extract" / "table.json"));
    private_table = table_from_json(j);
  } else {
    private_table = annotate_with_ceiling(ctx.private_texts, *ctx.backends.completion,
                                          ctx.full_schema, c, "evaluate/private");
  }
  std::vector<std::vector<double>> private_embeddings =
      ctx.backends.embedder->embed(ctx.private_texts);

  MauveParams mauve = c.mauve;
  mauve.seed = mix64(c.seed ^ mix64(15));

  // Cumulative spend per iteration: everything before the refinement loop,
  // plus its histogram entries up to and including the row's pass.
  std::vector<double> pre_loop;
  std::vector<std::pair<std::size_t, double>> loop_entries;
  for (Stage upstream : {Stage::kExtract, Stage::kFitMetadata, Stage::kSynthesize}) {
    auto it = ctx.manifest.stages.find(stage_name(upstream));
    if (it == ctx.manifest.stages.end()) continue;
    for (const SpendLedger::Entry& e : it->second.entries) {
      const std::string prefix = "pe/histogram/iter";
      if (e.label.rfind(prefix, 0) == 0) {
        loop_entries.emplace_back(size_from_text(e.label.substr(prefix.size()),
                                                 "ledger label iteration"),
                                  e.rho);
      } else {
        pre_loop.push_back(e.rho);
      }
    }
  }
  auto rho_through = [&](std::size_t iteration) {
    std::vector<double> charges = pre_loop;
    for (const auto& [iter, rho] : loop_entries) {
      if (iter <= iteration) charges.push_back(rho);
    }
    return compose(charges);
  };

  std::string csv = "run_id,mode,epsilon,iteration,avg_jsd,mauve_lite,rho_spent\n";
  EvalReport last;
  std::size_t final_count = 0;
  for (std::size_t t = 0;; ++t) {
    std::filesystem::path iter_path =
        ctx.dir / "synthesize" / ("iter_" + std::to_string(t) + ".jsonl");
    if (!std::filesystem::exists(iter_path)) break;
    std::vector<std::string> texts = ingest_jsonl(iter_path);
    if (texts.empty()) throw PipelineError(iter_path.string() + ": no texts");
    MetadataTable syn_table =
        annotate_with_ceiling(texts, *ctx.backends.completion, ctx.full_schema, c,
                              "evaluate/iteration " + std::to_string(t));
    EvalReport report = metadata_jsd(syn_table, private_table, ctx.full_schema);
    report.mauve_lite =
        mauve_lite(ctx.backends.embedder->embed(texts), private_embeddings, mauve);
    report.sample_sizes = {texts.size(), ctx.private_texts.size()};
    csv += c.run_id;
    csv += ',';
    csv += pipeline_mode_name(c.mode);
    csv += ',';
    csv += real_to_text(c.budget.epsilon);
    csv += ',';
    csv += std::to_string(t);
    csv += ',';
    csv += real_to_text(report.avg_jsd);
    csv += ',';
    csv += real_to_text(report.mauve_lite);
    csv += ',';
    csv += real_to_text(rho_through(t));
    csv += '\n';
    last = std::move(report);
    final_count = texts.size();
  }
  if (final_count == 0) throw PipelineError("evaluate: no iteration outputs found");

  write_text_file(ctx.dir / "evaluate" / "report.json", last.to_json().dump(2) + "\n");
  write_text_file(ctx.dir / "evaluate" / "metrics.csv", csv);
  Checkpoint cp;
  cp.stage = stage_name(Stage::kEvaluate);
  cp.outputs = {"evaluate/report.json", "evaluate/metrics.csv"};
  return cp;
}

}  // namespace pipeline_detail

// Runs all stages of the configured mode up to and including `through`.
// Completed stages checkpoint their inputs by content hash; a stage re-runs
// only when its hash changed or its outputs are missing, so an interrupted
// run resumes where it stopped and reproduces byte-identical outputs.
inline PipelineOutcome run_pipeline(const PipelineConfig& config,
                                    Stage through = Stage::kEvaluate) {
  config.validate();

  std::vector<Stage> stages = stages_for(config.mode);
  if (std::find(stages.begin(), stages.end(), through) == stages.end()) {
    throw ConfigError(std::string("stage '") + stage_name(through) +
                      "' does not apply to mode " + pipeline_mode_name(config.mode));
  }

  if (!std::filesystem::exists(config.schema_path)) {
    throw ConfigError("schema file not found: " + config.schema_path.string());
  }
  nlohmann::json schema_json = nlohmann::json::parse(
      pipeline_detail::read_text_file(config.schema_path), nullptr, false);
  if (schema_json.is_discarded()) {
    throw ConfigError(config.schema_path.string() + ": not valid JSON");
  }
  MetadataSchema full_schema = MetadataSchema::from_json(schema_json);
  if (config.schema_subset > full_schema.attribute_count()) {
    throw ConfigError("schema_subset " + std::to_string(config.schema_subset) +
                      " exceeds the schema's " +
                      std::to_string(full_schema.attribute_count()) + " attributes");
  }
  MetadataSchema active_schema = full_schema;
  if (config.schema_subset > 0 && config.schema_subset < full_schema.attribute_count()) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < config.schema_subset; ++i) {
      names.push_back(full_schema.attribute(i).name);
    }
    active_schema = full_schema.subset(names);
  }

  std::vector<std::string> private_texts = ingest_jsonl(config.private_path);
  if (private_texts.empty()) {
    throw ConfigError("private corpus is empty: " + config.private_path.string());
  }
  BudgetResolution budget = resolve_budget(config, private_texts.size());

  std::filesystem::create_directories(config.output_dir);
  pipeline_detail::DirLock lock(config.output_dir);
  pipeline_detail::write_text_file(config.output_dir / "config.json",
                                   config.to_json().dump(2) + "\n");
  RunManifest manifest = RunManifest::load_or_empty(config.output_dir / "manifest.json");

  BackendBundle backends = make_backends(config.backend, full_schema);
  SpendLedger ledger;
  pipeline_detail::StageContext ctx{config,        budget,  config.output_dir,
                                    full_schema,   active_schema, private_texts,
                                    backends,      ledger,  manifest};

  PipelineOutcome outcome;
  outcome.run_dir = config.output_dir;
  outcome.budget = budget;

  for (Stage stage : stages) {
    if (static_cast<int>(stage) > static_cast<int>(through)) break;
    const std::string name = stage_name(stage);
    const std::string hash = pipeline_detail::stage_input_hash(stage, ctx);

    auto it = manifest.stages.find(name);
    bool reuse = it != manifest.stages.end() && it->second.input_hash == hash;
    if (reuse) {
      for (const std::string& rel : it->second.outputs) {
        if (!std::filesystem::exists(config.output_dir / rel)) {
          reuse = false;
          break;
        }
      }
    }
    if (!reuse) {
      std::size_t before = ledger.size();
      Checkpoint cp;
      switch (stage) {
        case Stage::kExtract: cp = pipeline_detail::run_extract_stage(ctx); break;
        case Stage::kFitMetadata: cp = pipeline_detail::run_fit_stage(ctx); break;
        case Stage::kSynthesize: cp = pipeline_detail::run_synthesize_stage(ctx); break;
        case Stage::kEvaluate: cp = pipeline_detail::run_evaluate_stage(ctx); break;
      }
      cp.input_hash = hash;
      cp.completed_at = pipeline_detail::now_iso8601();
      std::vector<SpendLedger::Entry> all = ledger.entries();
      cp.entries.assign(all.begin() + static_cast<long>(before), all.end());
      manifest.stages[name] = std::move(cp);
      manifest.save(config.output_dir / "manifest.json");
    } else {
      // Replay the stage's recorded spends so downstream grants see them.
      for (const SpendLedger::Entry& e : it->second.entries) {
        ledger.append(e.label, e.rho);
      }
    }
    pipeline_detail::write_text_file(
        config.output_dir / "ledger.json",
        pipeline_detail::entries_to_json(ledger.entries()).dump(2) + "\n");
  }

  outcome.entries = ledger.entries();
  outcome.rho_spent = ledger.total();
  if (outcome.rho_spent > budget.rho_total) {
    throw PipelineError("ledger total exceeds the granted budget");
  }
  auto eval_it = manifest.stages.find(stage_name(Stage::kEvaluate));
  if (eval_it != manifest.stages.end() &&
      static_cast<int>(through) >= static_cast<int>(Stage::kEvaluate)) {
    nlohmann::json report_json = nlohmann::json::parse(pipeline_detail::read_text_file(
        config.output_dir / "evaluate" / "report.json"));
    outcome.report = EvalReport::from_json(report_json);
    outcome.metrics_csv = config.output_dir / "evaluate" / "metrics.csv";
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { kEpsilon, kIterations, kMode, kSchemaSubset };

inline const char* sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kEpsilon: return "epsilon";
    case SweepAxis::kIterations: return "iterations";
    case SweepAxis::kMode: return "mode";
    case SweepAxis::kSchemaSubset: return "schema_subset";
  }
  throw InvalidArgument("sweep_axis_name: unknown axis");
}

inline SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "epsilon") return SweepAxis::kEpsilon;
  if (name == "iterations") return SweepAxis::kIterations;
  if (name == "mode") return SweepAxis::kMode;
  if (name == "schema_subset") return SweepAxis::kSchemaSubset;
  throw ConfigError("unknown sweep axis '" + name +
                    "' (expected epsilon, iterations, mode, or schema_subset)");
}

inline PipelineConfig apply_axis_value(PipelineConfig config, SweepAxis axis,
                                       const std::string& value) {
  switch (axis) {
    case SweepAxis::kEpsilon:
      config.budget.epsilon = pipeline_detail::real_from_text(value, "epsilon");
      break;
    case SweepAxis::kIterations:
      config.iterations = pipeline_detail::size_from_text(value, "iterations");
      break;
    case SweepAxis::kMode:
      config.mode = parse_pipeline_mode(value);
      break;
    case SweepAxis::kSchemaSubset:
      config.schema_subset = pipeline_detail::size_from_text(value, "schema_subset");
      break;
  }
  return config;
}

struct SweepMember {
  std::string value;
  std::filesystem::path run_dir;
  bool completed = false;
};

struct SweepOutcome {
  std::vector<SweepMember> members;
  std::filesystem::path merged_csv;
};

// One run per axis value under <output_dir>/<axis>=<value>, all sharing the
// base seed. Member metrics are merged into sweep_metrics.csv after every
// member, so a failing member aborts the sweep (its error propagates) with
// every completed member already recorded.
inline SweepOutcome run_sweep(const PipelineConfig& base, SweepAxis axis,
                              const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("run_sweep: no axis values");
  for (const std::string& v : values) {
    if (v.empty() || v.find_first_of(",/ \t\n") != std::string::npos) {
      throw ConfigError("run_sweep: axis value '" + v + "' is not directory- and CSV-safe");
    }
  }
  const std::string axis_name = sweep_axis_name(axis);
  std::filesystem::create_directories(base.output_dir);

  SweepOutcome outcome;
  outcome.merged_csv = base.output_dir / "sweep_metrics.csv";
  std::string merged =
      "axis,value,run_id,mode,epsilon,iteration,avg_jsd,mauve_lite,rho_spent\n";
  pipeline_detail::write_text_file(outcome.merged_csv, merged);

  for (const std::string& value : values) {
    PipelineConfig member = apply_axis_value(base, axis, value);
    member.output_dir = base.output_dir / (axis_name + "=" + value);
    member.run_id = base.run_id + "-" + axis_name + "=" + value;
    outcome.members.push_back(SweepMember{value, member.output_dir, false});

    PipelineOutcome run = run_pipeline(member, Stage::kEvaluate);
    outcome.members.back().completed = true;

    std::string csv = pipeline_detail::read_text_file(run.metrics_csv);
    std::istringstream lines(csv);
    std::string line;
    bool header = true;
    while (std::getline(lines, line)) {
      if (header) {
        header = false;
        continue;
      }
      if (line.empty()) continue;
      merged += axis_name;
      merged += ',';
      merged += value;
      merged += ',';
      merged += line;
      merged += '\n';
    }
    pipeline_detail::write_text_file(outcome.merged_csv, merged);
  }
  return outcome;
}

}  // namespace maple
