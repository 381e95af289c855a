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

// Metadata annotation: closed-vocabulary extraction prompts, a forgiving
// response parser (fence stripping, first balanced JSON object, exact
// validation, case/whitespace repair, "Other" fallback), and an
// order-preserving concurrent corpus annotator.

#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maple/backends.hpp"
#include "maple/error.hpp"
#include "maple/markers.hpp"
#include "maple/schema.hpp"

namespace maple {

inline constexpr std::string_view kOtherOption = "Other";

enum class AnnotationStatus { kOk, kRepaired, kFailed };

struct AnnotationResult {
  std::optional<MetadataRecord> record;
  std::string raw_response;
  AnnotationStatus status = AnnotationStatus::kFailed;
  std::string failure_reason;
  std::vector<std::string> repairs;
};

// Extraction prompt over a closed vocabulary. The schema block lists each
// attribute as "<Opt1|Opt2|...>" so the model must copy one option verbatim.
inline std::string build_extraction_prompt(const MetadataSchema& schema,
                                           const std::string& text,
                                           const std::string& description = "a document") {
  nlohmann::ordered_json schema_block;
  for (const AttributeDomain& attr : schema.attributes()) {
    std::string spec = "<";
    for (std::size_t i = 0; i < attr.options.size(); ++i) {
      if (i > 0) spec += "|";
      spec += attr.options[i];
    }
    spec += ">";
    schema_block[attr.name] = spec;
  }

  std::string prompt;
  prompt +=
      "You are an expert information extraction assistant. Your task is to "
      "carefully read " +
      description +
      " and extract the specified features according to the schema provided.\n\n";
  prompt += "Output exactly one JSON object with no extra text or explanations.\n\n";
  prompt += "**";
  prompt += kExtractionMarker;
  prompt +=
      ":** For any field in the schema that lists specific options (written as "
      "\"<Option1|Option2|...>\"), you MUST select one of the provided options "
      "exactly as it is written. Do not invent, alter, or combine options. "
      "Failure to use an exact option from the list will be considered an "
      "error.\n\n";
  prompt +=
      "**CRITICAL INSTRUCTION 2:** Ensure the value chosen for a field is "
      "appropriate for that field's specific definition. Do not use an option "
      "from one field as the value for another field.\n\n";
  prompt += "Use this schema:\n```json\n";
  prompt += schema_block.dump(2);
  prompt += "\n```\n\n";
  prompt += kExtractionTextHeader;
  prompt += "\n\n";
  prompt += text;
  prompt += "\n\n";
  prompt += kExtractionOutputHeader;
  prompt += "\n";
  return prompt;
}

namespace annotate_detail {

inline std::string trim(std::string_view s) {
  std::size_t begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return "";
  std::size_t end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// If the response carries a ``` fence, returns the fenced body (language tag
// on the opening line dropped); otherwise returns the input unchanged.
inline std::string strip_code_fences(const std::string& response) {
  std::size_t open = response.find("```");
  if (open == std::string::npos) return response;
  std::size_t body = response.find('\n', open);
  if (body == std::string::npos) return response;
  ++body;
  std::size_t close = response.find("```", body);
  if (close == std::string::npos) return response.substr(body);
  return response.substr(body, close - body);
}

// First balanced {...} span that parses as JSON. Brace depth is tracked
// outside string literals so option text cannot derail the scan.
inline std::optional<nlohmann::json> first_json_object(const std::string& text) {
  std::size_t start = 0;
  while ((start = text.find('{', start)) != std::string::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          nlohmann::json parsed = nlohmann::json::parse(
              text.begin() + static_cast<long>(start), text.begin() + static_cast<long>(i) + 1,
              nullptr, false);
          if (!parsed.is_discarded() && parsed.is_object()) return parsed;
          break;
        }
      }
    }
    ++start;
  }
  return std::nullopt;
}

inline std::optional<std::string> value_as_string(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  if (value.is_number_unsigned()) {
    return std::to_string(value.get<unsigned long long>());
  }
  if (value.is_boolean() || value.is_number_float()) return value.dump();
  return std::nullopt;
}

}  // namespace annotate_detail

// Parse ladder for an extraction response. Values that already match an
// option exactly are never altered; near misses are repaired case- and
// whitespace-insensitively; still-unmatched attributes fall back to the
// "Other" option when the domain has one, and fail the record otherwise.
inline AnnotationResult parse_annotation(const std::string& response,
                                         const MetadataSchema& schema) {
  AnnotationResult result;
  result.raw_response = response;

  std::string body = annotate_detail::strip_code_fences(response);
  std::optional<nlohmann::json> parsed = annotate_detail::first_json_object(body);
  if (!parsed) {
    result.status = AnnotationStatus::kFailed;
    result.failure_reason = "no-json";
    return result;
  }

  std::map<std::string, std::string> raw;
  for (const auto& [key, value] : parsed->items()) {
    auto text = annotate_detail::value_as_string(value);
    if (text) raw[key] = *text;
  }

  try {
    result.record = validate_record(schema, raw);
    result.status = AnnotationStatus::kOk;
    return result;
  } catch (const ValidationError&) {
    // Fall through to the repair ladder.
  }

  MetadataRecord record;
  record.values.reserve(schema.attribute_count());
  for (const AttributeDomain& attr : schema.attributes()) {
    auto it = raw.find(attr.name);
    std::optional<std::size_t> chosen;
    if (it != raw.end()) {
      chosen = attr.option_index(it->second);
      if (!chosen) {
        std::string needle = annotate_detail::ascii_lower(annotate_detail::trim(it->second));
        for (std::size_t i = 0; i < attr.options.size(); ++i) {
          if (annotate_detail::ascii_lower(attr.options[i]) == needle) {
            chosen = i;
            result.repairs.push_back("normalized '" + attr.name + "'");
            break;
          }
        }
      }
    }
    if (!chosen) {
      if (auto other = attr.option_index(std::string(kOtherOption))) {
        chosen = *other;
        result.repairs.push_back("defaulted '" + attr.name + "' to Other");
      } else {
        result.record.reset();
        result.status = AnnotationStatus::kFailed;
        result.failure_reason = it == raw.end()
                                    ? "missing attribute '" + attr.name + "'"
                                    : "attribute '" + attr.name + "': value '" +
                                          it->second + "' matches no option";
        return result;
      }
    }
    record.values.push_back(static_cast<std::uint32_t>(*chosen));
  }
  for (const auto& [key, value] : raw) {
    if (!schema.attribute_index(key)) {
      result.repairs.push_back("ignored unknown attribute '" + key + "'");
    }
  }

  result.record = std::move(record);
  result.status = AnnotationStatus::kRepaired;
  return result;
}

struct AnnotateOptions {
  std::size_t max_retries = 2;
  std::size_t max_tokens = 512;
  std::size_t concurrency = 1;
  std::string description = "a document";

  void validate() const {
    if (concurrency == 0) throw InvalidArgument("AnnotateOptions: concurrency must be >= 1");
    if (max_tokens == 0) throw InvalidArgument("AnnotateOptions: max_tokens must be >= 1");
  }
};

struct AnnotationRun {
  MetadataTable table;
  // One result per input text, in input order.
  std::vector<AnnotationResult> results;
  // results index (== input text index) backing each table row, in order.
  std::vector<std::size_t> kept_indices;

  std::size_t failure_count() const { return results.size() - table.size(); }
};

// Annotates every text against the schema. Extraction runs at temperature 0
// and retries each text up to max_retries extra times on backend errors or
// unusable responses. Failed texts are excluded from the table but keep
// their slot in results.
inline AnnotationRun annotate_corpus(const std::vector<std::string>& texts,
                                     CompletionBackend& backend,
                                     const MetadataSchema& schema,
                                     const AnnotateOptions& options = {}) {
  options.validate();
  AnnotationRun run;
  run.table.schema = schema;
  run.results.resize(texts.size());

  auto annotate_one = [&](std::size_t index) {
    std::string prompt = build_extraction_prompt(schema, texts[index], options.description);
    AnnotationResult last;
    for (std::size_t attempt = 0; attempt <= options.max_retries; ++attempt) {
      CompletionRequest request;
      request.prompt = prompt;
      request.max_tokens = options.max_tokens;
      request.temperature = 0.0;
      request.seed = static_cast<std::int64_t>(attempt);
      try {
        last = parse_annotation(backend.complete(request), schema);
      } catch (const std::exception& e) {
        last = AnnotationResult{};
        last.failure_reason = std::string("backend: ") + e.what();
      }
      if (last.status != AnnotationStatus::kFailed) break;
    }
    run.results[index] = std::move(last);
  };

  std::size_t workers = std::min(options.concurrency, texts.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < texts.size(); ++i) annotate_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < texts.size(); i = next.fetch_add(1)) {
          annotate_one(i);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  for (std::size_t i = 0; i < run.results.size(); ++i) {
    if (run.results[i].record) {
      run.table.append(*run.results[i].record);
      run.kept_indices.push_back(i);
    }
  }
  return run;
}

}  // namespace maple
