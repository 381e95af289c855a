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

// Deterministic mock completion backend. Generated documents plant every
// metadata attribute as a bracketed token "[name=option]" inside seeded
// filler text whose vocabulary distribution is keyed to the metadata, which
// makes distribution alignment measurable by the annotator and the hash
// embedder without any learned model:
//   - generation prompts with a target metadata block emit that metadata's
//     tokens; attributes absent from the block draw from a fixed skewed
//     background distribution;
//   - generation prompts without metadata draw every attribute from the
//     background distribution;
//   - variation prompts copy the input document's tokens, resample filler,
//     and with probability p_drift replace one token's option at random;
//   - extraction prompts parse the embedded document's tokens and answer
//     with the corresponding JSON object.
// Every completion is a pure function of (prompt, request seed, config).

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maple/backends.hpp"
#include "maple/error.hpp"
#include "maple/markers.hpp"
#include "maple/rng.hpp"
#include "maple/schema.hpp"

namespace maple {

inline std::string planted_token(std::string_view name, std::string_view option) {
  std::string t = "[";
  t += name;
  t += "=";
  t += option;
  t += "]";
  return t;
}

// All "[name=option]" tokens in order of appearance. No schema filtering.
inline std::vector<std::pair<std::string, std::string>> parse_planted_tokens(
    std::string_view text) {
  std::vector<std::pair<std::string, std::string>> tokens;
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string_view::npos) {
    std::size_t eq = text.find('=', pos + 1);
    if (eq == std::string_view::npos) break;
    std::size_t close = text.find(']', eq + 1);
    if (close == std::string_view::npos) break;
    std::string_view name = text.substr(pos + 1, eq - pos - 1);
    std::string_view option = text.substr(eq + 1, close - eq - 1);
    if (!name.empty() && !option.empty() &&
        name.find('[') == std::string_view::npos) {
      tokens.emplace_back(std::string(name), std::string(option));
      pos = close + 1;
    } else {
      pos += 1;
    }
  }
  return tokens;
}

struct MockParams {
  double p_drift = 0.1;
  std::uint64_t seed = 0;
  std::size_t default_words = 60;

  void validate() const {
    if (!(p_drift >= 0.0) || !(p_drift <= 1.0)) {
      throw InvalidArgument("MockParams: p_drift must be in [0,1]");
    }
    if (default_words < 1) throw InvalidArgument("MockParams: default_words must be >= 1");
  }
};

namespace mock_detail {

inline const std::vector<std::string>& filler_vocabulary() {
  static const std::vector<std::string> words = {
      "the",      "study",     "presents",   "analysis",    "results",
      "method",   "approach",  "data",       "model",       "findings",
      "observed", "measured",  "across",     "between",     "within",
      "conditions", "samples", "evidence",   "supports",    "suggests",
      "framework", "evaluation", "compared", "baseline",    "robust",
      "consistent", "significant", "effects", "variation",  "process",
      "system",   "structure", "function",   "response",    "multiple",
      "distinct", "novel",     "further",    "work",        "required",
      "overall",  "quality",   "reported",   "under",       "setting",
      "during",   "outcome",   "context",
  };
  return words;
}

inline std::optional<std::size_t> parse_length_hint(std::string_view prompt) {
  std::size_t pos = prompt.find("approximately ");
  if (pos == std::string_view::npos) return std::nullopt;
  pos += 14;
  std::size_t end = pos;
  while (end < prompt.size() && prompt[end] >= '0' && prompt[end] <= '9') ++end;
  if (end == pos) return std::nullopt;
  if (prompt.compare(end, 6, " words") != 0) return std::nullopt;
  std::size_t n = 0;
  for (std::size_t i = pos; i < end; ++i) n = n * 10 + static_cast<std::size_t>(prompt[i] - '0');
  return n == 0 ? std::nullopt : std::optional<std::size_t>(n);
}

inline std::optional<std::size_t> parse_numeric_option(const std::string& option) {
  if (option.empty()) return std::nullopt;
  char* end = nullptr;
  long v = std::strtol(option.c_str(), &end, 10);
  if (end == nullptr || *end != '\0' || v < 1) return std::nullopt;
  return static_cast<std::size_t>(v);
}

}  // namespace mock_detail

class MockCompletionBackend : public CompletionBackend {
 public:
  explicit MockCompletionBackend(MetadataSchema schema, MockParams params = {})
      : schema_(std::move(schema)), params_(params) {
    params_.validate();
  }

  const MetadataSchema& schema() const { return schema_; }
  const MockParams& params() const { return params_; }

  // Skewed per-attribute background: option j has weight 1/(j+1).
  std::uint32_t background_draw(Rng& rng, std::size_t attr) const {
    std::vector<double> w(schema_.attribute(attr).size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = 1.0 / static_cast<double>(j + 1);
    return static_cast<std::uint32_t>(rng.categorical(w));
  }

  std::string complete(const CompletionRequest& request) override {
    request.validate();
    Rng rng(mix64(fnv1a(request.prompt) ^
                  mix64(static_cast<std::uint64_t>(request.seed.value_or(0)) ^
                        params_.seed)));
    if (request.prompt.find(kExtractionMarker) != std::string::npos) {
      return complete_extraction(request.prompt);
    }
    if (request.prompt.find(kVariationTaskMarker) != std::string::npos) {
      return complete_variation(request.prompt, rng);
    }
    if (request.prompt.find(kGenerationTaskMarker) != std::string::npos) {
      return complete_generation(request.prompt, rng);
    }
    throw BackendError("mock backend: unrecognized prompt shape");
  }

 private:
  std::string complete_generation(const std::string& prompt, Rng& rng) const {
    std::map<std::string, std::string> target = parse_target_block(prompt);
    std::vector<std::string> tokens;
    std::optional<std::size_t> words_from_schema;
    for (std::size_t i = 0; i < schema_.attribute_count(); ++i) {
      const AttributeDomain& attr = schema_.attribute(i);
      std::string option;
      auto it = target.find(attr.name);
      if (it != target.end()) {
        if (!attr.option_index(it->second)) {
          throw BackendError("mock backend: target metadata value '" + it->second +
                             "' is not an option of '" + attr.name + "'");
        }
        option = it->second;
      } else {
        Rng fork = rng.fork(100 + i);
        option = attr.options[background_draw(fork, i)];
      }
      if (attr.name == kWordCountAttribute) {
        words_from_schema = mock_detail::parse_numeric_option(option);
      }
      tokens.push_back(planted_token(attr.name, option));
    }
    for (const auto& [name, value] : target) {
      if (!schema_.attribute_index(name)) {
        throw BackendError("mock backend: unknown target metadata attribute '" + name +
                           "'");
      }
      (void)value;
    }
    std::size_t words = words_from_schema.value_or(
        mock_detail::parse_length_hint(prompt).value_or(params_.default_words));
    return render_document(tokens, words, rng.fork(1));
  }

  std::string complete_variation(const std::string& prompt, Rng& rng) const {
    std::size_t open = prompt.find(kDocumentOpen);
    if (open == std::string::npos) {
      throw BackendError("mock backend: variation prompt has no input document");
    }
    std::size_t begin = open + 3;
    std::size_t close = prompt.find(kDocumentClose, begin);
    if (close == std::string::npos) {
      throw BackendError("mock backend: variation prompt has no input document");
    }
    std::string doc = prompt.substr(begin, close - begin);

    // Keep the first valid token per attribute, in schema order.
    std::vector<std::optional<std::string>> options(schema_.attribute_count());
    for (const auto& [name, option] : parse_planted_tokens(doc)) {
      auto idx = schema_.attribute_index(name);
      if (!idx || options[*idx]) continue;
      if (schema_.attribute(*idx).option_index(option)) options[*idx] = option;
    }
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < options.size(); ++i) {
      if (options[i]) present.push_back(i);
    }
    if (params_.p_drift > 0.0 && !present.empty() && rng.uniform() < params_.p_drift) {
      std::size_t attr = present[rng.uniform_index(present.size())];
      const AttributeDomain& dom = schema_.attribute(attr);
      options[attr] = dom.options[rng.uniform_index(dom.size())];
    }
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < options.size(); ++i) {
      if (options[i]) tokens.push_back(planted_token(schema_.attribute(i).name, *options[i]));
    }
    std::size_t words = std::max<std::size_t>(word_count(doc), 1);
    return render_document(tokens, words, rng.fork(2));
  }

  std::string complete_extraction(const std::string& prompt) const {
    std::string_view segment = prompt;
    std::size_t begin = prompt.find(kExtractionTextHeader);
    if (begin != std::string::npos) {
      segment = std::string_view(prompt).substr(begin);
      std::size_t end = segment.find(kExtractionOutputHeader);
      if (end != std::string::npos) segment = segment.substr(0, end);
    }
    std::map<std::string, std::string> found;
    for (const auto& [name, option] : parse_planted_tokens(segment)) {
      auto idx = schema_.attribute_index(name);
      if (!idx || found.count(name)) continue;
      if (schema_.attribute(*idx).option_index(option)) found[name] = option;
    }
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const AttributeDomain& attr : schema_.attributes()) {
      auto it = found.find(attr.name);
      if (it != found.end()) j[attr.name] = it->second;
    }
    return j.dump();
  }

  // Tokens in schema order followed by filler up to `words` whitespace-
  // separated words in total (never truncating tokens). The skewed filler
  // distribution is rotated by a hash of the tokens, so documents with the
  // same metadata share vocabulary mass the way same-metadata texts share
  // topic words; embeddings can then discriminate metadata from the whole
  // text rather than from the tokens alone.
  std::string render_document(const std::vector<std::string>& tokens, std::size_t words,
                              Rng rng) const {
    std::string out;
    std::size_t count = 0;
    std::uint64_t style = 0;
    for (const std::string& t : tokens) {
      if (!out.empty()) out += ' ';
      out += t;
      count += std::max<std::size_t>(word_count(t), 1);
      style = mix64(style ^ fnv1a(t));
    }
    const auto& vocab = mock_detail::filler_vocabulary();
    std::size_t rotate = static_cast<std::size_t>(style % vocab.size());
    std::vector<double> w(vocab.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = 1.0 / static_cast<double>(j + 1);
    while (count < words) {
      if (!out.empty()) out += ' ';
      out += vocab[(rng.categorical(w) + rotate) % vocab.size()];
      ++count;
    }
    return out;
  }

  std::map<std::string, std::string> parse_target_block(const std::string& prompt) const {
    std::map<std::string, std::string> target;
    std::size_t pos = prompt.find(kTargetMetadataHeader);
    if (pos == std::string::npos) return target;
    pos = prompt.find('\n', pos);
    if (pos == std::string::npos) return target;
    ++pos;
    while (pos < prompt.size()) {
      std::size_t eol = prompt.find('\n', pos);
      if (eol == std::string::npos) eol = prompt.size();
      std::string line = prompt.substr(pos, eol - pos);
      pos = eol + 1;
      if (line.empty()) break;
      std::size_t sep = line.find(": ");
      if (sep == std::string::npos) break;
      target[line.substr(0, sep)] = line.substr(sep + 2);
    }
    return target;
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  MetadataSchema schema_;
  MockParams params_;
};

}  // namespace maple
