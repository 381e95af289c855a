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

// Prompt construction: in-context example selection by metadata Hamming
// distance and composition of generation / variation prompts from editable
// template files.
//
// Template placeholders: the generation template takes {examples},
// {metadata}, and {length_instruction}; the variation template takes
// {text}. Templates must keep the structural markers from markers.hpp for
// the mock backend to parse them.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maple/error.hpp"
#include "maple/markers.hpp"
#include "maple/rng.hpp"
#include "maple/schema.hpp"

namespace maple {

struct DonatedPair {
  MetadataRecord metadata;
  std::string text;
};

enum class PromptMode { kPlain, kMetadataOnly, kExamplesOnly, kMaple };

inline std::string prompt_mode_name(PromptMode mode) {
  switch (mode) {
    case PromptMode::kPlain: return "plain";
    case PromptMode::kMetadataOnly: return "metadata_only";
    case PromptMode::kExamplesOnly: return "examples_only";
    case PromptMode::kMaple: return "maple";
  }
  throw InvalidArgument("prompt_mode_name: bad mode");
}

inline PromptMode parse_prompt_mode(std::string_view name) {
  if (name == "plain") return PromptMode::kPlain;
  if (name == "metadata_only") return PromptMode::kMetadataOnly;
  if (name == "examples_only") return PromptMode::kExamplesOnly;
  if (name == "maple") return PromptMode::kMaple;
  throw InvalidArgument("parse_prompt_mode: unknown mode '" + std::string(name) + "'");
}

namespace prompt_detail {

inline void replace_all(std::string& text, std::string_view placeholder,
                        std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
}

inline void require_placeholder(const std::string& text, std::string_view placeholder,
                                std::string_view which) {
  if (text.find(placeholder) == std::string::npos) {
    throw ConfigError(std::string(which) + " template is missing the " +
                      std::string(placeholder) + " placeholder");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read template file: " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace prompt_detail

struct PromptTemplates {
  std::string random_template;
  std::string variation_template;

  void validate() const {
    prompt_detail::require_placeholder(random_template, "{examples}", "generation");
    prompt_detail::require_placeholder(random_template, "{metadata}", "generation");
    prompt_detail::require_placeholder(random_template, "{length_instruction}",
                                       "generation");
    prompt_detail::require_placeholder(variation_template, "{text}", "variation");
  }

  static PromptTemplates builtin() {
    PromptTemplates t;
    t.random_template =
        "You are writing one synthetic document for a private text corpus.\n"
        "\n"
        "{examples}"
        "{metadata}"
        "Task: write one synthetic document for the corpus.\n"
        "{length_instruction}"
        "Write only the document, between <<< and >>> delimiters.\n";
    t.variation_template =
        "Task: paraphrase the document below into a similar synthetic document.\n"
        "Keep a similar length and the same domain.\n"
        "\n"
        "Input document:\n"
        "<<<{text}>>>\n"
        "\n"
        "Write only the new document, between <<< and >>> delimiters.\n";
    return t;
  }

  // Loads random_prompt.tmpl and variation_prompt.tmpl from a directory.
  static PromptTemplates load_dir(const std::filesystem::path& dir) {
    PromptTemplates t;
    t.random_template = prompt_detail::read_file(dir / "random_prompt.tmpl");
    t.variation_template = prompt_detail::read_file(dir / "variation_prompt.tmpl");
    t.validate();
    return t;
  }
};

struct PromptPlan {
  PromptMode mode = PromptMode::kPlain;
  std::size_t k_incontext = 0;
  std::vector<DonatedPair> donated;
  // examples_only: the uniformly drawn donated indices, fixed once per run.
  std::vector<std::size_t> uniform_indices;

  void validate(const MetadataSchema& schema) const {
    for (const DonatedPair& pair : donated) {
      if (pair.text.empty()) throw InvalidArgument("PromptPlan: donated text is empty");
      if (pair.metadata.values.size() != schema.attribute_count()) {
        throw InvalidArgument("PromptPlan: donated metadata width mismatch");
      }
      for (std::size_t i = 0; i < pair.metadata.values.size(); ++i) {
        if (pair.metadata.values[i] >= schema.attribute(i).size()) {
          throw InvalidArgument("PromptPlan: donated metadata option out of range");
        }
      }
    }
    switch (mode) {
      case PromptMode::kPlain:
        if (k_incontext != 0) throw InvalidArgument("PromptPlan: plain mode requires k=0");
        break;
      case PromptMode::kMetadataOnly:
        if (k_incontext != 0) {
          throw InvalidArgument("PromptPlan: metadata_only mode requires k=0");
        }
        break;
      case PromptMode::kExamplesOnly:
        if (k_incontext == 0) {
          throw InvalidArgument("PromptPlan: examples_only mode requires k>=1");
        }
        if (donated.empty()) {
          throw InvalidArgument("PromptPlan: examples_only mode requires donated pairs");
        }
        if (uniform_indices.size() != std::min(k_incontext, donated.size())) {
          throw InvalidArgument("PromptPlan: examples_only index set has the wrong size");
        }
        for (std::size_t i : uniform_indices) {
          if (i >= donated.size()) {
            throw InvalidArgument("PromptPlan: examples_only index out of range");
          }
        }
        break;
      case PromptMode::kMaple:
        break;
    }
  }
};

// Builds a plan; examples_only draws its uniform example subset here, once,
// so every prompt in the run shares the same examples.
inline PromptPlan make_prompt_plan(PromptMode mode, std::vector<DonatedPair> donated,
                                   std::size_t k, std::uint64_t seed,
                                   const MetadataSchema& schema) {
  PromptPlan plan;
  plan.mode = mode;
  plan.donated = std::move(donated);
  plan.k_incontext =
      (mode == PromptMode::kPlain || mode == PromptMode::kMetadataOnly) ? 0 : k;
  if (mode == PromptMode::kExamplesOnly) {
    std::size_t take = std::min(plan.k_incontext, plan.donated.size());
    std::vector<std::size_t> all(plan.donated.size());
    std::iota(all.begin(), all.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j = i + rng.uniform_index(all.size() - i);
      std::swap(all[i], all[j]);
    }
    plan.uniform_indices.assign(all.begin(), all.begin() + static_cast<long>(take));
  }
  plan.validate(schema);
  return plan;
}

// Indices of the k donated pairs closest to target by Hamming distance,
// ordered by (distance, donated index).
inline std::vector<std::size_t> select_incontext(const MetadataRecord& target,
                                                 const std::vector<DonatedPair>& donated,
                                                 std::size_t k) {
  std::vector<std::size_t> order(donated.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> dist(donated.size());
  for (std::size_t i = 0; i < donated.size(); ++i) {
    dist[i] = hamming_distance(target, donated[i].metadata);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

namespace prompt_detail {

inline std::string render_metadata_inline(const MetadataSchema& schema,
                                          const MetadataRecord& record) {
  std::string out = "{";
  for (std::size_t i = 0; i < schema.attribute_count(); ++i) {
    if (i > 0) out += ", ";
    out += schema.attribute(i).name;
    out += ": ";
    out += schema.attribute(i).options[record.values[i]];
  }
  out += "}";
  return out;
}

inline std::string render_example_block(const MetadataSchema& schema,
                                        const DonatedPair& pair) {
  std::string out = "Metadata: ";
  out += render_metadata_inline(schema, pair.metadata);
  out += "\nText: ";
  out += kDocumentOpen;
  out += pair.text;
  out += kDocumentClose;
  out += "\n\n";
  return out;
}

inline std::string render_target_block(const MetadataSchema& schema,
                                       const MetadataRecord& record) {
  std::string out = kTargetMetadataHeader;
  out += "\n";
  for (std::size_t i = 0; i < schema.attribute_count(); ++i) {
    out += schema.attribute(i).name;
    out += ": ";
    out += schema.attribute(i).options[record.values[i]];
    out += "\n";
  }
  out += "\n";
  return out;
}

}  // namespace prompt_detail

// Generation prompt for one synthetic document. Metadata must be present
// exactly for the metadata-bearing modes (maple, metadata_only).
inline std::string build_random_prompt(const PromptTemplates& templates,
                                       const PromptPlan& plan, const MetadataSchema& schema,
                                       const MetadataRecord* metadata) {
  templates.validate();
  plan.validate(schema);
  bool needs_metadata =
      plan.mode == PromptMode::kMaple || plan.mode == PromptMode::kMetadataOnly;
  if (needs_metadata && metadata == nullptr) {
    throw InvalidArgument("build_random_prompt: mode " + prompt_mode_name(plan.mode) +
                          " requires metadata");
  }
  if (!needs_metadata && metadata != nullptr) {
    throw InvalidArgument("build_random_prompt: mode " + prompt_mode_name(plan.mode) +
                          " takes no metadata");
  }
  if (metadata != nullptr) {
    if (metadata->values.size() != schema.attribute_count()) {
      throw InvalidArgument("build_random_prompt: metadata width mismatch");
    }
    for (std::size_t i = 0; i < metadata->values.size(); ++i) {
      if (metadata->values[i] >= schema.attribute(i).size()) {
        throw InvalidArgument("build_random_prompt: metadata option out of range");
      }
    }
  }

  std::string examples;
  if (plan.mode == PromptMode::kExamplesOnly) {
    for (std::size_t i : plan.uniform_indices) {
      examples += prompt_detail::render_example_block(schema, plan.donated[i]);
    }
  } else if (plan.mode == PromptMode::kMaple && plan.k_incontext > 0) {
    for (std::size_t i : select_incontext(*metadata, plan.donated, plan.k_incontext)) {
      examples += prompt_detail::render_example_block(schema, plan.donated[i]);
    }
  }

  std::string metadata_block;
  std::string length_instruction;
  if (metadata != nullptr) {
    metadata_block = prompt_detail::render_target_block(schema, *metadata);
    if (auto wc = schema.attribute_index(kWordCountAttribute)) {
      length_instruction = "The document must be approximately " +
                           schema.attribute(*wc).options[metadata->values[*wc]] +
                           " words long.\n";
    }
  }

  std::string prompt = templates.random_template;
  prompt_detail::replace_all(prompt, "{examples}", examples);
  prompt_detail::replace_all(prompt, "{metadata}", metadata_block);
  prompt_detail::replace_all(prompt, "{length_instruction}", length_instruction);
  return prompt;
}

inline std::string build_variation_prompt(const PromptTemplates& templates,
                                          const std::string& text) {
  templates.validate();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw InvalidArgument("build_variation_prompt: empty text");
  }
  std::string prompt = templates.variation_template;
  prompt_detail::replace_all(prompt, "{text}", text);
  return prompt;
}

}  // namespace maple
