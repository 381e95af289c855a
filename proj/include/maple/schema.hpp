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

// Categorical metadata schemas and encoded record tables.
//
// A schema is an ordered list of attributes, each with an ordered list of
// option strings. Records store option indices; the attribute order is
// significant everywhere (mixed-radix encoding treats the first attribute
// as most significant).

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maple/error.hpp"

namespace maple {

struct AttributeDomain {
  std::string name;
  std::vector<std::string> options;

  void validate() const {
    if (name.empty()) throw InvalidArgument("AttributeDomain: empty name");
    if (options.size() < 2) {
      throw InvalidArgument("AttributeDomain '" + name + "': needs at least 2 options");
    }
    std::vector<std::string> sorted = options;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw InvalidArgument("AttributeDomain '" + name + "': duplicate options");
    }
    for (const std::string& o : options) {
      if (o.empty()) throw InvalidArgument("AttributeDomain '" + name + "': empty option");
    }
  }

  std::size_t size() const { return options.size(); }

  std::optional<std::size_t> option_index(std::string_view option) const {
    for (std::size_t i = 0; i < options.size(); ++i) {
      if (options[i] == option) return i;
    }
    return std::nullopt;
  }
};

// Option index per attribute, in schema attribute order.
struct MetadataRecord {
  std::vector<std::uint32_t> values;

  bool operator==(const MetadataRecord&) const = default;
};

class MetadataSchema {
 public:
  MetadataSchema() = default;

  explicit MetadataSchema(std::vector<AttributeDomain> attributes)
      : attributes_(std::move(attributes)) {
    if (attributes_.empty()) {
      throw InvalidArgument("MetadataSchema: needs at least one attribute");
    }
    for (const AttributeDomain& a : attributes_) a.validate();
    for (std::size_t i = 0; i < attributes_.size(); ++i) {
      for (std::size_t j = i + 1; j < attributes_.size(); ++j) {
        if (attributes_[i].name == attributes_[j].name) {
          throw InvalidArgument("MetadataSchema: duplicate attribute '" +
                                attributes_[i].name + "'");
        }
      }
    }
  }

  std::size_t attribute_count() const { return attributes_.size(); }

  const AttributeDomain& attribute(std::size_t i) const {
    if (i >= attributes_.size()) throw InvalidArgument("MetadataSchema: attribute index out of range");
    return attributes_[i];
  }

  const std::vector<AttributeDomain>& attributes() const { return attributes_; }

  std::optional<std::size_t> attribute_index(std::string_view name) const {
    for (std::size_t i = 0; i < attributes_.size(); ++i) {
      if (attributes_[i].name == name) return i;
    }
    return std::nullopt;
  }

  // Product of domain sizes, saturating at uint64 max.
  std::uint64_t total_cells() const {
    std::uint64_t cells = 1;
    for (const AttributeDomain& a : attributes_) {
      std::uint64_t d = a.size();
      if (cells > std::numeric_limits<std::uint64_t>::max() / d) {
        return std::numeric_limits<std::uint64_t>::max();
      }
      cells *= d;
    }
    return cells;
  }

  // Sub-schema keeping only the named attributes, in this schema's order.
  MetadataSchema subset(std::span<const std::string> names) const {
    std::vector<AttributeDomain> kept;
    for (const std::string& n : names) {
      if (!attribute_index(n)) {
        throw InvalidArgument("MetadataSchema::subset: unknown attribute '" + n + "'");
      }
    }
    for (const AttributeDomain& a : attributes_) {
      if (std::find(names.begin(), names.end(), a.name) != names.end()) {
        kept.push_back(a);
      }
    }
    if (kept.size() != names.size()) {
      throw InvalidArgument("MetadataSchema::subset: duplicate attribute names");
    }
    return MetadataSchema(std::move(kept));
  }

  bool operator==(const MetadataSchema& other) const {
    if (attributes_.size() != other.attributes_.size()) return false;
    for (std::size_t i = 0; i < attributes_.size(); ++i) {
      if (attributes_[i].name != other.attributes_[i].name ||
          attributes_[i].options != other.attributes_[i].options) {
        return false;
      }
    }
    return true;
  }

  static MetadataSchema from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("attributes") || !j["attributes"].is_array()) {
      throw InvalidArgument("MetadataSchema: expected {\"attributes\": [...]}");
    }
    std::vector<AttributeDomain> attrs;
    for (const auto& item : j["attributes"]) {
      if (!item.is_object() || !item.contains("name") || !item.contains("options")) {
        throw InvalidArgument("MetadataSchema: each attribute needs name and options");
      }
      AttributeDomain d;
      d.name = item["name"].get<std::string>();
      for (const auto& o : item["options"]) d.options.push_back(o.get<std::string>());
      attrs.push_back(std::move(d));
    }
    return MetadataSchema(std::move(attrs));
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["attributes"] = nlohmann::ordered_json::array();
    for (const AttributeDomain& a : attributes_) {
      nlohmann::ordered_json item;
      item["name"] = a.name;
      item["options"] = a.options;
      j["attributes"].push_back(std::move(item));
    }
    return j;
  }

  static MetadataSchema load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("MetadataSchema: cannot open " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("MetadataSchema: bad JSON in " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("MetadataSchema: cannot write " + path.string());
    out << to_json().dump(2) << '\n';
  }

 private:
  std::vector<AttributeDomain> attributes_;
};

// Validated record collection. Every row is index-encoded against the
// schema and width-checked on append.
struct MetadataTable {
  MetadataSchema schema;
  std::vector<MetadataRecord> rows;

  void append(MetadataRecord record) {
    if (record.values.size() != schema.attribute_count()) {
      throw InvalidArgument("MetadataTable: record width mismatch");
    }
    for (std::size_t i = 0; i < record.values.size(); ++i) {
      if (record.values[i] >= schema.attribute(i).size()) {
        throw InvalidArgument("MetadataTable: option index out of range for '" +
                              schema.attribute(i).name + "'");
      }
    }
    rows.push_back(std::move(record));
  }

  std::size_t size() const { return rows.size(); }
};

// Strict validation of a raw attribute->option map: every schema attribute
// present exactly once, no extras, every value an exact option string.
inline MetadataRecord validate_record(const MetadataSchema& schema,
                                      const std::map<std::string, std::string>& raw) {
  if (raw.size() != schema.attribute_count()) {
    for (const auto& [key, value] : raw) {
      if (!schema.attribute_index(key)) {
        throw ValidationError(key, "unknown attribute '" + key + "'");
      }
    }
    for (const AttributeDomain& a : schema.attributes()) {
      if (!raw.contains(a.name)) {
        throw ValidationError(a.name, "missing attribute '" + a.name + "'");
      }
    }
  }
  MetadataRecord record;
  record.values.reserve(schema.attribute_count());
  for (const AttributeDomain& a : schema.attributes()) {
    auto it = raw.find(a.name);
    if (it == raw.end()) {
      throw ValidationError(a.name, "missing attribute '" + a.name + "'");
    }
    auto idx = a.option_index(it->second);
    if (!idx) {
      throw ValidationError(a.name, "value '" + it->second +
                                        "' is not an option of '" + a.name + "'");
    }
    record.values.push_back(static_cast<std::uint32_t>(*idx));
  }
  for (const auto& [key, value] : raw) {
    if (!schema.attribute_index(key)) {
      throw ValidationError(key, "unknown attribute '" + key + "'");
    }
  }
  return record;
}

inline std::size_t hamming_distance(const MetadataRecord& a, const MetadataRecord& b) {
  if (a.values.size() != b.values.size()) {
    throw InvalidArgument("hamming_distance: record width mismatch");
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i] != b.values[i]) ++d;
  }
  return d;
}

// Mixed-radix flat index with the first attribute most significant.
inline std::uint64_t record_to_index(const MetadataSchema& schema,
                                     const MetadataRecord& record) {
  if (record.values.size() != schema.attribute_count()) {
    throw InvalidArgument("record_to_index: record width mismatch");
  }
  if (schema.total_cells() == std::numeric_limits<std::uint64_t>::max()) {
    throw InvalidArgument("record_to_index: domain exceeds uint64 indexing");
  }
  std::uint64_t index = 0;
  for (std::size_t i = 0; i < record.values.size(); ++i) {
    std::uint64_t d = schema.attribute(i).size();
    if (record.values[i] >= d) {
      throw InvalidArgument("record_to_index: option index out of range");
    }
    index = index * d + record.values[i];
  }
  return index;
}

inline MetadataRecord index_to_record(const MetadataSchema& schema, std::uint64_t index) {
  if (schema.total_cells() == std::numeric_limits<std::uint64_t>::max() ||
      index >= schema.total_cells()) {
    throw InvalidArgument("index_to_record: index out of range");
  }
  MetadataRecord record;
  record.values.assign(schema.attribute_count(), 0);
  for (std::size_t i = schema.attribute_count(); i-- > 0;) {
    std::uint64_t d = schema.attribute(i).size();
    record.values[i] = static_cast<std::uint32_t>(index % d);
    index /= d;
  }
  return record;
}

// Count vector of the table projected onto the given attributes. attrs must
// be strictly ascending schema indices; the result is indexed mixed-radix
// over those attributes (first listed most significant).
inline std::vector<double> project_marginal(const MetadataTable& table,
                                            std::span<const std::size_t> attrs) {
  if (attrs.empty()) throw InvalidArgument("project_marginal: empty attribute set");
  std::uint64_t cells = 1;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (attrs[i] >= table.schema.attribute_count()) {
      throw InvalidArgument("project_marginal: attribute index out of range");
    }
    if (i > 0 && attrs[i] <= attrs[i - 1]) {
      throw InvalidArgument("project_marginal: attributes must be strictly ascending");
    }
    cells *= table.schema.attribute(attrs[i]).size();
  }
  std::vector<double> counts(static_cast<std::size_t>(cells), 0.0);
  for (const MetadataRecord& row : table.rows) {
    std::uint64_t idx = 0;
    for (std::size_t a : attrs) {
      idx = idx * table.schema.attribute(a).size() + row.values[a];
    }
    counts[static_cast<std::size_t>(idx)] += 1.0;
  }
  return counts;
}

// ---- word-count bucketing ----
//
// A bucketed numeric attribute stores its left bucket edges as option
// labels (ascending integers). Values below the first edge clamp to the
// first bucket; values at or above the last edge clamp to the last.

inline constexpr std::string_view kWordCountAttribute = "word_count";

inline bool is_word_count_attribute(const AttributeDomain& attr) {
  return attr.name == kWordCountAttribute;
}

inline std::vector<long> bucket_edges(const AttributeDomain& attr) {
  std::vector<long> edges;
  edges.reserve(attr.options.size());
  for (const std::string& o : attr.options) {
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(o, &pos);
    } catch (const std::exception&) {
      throw InvalidArgument("bucket_edges: option '" + o + "' is not an integer");
    }
    if (pos != o.size()) {
      throw InvalidArgument("bucket_edges: option '" + o + "' is not an integer");
    }
    if (!edges.empty() && v <= edges.back()) {
      throw InvalidArgument("bucket_edges: edges must be strictly ascending");
    }
    edges.push_back(v);
  }
  return edges;
}

inline std::size_t word_count_bucket_index(const AttributeDomain& attr, long count) {
  std::vector<long> edges = bucket_edges(attr);
  if (count < edges.front()) return 0;
  for (std::size_t i = edges.size(); i-- > 0;) {
    if (count >= edges[i]) return i;
  }
  return 0;
}

inline long word_count(std::string_view text) {
  long words = 0;
  bool in_word = false;
  for (char c : text) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

// ---- table persistence ----
//
// One JSON object per line mapping attribute name to option string, keys in
// schema order. Malformed lines are collected and reported together.

inline void save_table_jsonl(const MetadataTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("save_table_jsonl: cannot write " + path.string());
  for (const MetadataRecord& row : table.rows) {
    nlohmann::ordered_json j;
    for (std::size_t i = 0; i < table.schema.attribute_count(); ++i) {
      const AttributeDomain& a = table.schema.attribute(i);
      j[a.name] = a.options[row.values[i]];
    }
    out << j.dump() << '\n';
  }
}

inline MetadataTable load_table_jsonl(const std::filesystem::path& path,
                                      const MetadataSchema& schema) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("load_table_jsonl: cannot open " + path.string());
  MetadataTable table{schema, {}};
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> problems;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      if (!j.is_object()) throw InvalidArgument("not a JSON object");
      std::map<std::string, std::string> raw;
      for (const auto& [key, value] : j.items()) {
        raw[key] = value.is_string() ? value.get<std::string>() : value.dump();
      }
      table.append(validate_record(schema, raw));
    } catch (const std::exception& e) {
      problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << "load_table_jsonl: " << problems.size() << " bad line(s) in "
        << path.string();
    for (const std::string& p : problems) msg << "\n  " << p;
    throw PipelineError(msg.str());
  }
  return table;
}

}  // namespace maple
