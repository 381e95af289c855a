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

// Deterministic text embedding by character 3-gram feature hashing.
// Texts sharing long substrings (such as planted metadata tokens) share
// many 3-gram buckets and so score higher cosine similarity.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "maple/backends.hpp"
#include "maple/error.hpp"

namespace maple {

class HashEmbedder : public EmbeddingBackend {
 public:
  explicit HashEmbedder(std::size_t dim = 256, std::uint64_t hash_seed = 0x6d61706c65ULL)
      : dim_(dim), hash_seed_(hash_seed) {
    if (dim_ < 1) throw InvalidArgument("HashEmbedder: dim must be >= 1");
  }

  std::size_t dim() const { return dim_; }

  // Bucket a single feature string lands in; exposed so tests can construct
  // collision-free gram sets.
  std::size_t bucket(std::string_view gram) const {
    return static_cast<std::size_t>(fnv1a(gram) % dim_);
  }

  std::vector<double> embed_one(std::string_view text) const {
    std::vector<double> v(dim_, 0.0);
    if (text.size() >= 3) {
      for (std::size_t i = 0; i + 3 <= text.size(); ++i) {
        v[bucket(text.substr(i, 3))] += 1.0;
      }
    } else {
      // Too short for 3-grams: hash the whole text as one feature so the
      // output is still unit-norm and deterministic.
      v[bucket(text)] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const std::string& t : texts) out.push_back(embed_one(t));
    return out;
  }

 private:
  std::uint64_t fnv1a(std::string_view s) const {
    std::uint64_t h = 14695981039346656037ULL ^ hash_seed_;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  std::size_t dim_;
  std::uint64_t hash_seed_;
};

}  // namespace maple
