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

#include "maple/pe.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "maple/hash_embedder.hpp"
#include "maple/mock_backend.hpp"
#include "maple/privacy.hpp"
#include "maple/prompts.hpp"
#include "maple/rng.hpp"
#include "maple/schema.hpp"

namespace {

using Catch::Approx;

maple::MetadataSchema pe_schema() {
  return maple::MetadataSchema({
      {"topic", {"neuroscience", "genomics", "ecology"}},
      {"style", {"formal", "casual"}},
  });
}

maple::MetadataRecord record(std::vector<std::uint32_t> values) {
  maple::MetadataRecord r;
  r.values = std::move(values);
  return r;
}

std::string generation_prompt(const maple::MetadataSchema& schema,
                              const maple::MetadataRecord* target) {
  maple::PromptPlan plan;
  plan.mode = target == nullptr ? maple::PromptMode::kPlain
                                : maple::PromptMode::kMetadataOnly;
  return maple::build_random_prompt(maple::PromptTemplates::builtin(), plan, schema,
                                    target);
}

std::vector<double> unit(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

maple::CandidatePool manual_pool(std::vector<std::string> texts,
                                 std::vector<std::vector<double>> embeddings) {
  maple::CandidatePool pool;
  pool.texts = std::move(texts);
  pool.embeddings = std::move(embeddings);
  return pool;
}

// Independent oracle: per private vector, count the argmax-inner-product
// candidate, first index on ties.
std::vector<double> brute_nn_counts(const std::vector<std::vector<double>>& private_e,
                                    const std::vector<std::vector<double>>& pool_e) {
  std::vector<double> counts(pool_e.size(), 0.0);
  for (const auto& p : private_e) {
    std::size_t arg = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pool_e.size(); ++i) {
      double dot = 0.0;
      for (std::size_t d = 0; d < p.size(); ++d) dot += p[d] * pool_e[i][d];
      if (dot > best) {
        best = dot;
        arg = i;
      }
    }
    counts[arg] += 1.0;
  }
  return counts;
}

// Completion stub whose variation calls always fail.
class FailingBackend : public maple::CompletionBackend {
 public:
  std::string complete(const maple::CompletionRequest&) override {
    throw maple::BackendError("backend down");
  }
};

std::map<std::string, std::string> tokens_of(const std::string& doc) {
  std::map<std::string, std::string> out;
  for (const auto& [name, option] : maple::parse_planted_tokens(doc)) out.emplace(name, option);
  return out;
}

}  // namespace

TEST_CASE("candidate pools validate alignment and norms", "[pe]") {
  auto pool = manual_pool({"a", "b"}, {{1.0, 0.0}, {0.0, 1.0}});
  CHECK_NOTHROW(pool.validate());

  auto misaligned = manual_pool({"a"}, {{1.0, 0.0}, {0.0, 1.0}});
  CHECK_THROWS_AS(misaligned.validate(), maple::InvalidArgument);
  auto badnorm = manual_pool({"a", "b"}, {{1.0, 0.0}, {0.5, 0.5}});
  CHECK_THROWS_AS(badnorm.validate(), maple::InvalidArgument);
  auto raggeddim = manual_pool({"a", "b"}, {{1.0, 0.0}, {1.0}});
  CHECK_THROWS_AS(raggeddim.validate(), maple::InvalidArgument);
}

TEST_CASE("pe params validate", "[pe]") {
  maple::PeParams p;
  p.n_syn = 4;
  CHECK_NOTHROW(p.validate());
  p.n_syn = 0;
  CHECK_THROWS_AS(p.validate(), maple::InvalidArgument);
  p.n_syn = 4;
  p.variations_per_selected = 0;
  CHECK_THROWS_AS(p.validate(), maple::InvalidArgument);
  p.variations_per_selected = 1;
  p.iterations = 2;  // iterations without budget
  CHECK_THROWS_AS(p.validate(), maple::InvalidArgument);
  p.rho_pe = 0.1;
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("random_init generates one text per prompt", "[pe]") {
  auto schema = pe_schema();
  maple::MockCompletionBackend mock(schema);
  maple::HashEmbedder embedder;
  maple::PeBackends backends{mock, embedder};
  maple::PeParams params;
  params.seed = 11;

  SECTION("metadata prompts plant their tokens") {
    std::vector<maple::MetadataRecord> targets = {
        record({0, 0}), record({1, 1}), record({2, 0})};
    auto source = [&](std::size_t i) { return generation_prompt(schema, &targets[i]); };
    auto pool = maple::random_init(3, source, backends, params);
    REQUIRE(pool.size() == 3);
    CHECK(pool.generation == 0);
    CHECK_NOTHROW(pool.validate());
    for (std::size_t i = 0; i < 3; ++i) {
      auto tokens = tokens_of(pool.texts[i]);
      CHECK(tokens.at("topic") == schema.attribute(0).options[targets[i].values[0]]);
      CHECK(tokens.at("style") == schema.attribute(1).options[targets[i].values[1]]);
    }

    auto again = maple::random_init(3, source, backends, params);
    CHECK(again.texts == pool.texts);  // seed-deterministic
  }

  SECTION("data-independent prompts give distinct texts") {
    std::string prompt = generation_prompt(schema, nullptr);
    auto source = [&](std::size_t) { return prompt; };
    auto pool = maple::random_init(8, source, backends, params);
    std::set<std::string> unique(pool.texts.begin(), pool.texts.end());
    CHECK(unique.size() == 8);  // per-index request seeds differ
  }

  SECTION("backend failure aborts initialization") {
    FailingBackend down;
    maple::PeBackends broken{down, embedder};
    auto source = [&](std::size_t) { return std::string("anything"); };
    CHECK_THROWS_AS(maple::random_init(2, source, broken, params), maple::BackendError);
  }
}

TEST_CASE("dp_nn_histogram counts nearest neighbors exactly at sigma zero", "[pe]") {
  auto pool = manual_pool({"x", "y"}, {{1.0, 0.0}, {0.0, 1.0}});

  SECTION("hand-derived votes") {
    std::vector<std::vector<double>> private_e = {
        {1.0, 0.0}, unit({0.9, 0.1}), {0.0, 1.0}};
    auto h = maple::dp_nn_histogram(private_e, pool, 0.0, 0);
    CHECK(h.counts == std::vector<double>{2.0, 1.0});
    CHECK(h.sigma == 0.0);
  }

  SECTION("no private samples gives zero counts") {
    auto h = maple::dp_nn_histogram({}, pool, 0.0, 0);
    CHECK(h.counts == std::vector<double>{0.0, 0.0});
  }

  SECTION("exact ties vote for the lowest index") {
    auto h = maple::dp_nn_histogram({unit({1.0, 1.0})}, pool, 0.0, 0);
    CHECK(h.counts == std::vector<double>{1.0, 0.0});
  }

  SECTION("empty pool and dimension mismatches are rejected") {
    maple::CandidatePool empty;
    CHECK_THROWS_AS(maple::dp_nn_histogram({}, empty, 0.0, 0), maple::InvalidArgument);
    std::vector<std::vector<double>> wrong = {{1.0, 0.0, 0.0}};
    CHECK_THROWS_AS(maple::dp_nn_histogram(wrong, pool, 0.0, 0), maple::InvalidArgument);
  }
}

TEST_CASE("dp_nn_histogram matches a brute-force oracle on random instances", "[pe]") {
  maple::Rng rng(404);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t dim = 2 + rng.uniform_index(7);
    std::size_t n_pool = 1 + rng.uniform_index(100);
    std::size_t n_priv = rng.uniform_index(101);
    std::vector<std::vector<double>> pool_e;
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < n_pool; ++i) {
      std::vector<double> v(dim);
      for (double& x : v) x = rng.gaussian();
      pool_e.push_back(unit(std::move(v)));
      texts.push_back("t" + std::to_string(i));
    }
    std::vector<std::vector<double>> priv_e;
    for (std::size_t i = 0; i < n_priv; ++i) {
      std::vector<double> v(dim);
      for (double& x : v) x = rng.gaussian();
      priv_e.push_back(unit(std::move(v)));
    }
    auto pool = manual_pool(texts, pool_e);
    auto h = maple::dp_nn_histogram(priv_e, pool, 0.0, trial);
    CHECK(h.counts == brute_nn_counts(priv_e, pool_e));

    double total = 0.0;
    for (double c : h.counts) total += c;
    CHECK(total == Approx(static_cast<double>(n_priv)));
  }
}

TEST_CASE("dp_nn_histogram noise is seeded and charged to the ledger", "[pe]") {
  auto pool = manual_pool({"x", "y", "z"}, {{1.0, 0.0}, {0.0, 1.0}, unit({1.0, 1.0})});
  std::vector<std::vector<double>> priv = {{1.0, 0.0}, {0.0, 1.0}};

  maple::SpendLedger ledger;
  auto a = maple::dp_nn_histogram(priv, pool, 2.5, 77, &ledger, "pe/test");
  auto b = maple::dp_nn_histogram(priv, pool, 2.5, 77);
  auto c = maple::dp_nn_histogram(priv, pool, 2.5, 78);
  CHECK(a.counts == b.counts);
  CHECK(a.counts != c.counts);

  REQUIRE(ledger.size() == 1);
  CHECK(ledger.entries()[0].label == "pe/test");
  CHECK(ledger.entries()[0].rho == Approx(maple::rho_of_gaussian(1.0, 2.5)));
}

TEST_CASE("select_candidates follows clamped vote mass", "[pe]") {
  auto pool = manual_pool({"a", "b"}, {{1.0, 0.0}, {0.0, 1.0}});

  SECTION("only positive mass is ever selected") {
    maple::VoteHistogram h;
    h.counts = {2.0, 0.0};
    auto texts = maple::select_candidates(pool, h, 3, 5);
    CHECK(texts == std::vector<std::string>{"a", "a", "a"});

    h.counts = {0.5, -0.3};
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      auto picks = maple::select_candidate_indices(pool, h, 1, seed);
      CHECK(picks[0] == 0);
    }
  }

  SECTION("equal mass splits evenly") {
    maple::VoteHistogram h;
    h.counts = {1.0, 1.0};
    auto indices = maple::select_candidate_indices(pool, h, 10000, 9);
    double frac0 = 0.0;
    for (std::size_t i : indices) frac0 += i == 0 ? 1.0 : 0.0;
    frac0 /= 10000.0;
    CHECK(frac0 == Approx(0.5).margin(0.02));
  }

  SECTION("all-negative counts fall back to uniform") {
    maple::VoteHistogram h;
    h.counts = {-1.0, -1.0};
    auto indices = maple::select_candidate_indices(pool, h, 2000, 13);
    std::size_t ones = 0;
    for (std::size_t i : indices) ones += i;
    CHECK(static_cast<double>(ones) / 2000.0 == Approx(0.5).margin(0.05));
  }

  SECTION("deterministic per seed, misalignment rejected") {
    maple::VoteHistogram h;
    h.counts = {1.0, 3.0};
    CHECK(maple::select_candidate_indices(pool, h, 50, 21) ==
          maple::select_candidate_indices(pool, h, 50, 21));
    CHECK(maple::select_candidate_indices(pool, h, 50, 21) !=
          maple::select_candidate_indices(pool, h, 50, 22));
    h.counts = {1.0};
    CHECK_THROWS_AS(maple::select_candidate_indices(pool, h, 1, 0),
                    maple::InvalidArgument);
  }
}

TEST_CASE("variation unions originals with their paraphrases", "[pe]") {
  auto schema = pe_schema();
  maple::MockParams mock_params;
  mock_params.p_drift = 0.0;
  maple::MockCompletionBackend mock(schema, mock_params);
  maple::HashEmbedder embedder;
  maple::PeBackends backends{mock, embedder};
  maple::PeParams params;
  params.seed = 3;

  std::vector<std::string> selected;
  for (int i = 0; i < 4; ++i) {
    maple::CompletionRequest req;
    req.prompt = generation_prompt(schema, nullptr);
    req.seed = i;
    selected.push_back(mock.complete(req));
  }

  SECTION("L = 1 doubles the pool and preserves tokens without drift") {
    std::size_t failures = 99;
    auto pool = maple::variation(selected, backends, params, 7, 2, &failures);
    REQUIRE(pool.size() == 8);
    CHECK(pool.generation == 2);
    CHECK(failures == 0);
    CHECK_NOTHROW(pool.validate());
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(pool.texts[j] == selected[j]);
      CHECK(tokens_of(pool.texts[4 + j]) == tokens_of(selected[j]));
      CHECK(pool.texts[4 + j] != selected[j]);
    }
  }

  SECTION("L = 3 with 2 selected gives a pool of 8") {
    maple::PeParams l3 = params;
    l3.variations_per_selected = 3;
    std::vector<std::string> two(selected.begin(), selected.begin() + 2);
    auto pool = maple::variation(two, backends, l3, 7, 1);
    CHECK(pool.size() == 8);
  }

  SECTION("per-text failures fall back to the original") {
    FailingBackend down;
    maple::PeBackends broken{down, embedder};
    std::size_t failures = 0;
    auto pool = maple::variation(selected, broken, params, 7, 1, &failures);
    REQUIRE(pool.size() == 8);
    CHECK(failures == 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(pool.texts[4 + j] == selected[j]);
  }
}

TEST_CASE("run_pe with T = 0 truncates the initialization pool", "[pe]") {
  auto schema = pe_schema();
  maple::MockCompletionBackend mock(schema);
  maple::HashEmbedder embedder;
  maple::PeBackends backends{mock, embedder};
  maple::PeParams params;
  params.n_syn = 3;

  std::string prompt = generation_prompt(schema, nullptr);
  auto init =
      maple::random_init(5, [&](std::size_t) { return prompt; }, backends, params);
  auto result = maple::run_pe({}, init, params, backends);
  CHECK(result.rho_spent == 0.0);
  CHECK(result.pool.texts ==
        std::vector<std::string>(init.texts.begin(), init.texts.begin() + 3));

  params.n_syn = 9;  // more than the pool holds
  CHECK_THROWS_AS(maple::run_pe({}, init, params, backends), maple::InvalidArgument);
}

TEST_CASE("run_pe spends exactly rho_pe in T equal splits", "[pe]") {
  auto schema = pe_schema();
  maple::MockCompletionBackend mock(schema);
  maple::HashEmbedder embedder;
  maple::PeBackends backends{mock, embedder};

  maple::PeParams params;
  params.n_syn = 4;
  params.iterations = 3;
  params.rho_pe = 0.05;
  params.seed = 19;

  std::string prompt = generation_prompt(schema, nullptr);
  auto init =
      maple::random_init(6, [&](std::size_t) { return prompt; }, backends, params);

  std::vector<std::string> private_texts;
  for (int i = 0; i < 5; ++i) {
    maple::CompletionRequest req;
    req.prompt = generation_prompt(schema, nullptr);
    req.seed = 100 + i;
    private_texts.push_back(mock.complete(req));
  }

  maple::SpendLedger ledger;
  std::vector<std::size_t> seen_iterations;
  std::vector<double> seen_spend;
  auto result = maple::run_pe(private_texts, init, params, backends, &ledger,
                              [&](const maple::PeIterationInfo& info) {
                                seen_iterations.push_back(info.iteration);
                                seen_spend.push_back(info.rho_spent);
                                CHECK(info.selected.size() == 4);
                              });

  CHECK(result.pool.size() == 4);
  CHECK(seen_iterations == std::vector<std::size_t>{1, 2, 3});
  CHECK(seen_spend.back() == Approx(params.rho_pe));

  // The composed ledger total lands on rho_pe from below.
  double total = ledger.total();
  CHECK(total <= params.rho_pe);
  CHECK(total >= params.rho_pe * (1.0 - 1e-9));
  CHECK(result.rho_spent == Approx(total));
  REQUIRE(ledger.size() == 3);
  CHECK(ledger.entries()[0].label == "pe/histogram/iter1");
  CHECK(ledger.entries()[2].label == "pe/histogram/iter3");
  // Even splits: every pass cost the same charge.
  CHECK(ledger.entries()[0].rho == Approx(ledger.entries()[1].rho));
  CHECK(ledger.entries()[1].rho == Approx(ledger.entries()[2].rho));

  // Byte-identical reproduction under the same seed.
  maple::SpendLedger ledger2;
  auto result2 = maple::run_pe(private_texts, init, params, backends, &ledger2);
  CHECK(result2.pool.texts == result.pool.texts);
}

TEST_CASE("run_pe at infinite budget concentrates on exact matches", "[pe]") {
  auto schema = pe_schema();
  maple::MockCompletionBackend mock(schema);
  maple::HashEmbedder embedder;
  maple::PeBackends backends{mock, embedder};

  // Private texts are a subset of the pool: each votes for itself.
  std::vector<std::string> private_texts;
  for (int i = 0; i < 6; ++i) {
    maple::CompletionRequest req;
    req.prompt = generation_prompt(schema, nullptr);
    req.seed = 500 + i;
    private_texts.push_back(mock.complete(req));
  }
  maple::PeParams params;
  params.n_syn = 6;
  params.iterations = 1;
  params.rho_pe = std::numeric_limits<double>::infinity();
  params.seed = 23;

  std::string prompt = generation_prompt(schema, nullptr);
  auto init =
      maple::random_init(6, [&](std::size_t) { return prompt; }, backends, params);
  init.texts.insert(init.texts.end(), private_texts.begin(), private_texts.end());
  init.embeddings = embedder.embed(init.texts);

  auto result = maple::run_pe(private_texts, init, params, backends);
  std::set<std::string> private_set(private_texts.begin(), private_texts.end());
  for (const std::string& text : result.pool.texts) {
    CHECK(private_set.count(text) == 1);
  }
}

TEST_CASE("run_pe drifts the pool toward the private metadata", "[pe]") {
  auto schema = pe_schema();
  maple::MockParams mock_params;
  mock_params.p_drift = 0.4;
  maple::MockCompletionBackend mock(schema, mock_params);
  maple::HashEmbedder embedder;
  maple::PeBackends backends{mock, embedder};

  // All private documents share one metadata cell.
  auto target = record({2, 1});
  std::vector<std::string> private_texts;
  for (int i = 0; i < 12; ++i) {
    maple::CompletionRequest req;
    req.prompt = generation_prompt(schema, &target);
    req.seed = 700 + i;
    private_texts.push_back(mock.complete(req));
  }

  maple::PeParams params;
  params.n_syn = 12;
  params.iterations = 4;
  params.rho_pe = std::numeric_limits<double>::infinity();
  params.seed = 31;

  std::string prompt = generation_prompt(schema, nullptr);
  auto init = maple::random_init(
      24, [&](std::size_t) { return prompt; }, backends, params);

  auto match_fraction = [&](const std::vector<std::string>& texts) {
    double hits = 0.0;
    for (const auto& t : texts) {
      auto tokens = tokens_of(t);
      if (tokens.at("topic") == "ecology" && tokens.at("style") == "casual") hits += 1.0;
    }
    return hits / static_cast<double>(texts.size());
  };

  double init_fraction = match_fraction(init.texts);
  auto result = maple::run_pe(private_texts, init, params, backends);
  double final_fraction = match_fraction(result.pool.texts);
  CHECK(final_fraction > init_fraction);
  CHECK(final_fraction >= 0.7);
}
