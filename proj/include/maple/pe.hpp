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

// Private-evolution loop over API text generation: initialization from a
// prompt source, differentially private nearest-neighbor vote histograms in
// embedding space, proportional candidate selection, and paraphrase
// variation. Generic over completion and embedding backends.

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "maple/backends.hpp"
#include "maple/error.hpp"
#include "maple/privacy.hpp"
#include "maple/prompts.hpp"
#include "maple/rng.hpp"

namespace maple {

// Synthetic candidate set S_t: texts with aligned unit-norm embeddings.
struct CandidatePool {
  std::vector<std::string> texts;
  std::vector<std::vector<double>> embeddings;
  std::size_t generation = 0;

  std::size_t size() const { return texts.size(); }

  void validate() const {
    if (texts.size() != embeddings.size()) {
      throw InvalidArgument("CandidatePool: texts and embeddings misaligned");
    }
    for (const auto& e : embeddings) {
      if (e.empty() || e.size() != embeddings.front().size()) {
        throw InvalidArgument("CandidatePool: inconsistent embedding dimensions");
      }
      double norm = 0.0;
      for (double x : e) norm += x * x;
      if (std::abs(std::sqrt(norm) - 1.0) > 1e-6) {
        throw InvalidArgument("CandidatePool: embedding is not unit-norm");
      }
    }
  }
};

struct VoteHistogram {
  std::vector<double> counts;
  double sigma = 0.0;
};

struct PeParams {
  std::size_t n_syn = 1;
  std::size_t iterations = 0;              // T: histogram/selection passes
  std::size_t variations_per_selected = 1; // L
  double rho_pe = 0.0;
  // Optional run-wide cap: when a shared ledger carries entries from other
  // mechanisms, every histogram charge also keeps the whole ledger's
  // composed total within this grant.
  double rho_global = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  std::size_t max_tokens = 512;
  double temperature = 1.0;
  std::size_t concurrency = 1;

  void validate() const {
    if (n_syn < 1) throw InvalidArgument("PeParams: n_syn must be >= 1");
    if (variations_per_selected < 1) {
      throw InvalidArgument("PeParams: variations_per_selected must be >= 1");
    }
    if (std::isnan(rho_pe) || rho_pe < 0.0) {
      throw InvalidArgument("PeParams: rho_pe must be non-negative");
    }
    if (std::isnan(rho_global) || rho_global < 0.0) {
      throw InvalidArgument("PeParams: rho_global must be non-negative");
    }
    if (iterations > 0 && !(rho_pe > 0.0)) {
      throw InvalidArgument("PeParams: iterations require a positive rho_pe");
    }
    if (concurrency < 1) throw InvalidArgument("PeParams: concurrency must be >= 1");
    if (max_tokens < 1) throw InvalidArgument("PeParams: max_tokens must be >= 1");
  }
};

struct PeBackends {
  CompletionBackend& completion;
  EmbeddingBackend& embedder;
  PromptTemplates templates = PromptTemplates::builtin();
};

using PromptSource = std::function<std::string(std::size_t)>;

// Post-selection snapshot handed to the per-iteration observer.
struct PeIterationInfo {
  std::size_t iteration = 0;  // 1-based
  double rho_spent = 0.0;     // cumulative loop-local spend
  const CandidatePool& selected;
};

using PeObserver = std::function<void(const PeIterationInfo&)>;

struct PeResult {
  CandidatePool pool;
  double rho_spent = 0.0;
  std::size_t variation_failures = 0;
};

namespace pe_detail {

inline std::int64_t request_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t index) {
  return static_cast<std::int64_t>(mix64(seed ^ mix64((stream << 32) ^ index)) >> 1);
}

inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace pe_detail

// Generation-0 pool: text i comes from the i-th prompt. Initialization is
// not skippable, so any backend failure (after its own retries) propagates.
inline CandidatePool random_init(std::size_t n_syn, const PromptSource& prompt_source,
                                 const PeBackends& backends, const PeParams& params) {
  if (n_syn < 1) throw InvalidArgument("random_init: n_syn must be >= 1");
  if (!prompt_source) throw InvalidArgument("random_init: prompt_source is required");

  CandidatePool pool;
  pool.texts.assign(n_syn, {});
  pool.generation = 0;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  pe_detail::parallel_for(n_syn, params.concurrency, [&](std::size_t i) {
    try {
      CompletionRequest request;
      request.prompt = prompt_source(i);
      request.max_tokens = params.max_tokens;
      request.temperature = params.temperature;
      request.seed = pe_detail::request_seed(params.seed, 1, i);
      std::string text = strip_document_delimiters(backends.completion.complete(request));
      if (text.empty()) throw BackendError("random_init: backend returned an empty document");
      pool.texts[i] = std::move(text);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);

  pool.embeddings = backends.embedder.embed(pool.texts);
  pool.validate();
  return pool;
}

// Nearest-neighbor vote histogram with per-bin Gaussian noise. Adding or
// removing one private sample moves one count by 1, so the L2 sensitivity
// is 1 and the charge is rho_of_gaussian(1, sigma).
inline VoteHistogram dp_nn_histogram(
    const std::vector<std::vector<double>>& private_embeddings, const CandidatePool& pool,
    double sigma, std::uint64_t seed, SpendLedger* ledger = nullptr,
    const std::string& label = "pe/histogram") {
  if (pool.size() == 0) throw InvalidArgument("dp_nn_histogram: empty pool");
  pool.validate();
  if (std::isnan(sigma) || sigma < 0.0) {
    throw InvalidArgument("dp_nn_histogram: sigma must be non-negative");
  }

  VoteHistogram histogram;
  histogram.sigma = sigma;
  histogram.counts.assign(pool.size(), 0.0);
  for (const auto& p : private_embeddings) {
    if (p.size() != pool.embeddings.front().size()) {
      throw InvalidArgument("dp_nn_histogram: embedding dimension mismatch");
    }
    std::size_t best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      double dot = 0.0;
      for (std::size_t d = 0; d < p.size(); ++d) dot += p[d] * pool.embeddings[i][d];
      if (dot > best_dot) {  // strict: ties stay at the lowest index
        best_dot = dot;
        best = i;
      }
    }
    histogram.counts[best] += 1.0;
  }

  if (sigma > 0.0) {
    Rng rng(seed);
    for (double& c : histogram.counts) c += rng.gaussian(sigma);
  }
  if (ledger != nullptr) ledger->append(label, rho_of_gaussian(1.0, sigma));
  return histogram;
}

// n_syn draws with replacement, proportional to the at-zero-clamped counts;
// all-nonpositive histograms fall back to uniform.
inline std::vector<std::size_t> select_candidate_indices(const CandidatePool& pool,
                                                         const VoteHistogram& histogram,
                                                         std::size_t n_syn,
                                                         std::uint64_t seed) {
  if (histogram.counts.size() != pool.size()) {
    throw InvalidArgument("select_candidate_indices: histogram misaligned with pool");
  }
  if (pool.size() == 0) throw InvalidArgument("select_candidate_indices: empty pool");

  std::vector<double> clamped(histogram.counts.size());
  double total = 0.0;
  for (std::size_t i = 0; i < clamped.size(); ++i) {
    clamped[i] = std::max(0.0, histogram.counts[i]);
    total += clamped[i];
  }

  Rng rng(seed);
  std::vector<std::size_t> indices;
  indices.reserve(n_syn);
  for (std::size_t i = 0; i < n_syn; ++i) {
    indices.push_back(total > 0.0 ? rng.categorical(clamped)
                                  : rng.uniform_index(pool.size()));
  }
  return indices;
}

inline std::vector<std::string> select_candidates(const CandidatePool& pool,
                                                  const VoteHistogram& histogram,
                                                  std::size_t n_syn, std::uint64_t seed) {
  std::vector<std::string> out;
  out.reserve(n_syn);
  for (std::size_t i : select_candidate_indices(pool, histogram, n_syn, seed)) {
    out.push_back(pool.texts[i]);
  }
  return out;
}

// Union pool: the selected originals followed by L paraphrases each, all
// re-embedded. A variation whose backend call fails (after the backend's
// own retries) falls back to its original text so the pool keeps its
// (1 + L) * n shape; failures are counted, not fatal.
inline CandidatePool variation(const std::vector<std::string>& selected,
                               const PeBackends& backends, const PeParams& params,
                               std::uint64_t seed, std::size_t next_generation,
                               std::size_t* failures = nullptr) {
  const std::size_t l = params.variations_per_selected;
  CandidatePool pool;
  pool.generation = next_generation;
  pool.texts.assign(selected.size() * (1 + l), {});
  for (std::size_t j = 0; j < selected.size(); ++j) {
    if (selected[j].empty()) throw InvalidArgument("variation: empty selected text");
    pool.texts[j] = selected[j];
  }

  std::atomic<std::size_t> failed{0};
  pe_detail::parallel_for(selected.size() * l, params.concurrency, [&](std::size_t job) {
    std::size_t j = job / l;
    std::string text;
    try {
      CompletionRequest request;
      request.prompt = build_variation_prompt(backends.templates, selected[j]);
      request.max_tokens = params.max_tokens;
      request.temperature = params.temperature;
      request.seed = pe_detail::request_seed(seed, 3, job);
      text = strip_document_delimiters(backends.completion.complete(request));
    } catch (const BackendError&) {
      text.clear();
    }
    if (text.empty()) {
      text = selected[j];
      ++failed;
    }
    pool.texts[selected.size() + job] = std::move(text);
  });

  pool.embeddings = backends.embedder.embed(pool.texts);
  pool.validate();
  if (failures != nullptr) *failures = failed.load();
  return pool;
}

// T passes of histogram -> selection, with variation between passes (never
// after the last one), charging rho_pe / T per histogram. The private set
// is embedded exactly once. T = 0 degenerates to the first n_syn
// initialization texts.
inline PeResult run_pe(const std::vector<std::string>& private_texts,
                       const CandidatePool& init_pool, const PeParams& params,
                       const PeBackends& backends, SpendLedger* ledger = nullptr,
                       const PeObserver& observer = {}) {
  params.validate();
  init_pool.validate();
  if (init_pool.size() == 0) throw InvalidArgument("run_pe: empty init pool");

  PeResult result;
  if (params.iterations == 0) {
    if (init_pool.size() < params.n_syn) {
      throw InvalidArgument("run_pe: init pool smaller than n_syn with T = 0");
    }
    result.pool.generation = init_pool.generation;
    result.pool.texts.assign(init_pool.texts.begin(),
                             init_pool.texts.begin() + static_cast<long>(params.n_syn));
    result.pool.embeddings.assign(
        init_pool.embeddings.begin(),
        init_pool.embeddings.begin() + static_cast<long>(params.n_syn));
    return result;
  }

  std::vector<std::vector<double>> private_embeddings =
      backends.embedder.embed(private_texts);

  // Even split; capping per pass keeps the composed module total at or
  // epsilon-below rho_pe, and the shared ledger total within rho_global.
  const double planned = params.rho_pe / static_cast<double>(params.iterations);
  std::vector<double> charges;
  CandidatePool pool = init_pool;
  CandidatePool selected;
  for (std::size_t t = 1; t <= params.iterations; ++t) {
    std::vector<double> global_prior =
        ledger != nullptr ? ledger->charges() : charges;
    CappedNoise noise =
        noise_within(charges, planned, params.rho_pe, global_prior, params.rho_global);
    if (!(noise.rho > 0.0)) throw BudgetError("run_pe: pe budget exhausted before pass");
    VoteHistogram histogram = dp_nn_histogram(
        private_embeddings, pool, noise.sigma, mix64(params.seed ^ mix64(1000 + t)),
        ledger, "pe/histogram/iter" + std::to_string(t));
    charges.push_back(noise.rho);

    std::vector<std::size_t> indices = select_candidate_indices(
        pool, histogram, params.n_syn, mix64(params.seed ^ mix64(2000 + t)));
    selected = CandidatePool{};
    selected.generation = pool.generation;
    selected.texts.reserve(indices.size());
    selected.embeddings.reserve(indices.size());
    for (std::size_t i : indices) {
      selected.texts.push_back(pool.texts[i]);
      selected.embeddings.push_back(pool.embeddings[i]);
    }

    result.rho_spent = compose(charges);
    if (observer) observer(PeIterationInfo{t, result.rho_spent, selected});

    if (t < params.iterations) {
      std::size_t failed = 0;
      pool = variation(selected.texts, backends, params,
                       mix64(params.seed ^ mix64(3000 + t)), selected.generation + 1,
                       &failed);
      result.variation_failures += failed;
    }
  }

  result.pool = std::move(selected);
  return result;
}

}  // namespace maple
