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

// Workload-adaptive iterative mechanism for private marginal synthesis.
//
// Rounds alternate exponential-mechanism clique selection with Gaussian
// marginal measurement; a log-linear model is refit after each measurement
// by mirror descent on a measurement-weighted least-squares objective over
// marginal frequencies. Budget is tracked in zCDP and every charge is
// capped so the composed ledger total never exceeds the grant.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maple/error.hpp"
#include "maple/factor.hpp"
#include "maple/graphical_model.hpp"
#include "maple/privacy.hpp"
#include "maple/rng.hpp"
#include "maple/schema.hpp"

namespace maple {

struct Workload {
  std::vector<std::vector<std::size_t>> cliques;
  std::vector<double> weights;

  void validate(const MetadataSchema& schema) const {
    if (cliques.empty()) throw InvalidArgument("Workload: empty");
    if (cliques.size() != weights.size()) {
      throw InvalidArgument("Workload: cliques/weights size mismatch");
    }
    for (std::size_t i = 0; i < cliques.size(); ++i) {
      auto canon = canonical_clique(cliques[i], schema.attribute_count());
      if (canon != cliques[i]) {
        throw InvalidArgument("Workload: cliques must be ascending and distinct");
      }
      if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
        throw InvalidArgument("Workload: weights must be positive and finite");
      }
      for (std::size_t j = i + 1; j < cliques.size(); ++j) {
        if (cliques[i] == cliques[j]) throw InvalidArgument("Workload: duplicate clique");
      }
    }
  }
};

// All 1-way and 2-way marginals at weight 1.
inline Workload default_workload(const MetadataSchema& schema) {
  Workload w;
  std::size_t k = schema.attribute_count();
  for (std::size_t i = 0; i < k; ++i) {
    w.cliques.push_back({i});
    w.weights.push_back(1.0);
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      w.cliques.push_back({i, j});
      w.weights.push_back(1.0);
    }
  }
  return w;
}

// One noisy marginal release.
struct Measurement {
  std::vector<std::size_t> clique;
  std::vector<double> noisy_counts;
  double sigma = 0.0;  // 0 means noiseless (infinite rho)
};

// Gaussian-mechanism marginal query. A single record changes one cell of
// the count vector by one, so the L2 sensitivity is 1. Charges the actual
// mechanism cost to the ledger when one is given.
inline Measurement measure_marginal(const MetadataTable& table,
                                    std::span<const std::size_t> clique, double sigma,
                                    std::uint64_t seed, SpendLedger* ledger = nullptr,
                                    const std::string& label = "aim/measure") {
  if (std::isnan(sigma) || sigma < 0.0) {
    throw InvalidArgument("measure_marginal: sigma must be non-negative");
  }
  Measurement m;
  m.clique = canonical_clique(clique, table.schema.attribute_count());
  m.noisy_counts = project_marginal(table, m.clique);
  m.sigma = sigma;
  if (sigma > 0.0) {
    Rng rng(seed);
    for (double& c : m.noisy_counts) c += sigma * rng.gaussian();
  }
  if (ledger != nullptr) ledger->append(label, rho_of_gaussian(1.0, sigma));
  return m;
}

struct EstimateParams {
  std::size_t max_iters = 1000;
  double tol = 1e-7;
};

// Mirror-descent fit of a log-linear model to noisy marginal measurements.
// Objective: sum_m w_m * ||mu_clique(m) - y_m||_2^2 over marginal
// frequencies, w_m = 1/sigma_m^2 (noiseless measurements weigh as sigma=1).
// The model total n_hat comes from the first noiseless measurement's exact
// sum when one exists, else from the precision-weighted mean of measurement
// totals.
inline LogLinearModel estimate(std::span<const Measurement> measurements,
                               const MetadataSchema& schema,
                               const EstimateParams& params = {}) {
  if (measurements.empty()) throw InvalidArgument("estimate: no measurements");
  std::size_t k = schema.attribute_count();

  std::vector<std::vector<std::size_t>> cliques;
  std::vector<std::vector<std::size_t>> members(measurements.size());
  for (std::size_t m = 0; m < measurements.size(); ++m) {
    auto canon = canonical_clique(measurements[m].clique, k);
    std::size_t cells = 1;
    for (std::size_t a : canon) cells *= schema.attribute(a).size();
    if (measurements[m].noisy_counts.size() != cells) {
      throw InvalidArgument("estimate: measurement count vector has wrong size");
    }
    std::size_t idx = cliques.size();
    for (std::size_t c = 0; c < cliques.size(); ++c) {
      if (cliques[c] == canon) {
        idx = c;
        break;
      }
    }
    if (idx == cliques.size()) cliques.push_back(canon);
    members[m].push_back(idx);
  }
  // Attributes no measurement touches still need a (uniform) potential so
  // the model covers the full schema.
  std::vector<char> covered(k, 0);
  for (const auto& c : cliques) {
    for (std::size_t a : c) covered[a] = 1;
  }
  for (std::size_t a = 0; a < k; ++a) {
    if (!covered[a]) cliques.push_back({a});
  }

  double n_hat = 0.0;
  bool have_exact = false;
  for (const Measurement& m : measurements) {
    if (m.sigma == 0.0) {
      n_hat = 0.0;
      for (double c : m.noisy_counts) n_hat += c;
      have_exact = true;
      break;
    }
  }
  if (!have_exact) {
    double wsum = 0.0, acc = 0.0;
    for (const Measurement& m : measurements) {
      double total = 0.0;
      for (double c : m.noisy_counts) total += c;
      double w = 1.0 / (m.sigma * m.sigma);
      acc += w * total;
      wsum += w;
    }
    n_hat = acc / wsum;
  }
  n_hat = std::max(n_hat, 1.0);

  std::vector<std::size_t> dims;
  for (std::size_t a = 0; a < k; ++a) dims.push_back(schema.attribute(a).size());
  JunctionTree jt = JunctionTree::build(dims, cliques);

  std::vector<Factor> thetas;
  for (const auto& c : cliques) {
    std::vector<std::size_t> cdims;
    for (std::size_t a : c) cdims.push_back(schema.attribute(a).size());
    thetas.push_back(Factor::constant(c, cdims, 0.0));
  }

  // Per-measurement targets in frequency space and weights.
  std::vector<std::vector<double>> y(measurements.size());
  std::vector<double> w(measurements.size());
  std::vector<std::size_t> meas_clique(measurements.size());
  for (std::size_t m = 0; m < measurements.size(); ++m) {
    meas_clique[m] = members[m][0];
    y[m].reserve(measurements[m].noisy_counts.size());
    for (double c : measurements[m].noisy_counts) y[m].push_back(c / n_hat);
    double sigma_tilde = measurements[m].sigma == 0.0 ? 1.0 : measurements[m].sigma;
    w[m] = 1.0 / (sigma_tilde * sigma_tilde);
  }

  // Node assignment for cheap clique-marginal extraction.
  std::vector<std::size_t> clique_node(cliques.size());
  for (std::size_t c = 0; c < cliques.size(); ++c) {
    bool placed = false;
    for (std::size_t v = 0; v < jt.nodes.size() && !placed; ++v) {
      if (std::includes(jt.nodes[v].scope.begin(), jt.nodes[v].scope.end(),
                        cliques[c].begin(), cliques[c].end())) {
        clique_node[c] = v;
        placed = true;
      }
    }
    if (!placed) throw StructureError("estimate: clique not covered by junction tree");
  }

  auto infer_mu = [&](const std::vector<Factor>& th) {
    std::vector<Factor> marginals =
        gm_detail::calibrate(jt, gm_detail::build_node_potentials(jt, th));
    std::vector<std::vector<double>> mu(cliques.size());
    for (std::size_t c = 0; c < cliques.size(); ++c) {
      Factor f = marginalize_lse(marginals[clique_node[c]], cliques[c]);
      mu[c].reserve(f.cells());
      for (double v : f.values) mu[c].push_back(std::exp(v));
    }
    return mu;
  };
  auto loss_of = [&](const std::vector<std::vector<double>>& mu) {
    double loss = 0.0;
    for (std::size_t m = 0; m < measurements.size(); ++m) {
      const auto& mc = mu[meas_clique[m]];
      for (std::size_t i = 0; i < mc.size(); ++i) {
        double d = mc[i] - y[m][i];
        loss += w[m] * d * d;
      }
    }
    return loss;
  };

  std::vector<std::vector<double>> mu = infer_mu(thetas);
  double loss = loss_of(mu);
  double step = 1.0;
  for (std::size_t iter = 0; iter < params.max_iters; ++iter) {
    std::vector<std::vector<double>> grad(cliques.size());
    for (std::size_t c = 0; c < cliques.size(); ++c) grad[c].assign(mu[c].size(), 0.0);
    for (std::size_t m = 0; m < measurements.size(); ++m) {
      auto& g = grad[meas_clique[m]];
      const auto& mc = mu[meas_clique[m]];
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += 2.0 * w[m] * (mc[i] - y[m][i]);
      }
    }
    double gmax = 0.0, gsq = 0.0;
    for (const auto& g : grad) {
      for (double v : g) {
        gmax = std::max(gmax, std::fabs(v));
        gsq += v * v;
      }
    }
    if (gmax < params.tol) break;

    bool accepted = false;
    for (int half = 0; half < 60; ++half) {
      std::vector<Factor> trial = thetas;
      for (std::size_t c = 0; c < cliques.size(); ++c) {
        for (std::size_t i = 0; i < trial[c].values.size(); ++i) {
          trial[c].values[i] -= step * grad[c][i];
        }
      }
      auto trial_mu = infer_mu(trial);
      double trial_loss = loss_of(trial_mu);
      if (trial_loss <= loss - 1e-4 * step * gsq || trial_loss < loss) {
        thetas = std::move(trial);
        mu = std::move(trial_mu);
        loss = trial_loss;
        step = std::min(step * 2.0, 1e8);
        accepted = true;
        break;
      }
      step /= 2.0;
    }
    if (!accepted) break;
  }

  std::vector<std::vector<double>> theta_tables;
  theta_tables.reserve(thetas.size());
  for (const Factor& t : thetas) theta_tables.push_back(t.values);
  return LogLinearModel(schema, cliques, std::move(theta_tables), n_hat);
}

// Exponential-mechanism clique choice. Quality of candidate i:
//   q_i = w_i * (||true_counts - model_counts||_1
//                 - sqrt(2/pi) * sigma_next * cells_i)
// with sensitivity max_i w_i. rho_select = inf picks the argmax
// deterministically (ties to the lowest index).
inline std::size_t select_clique(const Workload& candidates, const LogLinearModel& model,
                                 const MetadataTable& table, double rho_select,
                                 double sigma_next, std::uint64_t seed) {
  candidates.validate(table.schema);
  if (std::isnan(rho_select) || rho_select <= 0.0) {
    throw InvalidArgument("select_clique: rho_select must be positive");
  }
  if (std::isnan(sigma_next) || sigma_next < 0.0) {
    throw InvalidArgument("select_clique: sigma_next must be non-negative");
  }
  std::size_t n = candidates.cliques.size();
  std::vector<double> quality(n);
  double max_weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& clique = candidates.cliques[i];
    std::vector<double> truth = project_marginal(table, clique);
    std::vector<double> modeled = model.marginal_counts(clique);
    double l1 = 0.0;
    for (std::size_t j = 0; j < truth.size(); ++j) l1 += std::fabs(truth[j] - modeled[j]);
    double penalty = std::sqrt(2.0 / std::numbers::pi) * sigma_next *
                     static_cast<double>(truth.size());
    quality[i] = candidates.weights[i] * (l1 - penalty);
    max_weight = std::max(max_weight, candidates.weights[i]);
  }
  if (std::isinf(rho_select)) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (quality[i] > quality[best]) best = i;
    }
    return best;
  }
  double eps_select = std::sqrt(8.0 * rho_select);
  double scale = eps_select / (2.0 * max_weight);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) max_logit = std::max(max_logit, scale * quality[i]);
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) probs[i] = std::exp(scale * quality[i] - max_logit);
  Rng rng(seed);
  return rng.categorical(probs);
}

struct AimParams {
  std::size_t initial_rounds = 16;
  double init_fraction = 0.1;
  std::uint64_t model_cell_cap = 10'000'000;
  double anneal_factor = 2.0;
  std::size_t max_rounds = 1000;
  std::uint64_t seed = 0;
  // Optional run-wide cap: when a shared ledger carries entries from other
  // mechanisms, every charge also keeps the whole ledger's composed total
  // within this grant.
  double rho_global = std::numeric_limits<double>::infinity();
  EstimateParams estimate;
};

// Full mechanism: 1-way initialization on init_fraction of the budget, then
// adaptive select/measure rounds until the grant is exhausted. Rounds whose
// measurement moves the model less than the expected noise magnitude double
// the per-round budget (annealing). rho_total = inf measures the whole
// workload exactly instead.
inline LogLinearModel run_aim(const MetadataTable& table, const Workload& workload,
                              double rho_total, const AimParams& params = {},
                              SpendLedger* ledger = nullptr) {
  workload.validate(table.schema);
  if (std::isnan(rho_total) || rho_total <= 0.0) {
    throw InvalidArgument("run_aim: rho_total must be positive");
  }
  if (params.initial_rounds == 0 || !(params.init_fraction > 0.0) ||
      !(params.init_fraction < 1.0)) {
    throw InvalidArgument("run_aim: bad initial_rounds or init_fraction");
  }
  if (std::isnan(params.rho_global) || params.rho_global < 0.0) {
    throw InvalidArgument("run_aim: rho_global must be non-negative");
  }
  const MetadataSchema& schema = table.schema;
  std::size_t k = schema.attribute_count();
  Rng rng(params.seed);

  std::vector<Measurement> measurements;
  std::vector<std::vector<std::size_t>> model_cliques;
  for (std::size_t a = 0; a < k; ++a) model_cliques.push_back({a});

  if (std::isinf(rho_total)) {
    for (std::size_t a = 0; a < k; ++a) {
      measurements.push_back(measure_marginal(
          table, std::vector<std::size_t>{a}, 0.0, 0, ledger,
          "aim/init/" + schema.attribute(a).name));
    }
    for (std::size_t i = 0; i < workload.cliques.size(); ++i) {
      if (workload.cliques[i].size() == 1) continue;  // measured above
      auto extended = model_cliques;
      extended.push_back(workload.cliques[i]);
      if (jt_total_cells(schema, extended) > params.model_cell_cap) continue;
      model_cliques.push_back(workload.cliques[i]);
      measurements.push_back(measure_marginal(table, workload.cliques[i], 0.0, 0,
                                              ledger, "aim/measure/exact"));
    }
    return estimate(measurements, schema, params.estimate);
  }

  const double grant = rho_total;
  std::vector<double> spent;

  // Initialization: all 1-way marginals on init_fraction of the grant.
  double per_init = grant * params.init_fraction / static_cast<double>(k);
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<double> global_prior = ledger != nullptr ? ledger->charges() : spent;
    CappedNoise noise =
        noise_within(spent, per_init, grant, global_prior, params.rho_global);
    if (!(noise.rho > 0.0)) {
      throw BudgetError("run_aim: grant too small for initialization");
    }
    Measurement m =
        measure_marginal(table, std::vector<std::size_t>{a}, noise.sigma,
                         rng.fork(1000 + a).seed(), ledger,
                         "aim/init/" + schema.attribute(a).name);
    spent.push_back(noise.rho);
    measurements.push_back(std::move(m));
  }
  LogLinearModel model = estimate(measurements, schema, params.estimate);

  double per_round =
      grant * (1.0 - params.init_fraction) / static_cast<double>(params.initial_rounds);
  for (std::size_t round = 0; round < params.max_rounds; ++round) {
    double remaining = grant - compose(spent);
    if (remaining <= grant * 1e-12) break;
    double rho_round = std::min(per_round, remaining);

    std::vector<double> global_prior = ledger != nullptr ? ledger->charges() : spent;
    double c_sel = cap_charge_joint(spent, rho_round / 2.0, grant, global_prior,
                                    params.rho_global);
    {
      std::vector<double> after_sel = spent;
      after_sel.push_back(c_sel);
      std::vector<double> global_after = global_prior;
      global_after.push_back(c_sel);
      double c_meas = cap_charge_joint(after_sel, rho_round / 2.0, grant, global_after,
                                       params.rho_global);
      if (c_sel <= 0.0 || c_meas <= 0.0) break;
    }

    Workload filtered;
    for (std::size_t i = 0; i < workload.cliques.size(); ++i) {
      auto extended = model_cliques;
      extended.push_back(workload.cliques[i]);
      if (jt_total_cells(schema, extended) > params.model_cell_cap) continue;
      filtered.cliques.push_back(workload.cliques[i]);
      filtered.weights.push_back(workload.weights[i]);
    }
    if (filtered.cliques.empty()) break;

    spent.push_back(c_sel);
    if (ledger != nullptr) {
      ledger->append("aim/select/round" + std::to_string(round), c_sel);
    }
    std::vector<double> global_meas = ledger != nullptr ? ledger->charges() : spent;
    CappedNoise meas_noise =
        noise_within(spent, rho_round / 2.0, grant, global_meas, params.rho_global);
    if (!(meas_noise.rho > 0.0)) break;  // unreachable: mirrors the pre-check
    double sigma_next = meas_noise.sigma;

    std::size_t pick = select_clique(filtered, model, table, c_sel, sigma_next,
                                     rng.fork(2000 + round).seed());
    const auto& clique = filtered.cliques[pick];

    Measurement m = measure_marginal(table, clique, sigma_next,
                                     rng.fork(3000 + round).seed(), ledger,
                                     "aim/measure/round" + std::to_string(round));
    spent.push_back(meas_noise.rho);
    measurements.push_back(std::move(m));
    if (std::find(model_cliques.begin(), model_cliques.end(), clique) ==
        model_cliques.end()) {
      model_cliques.push_back(clique);
    }

    LogLinearModel next = estimate(measurements, schema, params.estimate);
    std::vector<double> before = model.marginal_counts(clique);
    std::vector<double> after = next.marginal_counts(clique);
    double moved = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      moved += std::fabs(after[i] - before[i]);
    }
    double expected_noise = std::sqrt(2.0 / std::numbers::pi) * sigma_next *
                            static_cast<double>(before.size());
    if (moved < expected_noise) {
      per_round = std::min(per_round * params.anneal_factor, grant);
    }
    model = std::move(next);
  }
  return model;
}

// Draw synthetic metadata rows from a fitted model.
inline MetadataTable sample_synthetic(const LogLinearModel& model, std::size_t n_rows,
                                      std::uint64_t seed) {
  return model.sample(n_rows, seed);
}

}  // namespace maple
