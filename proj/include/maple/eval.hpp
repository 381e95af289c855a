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
//
// Distribution-alignment evaluation: per-attribute Jensen-Shannon distance
// over annotated metadata plus a quantized divergence-frontier score over
// embeddings (k-means histograms, smoothed, trapezoid area under the
// exp(-c*KL) frontier).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maple/annotator.hpp"
#include "maple/backends.hpp"
#include "maple/error.hpp"
#include "maple/rng.hpp"
#include "maple/schema.hpp"

namespace maple {

// Evaluation outcome for one synthetic-vs-private comparison. avg_jsd is
// always the unweighted mean of the per-attribute values.
struct EvalReport {
  std::map<std::string, double> per_attribute_jsd;
  double avg_jsd = 0.0;
  double mauve_lite = 0.0;
  // Sizes of the two compared samples: (synthetic, private).
  std::pair<std::size_t, std::size_t> sample_sizes{0, 0};

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["per_attribute_jsd"] = nlohmann::ordered_json::object();
    for (const auto& [name, value] : per_attribute_jsd) {
      j["per_attribute_jsd"][name] = value;
    }
    j["avg_jsd"] = avg_jsd;
    j["mauve_lite"] = mauve_lite;
    j["sample_sizes"] = {sample_sizes.first, sample_sizes.second};
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport report;
    for (const auto& [name, value] : j.at("per_attribute_jsd").items()) {
      report.per_attribute_jsd[name] = value.get<double>();
    }
    report.avg_jsd = j.at("avg_jsd").get<double>();
    report.mauve_lite = j.at("mauve_lite").get<double>();
    report.sample_sizes = {j.at("sample_sizes").at(0).get<std::size_t>(),
                           j.at("sample_sizes").at(1).get<std::size_t>()};
    return report;
  }

  static std::string csv_header() {
    return "avg_jsd,mauve_lite,n_synthetic,n_private";
  }

  std::string csv_row() const {
    // nlohmann emits shortest round-trip decimals, matching the JSON output.
    std::ostringstream out;
    out << nlohmann::json(avg_jsd).dump() << ',' << nlohmann::json(mauve_lite).dump()
        << ',' << sample_sizes.first << ',' << sample_sizes.second;
    return out.str();
  }
};

namespace eval_detail {

inline void check_distribution(const std::vector<double>& p, const char* which) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) {
      throw InvalidArgument(std::string("js_distance: ") + which +
                            " has a negative or NaN entry");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvalidArgument(std::string("js_distance: ") + which +
                          " does not sum to 1");
  }
}

}  // namespace eval_detail

// Jensen-Shannon distance with base-2 logs: sqrt((KL(p||m) + KL(q||m)) / 2),
// m = (p+q)/2, with 0*log(0/x) = 0. Base 2 puts the range exactly in [0,1].
inline double js_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.empty() || p.size() != q.size()) {
    throw InvalidArgument("js_distance: distributions must be nonempty and equal length");
  }
  eval_detail::check_distribution(p, "p");
  eval_detail::check_distribution(q, "q");
  double divergence = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) divergence += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) divergence += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return std::sqrt(std::clamp(divergence, 0.0, 1.0));
}

// Per-attribute JS distance between the 1-way empirical frequencies of two
// tables, plus their unweighted mean. Fills only the JSD fields and the
// table sizes; mauve_lite stays 0 for the caller to set.
inline EvalReport metadata_jsd(const MetadataTable& synthetic,
                               const MetadataTable& private_table,
                               const MetadataSchema& schema) {
  if (synthetic.rows.empty() || private_table.rows.empty()) {
    throw InvalidArgument("metadata_jsd: both tables must be nonempty");
  }
  auto same_schema = [&](const MetadataTable& t) {
    return t.schema.to_json() == schema.to_json();
  };
  if (!same_schema(synthetic) || !same_schema(private_table)) {
    throw InvalidArgument("metadata_jsd: tables do not share the given schema");
  }

  auto frequencies = [](const MetadataTable& t, std::size_t attribute,
                        std::size_t options) {
    std::vector<double> freq(options, 0.0);
    for (const MetadataRecord& row : t.rows) freq[row.values[attribute]] += 1.0;
    for (double& f : freq) f /= static_cast<double>(t.rows.size());
    return freq;
  };

  EvalReport report;
  double total = 0.0;
  for (std::size_t a = 0; a < schema.attribute_count(); ++a) {
    const AttributeDomain& domain = schema.attribute(a);
    double d = js_distance(frequencies(synthetic, a, domain.size()),
                           frequencies(private_table, a, domain.size()));
    report.per_attribute_jsd[domain.name] = d;
    total += d;
  }
  report.avg_jsd = total / static_cast<double>(schema.attribute_count());
  report.sample_sizes = {synthetic.size(), private_table.size()};
  return report;
}

// Quantized divergence-frontier parameters. k_clusters = 0 selects the
// default min(50, union_size/10), floored at 2.
struct MauveParams {
  std::size_t k_clusters = 0;
  double scale_c = 5.0;
  std::size_t lambda_grid_size = 99;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(scale_c > 0.0)) {
      throw InvalidArgument("MauveParams: scale_c must be positive");
    }
    if (lambda_grid_size == 0) {
      throw InvalidArgument("MauveParams: lambda_grid_size must be >= 1");
    }
  }
};

namespace eval_detail {

// Seeded Lloyd k-means over the point set, at most 100 iterations.
// The whole computation runs in a canonical point order (squared norm,
// then lexicographic) so the result depends on the point multiset, not
// on input order; this keeps the downstream score symmetric in its two
// argument sets. Initial centroids are k distinct positions; distance
// ties and empty clusters resolve deterministically (lowest index, keep
// old centroid).
inline std::vector<std::size_t> kmeans_assign(
    const std::vector<std::vector<double>>& input_points, std::size_t k,
    std::uint64_t seed) {
  const std::size_t n = input_points.size();
  const std::size_t dim = input_points.front().size();

  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (double x : input_points[i]) norms[i] += x * x;
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    if (norms[a] != norms[b]) return norms[a] < norms[b];
    return input_points[a] < input_points[b];
  });
  std::vector<const std::vector<double>*> points(n);
  for (std::size_t pos = 0; pos < n; ++pos) points[pos] = &input_points[perm[pos]];

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + rng.uniform_index(n - i);
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  for (std::size_t i = 0; i < k; ++i) centroids.push_back(*points[order[i]]);

  auto squared_distance = [dim](const std::vector<double>& a,
                                const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      double diff = a[j] - b[j];
      d += diff * diff;
    }
    return d;
  };

  std::vector<std::size_t> assignment(n, 0);
  for (int iteration = 0; iteration < 100; ++iteration) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = squared_distance(*points[i], centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        double d = squared_distance(*points[i], centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed && iteration > 0) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) sums[assignment[i]][j] += (*points[i])[j];
      ++counts[assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < dim; ++j) {
        centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
      }
    }
  }

  std::vector<std::size_t> labels(n);
  for (std::size_t pos = 0; pos < n; ++pos) labels[perm[pos]] = assignment[pos];
  return labels;
}

// Natural-log KL divergence between strictly positive histograms; the
// frontier map exp(-c*KL) pairs with natural logs.
inline double kl_divergence(const std::vector<double>& a, const std::vector<double>& b) {
  double kl = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > 0.0) kl += a[i] * std::log(a[i] / b[i]);
  }
  return kl;
}

}  // namespace eval_detail

// MAUVE-style score: seeded k-means over the union of both embedding sets,
// add-1 smoothed cluster histograms P (synthetic) and Q (private), then the
// trapezoid area under the divergence frontier
//   { (exp(-c*KL(Q||R_l)), exp(-c*KL(P||R_l))) : R_l = l*P + (1-l)*Q }
// for l on a uniform grid in (0,1), closed with endpoints (1,0) and (0,1).
inline double mauve_lite(const std::vector<std::vector<double>>& synthetic,
                         const std::vector<std::vector<double>>& private_embeddings,
                         const MauveParams& params = {}) {
  if (synthetic.empty() || private_embeddings.empty()) {
    throw InvalidArgument("mauve_lite: both embedding sets must be nonempty");
  }
  params.validate();

  const std::size_t n_syn = synthetic.size();
  const std::size_t n_priv = private_embeddings.size();
  const std::size_t n = n_syn + n_priv;
  std::size_t k = params.k_clusters;
  if (k == 0) k = std::max<std::size_t>(2, std::min<std::size_t>(50, n / 10));
  if (k < 2) throw InvalidArgument("mauve_lite: k_clusters must be >= 2");
  if (k > n) throw InvalidArgument("mauve_lite: k_clusters exceeds total points");

  std::vector<std::vector<double>> points;
  points.reserve(n);
  const std::size_t dim = synthetic.front().size();
  for (const auto* set : {&synthetic, &private_embeddings}) {
    for (const auto& e : *set) {
      if (e.size() != dim) {
        throw InvalidArgument("mauve_lite: inconsistent embedding dimensions");
      }
      points.push_back(e);
    }
  }

  auto assignment = eval_detail::kmeans_assign(points, k, params.seed);
  std::vector<double> p(k, 1.0), q(k, 1.0);  // add-1 smoothing
  for (std::size_t i = 0; i < n_syn; ++i) p[assignment[i]] += 1.0;
  for (std::size_t i = n_syn; i < n; ++i) q[assignment[i]] += 1.0;
  for (double& x : p) x /= static_cast<double>(n_syn + k);
  for (double& x : q) x /= static_cast<double>(n_priv + k);

  std::vector<std::pair<double, double>> curve;
  curve.reserve(params.lambda_grid_size + 2);
  curve.emplace_back(1.0, 0.0);
  std::vector<double> r(k);
  for (std::size_t i = 1; i <= params.lambda_grid_size; ++i) {
    double lambda =
        static_cast<double>(i) / static_cast<double>(params.lambda_grid_size + 1);
    for (std::size_t c = 0; c < k; ++c) r[c] = lambda * p[c] + (1.0 - lambda) * q[c];
    curve.emplace_back(std::exp(-params.scale_c * eval_detail::kl_divergence(q, r)),
                       std::exp(-params.scale_c * eval_detail::kl_divergence(p, r)));
  }
  curve.emplace_back(0.0, 1.0);

  // x decreases monotonically along the curve, so the trapezoid walk is
  // a plain area under the frontier.
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    area += (curve[i].first - curve[i + 1].first) *
            (curve[i].second + curve[i + 1].second) * 0.5;
  }
  return std::clamp(area, 0.0, 1.0);
}

struct EvalParams {
  AnnotateOptions annotate;
  MauveParams mauve;
  // Evaluation aborts when either text set loses more than this fraction
  // of rows to annotation failures (the report would be unrepresentative).
  double max_annotation_failure = 0.2;

  void validate() const {
    annotate.validate();
    mauve.validate();
    if (!(max_annotation_failure >= 0.0 && max_annotation_failure <= 1.0)) {
      throw InvalidArgument("EvalParams: max_annotation_failure must be in [0, 1]");
    }
  }
};

// Full harness: annotate both text sets, compare per-attribute metadata
// distributions, embed both sets, and score the embedding distributions.
inline EvalReport evaluate(const std::vector<std::string>& synthetic_texts,
                           const std::vector<std::string>& private_texts,
                           const MetadataSchema& schema,
                           CompletionBackend& annotator_backend,
                           EmbeddingBackend& embedder,
                           const EvalParams& params = {}) {
  if (synthetic_texts.empty() || private_texts.empty()) {
    throw InvalidArgument("evaluate: both text sets must be nonempty");
  }
  params.validate();

  auto annotate_checked = [&](const std::vector<std::string>& texts, const char* which) {
    AnnotationRun run = annotate_corpus(texts, annotator_backend, schema, params.annotate);
    double rate =
        static_cast<double>(run.failure_count()) / static_cast<double>(texts.size());
    if (rate > params.max_annotation_failure) {
      std::ostringstream msg;
      msg << "evaluate: " << which << " annotation failure rate " << rate
          << " exceeds ceiling " << params.max_annotation_failure << " ("
          << run.failure_count() << " of " << texts.size() << " texts)";
      throw EvalError(msg.str());
    }
    return run;
  };
  AnnotationRun synthetic_run = annotate_checked(synthetic_texts, "synthetic");
  AnnotationRun private_run = annotate_checked(private_texts, "private");

  EvalReport report = metadata_jsd(synthetic_run.table, private_run.table, schema);
  report.mauve_lite = mauve_lite(embedder.embed(synthetic_texts),
                                 embedder.embed(private_texts), params.mauve);
  report.sample_sizes = {synthetic_texts.size(), private_texts.size()};
  return report;
}

}  // namespace maple
