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

// Log-linear models over categorical schemas with junction-tree inference.
//
// The model is P(x) proportional to exp(sum_c theta_c(x_c)) for a set of
// clique potentials. Structure: min-fill triangulation of the clique graph,
// maximal-clique extraction, and a maximum spanning forest on separator
// sizes. Inference is two-pass sum-product in log space. Everything is
// deterministic: ties break on lowest index throughout.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maple/error.hpp"
#include "maple/factor.hpp"
#include "maple/rng.hpp"
#include "maple/schema.hpp"

namespace maple {

inline std::vector<std::size_t> canonical_clique(std::span<const std::size_t> attrs,
                                                 std::size_t attr_count) {
  if (attrs.empty()) throw InvalidArgument("clique: empty attribute set");
  std::vector<std::size_t> c(attrs.begin(), attrs.end());
  std::sort(c.begin(), c.end());
  if (std::adjacent_find(c.begin(), c.end()) != c.end()) {
    throw InvalidArgument("clique: duplicate attributes");
  }
  if (c.back() >= attr_count) {
    throw InvalidArgument("clique: attribute index out of range");
  }
  return c;
}

struct JunctionTree {
  struct Node {
    std::vector<std::size_t> scope;      // ascending attribute indices
    std::vector<std::size_t> dims;       // domain sizes of scope
    int parent = -1;
    std::vector<int> children;
    std::vector<std::size_t> separator;  // scope intersect parent scope
    int component = 0;
  };

  std::vector<Node> nodes;
  std::vector<int> order;  // parents before children, component roots first
  int components = 0;

  std::uint64_t total_cells() const {
    std::uint64_t total = 0;
    for (const Node& n : nodes) {
      std::uint64_t c = 1;
      for (std::size_t d : n.dims) {
        if (c > std::numeric_limits<std::uint64_t>::max() / d) {
          return std::numeric_limits<std::uint64_t>::max();
        }
        c *= d;
      }
      if (total > std::numeric_limits<std::uint64_t>::max() - c) {
        return std::numeric_limits<std::uint64_t>::max();
      }
      total += c;
    }
    return total;
  }

  // Builds the tree over all attributes 0..attr_dims.size()-1. Attributes
  // absent from every clique become singleton nodes.
  static JunctionTree build(const std::vector<std::size_t>& attr_dims,
                            const std::vector<std::vector<std::size_t>>& cliques) {
    std::size_t k = attr_dims.size();
    if (k == 0) throw InvalidArgument("JunctionTree: no attributes");
    std::vector<std::vector<char>> adj(k, std::vector<char>(k, 0));
    for (const auto& clique : cliques) {
      canonical_clique(clique, k);
      for (std::size_t a : clique) {
        for (std::size_t b : clique) {
          if (a != b) adj[a][b] = 1;
        }
      }
    }

    // Min-fill elimination; ties break on the lowest vertex index.
    std::vector<char> remaining(k, 1);
    std::vector<std::vector<std::size_t>> elim_cliques;
    for (std::size_t step = 0; step < k; ++step) {
      std::size_t best = k;
      std::size_t best_fill = std::numeric_limits<std::size_t>::max();
      for (std::size_t v = 0; v < k; ++v) {
        if (!remaining[v]) continue;
        std::vector<std::size_t> nbrs;
        for (std::size_t u = 0; u < k; ++u) {
          if (u != v && remaining[u] && adj[v][u]) nbrs.push_back(u);
        }
        std::size_t fill = 0;
        for (std::size_t i = 0; i < nbrs.size(); ++i) {
          for (std::size_t j = i + 1; j < nbrs.size(); ++j) {
            if (!adj[nbrs[i]][nbrs[j]]) ++fill;
          }
        }
        if (fill < best_fill) {
          best_fill = fill;
          best = v;
        }
      }
      std::vector<std::size_t> clique{best};
      for (std::size_t u = 0; u < k; ++u) {
        if (u != best && remaining[u] && adj[best][u]) clique.push_back(u);
      }
      std::sort(clique.begin(), clique.end());
      for (std::size_t a : clique) {
        for (std::size_t b : clique) {
          if (a != b) adj[a][b] = 1;
        }
      }
      remaining[best] = 0;
      elim_cliques.push_back(std::move(clique));
    }

    // Keep maximal cliques only; on duplicates the earliest survives.
    std::vector<std::vector<std::size_t>> maximal;
    for (std::size_t i = 0; i < elim_cliques.size(); ++i) {
      bool contained = false;
      for (std::size_t j = 0; j < elim_cliques.size() && !contained; ++j) {
        if (i == j) continue;
        const auto& a = elim_cliques[i];
        const auto& b = elim_cliques[j];
        bool subset = std::includes(b.begin(), b.end(), a.begin(), a.end());
        if (subset && (a.size() < b.size() || j < i)) contained = true;
      }
      if (!contained) maximal.push_back(elim_cliques[i]);
    }

    JunctionTree jt;
    for (const auto& scope : maximal) {
      Node n;
      n.scope = scope;
      for (std::size_t a : scope) n.dims.push_back(attr_dims[a]);
      jt.nodes.push_back(std::move(n));
    }

    // Maximum spanning forest on separator sizes (Kruskal; ties by lowest
    // endpoint pair).
    struct Edge {
      std::size_t w, i, j;
    };
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < jt.nodes.size(); ++i) {
      for (std::size_t j = i + 1; j < jt.nodes.size(); ++j) {
        std::vector<std::size_t> inter;
        std::set_intersection(jt.nodes[i].scope.begin(), jt.nodes[i].scope.end(),
                              jt.nodes[j].scope.begin(), jt.nodes[j].scope.end(),
                              std::back_inserter(inter));
        if (!inter.empty()) edges.push_back({inter.size(), i, j});
      }
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      if (a.w != b.w) return a.w > b.w;
      if (a.i != b.i) return a.i < b.i;
      return a.j < b.j;
    });
    std::vector<std::size_t> uf(jt.nodes.size());
    std::iota(uf.begin(), uf.end(), 0);
    auto find = [&](std::size_t x) {
      while (uf[x] != x) x = uf[x] = uf[uf[x]];
      return x;
    };
    std::vector<std::vector<std::size_t>> tree_adj(jt.nodes.size());
    for (const Edge& e : edges) {
      std::size_t a = find(e.i), b = find(e.j);
      if (a == b) continue;
      uf[a] = b;
      tree_adj[e.i].push_back(e.j);
      tree_adj[e.j].push_back(e.i);
    }

    // Root each component at its lowest node index; BFS sets parents.
    std::vector<char> visited(jt.nodes.size(), 0);
    for (std::size_t start = 0; start < jt.nodes.size(); ++start) {
      if (visited[start]) continue;
      jt.nodes[start].component = jt.components;
      visited[start] = 1;
      jt.order.push_back(static_cast<int>(start));
      std::vector<std::size_t> queue{start};
      std::size_t head = 0;
      while (head < queue.size()) {
        std::size_t v = queue[head++];
        std::vector<std::size_t> nbrs = tree_adj[v];
        std::sort(nbrs.begin(), nbrs.end());
        for (std::size_t u : nbrs) {
          if (visited[u]) continue;
          visited[u] = 1;
          jt.nodes[u].parent = static_cast<int>(v);
          jt.nodes[u].component = jt.components;
          jt.nodes[v].children.push_back(static_cast<int>(u));
          std::set_intersection(jt.nodes[u].scope.begin(), jt.nodes[u].scope.end(),
                                jt.nodes[v].scope.begin(), jt.nodes[v].scope.end(),
                                std::back_inserter(jt.nodes[u].separator));
          jt.order.push_back(static_cast<int>(u));
          queue.push_back(u);
        }
      }
      ++jt.components;
    }
    return jt;
  }
};

// Total table cells the junction tree induced by `cliques` would hold.
inline std::uint64_t jt_total_cells(const MetadataSchema& schema,
                                    const std::vector<std::vector<std::size_t>>& cliques) {
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < schema.attribute_count(); ++i) {
    dims.push_back(schema.attribute(i).size());
  }
  return JunctionTree::build(dims, cliques).total_cells();
}

namespace gm_detail {

// Aligned log-space subtraction numerator - denominator over the
// numerator's scope; cells where the numerator is log-zero stay log-zero.
inline Factor divide_log(const Factor& num, const Factor& den) {
  Factor out = num;
  auto sd = factor_detail::aligned_strides(num.scope, den);
  std::size_t flat = 0;
  factor_detail::iterate(num.dims, {sd}, [&](const std::vector<std::size_t>& offs) {
    if (out.values[flat] != kLogZero) out.values[flat] -= den.values[offs[0]];
    ++flat;
  });
  return out;
}

// Node potentials: each theta factor lands in the first tree node (by
// index) whose scope contains it.
inline std::vector<Factor> build_node_potentials(const JunctionTree& jt,
                                                 std::span<const Factor> thetas) {
  std::vector<Factor> pots;
  pots.reserve(jt.nodes.size());
  for (const auto& n : jt.nodes) pots.push_back(Factor::constant(n.scope, n.dims, 0.0));
  for (const Factor& theta : thetas) {
    bool placed = false;
    for (std::size_t v = 0; v < jt.nodes.size() && !placed; ++v) {
      if (std::includes(jt.nodes[v].scope.begin(), jt.nodes[v].scope.end(),
                        theta.scope.begin(), theta.scope.end())) {
        multiply_log_into(pots[v], theta);
        placed = true;
      }
    }
    if (!placed) {
      throw StructureError("junction tree has no node covering a model clique");
    }
  }
  return pots;
}

// Two-pass calibration. Returns per-node normalized log marginals.
inline std::vector<Factor> calibrate(const JunctionTree& jt,
                                     const std::vector<Factor>& potentials) {
  std::size_t n = jt.nodes.size();
  std::vector<Factor> up(n), down(n);
  std::vector<char> has_down(n, 0);

  // Upward: children before parents.
  for (std::size_t oi = jt.order.size(); oi-- > 0;) {
    int v = jt.order[oi];
    Factor f = potentials[v];
    for (int c : jt.nodes[v].children) multiply_log_into(f, up[c]);
    if (jt.nodes[v].parent >= 0) {
      up[v] = marginalize_lse(f, jt.nodes[v].separator);
    }
  }
  // Downward: parents before children.
  for (int v : jt.order) {
    for (int c : jt.nodes[v].children) {
      Factor f = potentials[v];
      if (has_down[v]) multiply_log_into(f, down[v]);
      for (int c2 : jt.nodes[v].children) {
        if (c2 != c) multiply_log_into(f, up[c2]);
      }
      down[c] = marginalize_lse(f, jt.nodes[c].separator);
      has_down[c] = 1;
    }
  }

  std::vector<Factor> marginals;
  marginals.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    Factor f = potentials[v];
    for (int c : jt.nodes[v].children) multiply_log_into(f, up[c]);
    if (has_down[v]) multiply_log_into(f, down[v]);
    double lz = logsumexp(f);
    if (lz == kLogZero || !std::isfinite(lz)) {
      throw StructureError("calibration produced a degenerate node marginal");
    }
    for (double& x : f.values) x -= lz;
    marginals.push_back(std::move(f));
  }
  return marginals;
}

}  // namespace gm_detail

class LogLinearModel {
 public:
  // thetas[i] is the flat log-potential table of cliques[i] (row-major over
  // the clique's attribute dims, schema order). total is the estimated row
  // count the model represents.
  LogLinearModel(MetadataSchema schema, std::vector<std::vector<std::size_t>> cliques,
                 std::vector<std::vector<double>> thetas, double total)
      : schema_(std::move(schema)), total_(total) {
    if (cliques.size() != thetas.size()) {
      throw InvalidArgument("LogLinearModel: cliques/thetas size mismatch");
    }
    if (!(total_ > 0.0) || !std::isfinite(total_)) {
      throw InvalidArgument("LogLinearModel: total must be positive and finite");
    }
    std::size_t k = schema_.attribute_count();
    for (std::size_t i = 0; i < cliques.size(); ++i) {
      auto canon = canonical_clique(cliques[i], k);
      if (canon != cliques[i]) {
        throw InvalidArgument("LogLinearModel: cliques must be ascending and distinct");
      }
      for (std::size_t j = i + 1; j < cliques.size(); ++j) {
        if (cliques[i] == cliques[j]) {
          throw InvalidArgument("LogLinearModel: duplicate clique");
        }
      }
      std::vector<std::size_t> dims;
      std::size_t cells = 1;
      for (std::size_t a : canon) {
        dims.push_back(schema_.attribute(a).size());
        cells *= dims.back();
      }
      if (thetas[i].size() != cells) {
        throw InvalidArgument("LogLinearModel: theta table size mismatch");
      }
      Factor f = Factor::constant(canon, dims, 0.0);
      f.values = thetas[i];
      theta_factors_.push_back(std::move(f));
      cliques_.push_back(std::move(cliques[i]));
    }
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < k; ++i) dims.push_back(schema_.attribute(i).size());
    jt_ = JunctionTree::build(dims, cliques_);
    log_marginals_ = gm_detail::calibrate(
        jt_, gm_detail::build_node_potentials(jt_, theta_factors_));
  }

  const MetadataSchema& schema() const { return schema_; }
  double total() const { return total_; }
  const std::vector<std::vector<std::size_t>>& cliques() const { return cliques_; }
  const JunctionTree& junction_tree() const { return jt_; }

  const std::vector<double>& theta(std::size_t i) const {
    return theta_factors_.at(i).values;
  }

  // Normalized probability vector over the given attributes (ascending,
  // distinct). Handles attribute sets that span multiple tree nodes via
  // variable elimination over the connecting subtree.
  std::vector<double> marginal(std::span<const std::size_t> attrs) const {
    Factor f = marginal_factor(attrs);
    return to_probabilities(f);
  }

  std::vector<double> marginal_counts(std::span<const std::size_t> attrs) const {
    std::vector<double> p = marginal(attrs);
    for (double& x : p) x *= total_;
    return p;
  }

  // Full joint distribution; only for small domains (tests, oracles).
  std::vector<double> joint_probabilities() const {
    if (schema_.total_cells() > (1ULL << 22)) {
      throw InvalidArgument("joint_probabilities: domain too large");
    }
    std::vector<std::size_t> scope(schema_.attribute_count());
    std::iota(scope.begin(), scope.end(), 0);
    std::vector<std::size_t> dims;
    for (std::size_t a : scope) dims.push_back(schema_.attribute(a).size());
    Factor full = Factor::constant(scope, dims, 0.0);
    for (const Factor& theta : theta_factors_) multiply_log_into(full, theta);
    return to_probabilities(full);
  }

  // Ancestral sampling down each component of the junction tree.
  MetadataTable sample(std::size_t n_rows, std::uint64_t seed) const {
    MetadataTable table{schema_, {}};
    Rng rng(seed);

    struct NodePlan {
      std::vector<std::size_t> write_axes;            // positions in scope not in separator
      std::vector<std::size_t> write_attrs;           // attribute ids of write_axes
      std::vector<std::size_t> write_dims;
      std::vector<std::vector<double>> cond;          // [sep cell][write cell]
    };
    std::vector<NodePlan> plans(jt_.nodes.size());
    for (std::size_t v = 0; v < jt_.nodes.size(); ++v) {
      const auto& node = jt_.nodes[v];
      NodePlan& plan = plans[v];
      std::vector<std::size_t> sep_axes;
      for (std::size_t i = 0; i < node.scope.size(); ++i) {
        if (std::find(node.separator.begin(), node.separator.end(), node.scope[i]) !=
            node.separator.end()) {
          sep_axes.push_back(i);
        } else {
          plan.write_axes.push_back(i);
          plan.write_attrs.push_back(node.scope[i]);
          plan.write_dims.push_back(node.dims[i]);
        }
      }
      std::size_t sep_cells = 1;
      for (std::size_t i : sep_axes) sep_cells *= node.dims[i];
      std::size_t write_cells = 1;
      for (std::size_t d : plan.write_dims) write_cells *= d;
      plan.cond.assign(sep_cells, std::vector<double>(write_cells, 0.0));

      auto strides = log_marginals_[v].strides();
      std::vector<std::size_t> idx(node.scope.size(), 0);
      for (std::size_t flat = 0; flat < log_marginals_[v].cells(); ++flat) {
        std::size_t rest = flat;
        for (std::size_t i = 0; i < node.scope.size(); ++i) {
          idx[i] = rest / strides[i];
          rest %= strides[i];
        }
        std::size_t sep_flat = 0;
        for (std::size_t i : sep_axes) sep_flat = sep_flat * node.dims[i] + idx[i];
        std::size_t write_flat = 0;
        for (std::size_t i : plan.write_axes) write_flat = write_flat * node.dims[i] + idx[i];
        plan.cond[sep_flat][write_flat] = std::exp(log_marginals_[v].values[flat]);
      }
    }

    std::vector<std::uint32_t> assignment(schema_.attribute_count(), 0);
    for (std::size_t row = 0; row < n_rows; ++row) {
      Rng row_rng = rng.fork(row);
      for (int v : jt_.order) {
        const auto& node = jt_.nodes[v];
        const NodePlan& plan = plans[v];
        if (plan.write_attrs.empty()) continue;
        std::size_t sep_flat = 0;
        for (std::size_t attr : node.separator) {
          auto pos = std::find(node.scope.begin(), node.scope.end(), attr) -
                     node.scope.begin();
          sep_flat = sep_flat * node.dims[static_cast<std::size_t>(pos)] +
                     assignment[attr];
        }
        const std::vector<double>& weights = plan.cond[sep_flat];
        double mass = 0.0;
        for (double w : weights) mass += w;
        std::size_t draw = mass > 0.0
                               ? row_rng.categorical(weights)
                               : row_rng.uniform_index(weights.size());
        for (std::size_t i = plan.write_dims.size(); i-- > 0;) {
          assignment[plan.write_attrs[i]] =
              static_cast<std::uint32_t>(draw % plan.write_dims[i]);
          draw /= plan.write_dims[i];
        }
      }
      MetadataRecord rec;
      rec.values = assignment;
      table.append(std::move(rec));
    }
    return table;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["total"] = total_;
    j["cliques"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < cliques_.size(); ++i) {
      nlohmann::ordered_json c;
      c["attributes"] = nlohmann::ordered_json::array();
      for (std::size_t a : cliques_[i]) c["attributes"].push_back(schema_.attribute(a).name);
      c["theta"] = theta_factors_[i].values;
      j["cliques"].push_back(std::move(c));
    }
    return j;
  }

  static LogLinearModel from_json(const nlohmann::json& j, const MetadataSchema& schema) {
    if (!j.is_object() || !j.contains("total") || !j.contains("cliques")) {
      throw InvalidArgument("LogLinearModel: expected {total, cliques}");
    }
    std::vector<std::vector<std::size_t>> cliques;
    std::vector<std::vector<double>> thetas;
    for (const auto& c : j["cliques"]) {
      std::vector<std::size_t> attrs;
      for (const auto& name : c["attributes"]) {
        auto idx = schema.attribute_index(name.get<std::string>());
        if (!idx) {
          throw InvalidArgument("LogLinearModel: unknown attribute '" +
                                name.get<std::string>() + "'");
        }
        attrs.push_back(*idx);
      }
      cliques.push_back(std::move(attrs));
      thetas.push_back(c["theta"].get<std::vector<double>>());
    }
    return LogLinearModel(schema, std::move(cliques), std::move(thetas),
                          j["total"].get<double>());
  }

 private:
  // Log-space marginal factor over `attrs` before normalization.
  Factor marginal_factor(std::span<const std::size_t> attrs) const {
    std::vector<std::size_t> targets =
        canonical_clique(attrs, schema_.attribute_count());
    if (std::vector<std::size_t>(attrs.begin(), attrs.end()) != targets) {
      throw InvalidArgument("marginal: attributes must be ascending and distinct");
    }

    // Single containing node is the common fast path.
    for (std::size_t v = 0; v < jt_.nodes.size(); ++v) {
      if (std::includes(jt_.nodes[v].scope.begin(), jt_.nodes[v].scope.end(),
                        targets.begin(), targets.end())) {
        return marginalize_lse(log_marginals_[v], targets);
      }
    }

    std::vector<std::size_t> target_dims;
    for (std::size_t a : targets) target_dims.push_back(schema_.attribute(a).size());
    Factor result = Factor::constant(targets, target_dims, 0.0);

    for (int comp = 0; comp < jt_.components; ++comp) {
      std::vector<std::size_t> comp_targets;
      for (std::size_t a : targets) {
        for (std::size_t v = 0; v < jt_.nodes.size(); ++v) {
          if (jt_.nodes[v].component != comp) continue;
          if (std::find(jt_.nodes[v].scope.begin(), jt_.nodes[v].scope.end(), a) !=
              jt_.nodes[v].scope.end()) {
            comp_targets.push_back(a);
            break;
          }
        }
      }
      if (comp_targets.empty()) continue;
      Factor part = component_marginal(comp, comp_targets);
      double lz = logsumexp(part);
      for (double& x : part.values) x -= lz;
      multiply_log_into(result, part);
    }
    return result;
  }

  // Variable elimination over the minimal subtree of one component that
  // covers the target attributes. Uses the identity
  // P(tree) = prod(node marginals) / prod(separator marginals).
  Factor component_marginal(int comp, const std::vector<std::size_t>& targets) const {
    // Marked nodes: any node in this component touching a target. Every
    // target picks its lowest-index containing node; the subtree spanning
    // marked nodes is closed upward via marked-descendant counts.
    std::vector<char> marked(jt_.nodes.size(), 0);
    for (std::size_t a : targets) {
      for (std::size_t v = 0; v < jt_.nodes.size(); ++v) {
        if (jt_.nodes[v].component != comp) continue;
        if (std::find(jt_.nodes[v].scope.begin(), jt_.nodes[v].scope.end(), a) !=
            jt_.nodes[v].scope.end()) {
          marked[v] = 1;
          break;
        }
      }
    }
    std::vector<int> marked_below(jt_.nodes.size(), 0);
    for (std::size_t oi = jt_.order.size(); oi-- > 0;) {
      int v = jt_.order[oi];
      if (jt_.nodes[v].component != comp) continue;
      marked_below[v] = marked[v] ? 1 : 0;
      for (int c : jt_.nodes[v].children) marked_below[v] += marked_below[c];
    }
    int total_marked = 0;
    int root = -1;
    for (int v : jt_.order) {
      if (jt_.nodes[v].component == comp && jt_.nodes[v].parent == -1) {
        root = v;
        total_marked = marked_below[v];
        break;
      }
    }
    // Descend to the deepest node whose subtree still holds all marks.
    int sub_root = root;
    for (;;) {
      if (marked[sub_root]) break;
      int carrier = -1;
      for (int c : jt_.nodes[sub_root].children) {
        if (marked_below[c] == total_marked) carrier = c;
      }
      if (carrier < 0) break;
      sub_root = carrier;
    }

    // Steiner nodes: sub_root plus descendants with marks below them.
    std::vector<char> in_subtree(jt_.nodes.size(), 0);
    std::vector<int> subtree_order;  // parents before children
    for (int v : jt_.order) {
      if (jt_.nodes[v].component != comp) continue;
      if (v == sub_root ||
          (jt_.nodes[v].parent >= 0 && in_subtree[jt_.nodes[v].parent] &&
           marked_below[v] > 0)) {
        in_subtree[v] = 1;
        subtree_order.push_back(v);
      }
    }

    std::vector<Factor> accum(jt_.nodes.size());
    std::vector<char> has_accum(jt_.nodes.size(), 0);
    for (std::size_t oi = subtree_order.size(); oi-- > 0;) {
      int v = subtree_order[oi];
      Factor f = log_marginals_[v];
      if (has_accum[v]) f = multiply_log(f, accum[v]);
      if (v == sub_root) {
        std::vector<std::size_t> keep;
        for (std::size_t a : targets) {
          if (std::find(f.scope.begin(), f.scope.end(), a) != f.scope.end()) {
            keep.push_back(a);
          }
        }
        return marginalize_lse(f, keep);
      }
      // Message to parent keeps the separator plus any targets gathered.
      std::vector<std::size_t> keep = jt_.nodes[v].separator;
      for (std::size_t a : targets) {
        if (std::find(f.scope.begin(), f.scope.end(), a) != f.scope.end() &&
            std::find(keep.begin(), keep.end(), a) == keep.end()) {
          keep.push_back(a);
        }
      }
      std::sort(keep.begin(), keep.end());
      Factor msg = marginalize_lse(f, keep);
      Factor sep_marginal = marginalize_lse(log_marginals_[v], jt_.nodes[v].separator);
      msg = gm_detail::divide_log(msg, sep_marginal);
      int p = jt_.nodes[v].parent;
      if (has_accum[p]) {
        accum[p] = multiply_log(accum[p], msg);
      } else {
        accum[p] = std::move(msg);
        has_accum[p] = 1;
      }
    }
    throw StructureError("component_marginal: subtree traversal did not reach its root");
  }

  MetadataSchema schema_;
  std::vector<std::vector<std::size_t>> cliques_;
  std::vector<Factor> theta_factors_;
  double total_ = 0.0;
  JunctionTree jt_;
  std::vector<Factor> log_marginals_;
};

}  // namespace maple
