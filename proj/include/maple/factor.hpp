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

// Dense log-space factors over subsets of schema attributes.
//
// A factor's scope is a strictly ascending list of attribute indices; its
// value table is row-major with the first scope attribute most significant,
// matching the record encoding in schema.hpp. All arithmetic stays in log
// space so junction-tree calibration is stable for extreme potentials.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "maple/error.hpp"

namespace maple {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

struct Factor {
  std::vector<std::size_t> scope;  // ascending attribute indices
  std::vector<std::size_t> dims;   // domain size per scope entry
  std::vector<double> values;      // log space, row-major

  static Factor constant(std::vector<std::size_t> scope, std::vector<std::size_t> dims,
                         double log_value) {
    if (scope.size() != dims.size()) {
      throw InvalidArgument("Factor: scope/dims size mismatch");
    }
    for (std::size_t i = 1; i < scope.size(); ++i) {
      if (scope[i] <= scope[i - 1]) {
        throw InvalidArgument("Factor: scope must be strictly ascending");
      }
    }
    std::size_t cells = 1;
    for (std::size_t d : dims) {
      if (d == 0) throw InvalidArgument("Factor: zero dimension");
      cells *= d;
    }
    Factor f;
    f.scope = std::move(scope);
    f.dims = std::move(dims);
    f.values.assign(cells, log_value);
    return f;
  }

  std::size_t cells() const { return values.size(); }

  // Strides of this factor's own table (last axis fastest).
  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(dims.size(), 1);
    for (std::size_t i = dims.size(); i-- > 1;) s[i - 1] = s[i] * dims[i];
    return s;
  }

  double max_value() const {
    double m = kLogZero;
    for (double v : values) m = std::max(m, v);
    return m;
  }
};

namespace factor_detail {

// Stride of `inner` along each axis of `outer_scope`; 0 where the axis is
// absent from inner. Requires inner.scope to be a subset of outer_scope.
inline std::vector<std::size_t> aligned_strides(const std::vector<std::size_t>& outer_scope,
                                                const Factor& inner) {
  std::vector<std::size_t> inner_strides = inner.strides();
  std::vector<std::size_t> out(outer_scope.size(), 0);
  std::size_t found = 0;
  for (std::size_t i = 0; i < outer_scope.size(); ++i) {
    for (std::size_t j = 0; j < inner.scope.size(); ++j) {
      if (inner.scope[j] == outer_scope[i]) {
        out[i] = inner_strides[j];
        ++found;
        break;
      }
    }
  }
  if (found != inner.scope.size()) {
    throw InvalidArgument("Factor: inner scope is not a subset of outer scope");
  }
  return out;
}

// Odometer over `dims` driving flat offsets into several aligned tables.
template <typename Fn>
void iterate(const std::vector<std::size_t>& dims,
             const std::vector<std::vector<std::size_t>>& stride_sets, Fn&& fn) {
  std::size_t cells = 1;
  for (std::size_t d : dims) cells *= d;
  std::size_t k = dims.size();
  std::vector<std::size_t> counter(k, 0);
  std::vector<std::size_t> offsets(stride_sets.size(), 0);
  for (std::size_t flat = 0; flat < cells; ++flat) {
    fn(offsets);
    for (std::size_t ax = k; ax-- > 0;) {
      ++counter[ax];
      for (std::size_t s = 0; s < stride_sets.size(); ++s) offsets[s] += stride_sets[s][ax];
      if (counter[ax] < dims[ax]) break;
      counter[ax] = 0;
      for (std::size_t s = 0; s < stride_sets.size(); ++s) {
        offsets[s] -= stride_sets[s][ax] * dims[ax];
      }
    }
  }
}

}  // namespace factor_detail

// Log-space product (elementwise addition) over the union scope.
inline Factor multiply_log(const Factor& a, const Factor& b) {
  std::vector<std::size_t> scope;
  std::vector<std::size_t> dims;
  std::size_t ia = 0, ib = 0;
  while (ia < a.scope.size() || ib < b.scope.size()) {
    if (ib == b.scope.size() ||
        (ia < a.scope.size() && a.scope[ia] < b.scope[ib])) {
      scope.push_back(a.scope[ia]);
      dims.push_back(a.dims[ia]);
      ++ia;
    } else if (ia == a.scope.size() || b.scope[ib] < a.scope[ia]) {
      scope.push_back(b.scope[ib]);
      dims.push_back(b.dims[ib]);
      ++ib;
    } else {
      if (a.dims[ia] != b.dims[ib]) {
        throw InvalidArgument("multiply_log: dimension mismatch on shared attribute");
      }
      scope.push_back(a.scope[ia]);
      dims.push_back(a.dims[ia]);
      ++ia;
      ++ib;
    }
  }
  Factor out = Factor::constant(scope, dims, 0.0);
  auto sa = factor_detail::aligned_strides(scope, a);
  auto sb = factor_detail::aligned_strides(scope, b);
  std::size_t flat = 0;
  factor_detail::iterate(dims, {sa, sb}, [&](const std::vector<std::size_t>& offs) {
    out.values[flat++] = a.values[offs[0]] + b.values[offs[1]];
  });
  return out;
}

// In-place log-space product with a factor whose scope is a subset of f's.
inline void multiply_log_into(Factor& f, const Factor& sub) {
  auto ss = factor_detail::aligned_strides(f.scope, sub);
  std::size_t flat = 0;
  factor_detail::iterate(f.dims, {ss}, [&](const std::vector<std::size_t>& offs) {
    f.values[flat++] += sub.values[offs[0]];
  });
}

// Log-sum-exp marginalization onto `keep` (must be an ascending subset of
// the factor's scope). Two passes: per-output max, then exp-sum.
inline Factor marginalize_lse(const Factor& f, const std::vector<std::size_t>& keep) {
  std::vector<std::size_t> keep_dims;
  for (std::size_t attr : keep) {
    bool found = false;
    for (std::size_t j = 0; j < f.scope.size(); ++j) {
      if (f.scope[j] == attr) {
        keep_dims.push_back(f.dims[j]);
        found = true;
        break;
      }
    }
    if (!found) throw InvalidArgument("marginalize_lse: keep attribute not in scope");
  }
  Factor out = Factor::constant(keep, keep_dims, kLogZero);
  auto so = factor_detail::aligned_strides(f.scope, out);

  std::vector<double> maxes(out.cells(), kLogZero);
  std::size_t flat = 0;
  factor_detail::iterate(f.dims, {so}, [&](const std::vector<std::size_t>& offs) {
    maxes[offs[0]] = std::max(maxes[offs[0]], f.values[flat++]);
  });
  std::vector<double> sums(out.cells(), 0.0);
  flat = 0;
  factor_detail::iterate(f.dims, {so}, [&](const std::vector<std::size_t>& offs) {
    double m = maxes[offs[0]];
    if (m > kLogZero) sums[offs[0]] += std::exp(f.values[flat] - m);
    ++flat;
  });
  for (std::size_t i = 0; i < out.cells(); ++i) {
    out.values[i] = maxes[i] > kLogZero ? maxes[i] + std::log(sums[i]) : kLogZero;
  }
  return out;
}

// Log-sum-exp over the whole table.
inline double logsumexp(const Factor& f) {
  double m = f.max_value();
  if (m == kLogZero) return kLogZero;
  double s = 0.0;
  for (double v : f.values) s += std::exp(v - m);
  return m + std::log(s);
}

// Probability table (normalized, linear space) of a log factor.
inline std::vector<double> to_probabilities(const Factor& f) {
  double lz = logsumexp(f);
  if (lz == kLogZero) {
    throw InvalidArgument("to_probabilities: factor is identically zero");
  }
  std::vector<double> p(f.cells());
  for (std::size_t i = 0; i < f.cells(); ++i) p[i] = std::exp(f.values[i] - lz);
  return p;
}

}  // namespace maple
