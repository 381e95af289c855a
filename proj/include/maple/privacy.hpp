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

// Zero-concentrated differential privacy accounting.
//
// All mechanisms in this library are Gaussian or exponential mechanisms
// whose costs compose additively in rho. The ledger stores one rho entry
// per mechanism invocation; totals are computed by a canonical
// sorted-ascending sum so they are independent of spend order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maple/error.hpp"

namespace maple {

inline constexpr double kInfiniteBudget = std::numeric_limits<double>::infinity();

// Target (epsilon, delta) guarantee for one end-to-end run. epsilon may be
// infinite (non-private ablation); delta must lie in (0, 1).
struct PrivacyBudget {
  double epsilon = 0.0;
  double delta = 0.0;

  void validate() const {
    if (std::isnan(epsilon) || epsilon <= 0.0) {
      throw InvalidArgument("PrivacyBudget: epsilon must be positive");
    }
    if (!(delta > 0.0) || !(delta < 1.0)) {
      throw InvalidArgument("PrivacyBudget: delta must lie in (0, 1)");
    }
  }
};

// zCDP cost of one Gaussian mechanism release: rho = sensitivity^2 / (2 sigma^2).
// sigma == 0 denotes a noiseless release and costs infinite rho.
inline double rho_of_gaussian(double sensitivity, double sigma) {
  if (!(sensitivity > 0.0) || !std::isfinite(sensitivity)) {
    throw InvalidArgument("rho_of_gaussian: sensitivity must be positive and finite");
  }
  if (std::isnan(sigma) || sigma < 0.0) {
    throw InvalidArgument("rho_of_gaussian: sigma must be non-negative");
  }
  if (sigma == 0.0) return kInfiniteBudget;
  return (sensitivity * sensitivity) / (2.0 * sigma * sigma);
}

// Noise scale whose Gaussian release costs exactly rho (analytically).
inline double sigma_for_rho(double sensitivity, double rho) {
  if (!(sensitivity > 0.0) || !std::isfinite(sensitivity)) {
    throw InvalidArgument("sigma_for_rho: sensitivity must be positive and finite");
  }
  if (!(rho > 0.0)) throw InvalidArgument("sigma_for_rho: rho must be positive");
  if (std::isinf(rho)) return 0.0;
  return sensitivity / std::sqrt(2.0 * rho);
}

// Noise scale, nudged up from the analytic inverse if needed, whose
// floating-point cost rho_of_gaussian(sensitivity, sigma) is <= rho. A
// ledger that records rho as the charge therefore never under-reports the
// mechanism actually run.
inline double sigma_costing_at_most(double sensitivity, double rho) {
  double sigma = sigma_for_rho(sensitivity, rho);
  if (sigma == 0.0) return 0.0;
  while (rho_of_gaussian(sensitivity, sigma) > rho) {
    sigma = std::nextafter(sigma, std::numeric_limits<double>::infinity());
  }
  return sigma;
}

// Canonical composition: ascending sort, then left-to-right sum. Any
// permutation of the same entries yields bit-identical totals.
inline double compose(std::span<const double> rho_entries) {
  std::vector<double> sorted(rho_entries.begin(), rho_entries.end());
  for (double r : sorted) {
    if (std::isnan(r) || r < 0.0) {
      throw InvalidArgument("compose: rho entries must be non-negative");
    }
  }
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  for (double r : sorted) total += r;
  return total;
}

// Largest charge c <= planned such that compose(prior + {c}) <= grant.
// The predicate is monotone in c, so bisection finds the boundary; the
// returned value is always a verified passing charge (0 when nothing of
// the grant remains).
inline double cap_charge(std::span<const double> prior, double planned, double grant) {
  if (std::isnan(planned) || planned < 0.0) {
    throw InvalidArgument("cap_charge: planned must be non-negative");
  }
  auto fits = [&](double c) {
    std::vector<double> entries(prior.begin(), prior.end());
    entries.push_back(c);
    return compose(entries) <= grant;
  };
  if (fits(planned)) return planned;
  if (std::isinf(planned)) return 0.0;
  if (!fits(0.0)) return 0.0;
  double spent = compose(prior);
  double lo = 0.0;
  double hi = std::min(planned, std::max(0.0, grant - spent));
  if (fits(hi)) return hi;
  // Invariant: fits(lo), !fits(hi). 2000 halvings reach adjacent doubles
  // from any finite starting width.
  for (int i = 0; i < 2000; ++i) {
    double mid = lo + (hi - lo) / 2.0;
    if (mid <= lo || mid >= hi) break;
    if (fits(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

// Largest charge c <= planned that fits two grants at once:
// compose(module_prior + {c}) <= module_grant and
// compose(global_prior + {c}) <= global_grant. Used when one ledger holds
// entries from several mechanisms: capping each part against its own grant
// does not bound the composed union, because sorted summation of the mixed
// entry set rounds differently than the per-part sums.
inline double cap_charge_joint(std::span<const double> module_prior, double planned,
                               double module_grant,
                               std::span<const double> global_prior,
                               double global_grant) {
  if (std::isnan(planned) || planned < 0.0) {
    throw InvalidArgument("cap_charge_joint: planned must be non-negative");
  }
  if (std::isnan(module_grant) || std::isnan(global_grant)) {
    throw InvalidArgument("cap_charge_joint: grants must not be NaN");
  }
  auto fits_one = [](std::span<const double> prior, double grant, double c) {
    std::vector<double> entries(prior.begin(), prior.end());
    entries.push_back(c);
    return compose(entries) <= grant;
  };
  auto fits = [&](double c) {
    return fits_one(module_prior, module_grant, c) &&
           fits_one(global_prior, global_grant, c);
  };
  if (fits(planned)) return planned;
  if (std::isinf(planned)) return 0.0;
  if (!fits(0.0)) return 0.0;
  double headroom = std::max(0.0, module_grant - compose(module_prior));
  if (!std::isinf(global_grant)) {
    headroom = std::min(headroom, std::max(0.0, global_grant - compose(global_prior)));
  }
  double lo = 0.0;
  double hi = std::min(planned, headroom);
  if (fits(hi)) return hi;
  // Invariant: fits(lo), !fits(hi). 2000 halvings reach adjacent doubles
  // from any finite starting width.
  for (int i = 0; i < 2000; ++i) {
    double mid = lo + (hi - lo) / 2.0;
    if (mid <= lo || mid >= hi) break;
    if (fits(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

// A Gaussian noise scale together with the exact rho its release records.
// rho == 0 with an infinite sigma signals an exhausted budget.
struct CappedNoise {
  double sigma = std::numeric_limits<double>::infinity();
  double rho = 0.0;
};

// Noise scale for one release of the given sensitivity whose RECORDED cost
// rho_of_gaussian(sensitivity, sigma) verifiably fits both grants under the
// ledger's own compose arithmetic. The sigma round trip can land one ulp
// off the capped charge, so the recorded value itself is re-verified and
// sigma nudged up until both predicates hold; this makes
// compose(all entries) <= global_grant an invariant of every append rather
// than an after-the-fact hope.
inline CappedNoise noise_within(std::span<const double> module_prior, double planned,
                                double module_grant,
                                std::span<const double> global_prior,
                                double global_grant, double sensitivity = 1.0) {
  double charge =
      cap_charge_joint(module_prior, planned, module_grant, global_prior, global_grant);
  if (!(charge > 0.0)) return CappedNoise{};
  double sigma = sigma_costing_at_most(sensitivity, charge);
  double rho = rho_of_gaussian(sensitivity, sigma);
  auto fits = [](std::span<const double> prior, double grant, double c) {
    std::vector<double> entries(prior.begin(), prior.end());
    entries.push_back(c);
    return compose(entries) <= grant;
  };
  int guard = 0;
  while (!(fits(module_prior, module_grant, rho) &&
           fits(global_prior, global_grant, rho))) {
    if (++guard > 10000) {
      throw Error("noise_within: failed to reconcile the recorded cost with the grants");
    }
    sigma = std::nextafter(sigma, std::numeric_limits<double>::infinity());
    rho = rho_of_gaussian(sensitivity, sigma);
  }
  return CappedNoise{sigma, rho};
}

// (epsilon, delta) curve of a rho-zCDP mechanism:
// epsilon = rho + 2 sqrt(rho ln(1/delta)).
inline double zcdp_to_approx_dp(double rho, double delta) {
  if (std::isnan(rho) || rho < 0.0) {
    throw InvalidArgument("zcdp_to_approx_dp: rho must be non-negative");
  }
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw InvalidArgument("zcdp_to_approx_dp: delta must lie in (0, 1)");
  }
  if (std::isinf(rho)) return kInfiniteBudget;
  if (rho == 0.0) return 0.0;
  return rho + 2.0 * std::sqrt(rho * std::log(1.0 / delta));
}

// Largest rho whose (epsilon, delta) conversion stays under epsilon_target.
// The conversion above is rho + 2 sqrt(rho L) with L = ln(1/delta); solving
// for sqrt(rho) gives the closed form rho = (sqrt(L + eps) - sqrt(L))^2,
// which round-trips through zcdp_to_approx_dp to ~1e-16 relative error.
inline double calibrate_rho(double epsilon_target, double delta) {
  if (std::isnan(epsilon_target) || epsilon_target <= 0.0) {
    throw InvalidArgument("calibrate_rho: epsilon_target must be positive");
  }
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw InvalidArgument("calibrate_rho: delta must lie in (0, 1)");
  }
  if (std::isinf(epsilon_target)) return kInfiniteBudget;
  double big_l = std::log(1.0 / delta);
  double root = std::sqrt(big_l + epsilon_target) - std::sqrt(big_l);
  double rho = root * root;
  // Never exceed the target under fp rounding.
  while (rho > 0.0 && zcdp_to_approx_dp(rho, delta) > epsilon_target) {
    rho = std::nextafter(rho, 0.0);
  }
  return rho;
}

// Exact split of a rho budget by a positive ratio (a : b). The two parts
// sum to rho_total exactly because the second is computed by subtraction.
inline std::pair<double, double> split_budget(double rho_total, double ratio_a,
                                              double ratio_b) {
  if (std::isnan(rho_total) || rho_total < 0.0) {
    throw InvalidArgument("split_budget: rho_total must be non-negative");
  }
  if (!(ratio_a > 0.0) || !(ratio_b > 0.0) || !std::isfinite(ratio_a) ||
      !std::isfinite(ratio_b)) {
    throw InvalidArgument("split_budget: ratio parts must be positive and finite");
  }
  if (std::isinf(rho_total)) return {kInfiniteBudget, kInfiniteBudget};
  if (rho_total == 0.0) return {0.0, 0.0};
  // first + (rho_total - first) can land one ulp off rho_total, and when
  // the exact sum sits on a rounding tie no adjustment of the larger part
  // alone can fix it. Search a few ulps around both parts for a pair whose
  // recomposed sum is exactly rho_total.
  auto step_by = [](double x, int idx) {
    int n = (idx + 1) / 2;
    double dir = idx % 2 == 1 ? std::numeric_limits<double>::infinity() : 0.0;
    for (int i = 0; i < n; ++i) x = std::nextafter(x, dir);
    return x;
  };
  double base_first = rho_total * (ratio_a / (ratio_a + ratio_b));
  for (int j = 0; j < 9; ++j) {
    double first = step_by(base_first, j);
    if (!(first > 0.0) || first >= rho_total) continue;
    double base_second = rho_total - first;
    for (int k = 0; k < 9; ++k) {
      double second = step_by(base_second, k);
      if (second > 0.0 && first + second == rho_total) return {first, second};
    }
  }
  throw Error("split_budget: failed to reconcile parts with the total");
}

// Append-only spend log. One labelled rho entry per mechanism invocation;
// safe for concurrent appends and reads.
class SpendLedger {
 public:
  struct Entry {
    std::string label;
    double rho = 0.0;
  };

  void append(std::string label, double rho) {
    if (std::isnan(rho) || rho < 0.0) {
      throw InvalidArgument("SpendLedger: rho must be non-negative");
    }
    std::lock_guard<std::mutex> lock(mutex_);
    entries_.push_back(Entry{std::move(label), rho});
  }

  std::vector<Entry> entries() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_;
  }

  std::vector<double> charges() const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<double> rhos;
    rhos.reserve(entries_.size());
    for (const Entry& e : entries_) rhos.push_back(e.rho);
    return rhos;
  }

  // Canonical composed total of all entries.
  double total() const { return compose(charges()); }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
};

}  // namespace maple
