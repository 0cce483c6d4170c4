#pragma once

#include "tdrl/core/rng.hpp"
#include "tdrl/core/types.hpp"

#include <optional>
#include <vector>

namespace tdrl::theory {

/// A partition of label vectors into at most M groups, each predicted by its
/// mean. eps is the mean per-sample squared error.
struct Partition {
  double eps = 0.0;
  std::vector<int> assignment;  // relabelled in order of first appearance
  int groups = 0;
};

/// Canonical relabelling plus the squared-error cost of an assignment. Both
/// estimators report cost through this so equal partitions give equal bits.
Partition evaluate_partition(const Tensord& labels, std::vector<int> assignment);

/// Exact minimum over all set partitions with at most M blocks, by depth-first
/// enumeration of restricted growth strings. Intended for N <= 12.
Partition exhaustive_partition(const Tensord& labels, int max_groups);

/// eps*_M for M = 1..N from a single enumeration pass (index M-1).
std::vector<double> exhaustive_eps_curve(const Tensord& labels);

/// Lloyd iterations from k-means++ seeds followed by single-point transfer
/// moves, best of `restarts`.
Partition kmeans(const Tensord& labels, int max_groups, int restarts, Rng& rng);

struct OptimalEps {
  double kmeans = 0.0;
  std::optional<double> exhaustive;  // present when N <= exhaustive_limit
  double value() const { return exhaustive ? *exhaustive : kmeans; }
};

inline constexpr int kExhaustiveLimit = 12;

/// eps*_M estimate for squared loss on the label set, clustering in output space.
OptimalEps optimal_eps(const Tensord& labels, int max_groups, std::uint64_t seed, int restarts = 20);

struct MonotonicityReport {
  std::vector<int> ms;
  std::vector<double> eps;
  std::vector<bool> from_oracle;
  std::vector<std::string> violations;
  int retries = 0;
  bool pass() const { return violations.empty(); }
};

/// Checks eps*_M >= eps*_{M+1} - tol along an ascending list of M; tol is 0
/// between oracle values and 1e-3 otherwise. A k-means violation is retried
/// with ten times the restarts before it is recorded.
MonotonicityReport monotonicity_check(const Tensord& labels, const std::vector<int>& ms, std::uint64_t seed);

}  // namespace tdrl::theory
