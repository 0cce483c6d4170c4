#include "tdrl/theory/clustering.hpp"

#include "tdrl/codebook/codebook.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace tdrl::theory {

Partition evaluate_partition(const Tensord& labels, std::vector<int> assignment) {
  const auto n = labels.rows();
  if (static_cast<Eigen::Index>(assignment.size()) != n) throw DimensionError("partition: assignment size");
  std::vector<int> remap;
  for (int& a : assignment) {
    auto it = std::find(remap.begin(), remap.end(), a);
    if (it == remap.end()) {
      remap.push_back(a);
      a = static_cast<int>(remap.size()) - 1;
    } else {
      a = static_cast<int>(it - remap.begin());
    }
  }
  const int k = static_cast<int>(remap.size());
  // Means are accumulated as offsets from each group's first member, so a
  // group of identical labels has its mean, and a zero cost, exactly.
  Tensord anchor(k, labels.cols());
  std::vector<char> anchored(static_cast<std::size_t>(k), 0);
  Tensord offset = Tensord::Zero(k, labels.cols());
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int g = assignment[static_cast<std::size_t>(i)];
    if (!anchored[static_cast<std::size_t>(g)]) {
      anchor.row(g) = labels.row(i);
      anchored[static_cast<std::size_t>(g)] = 1;
    }
    offset.row(g) += labels.row(i) - anchor.row(g);
    ++count[static_cast<std::size_t>(g)];
  }
  Tensord mean(k, labels.cols());
  for (int g = 0; g < k; ++g) mean.row(g) = anchor.row(g) + offset.row(g) / count[static_cast<std::size_t>(g)];
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += (labels.row(i) - mean.row(assignment[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return {n > 0 ? total / static_cast<double>(n) : 0.0, std::move(assignment), k};
}

namespace {

// Depth-first enumeration with running block sums; cost(block) = sumsq - |sum|^2 / count.
class PartitionSearch {
public:
  explicit PartitionSearch(const Tensord& labels)
      : y_(labels), n_(static_cast<int>(labels.rows())), sum_(Tensord::Zero(labels.rows(), labels.cols())),
        sumsq_(static_cast<std::size_t>(n_), 0.0), count_(static_cast<std::size_t>(n_), 0),
        assign_(static_cast<std::size_t>(n_), 0),
        best_(static_cast<std::size_t>(n_), std::numeric_limits<double>::infinity()),
        best_assign_(static_cast<std::size_t>(n_)) {}

  void run(int max_blocks) {
    max_blocks_ = max_blocks;
    if (n_ > 0) recurse(0, 0);
  }

  // best_[k-1] = minimum total SSE over partitions with exactly k blocks.
  const std::vector<double>& best_exact() const { return best_; }
  const std::vector<int>& best_assignment(int k) const { return best_assign_[static_cast<std::size_t>(k - 1)]; }

private:
  void recurse(int i, int blocks) {
    if (i == n_) {
      double cost = 0.0;
      for (int b = 0; b < blocks; ++b) {
        cost += sumsq_[static_cast<std::size_t>(b)] - sum_.row(b).squaredNorm() / count_[static_cast<std::size_t>(b)];
      }
      auto& slot = best_[static_cast<std::size_t>(blocks - 1)];
      if (cost < slot) {
        slot = cost;
        best_assign_[static_cast<std::size_t>(blocks - 1)] = assign_;
      }
      return;
    }
    const double sq = y_.row(i).squaredNorm();
    const int limit = std::min(blocks + 1, max_blocks_);
    for (int b = 0; b < limit; ++b) {
      // Too few points left to open the remaining blocks is fine: "at most".
      sum_.row(b) += y_.row(i);
      sumsq_[static_cast<std::size_t>(b)] += sq;
      ++count_[static_cast<std::size_t>(b)];
      assign_[static_cast<std::size_t>(i)] = b;
      recurse(i + 1, std::max(blocks, b + 1));
      sum_.row(b) -= y_.row(i);
      sumsq_[static_cast<std::size_t>(b)] -= sq;
      --count_[static_cast<std::size_t>(b)];
    }
  }

  const Tensord& y_;
  int n_;
  int max_blocks_ = 1;
  Tensord sum_;
  std::vector<double> sumsq_;
  std::vector<int> count_;
  std::vector<int> assign_;
  std::vector<double> best_;
  std::vector<std::vector<int>> best_assign_;
};

void check_labels(const Tensord& labels, int max_groups) {
  if (max_groups < 1) throw ContractError("clustering: M must be >= 1");
  if (labels.rows() < 1) throw ContractError("clustering: no labels");
  require_finite(labels, "labels");
}

}  // namespace

Partition exhaustive_partition(const Tensord& labels, int max_groups) {
  check_labels(labels, max_groups);
  if (labels.rows() > kExhaustiveLimit) throw ContractError("exhaustive_partition: N too large");
  const int n = static_cast<int>(labels.rows());
  PartitionSearch search(labels);
  search.run(std::min(max_groups, n));
  // Running sums accumulate rounding; re-evaluate the winning partitions
  // canonically and take the best of those.
  Partition best;
  best.eps = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= std::min(max_groups, n); ++k) {
    if (!std::isfinite(search.best_exact()[static_cast<std::size_t>(k - 1)])) continue;
    Partition p = evaluate_partition(labels, search.best_assignment(k));
    if (p.eps < best.eps) best = std::move(p);
  }
  return best;
}

std::vector<double> exhaustive_eps_curve(const Tensord& labels) {
  check_labels(labels, 1);
  if (labels.rows() > kExhaustiveLimit) throw ContractError("exhaustive_eps_curve: N too large");
  const int n = static_cast<int>(labels.rows());
  PartitionSearch search(labels);
  search.run(n);
  std::vector<double> exact(static_cast<std::size_t>(n));
  for (int k = 1; k <= n; ++k) {
    exact[static_cast<std::size_t>(k - 1)] = evaluate_partition(labels, search.best_assignment(k)).eps;
  }
  // eps*_M allows unused codewords: prefix minimum over exact block counts.
  std::vector<double> curve(static_cast<std::size_t>(n));
  double running = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) {
    running = std::min(running, exact[static_cast<std::size_t>(k)]);
    curve[static_cast<std::size_t>(k)] = running;
  }
  return curve;
}

Partition kmeans(const Tensord& labels, int max_groups, int restarts, Rng& rng) {
  check_labels(labels, max_groups);
  const auto n = labels.rows();
  const int k = static_cast<int>(std::min<Eigen::Index>(max_groups, n));
  Partition best;
  best.eps = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    const auto seeds = codebook::kmeans_plus_plus(labels, k, rng);
    Tensord centers(k, labels.cols());
    for (int g = 0; g < k; ++g) centers.row(g) = labels.row(seeds[static_cast<std::size_t>(g)]);
    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    for (int iter = 0; iter < 300; ++iter) {
      bool changed = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double bestd = std::numeric_limits<double>::infinity();
        for (int g = 0; g < k; ++g) {
          const double d = (labels.row(i) - centers.row(g)).squaredNorm();
          if (d < bestd) {
            bestd = d;
            arg = g;
          }
        }
        changed = changed || assign[static_cast<std::size_t>(i)] != arg;
        assign[static_cast<std::size_t>(i)] = arg;
      }
      std::vector<int> count(static_cast<std::size_t>(k), 0);
      Tensord next = Tensord::Zero(k, labels.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        next.row(assign[static_cast<std::size_t>(i)]) += labels.row(i);
        ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
      }
      for (int g = 0; g < k; ++g) {
        if (count[static_cast<std::size_t>(g)] > 0) centers.row(g) = next.row(g) / count[static_cast<std::size_t>(g)];
      }
      if (!changed && iter > 0) break;
    }

    // Transfer moves: relocate one point when the exact change in total SSE
    // (n_a/(n_a-1)|y-m_a|^2 removed, n_b/(n_b+1)|y-m_b|^2 added) is negative.
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    Tensord sums = Tensord::Zero(k, labels.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += labels.row(i);
      ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (bool improved = true; improved;) {
      improved = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int a = assign[static_cast<std::size_t>(i)];
        const int na = count[static_cast<std::size_t>(a)];
        if (na <= 1) continue;
        const double removal = na / (na - 1.0) * (labels.row(i) - sums.row(a) / na).squaredNorm();
        int target = -1;
        double best_gain = 1e-12 * (1.0 + removal);
        for (int b = 0; b < k; ++b) {
          if (b == a) continue;
          const int nb = count[static_cast<std::size_t>(b)];
          const double addition = nb == 0 ? 0.0 : nb / (nb + 1.0) * (labels.row(i) - sums.row(b) / nb).squaredNorm();
          if (removal - addition > best_gain) {
            best_gain = removal - addition;
            target = b;
          }
        }
        if (target >= 0) {
          sums.row(a) -= labels.row(i);
          sums.row(target) += labels.row(i);
          --count[static_cast<std::size_t>(a)];
          ++count[static_cast<std::size_t>(target)];
          assign[static_cast<std::size_t>(i)] = target;
          improved = true;
        }
      }
    }
    Partition p = evaluate_partition(labels, assign);
    if (p.eps < best.eps) best = std::move(p);
  }
  return best;
}

OptimalEps optimal_eps(const Tensord& labels, int max_groups, std::uint64_t seed, int restarts) {
  if (labels.rows() < max_groups) throw ContractError("optimal_eps: need N >= M");
  Rng rng(seed);
  OptimalEps out;
  out.kmeans = kmeans(labels, max_groups, restarts, rng).eps;
  if (labels.rows() <= kExhaustiveLimit) out.exhaustive = exhaustive_partition(labels, max_groups).eps;
  return out;
}

MonotonicityReport monotonicity_check(const Tensord& labels, const std::vector<int>& ms, std::uint64_t seed) {
  if (!std::is_sorted(ms.begin(), ms.end())) throw ContractError("monotonicity_check: M list must ascend");
  MonotonicityReport r;
  r.ms = ms;
  const bool oracle = labels.rows() <= kExhaustiveLimit;
  std::vector<double> curve;
  if (oracle) curve = exhaustive_eps_curve(labels);
  for (int m : ms) {
    if (oracle) {
      r.eps.push_back(curve[static_cast<std::size_t>(std::min<Eigen::Index>(m, labels.rows()) - 1)]);
    } else {
      Rng rng(seed + static_cast<std::uint64_t>(m));
      r.eps.push_back(kmeans(labels, m, 20, rng).eps);
    }
    r.from_oracle.push_back(oracle);
  }
  for (std::size_t i = 1; i < ms.size(); ++i) {
    const double tol = oracle ? 0.0 : 1e-3;
    if (r.eps[i] <= r.eps[i - 1] + tol) continue;
    if (!oracle) {
      // Likely a poor local optimum at the larger M: retry with more restarts.
      ++r.retries;
      Rng rng(seed ^ 0x5bd1e995ULL ^ static_cast<std::uint64_t>(ms[i]));
      r.eps[i] = std::min(r.eps[i], kmeans(labels, ms[i], 200, rng).eps);
      if (r.eps[i] <= r.eps[i - 1] + tol) continue;
    }
    std::ostringstream os;
    os << "eps*_" << ms[i - 1] << " = " << r.eps[i - 1] << " < eps*_" << ms[i] << " = " << r.eps[i];
    r.violations.push_back(os.str());
  }
  if (!ms.empty() && ms.back() >= labels.rows() && r.eps.back() != 0.0 && oracle) {
    r.violations.push_back("eps*_N is not zero");
  }
  return r;
}

}  // namespace tdrl::theory
