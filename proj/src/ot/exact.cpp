#include "tdrl/ot/exact.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace tdrl::ot {

namespace {

struct Cell {
  int i;
  int j;
  double flow;
};

void check_marginal(const Vectord& w, const char* which) {
  if (w.size() < 1) throw ContractError(std::string("exact_transport: empty ") + which);
  require_finite(w, which);
  if ((w.array() < 0.0).any()) throw ContractError(std::string("exact_transport: negative ") + which + " weight");
  if (std::abs(w.sum() - 1.0) > 1e-6) {
    throw ContractError(std::string("exact_transport: ") + which + " weights sum to " + std::to_string(w.sum()));
  }
}

// Spanning tree over n row nodes followed by m column nodes.
class Basis {
public:
  Basis(int n, int m) : n_(n), m_(m), adj_(static_cast<std::size_t>(n + m)) {}

  void rebuild(const std::vector<Cell>& cells) {
    for (auto& a : adj_) a.clear();
    for (int k = 0; k < static_cast<int>(cells.size()); ++k) {
      adj_[static_cast<std::size_t>(cells[k].i)].push_back(k);
      adj_[static_cast<std::size_t>(n_ + cells[k].j)].push_back(k);
    }
  }

  void potentials(const std::vector<Cell>& cells, const Tensord& cost, Vectord& u, Vectord& v) const {
    std::vector<char> seen(static_cast<std::size_t>(n_ + m_), 0);
    std::vector<int> stack{0};
    u.setZero(n_);
    v.setZero(m_);
    seen[0] = 1;
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      for (int k : adj_[static_cast<std::size_t>(node)]) {
        const Cell& c = cells[static_cast<std::size_t>(k)];
        const int other = node < n_ ? n_ + c.j : c.i;
        if (seen[static_cast<std::size_t>(other)]) continue;
        seen[static_cast<std::size_t>(other)] = 1;
        if (node < n_) {
          v(c.j) = cost(c.i, c.j) - u(c.i);
        } else {
          u(c.i) = cost(c.i, c.j) - v(c.j);
        }
        stack.push_back(other);
      }
    }
  }

  // Basis cells on the tree path from column node j to row node i, ordered from j.
  std::vector<int> path(const std::vector<Cell>& cells, int i, int j) const {
    std::vector<int> parent_cell(static_cast<std::size_t>(n_ + m_), -1);
    std::vector<int> parent_node(static_cast<std::size_t>(n_ + m_), -1);
    std::vector<char> seen(static_cast<std::size_t>(n_ + m_), 0);
    std::vector<int> stack{i};
    seen[static_cast<std::size_t>(i)] = 1;
    const int target = n_ + j;
    while (!stack.empty() && !seen[static_cast<std::size_t>(target)]) {
      const int node = stack.back();
      stack.pop_back();
      for (int k : adj_[static_cast<std::size_t>(node)]) {
        const Cell& c = cells[static_cast<std::size_t>(k)];
        const int other = node < n_ ? n_ + c.j : c.i;
        if (seen[static_cast<std::size_t>(other)]) continue;
        seen[static_cast<std::size_t>(other)] = 1;
        parent_cell[static_cast<std::size_t>(other)] = k;
        parent_node[static_cast<std::size_t>(other)] = node;
        stack.push_back(other);
      }
    }
    std::vector<int> out;
    for (int node = target; node != i; node = parent_node[static_cast<std::size_t>(node)]) {
      out.push_back(parent_cell[static_cast<std::size_t>(node)]);
    }
    return out;
  }

private:
  int n_;
  int m_;
  std::vector<std::vector<int>> adj_;
};

}  // namespace

ExactResult exact_transport(const Vectord& a, const Vectord& b, const Tensord& cost) {
  check_marginal(a, "source");
  check_marginal(b, "target");
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  if (cost.rows() != n || cost.cols() != m) {
    throw DimensionError("exact_transport: cost " + shape_of(cost) + " for marginals of size " + std::to_string(n) +
                         ", " + std::to_string(m));
  }
  require_finite(cost, "cost matrix");

  // Northwest-corner start; a tie advances only the row so the basis keeps
  // exactly n + m - 1 cells (degenerate zeros included).
  std::vector<double> supply(a.data(), a.data() + n);
  std::vector<double> demand(m);
  const double rescale = a.sum() / b.sum();
  for (int j = 0; j < m; ++j) demand[static_cast<std::size_t>(j)] = b(j) * rescale;
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(n + m - 1));
  for (int i = 0, j = 0;;) {
    auto& s = supply[static_cast<std::size_t>(i)];
    auto& d = demand[static_cast<std::size_t>(j)];
    const double f = std::min(s, d);
    cells.push_back({i, j, f});
    s -= f;
    d -= f;
    if (i == n - 1 && j == m - 1) break;
    if (j == m - 1 || (i < n - 1 && s <= d)) {
      ++i;
    } else {
      ++j;
    }
  }

  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double tol = 1e-12 * scale;
  Basis basis(n, m);
  ExactResult result;
  Vectord u, v;
  // Dantzig pricing; after a long run of degenerate pivots switch to Bland's
  // first-improving rule, which cannot cycle.
  int degenerate_run = 0;
  const int bland_after = 2 * (n + m);
  const long max_pivots = 50L * (n + m) * std::max(n, m) + 1000;
  for (;;) {
    basis.rebuild(cells);
    basis.potentials(cells, cost, u, v);
    int ei = -1, ej = -1;
    double best = -tol;
    const bool bland = degenerate_run > bland_after;
    for (int i = 0; i < n && !(bland && ei >= 0); ++i) {
      for (int j = 0; j < m; ++j) {
        const double rc = cost(i, j) - u(i) - v(j);
        if (rc < best) {
          best = rc;
          ei = i;
          ej = j;
          if (bland) break;
        }
      }
    }
    if (ei < 0) break;
    if (++result.pivots > max_pivots) throw NumericError("exact_transport: pivot limit exceeded");

    const std::vector<int> cycle = basis.path(cells, ei, ej);
    double theta = std::numeric_limits<double>::infinity();
    int leaving = -1;
    for (std::size_t k = 0; k < cycle.size(); k += 2) {
      const double f = cells[static_cast<std::size_t>(cycle[k])].flow;
      if (f < theta) {
        theta = f;
        leaving = cycle[k];
      }
    }
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      auto& c = cells[static_cast<std::size_t>(cycle[k])];
      c.flow += (k % 2 == 0) ? -theta : theta;
    }
    cells[static_cast<std::size_t>(leaving)] = {ei, ej, theta};
    degenerate_run = theta > 0.0 ? 0 : degenerate_run + 1;
  }

  result.plan = Tensord::Zero(n, m);
  for (const auto& c : cells) result.plan(c.i, c.j) += std::max(0.0, c.flow);
  result.value = (result.plan.array() * cost.array()).sum();
  result.u = u;
  result.v = v;
  return result;
}

}  // namespace tdrl::ot
