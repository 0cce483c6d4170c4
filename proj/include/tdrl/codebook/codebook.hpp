#pragma once

#include "tdrl/core/graph.hpp"
#include "tdrl/core/rng.hpp"
#include "tdrl/ot/exact.hpp"
#include "tdrl/ot/sinkhorn.hpp"

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace tdrl::codebook {

enum class Metric { SquaredEuclidean, NegativeInnerProduct };

const char* metric_name(Metric m);
Metric parse_metric(const std::string& name);

/// M codewords in latent space plus category logits; pi = softmax(pi_logits).
template <typename Scalar>
struct Codebook {
  Parameter<Scalar> codewords;  // [M, d]
  Parameter<Scalar> pi_logits;  // [1, M]
  Metric metric = Metric::SquaredEuclidean;

  int size() const { return static_cast<int>(codewords.value.rows()); }
  int dim() const { return static_cast<int>(codewords.value.cols()); }

  Vectord pi() const {
    const Eigen::RowVectorXd l = pi_logits.value.template cast<double>();
    const Eigen::RowVectorXd e = (l.array() - l.maxCoeff()).exp();
    return (e / e.sum()).transpose();
  }

  ParameterList<Scalar> parameters() { return {&codewords, &pi_logits}; }
};

using Codebookf = Codebook<float>;

template <typename Scalar>
Codebook<Scalar> make_codebook(Tensor<Scalar> codewords, Metric metric = Metric::SquaredEuclidean,
                               const std::string& name = "codebook") {
  if (codewords.rows() < 1 || codewords.cols() < 1) throw ContractError("codebook: needs M, d >= 1");
  const auto m = codewords.rows();
  return {{name + ".codewords", std::move(codewords), true},
          {name + ".pi_logits", Tensor<Scalar>::Zero(1, m), true},
          metric};
}

template <typename Scalar>
struct Quantization {
  std::vector<int> indices;  // [B]
  Tensor<Scalar> quantized;  // [B, d]
  Tensor<Scalar> distances;  // [B, M]
};

/// Pairwise d_z(z_i, c_m).
template <typename Scalar>
Tensor<Scalar> distances(const Tensor<Scalar>& z, const Tensor<Scalar>& c, Metric metric) {
  if (z.cols() != c.cols()) {
    throw ContractError("quantize: latent dim " + std::to_string(z.cols()) + " vs codebook dim " +
                        std::to_string(c.cols()));
  }
  if (metric == Metric::NegativeInnerProduct) return -(z * c.transpose());
  // Direct differences rather than the expanded norm form so a point equal to
  // a codeword gets distance exactly zero.
  Tensor<Scalar> d(z.rows(), c.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    d.row(i) = (c.rowwise() - z.row(i)).rowwise().squaredNorm().transpose();
  }
  return d;
}

/// Nearest codeword under the codebook metric; ties go to the lowest index.
template <typename Scalar>
Quantization<Scalar> quantize(const Codebook<Scalar>& cb, const Tensor<Scalar>& z) {
  const Tensor<Scalar>& c = cb.codewords.value;
  Quantization<Scalar> q;
  q.distances = distances(z, c, cb.metric);
  q.indices.resize(static_cast<std::size_t>(z.rows()));
  q.quantized.resize(z.rows(), c.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index m = 1; m < c.rows(); ++m) {
      if (q.distances(i, m) < q.distances(i, best)) best = m;
    }
    q.indices[static_cast<std::size_t>(i)] = static_cast<int>(best);
    q.quantized.row(i) = c.row(best);
  }
  return q;
}

/// Forward value is the quantized batch; the gradient reaches z unchanged and
/// the codewords get nothing along this path.
template <typename Scalar>
Var<Scalar> straight_through(Var<Scalar> z, const Quantization<Scalar>& q) {
  return z.graph().straight_through(z, q.quantized);
}

enum class Solver { Exact, Sinkhorn };

const char* solver_name(Solver s);
Solver parse_solver(const std::string& name);

struct LossOptions {
  double lambda = 1.0;
  Solver solver = Solver::Sinkhorn;
  ot::CostKind cost = ot::CostKind::SquaredEuclidean;
  double epsilon_factor = 0.05;  // epsilon = factor x mean(C)
  int max_iters = 2000;
  double tol = 1e-6;
};

struct LossDiagnostics {
  double distance = 0.0;  // unweighted W between the batch and P_{c,pi}
  bool converged = true;
  int iterations = 0;
  double marginal_error = 0.0;
};

/// lambda * W(uniform batch measure of z, sum_m pi_m delta_{c_m}) as a graph
/// node with envelope gradients: the plan is held fixed for z and codewords,
/// and the target-side dual potential gives d/dpi, chained through softmax.
template <typename Scalar>
Var<Scalar> codebook_loss(Var<Scalar> z, Var<Scalar> codewords, Var<Scalar> pi_logits, const LossOptions& opts,
                          LossDiagnostics* diag = nullptr) {
  Graph<Scalar>& g = z.graph();
  if (opts.lambda < 0.0) throw ContractError("codebook_loss: lambda must be >= 0");
  const Tensor<Scalar>& zv = z.value();
  const Tensor<Scalar>& cv = codewords.value();
  if (zv.rows() < 1) throw ContractError("codebook_loss: empty batch");
  if (zv.cols() != cv.cols()) throw DimensionError("codebook_loss: latent/codeword dims differ");
  if (pi_logits.rows() != 1 || pi_logits.cols() != cv.rows()) {
    throw DimensionError("codebook_loss: logits " + shape_of(pi_logits.value()) + " for " +
                         std::to_string(cv.rows()) + " codewords");
  }
  LossDiagnostics local;
  LossDiagnostics& d = diag ? *diag : local;
  d = {};
  if (opts.lambda == 0.0) {
    return g.external(Scalar(0), {z, codewords, pi_logits},
                      {Tensor<Scalar>::Zero(zv.rows(), zv.cols()), Tensor<Scalar>::Zero(cv.rows(), cv.cols()),
                       Tensor<Scalar>::Zero(1, cv.rows())});
  }

  const auto b_count = zv.rows();
  const Vectord a = Vectord::Constant(b_count, 1.0 / static_cast<double>(b_count));
  const Eigen::RowVectorXd logits = pi_logits.value().template cast<double>();
  const Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
  const Vectord pi = (e / e.sum()).transpose();
  const Tensord x = zv.template cast<double>();
  const Tensord y = cv.template cast<double>();
  const Tensord cost = ot::cost_matrix(x, y, opts.cost);

  Tensord plan;
  Vectord col_potential;
  if (opts.solver == Solver::Exact) {
    auto r = ot::exact_transport(a, pi, cost);
    d.distance = r.value;
    plan = std::move(r.plan);
    col_potential = std::move(r.v);
  } else {
    const ot::SinkhornOptions so{ot::default_epsilon(cost, opts.epsilon_factor), opts.max_iters, opts.tol};
    auto r = ot::sinkhorn(a, pi, cost, so);
    d.distance = r.value;
    d.converged = r.converged;
    d.iterations = r.iterations;
    d.marginal_error = r.marginal_error;
    plan = std::move(r.plan);
    col_potential = std::move(r.g);
  }

  const ot::Measure mu{x, a};
  const ot::Measure nu{y, pi};
  const Tensord dz = ot::support_gradient(mu, nu, opts.cost, plan);
  const Tensord dc = ot::support_gradient(nu, mu, opts.cost, Tensord(plan.transpose()));
  // dW/dpi_k = g_k up to a constant; softmax Jacobian removes the constant.
  const double mean_g = pi.dot(col_potential);
  const Tensord dlogits = (pi.array() * (col_potential.array() - mean_g)).matrix().transpose();

  const double lam = opts.lambda;
  return g.external(static_cast<Scalar>(lam * d.distance), {z, codewords, pi_logits},
                    {(lam * dz).template cast<Scalar>(), (lam * dc).template cast<Scalar>(),
                     (lam * dlogits).template cast<Scalar>()});
}

enum class InitStrategy { Gaussian, KMeansPlusPlus, KMeans };

const char* init_strategy_name(InitStrategy s);
InitStrategy parse_init_strategy(const std::string& name);

/// k-means++ seeding: first center uniform, then D^2-weighted picks.
/// Returns row indices into `points`.
template <typename Scalar>
std::vector<int> kmeans_plus_plus(const Tensor<Scalar>& points, int k, Rng& rng) {
  const auto n = points.rows();
  if (n < 1 || k < 1) throw ContractError("kmeans++: needs points and k >= 1");
  std::vector<int> chosen{rng.below(static_cast<int>(n))};
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  while (static_cast<int>(chosen.size()) < k) {
    const auto last = points.row(chosen.back()).template cast<double>().eval();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dist = (points.row(i).template cast<double>() - last).squaredNorm();
      auto& slot = d2[static_cast<std::size_t>(i)];
      slot = std::min(slot, dist);
      total += slot;
    }
    int pick = 0;
    if (total <= 0.0) {
      pick = rng.below(static_cast<int>(n));
    } else {
      double r = rng.uniform() * total;
      pick = static_cast<int>(n) - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2[static_cast<std::size_t>(i)];
        if (r < 0.0) {
          pick = static_cast<int>(i);
          break;
        }
      }
    }
    chosen.push_back(pick);
  }
  return chosen;
}

/// Lloyd iterations from `centers` until assignments stop changing or
/// `max_iters`. Empty clusters keep their center. Returns the distortion
/// (mean squared distance to the nearest center).
template <typename Scalar>
double lloyd_refine(const Tensor<Scalar>& points, Tensor<Scalar>& centers, int max_iters = 100) {
  const Tensord x = points.template cast<double>();
  Tensord c = centers.template cast<double>();
  std::vector<int> assign(static_cast<std::size_t>(x.rows()), -1);
  double distortion = 0.0;
  for (int it = 0; it <= max_iters; ++it) {
    bool changed = false;
    distortion = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index best = 0;
      const double d = (c.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      distortion += d;
      if (assign[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
        assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    distortion /= static_cast<double>(x.rows());
    if (!changed || it == max_iters) break;
    Tensord sum = Tensord::Zero(c.rows(), c.cols());
    std::vector<int> count(static_cast<std::size_t>(c.rows()), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      sum.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
      ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (Eigen::Index k = 0; k < c.rows(); ++k) {
      if (count[static_cast<std::size_t>(k)] > 0) c.row(k) = sum.row(k) / count[static_cast<std::size_t>(k)];
    }
  }
  centers = c.template cast<Scalar>();
  return distortion;
}

inline constexpr int kKMeansInitRestarts = 10;

/// Gaussian(0, 1/sqrt(d)) codewords, k-means++ picks from a warm-up batch
/// (with a tiny jitter if the batch has fewer distinct points than M), or the
/// lowest-distortion Lloyd refinement of several k-means++ seedings.
/// Logits start at zero, i.e. uniform pi.
template <typename Scalar>
Codebook<Scalar> init_codebook(Rng& rng, int m, int d, InitStrategy strategy, const Tensor<Scalar>* warmup = nullptr,
                               Metric metric = Metric::SquaredEuclidean, const std::string& name = "codebook") {
  if (m < 1 || d < 1) throw ContractError("init_codebook: M and d must be >= 1");
  Tensor<Scalar> c(m, d);
  if (strategy == InitStrategy::Gaussian) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<Scalar>(rng.normal(0.0, sd));
  } else {
    if (!warmup || warmup->rows() < 1) throw ContractError("init_codebook: k-means++ needs a warm-up batch");
    if (warmup->cols() != d) throw DimensionError("init_codebook: warm-up batch dim mismatch");
    auto seed_centers = [&] {
      Tensor<Scalar> out(m, d);
      const auto picks = kmeans_plus_plus(*warmup, m, rng);
      for (int i = 0; i < m; ++i) out.row(i) = warmup->row(picks[static_cast<std::size_t>(i)]);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < i; ++j) {
          if (out.row(i) == out.row(j)) {
            for (int k = 0; k < d; ++k) out(i, k) += static_cast<Scalar>(rng.normal(0.0, 1e-3));
            j = -1;  // recheck against all earlier rows
          }
        }
      }
      return out;
    };
    c = seed_centers();
    if (strategy == InitStrategy::KMeans) {
      double best = lloyd_refine(*warmup, c);
      for (int r = 1; r < kKMeansInitRestarts; ++r) {
        Tensor<Scalar> trial = seed_centers();
        const double dist = lloyd_refine(*warmup, trial);
        if (dist < best) {
          best = dist;
          c = std::move(trial);
        }
      }
    }
  }
  return make_codebook(std::move(c), metric, name);
}

/// Tracks consecutive batches without assignments per codeword and re-seeds
/// a codeword at a random batch point once it has been idle for `patience`.
class DeadCodewordMonitor {
public:
  explicit DeadCodewordMonitor(int codewords, int patience = 100)
      : idle_(static_cast<std::size_t>(codewords), 0), patience_(patience) {}

  template <typename Scalar>
  int observe_and_reseed(Codebook<Scalar>& cb, const Quantization<Scalar>& q, const Tensor<Scalar>& z, Rng& rng) {
    std::vector<char> used(idle_.size(), 0);
    for (int idx : q.indices) used[static_cast<std::size_t>(idx)] = 1;
    int reseeded = 0;
    for (std::size_t m = 0; m < idle_.size(); ++m) {
      idle_[m] = used[m] ? 0 : idle_[m] + 1;
      if (patience_ > 0 && idle_[m] >= patience_ && z.rows() > 0) {
        cb.codewords.value.row(static_cast<Eigen::Index>(m)) = z.row(rng.below(static_cast<int>(z.rows())));
        idle_[m] = 0;
        ++reseeded;
      }
    }
    total_ += reseeded;
    return reseeded;
  }

  int total_reseeds() const { return total_; }

private:
  std::vector<int> idle_;
  int patience_;
  int total_ = 0;
};

inline constexpr int kCodebookFormatVersion = 1;

void save_codebook(const std::filesystem::path& path, const Codebookf& cb);
Codebookf load_codebook(const std::filesystem::path& path);

}  // namespace tdrl::codebook
