#include "tdrl/theory/lab.hpp"

#include "tdrl/core/optimizer.hpp"
#include "tdrl/core/stats.hpp"
#include "tdrl/theory/clustering.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace tdrl::theory {

namespace {

std::vector<int> argmax_labels(const Tensord& y) {
  std::vector<int> out(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    Eigen::Index k = 0;
    y.row(i).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

}  // namespace

DecompositionReport decompose_loss(const Solution& sol, const Tensord& x, const Tensord& y, LossKind loss) {
  if (x.rows() != y.rows()) throw DimensionError("decompose_loss: x and y row counts differ");
  const Tensorf z = sol.encoder.forward(Tensorf(x.cast<float>()));
  const auto q = codebook::quantize(sol.codebook, z);
  const Tensord decoded = sol.decoder.forward(sol.codebook.codewords.value).cast<double>();
  if (decoded.cols() != y.cols()) throw DimensionError("decompose_loss: decoder output dim vs label dim");
  const auto n = x.rows();
  const int m = sol.codebook.size();
  DecompositionReport r;
  r.per_sample_L.resize(n);
  r.per_sample_C.resize(n);
  r.per_sample_A.resize(n);
  r.latent_index = q.indices;
  r.output_index.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int lat = q.indices[static_cast<std::size_t>(i)];
    const double l = sample_loss(loss, y.row(i), decoded.row(lat));
    int out = lat;
    double best = l;
    for (int c = 0; c < m; ++c) {
      const double v = sample_loss(loss, y.row(i), decoded.row(c));
      if (v < best) {
        best = v;
        out = c;
      }
    }
    r.output_index[static_cast<std::size_t>(i)] = out;
    r.per_sample_L(i) = l;
    r.per_sample_C(i) = best;
    r.per_sample_A(i) = l - best;
    if (out != lat) r.mismatches.push_back(static_cast<int>(i));
  }
  if (n > 0) {
    r.L = r.per_sample_L.mean();
    r.L_C = r.per_sample_C.mean();
    r.L_A = r.per_sample_A.mean();
  }
  return r;
}

Solution train_solution(const SyntheticTask& task, const Sample& train, const SolutionConfig& cfg, std::uint64_t seed) {
  if (train.x.rows() < 1) throw ContractError("train_solution: empty training sample");
  Rng rng(seed);
  Rng init = rng.fork(1);
  Rng batches = rng.fork(2);
  Solution sol;
  if (cfg.encoder_hidden > 0) {
    sol.encoder = Mlpf("encoder", {task.dx, cfg.encoder_hidden, cfg.latent_dim}, {Activation::Tanh, Activation::Identity}, init);
  } else {
    sol.encoder = Mlpf("encoder", {task.dx, cfg.latent_dim}, {Activation::Identity}, init);
  }
  sol.codebook = codebook::init_codebook<float>(init, cfg.M, cfg.latent_dim, codebook::InitStrategy::Gaussian);
  sol.decoder = Mlpf("decoder", {cfg.latent_dim, task.dy}, {Activation::Identity}, init);
  sol.provenance = task.name + " M=" + std::to_string(cfg.M) + " N=" + std::to_string(train.x.rows()) +
                   " seed=" + std::to_string(seed);

  ParameterList<float> params = sol.encoder.parameters();
  for (auto* p : sol.codebook.parameters()) params.push_back(p);
  for (auto* p : sol.decoder.parameters()) params.push_back(p);
  Optimizer<float> opt(params, {OptimizerKind::Adam, cfg.lr});
  codebook::LossOptions lo;
  lo.lambda = cfg.lambda;

  const auto n = train.x.rows();
  const int b = static_cast<int>(std::min<Eigen::Index>(cfg.batch, n));
  const Tensorf xs = train.x.cast<float>();
  const Tensorf ys = train.y.cast<float>();
  const std::vector<int> labels = task.loss == LossKind::CrossEntropy ? argmax_labels(train.y) : std::vector<int>{};
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::size_t cursor = order.size();
  Tensorf xb(b, task.dx), yb(b, task.dy);
  std::vector<int> lb(static_cast<std::size_t>(b));
  for (int step = 0; step < cfg.steps; ++step) {
    for (int i = 0; i < b; ++i) {
      if (cursor == order.size()) {
        batches.shuffle(std::span<int>(order));
        cursor = 0;
      }
      const int idx = order[cursor++];
      xb.row(i) = xs.row(idx);
      yb.row(i) = ys.row(idx);
      if (!labels.empty()) lb[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx)];
    }
    Graph<float> g;
    auto z = sol.encoder.forward(g.constant(xb));
    const auto q = codebook::quantize(sol.codebook, z.value());
    auto pred = sol.decoder.forward(codebook::straight_through(z, q));
    auto task_loss = labels.empty() ? mean(square(pred - g.constant(yb)))
                                    : cross_entropy(pred, std::span<const int>(lb));
    auto total = task_loss + codebook::codebook_loss(z, g.param(sol.codebook.codewords),
                                                     g.param(sol.codebook.pi_logits), lo);
    opt.step(g.backward(total));
  }
  return sol;
}

SampleComplexityReport sample_complexity_experiment(const SyntheticTask& task, const SampleComplexityConfig& cfg) {
  if (cfg.ns.size() < 3) throw ContractError("sample_complexity_experiment: need at least 3 N values");
  if (cfg.seeds < 1) throw ContractError("sample_complexity_experiment: need at least one seed");
  SampleComplexityReport rep;
  rep.ns = cfg.ns;
  int max_n = 0;
  for (int n : cfg.ns) max_n = std::max(max_n, n);
  rep.held_out_size = cfg.eval_multiplier * max_n;
  Rng eval_rng(cfg.base_seed ^ 0xe7037ed1a0b428dbULL);
  const Sample held_out = task.sample(eval_rng, rep.held_out_size);

  std::vector<double> log_n, gaps_all, n_all;
  for (int n : cfg.ns) {
    std::vector<double> gaps;
    for (int s = 0; s < cfg.seeds; ++s) {
      const std::uint64_t seed = cfg.base_seed + 1000003ULL * static_cast<std::uint64_t>(s) + static_cast<std::uint64_t>(n);
      Rng data_rng(seed);
      const Sample train = task.sample(data_rng, n);
      const Solution sol = train_solution(task, train, cfg.solution, seed + 17);
      const auto emp = decompose_loss(sol, train.x, train.y, task.loss);
      const auto pop = decompose_loss(sol, held_out.x, held_out.y, task.loss);
      SampleComplexityRow row;
      row.seed = s;
      row.M = cfg.solution.M;
      row.N = n;
      row.eps_star = task.loss == LossKind::Squared ? optimal_eps(train.y, std::min(cfg.solution.M, n), seed).value()
                                                     : std::numeric_limits<double>::quiet_NaN();
      row.L = emp.L;
      row.L_C = emp.L_C;
      row.L_A = emp.L_A;
      row.L_A_population = pop.L_A;
      row.gap = std::abs(emp.L_A - pop.L_A);
      rep.rows.push_back(row);
      gaps.push_back(row.gap);
      gaps_all.push_back(row.gap);
      n_all.push_back(n);
    }
    rep.mean_gap.push_back(stats::mean(gaps));
    log_n.push_back(std::log(static_cast<double>(n)));
  }
  std::vector<double> log_gap;
  bool positive = true;
  for (double g : rep.mean_gap) {
    positive = positive && g > 0.0;
    log_gap.push_back(std::log(std::max(g, 1e-300)));
  }
  if (positive) rep.slope = stats::linear_fit(log_n, log_gap).slope;
  rep.spearman = stats::spearman(n_all, gaps_all);
  Rng perm(cfg.base_seed ^ 0x8cb92ba72f3d8dd7ULL);
  rep.p_value = stats::spearman_negative_pvalue(n_all, gaps_all, cfg.permutations, perm);
  rep.slope_ok = positive && rep.slope >= cfg.slope_lo && rep.slope <= cfg.slope_hi;
  rep.correlation_ok = rep.spearman < 0.0 && rep.p_value < cfg.p_threshold;
  return rep;
}

KClassReport kclass_equivalence(const Tensorf& features, const Tensorf& weights) {
  if (features.cols() != weights.rows()) throw DimensionError("kclass_equivalence: feature dim vs weight rows");
  const Tensorf logits = features * weights;
  const auto cb = codebook::make_codebook(Tensorf(weights.transpose()), codebook::Metric::NegativeInnerProduct);
  const auto q = codebook::quantize(cb, features);
  KClassReport r;
  r.samples = static_cast<int>(features.rows());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    Eigen::Index k = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, k)) k = j;
    }
    if (q.indices[static_cast<std::size_t>(i)] == static_cast<int>(k)) ++r.agreements;
  }
  return r;
}

Classifier train_classifier(const Sample& train, int classes, int latent_dim, int steps, std::uint64_t seed) {
  Rng rng(seed);
  Rng init = rng.fork(1);
  Rng batches = rng.fork(2);
  Classifier c{Mlpf("encoder", {static_cast<int>(train.x.cols()), 16, latent_dim}, {Activation::Tanh, Activation::Tanh}, init),
               {"classifier.w", Tensorf(latent_dim, classes), true}};
  const double a = std::sqrt(6.0 / (latent_dim + classes));
  for (Eigen::Index i = 0; i < c.weights.value.size(); ++i) c.weights.value.data()[i] = static_cast<float>(init.uniform(-a, a));
  ParameterList<float> params = c.encoder.parameters();
  params.push_back(&c.weights);
  Optimizer<float> opt(params, {OptimizerKind::Adam, 1e-2});
  const auto labels = argmax_labels(train.y);
  const Tensorf xs = train.x.cast<float>();
  const int b = static_cast<int>(std::min<Eigen::Index>(64, train.x.rows()));
  Tensorf xb(b, xs.cols());
  std::vector<int> lb(static_cast<std::size_t>(b));
  for (int step = 0; step < steps; ++step) {
    for (int i = 0; i < b; ++i) {
      const int idx = batches.below(static_cast<int>(xs.rows()));
      xb.row(i) = xs.row(idx);
      lb[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx)];
    }
    Graph<float> g;
    auto logits = matmul(c.encoder.forward(g.constant(xb)), g.param(c.weights));
    opt.step(g.backward(cross_entropy(logits, std::span<const int>(lb))));
  }
  return c;
}

void write_sample_complexity_csv(const std::filesystem::path& path, const std::vector<SampleComplexityRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "seed,M,N,eps_star,L,L_C,L_A,gap\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << r.M << ',' << r.N << ',' << r.eps_star << ',' << r.L << ',' << r.L_C << ',' << r.L_A << ','
        << r.gap << '\n';
  }
}

}  // namespace tdrl::theory
