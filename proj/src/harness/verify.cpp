#include "tdrl/harness/verify.hpp"

#include "tdrl/codebook/codebook.hpp"
#include "tdrl/core/grad_check.hpp"
#include "tdrl/core/stats.hpp"
#include "tdrl/harness/plot.hpp"
#include "tdrl/oracles/lp.hpp"
#include "tdrl/ot/exact.hpp"
#include "tdrl/ot/sinkhorn.hpp"
#include "tdrl/theory/clustering.hpp"
#include "tdrl/theory/lab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace tdrl::harness {

namespace fs = std::filesystem;

bool SuiteReport::pass() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
}

const CheckResult* SuiteReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

std::vector<std::string> SuiteReport::failures() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (!c.pass) out.push_back(c.name);
  return out;
}

Json SuiteReport::to_json() const {
  Json cs = Json::array();
  for (const auto& c : checks) cs.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}, {"data", c.data}});
  return {{"suite", suite}, {"fault", fault}, {"pass", pass()}, {"failures", failures()}, {"checks", cs}, {"artifacts", artifacts}};
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"ot", "theory", "rl", "dg"};
  return names;
}

const std::vector<std::string>& fault_names() {
  static const std::vector<std::string> names{"sinkhorn-sign-flip"};
  return names;
}

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

/// Collects checks for one suite, timing each and logging as it goes.
class Suite {
public:
  Suite(std::string name, const VerifyOptions& opts) : opts_(opts), dir_(opts.out_dir / name) {
    report_.suite = std::move(name);
    report_.fault = opts.fault;
    fs::create_directories(dir_);
  }

  template <typename F>
  void check(const std::string& name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    r.name = name;
    try {
      body(r);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opts_.log) opts_.log(std::string(r.pass ? "PASS " : "FAIL ") + report_.suite + "." + name + "  " + r.detail);
    report_.checks.push_back(std::move(r));
  }

  fs::path artifact(const std::string& file) {
    report_.artifacts.push_back(file);
    return dir_ / file;
  }

  const fs::path& dir() const { return dir_; }
  const VerifyOptions& opts() const { return opts_; }

  SuiteReport finish() {
    std::ofstream out(dir_ / "report.json");
    out << report_.to_json().dump(2) << "\n";
    std::ofstream timing(dir_ / "timing.txt");
    for (const auto& c : report_.checks) timing << c.name << " " << c.seconds << "\n";
    return report_;
  }

private:
  const VerifyOptions& opts_;
  fs::path dir_;
  SuiteReport report_;
};

// ---------------------------------------------------------------- ot

using SinkhornFn = std::function<ot::SinkhornResult(const Vectord&, const Vectord&, const Tensord&, const ot::SinkhornOptions&)>;

SinkhornFn sinkhorn_solver(const std::string& fault) {
  if (fault == "sinkhorn-sign-flip") {
    // Negated cost: the solver maximizes transport cost instead.
    return [](const Vectord& a, const Vectord& b, const Tensord& c, const ot::SinkhornOptions& o) {
      auto r = ot::sinkhorn(a, b, Tensord(-c), o);
      r.value = (r.plan.array() * c.array()).sum();
      r.dual_value = -r.dual_value;
      return r;
    };
  }
  return [](const Vectord& a, const Vectord& b, const Tensord& c, const ot::SinkhornOptions& o) {
    return ot::sinkhorn(a, b, c, o);
  };
}

Tensord uniform_points(Rng& rng, int n, int d) {
  Tensord p(n, d);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform();
  return p;
}

ot::Measure random_measure(Rng& rng, int n, int d) {
  Vectord w(n);
  for (int i = 0; i < n; ++i) w(i) = 0.05 + rng.uniform();
  return {uniform_points(rng, n, d), w / w.sum()};
}

template <typename S>
Tensor<S> random_tensor(Rng& rng, int rows, int cols, double scale = 1.0) {
  Tensor<S> t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(-scale, scale));
  return t;
}

double relative_error(const Tensord& analytic, const Tensord& numeric) {
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  const double err = (analytic - numeric).cwiseAbs().maxCoeff();
  return scale > 1e-12 ? err / scale : err;
}

constexpr double kGradTol = 1e-3;

void gradient_nn_ops(CheckResult& r) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int n = 1 + rng.below(8), k = 1 + rng.below(8), m = 1 + rng.below(8);
    Parameter<double> a{"a", random_tensor<double>(rng, n, k), true};
    Parameter<double> b{"b", random_tensor<double>(rng, k, m), true};
    Parameter<double> c{"c", random_tensor<double>(rng, n, m), true};
    Parameter<double> bias{"bias", random_tensor<double>(rng, 1, m), true};
    std::vector<int> labels, cols, rows;
    std::vector<double> targets;
    for (int i = 0; i < n; ++i) {
      labels.push_back(rng.below(m));
      cols.push_back(rng.below(m));
      targets.push_back(rng.uniform());
    }
    for (int i = 0; i < n + 2; ++i) rows.push_back(rng.below(n));
    auto build = [&](Graph<double>& g) {
      auto h = add_row(matmul(g.param(a), g.param(b)), g.param(bias));
      auto t = tanh(h) * g.param(c) + sigmoid(h) - square(g.param(c)) * 0.5;
      auto rl = relu(t + g.constant(Tensord::Constant(n, m, 0.05)));
      auto ce = cross_entropy(concat_cols(rl, g.param(c)), std::span<const int>(labels));
      auto bce = bce_with_logits(gather_cols(t, std::span<const int>(cols)), std::span<const double>(targets));
      auto picked = mean(square(gather_rows(t, std::span<const int>(rows))));
      return ce + bce + picked + sum(straight_through(t, t.value())) * 0.1 - mean(h) * 0.3;
    };
    const auto rep = grad_check<double>(build, {&a, &b, &c, &bias}, kGradTol, 1e-5);
    worst = std::max(worst, rep.max_error());
  }
  Rng rng(7);
  Mlp<double> mlp("net", {6, 8, 8, 4}, {Activation::Tanh, Activation::Relu, Activation::Identity}, rng);
  const Tensord x = random_tensor<double>(rng, 5, 6);
  const std::vector<int> y{0, 3, 1, 2, 3};
  const auto rep = grad_check<double>(
      [&](Graph<double>& g) { return cross_entropy(mlp.forward(g.constant(x)), std::span<const int>(y)); }, mlp.parameters(),
      kGradTol, 1e-5);
  worst = std::max(worst, rep.max_error());
  r.pass = worst < kGradTol;
  r.detail = fmt("max relative error %.3g over 20 random op graphs and an MLP", worst);
  r.data["max_relative_error"] = worst;
}

void gradient_straight_through(CheckResult& r) {
  double worst = 0.0;
  bool codewords_zero = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    auto cb = codebook::make_codebook(random_tensor<double>(rng, 5, 3));
    Parameter<double> z{"z", random_tensor<double>(rng, 4, 3), true};
    const Tensord w = random_tensor<double>(rng, 3, 2);
    const Tensord target = random_tensor<double>(rng, 4, 2);
    const auto q = codebook::quantize(cb, z.value);
    auto decoder_loss = [&](const Tensord& input) {
      return (Tensord((input * w).array().tanh().matrix()) - target).squaredNorm();
    };
    Graph<double> g;
    g.param(cb.codewords);
    auto out = tanh(matmul(straight_through(g.param(z), q), g.constant(w)));
    auto grads = g.backward(sum(square(out - g.constant(target))));
    Tensord numeric(4, 3);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < numeric.size(); ++k) {
      Tensord up = q.quantized, down = q.quantized;
      up.data()[k] += h;
      down.data()[k] -= h;
      numeric.data()[k] = (decoder_loss(up) - decoder_loss(down)) / (2 * h);
    }
    worst = std::max(worst, relative_error(grads.of(z), numeric));
    codewords_zero = codewords_zero && grads.of(cb.codewords).isZero();
  }
  r.pass = worst < kGradTol && codewords_zero;
  r.detail = fmt("max relative error %.3g against decoder finite differences at the quantized point", worst);
  r.data["max_relative_error"] = worst;
}

void gradient_codebook_transport(CheckResult& r) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(60 + seed);
    auto cb = codebook::make_codebook(random_tensor<double>(rng, 3, 2));
    cb.pi_logits.value = random_tensor<double>(rng, 1, 3);
    Parameter<double> z{"z", random_tensor<double>(rng, 6, 2), true};
    auto build = [&](Graph<double>& g) {
      return codebook::codebook_loss(g.param(z), g.param(cb.codewords), g.param(cb.pi_logits), {1.3, codebook::Solver::Exact});
    };
    worst = std::max(worst, grad_check<double>(build, {&z, &cb.codewords, &cb.pi_logits}, kGradTol, 1e-6).max_error());
  }
  r.pass = worst < kGradTol;
  r.detail = fmt("max relative error %.3g for the exact transport term", worst);
  r.data["max_relative_error"] = worst;
}

struct DomainBatch {
  Tensord x;
  std::vector<int> y, domain;
};

DomainBatch domain_batch(Rng& rng, int n, int dim, int classes, int domains) {
  DomainBatch b;
  b.x.resize(n, dim);
  for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = rng.normal(0.0, 2.0);
  for (int i = 0; i < n; ++i) {
    b.y.push_back(rng.below(classes));
    b.domain.push_back(i % domains);
  }
  return b;
}

// The reversed composite has no true derivative: its encoder gradient must
// equal -beta times the finite difference of the (identical) forward value.
void gradient_reversal_composite(CheckResult& r) {
  double worst = 0.0;
  for (double beta : {1.0, 0.5}) {
    dg::DgConfig cfg;
    cfg.method = dg::Method::Dann;
    cfg.beta = beta;
    cfg.hidden = 8;
    cfg.latent_dim = 4;
    cfg.disc_hidden = 8;
    Rng init(40);
    auto m = dg::make_model<double>(5, 2, 3, cfg, init);
    Rng rng(41);
    const auto b = domain_batch(rng, 12, 5, 2, 3);
    auto value = [&]() {
      Graph<double> g;
      return fdann_loss(g, m, cfg, b.x, b.y, b.domain).align.value()(0, 0);
    };
    Graph<double> g;
    const auto grads = g.backward(fdann_loss(g, m, cfg, b.x, b.y, b.domain).align);
    const auto enc = m.encoder.parameters();
    for (auto* p : m.parameters()) {
      const bool in_encoder = std::find(enc.begin(), enc.end(), p) != enc.end();
      Tensord numeric(p->value.rows(), p->value.cols());
      for (Eigen::Index k = 0; k < p->value.size(); ++k) {
        const double saved = p->value.data()[k];
        p->value.data()[k] = saved + 1e-6;
        const double up = value();
        p->value.data()[k] = saved - 1e-6;
        const double down = value();
        p->value.data()[k] = saved;
        numeric.data()[k] = (up - down) / 2e-6;
      }
      if (in_encoder) numeric *= -beta;
      worst = std::max(worst, relative_error(grads.of(*p), numeric));
    }
  }
  r.pass = worst < kGradTol;
  r.detail = fmt("max relative error %.3g (encoder against -beta x finite difference)", worst);
  r.data["max_relative_error"] = worst;
}

void gradient_sinkhorn_support(CheckResult& r, const SinkhornFn& solve) {
  double worst = 0.0;
  const ot::SinkhornOptions opts{0.05, 100000, 1e-12};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(12 + seed);
    ot::Measure mu = random_measure(rng, 4, 2);
    const ot::Measure nu = random_measure(rng, 3, 2);
    auto value = [&](const ot::Measure& m) {
      return solve(m.weights, nu.weights, ot::cost_matrix(m.support, nu.support, ot::CostKind::SquaredEuclidean), opts).dual_value;
    };
    const auto res = solve(mu.weights, nu.weights, ot::cost_matrix(mu.support, nu.support, ot::CostKind::SquaredEuclidean), opts);
    const Tensord grad = ot::support_gradient(mu, nu, ot::CostKind::SquaredEuclidean, res.plan);
    Tensord numeric(4, 2);
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < mu.support.size(); ++k) {
      const double saved = mu.support.data()[k];
      mu.support.data()[k] = saved + h;
      const double up = value(mu);
      mu.support.data()[k] = saved - h;
      const double down = value(mu);
      mu.support.data()[k] = saved;
      numeric.data()[k] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(grad, numeric));
  }
  r.pass = worst < kGradTol;
  r.detail = fmt("max relative error %.3g against finite differences of the entropic value", worst);
  r.data["max_relative_error"] = worst;
}

SuiteReport suite_ot(const VerifyOptions& opts) {
  Suite s("ot", opts);
  const SinkhornFn solve = sinkhorn_solver(opts.fault);

  s.check("exact_matches_lp_oracle", [&](CheckResult& r) {
    std::ofstream csv(s.artifact("exact_vs_lp.csv"));
    csv << "instance,n,m,exact,lp,abs_error\n";
    double worst = 0.0, worst_marginal = 0.0;
    for (int t = 0; t < 200; ++t) {
      Rng rng(static_cast<std::uint64_t>(t));
      const int n = 1 + rng.below(6), m = 1 + rng.below(6);
      const auto mu = random_measure(rng, n, 2);
      const auto nu = random_measure(rng, m, 2);
      const Tensord c = ot::cost_matrix(mu.support, nu.support, ot::CostKind::SquaredEuclidean);
      const auto ex = ot::exact_wasserstein(mu, nu, c);
      const double lp = oracle::transport_lp(mu.weights, nu.weights, c);
      worst = std::max(worst, std::abs(ex.value - lp));
      worst_marginal = std::max({worst_marginal, (ex.plan.rowwise().sum() - mu.weights).cwiseAbs().maxCoeff(),
                                 (ex.plan.colwise().sum().transpose() - nu.weights).cwiseAbs().maxCoeff()});
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g,%.3g\n", t, n, m, ex.value, lp, std::abs(ex.value - lp));
      csv << buf;
    }
    r.pass = worst < 1e-6 && worst_marginal < 1e-9;
    r.detail = fmt("200 instances, max |exact - lp| %.3g, max marginal error %.3g", worst, worst_marginal);
    r.data = {{"max_abs_error", worst}, {"max_marginal_error", worst_marginal}};
  });

  s.check("wasserstein_metric_properties", [&](CheckResult& r) {
    double sym = 0.0, ident = 0.0, tri = 0.0;
    auto w = [](const ot::Measure& x, const ot::Measure& y) {
      return ot::exact_wasserstein(x, y, ot::cost_matrix(x.support, y.support, ot::CostKind::Euclidean)).value;
    };
    for (int t = 0; t < 200; ++t) {
      Rng rng(1000 + static_cast<std::uint64_t>(t));
      const auto p = random_measure(rng, 1 + rng.below(6), 2);
      const auto q = random_measure(rng, 1 + rng.below(6), 2);
      const auto u = random_measure(rng, 1 + rng.below(6), 2);
      sym = std::max(sym, std::abs(w(p, q) - w(q, p)));
      ident = std::max(ident, w(p, p));
      tri = std::max(tri, w(p, u) - w(p, q) - w(q, u));
    }
    r.pass = sym < 1e-6 && ident < 1e-6 && tri < 1e-6;
    r.detail = fmt("symmetry %.3g, identity %.3g, worst triangle excess %.3g", sym, ident, tri);
    r.data = {{"symmetry", sym}, {"identity", ident}, {"triangle_excess", tri}};
  });

  std::vector<ot::SinkhornResult> runs;
  std::vector<double> exacts;
  std::vector<ot::Measure> mus, nus;
  for (int t = 0; t < 50; ++t) {
    Rng rng(2000 + static_cast<std::uint64_t>(t));
    mus.push_back(random_measure(rng, 5, 2));
    nus.push_back(random_measure(rng, 5, 2));
    const Tensord c = ot::cost_matrix(mus.back().support, nus.back().support, ot::CostKind::SquaredEuclidean);
    exacts.push_back(ot::exact_wasserstein(mus.back(), nus.back(), c).value);
    runs.push_back(solve(mus.back().weights, nus.back().weights, c, {1e-3, 100000, 1e-9}));
  }
  {
    std::ofstream csv(s.artifact("sinkhorn_vs_exact.csv"));
    csv << "instance,exact,sinkhorn,relative_error,marginal_error,iterations\n";
    for (int t = 0; t < 50; ++t) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.3g,%.3g,%d\n", t, exacts[t], runs[t].value,
                    std::abs(runs[t].value - exacts[t]) / exacts[t], runs[t].marginal_error, runs[t].iterations);
      csv << buf;
    }
  }
  s.check("sinkhorn_matches_exact", [&](CheckResult& r) {
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) worst = std::max(worst, std::abs(runs[t].value - exacts[t]) / exacts[t]);
    r.pass = worst < 0.01;
    r.detail = fmt("50 5x5 instances at epsilon 1e-3, max relative error %.3g (limit 0.01)", worst);
    r.data["max_relative_error"] = worst;
  });
  s.check("sinkhorn_marginals", [&](CheckResult& r) {
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
      worst = std::max({worst, (runs[t].plan.rowwise().sum() - mus[t].weights).cwiseAbs().sum(),
                        (runs[t].plan.colwise().sum().transpose() - nus[t].weights).cwiseAbs().sum()});
    }
    r.pass = worst < 1e-6;
    r.detail = fmt("max L1 marginal violation %.3g (limit 1e-6)", worst);
    r.data["max_marginal_violation"] = worst;
  });

  s.check("gradient_nn_ops", gradient_nn_ops);
  s.check("gradient_straight_through", gradient_straight_through);
  s.check("gradient_codebook_transport", gradient_codebook_transport);
  s.check("gradient_reversal_composite", gradient_reversal_composite);
  s.check("gradient_sinkhorn_support", [&](CheckResult& r) { gradient_sinkhorn_support(r, solve); });
  return s.finish();
}

// ---------------------------------------------------------------- theory

Tensord column(std::initializer_list<double> v) {
  Tensord t(static_cast<Eigen::Index>(v.size()), 1);
  int i = 0;
  for (double x : v) t(i++, 0) = x;
  return t;
}

Mlpf linear_map(const std::string& name, const Tensorf& w, const Tensorf& b) {
  return Mlpf::from_parameters(name, {static_cast<int>(w.rows()), static_cast<int>(w.cols())}, {Activation::Identity},
                               {{name + ".w0", w, true}, {name + ".b0", b, true}});
}

SuiteReport suite_theory(const VerifyOptions& opts) {
  Suite s("theory", opts);

  s.check("eps_fixture", [&](CheckResult& r) {
    const Tensord y = column({0, 1, 2, 3});
    const auto curve = theory::exhaustive_eps_curve(y);
    const auto rep = theory::monotonicity_check(y, {1, 2, 3, 4}, 0);
    r.pass = curve.size() == 4 && curve[0] == 1.25 && curve[1] == 0.25 && curve[3] == 0.0 && rep.pass() &&
             rep.eps[0] == 1.25 && rep.eps[1] == 0.25 && rep.eps[3] == 0.0;
    r.detail = fmt("eps*_1 = %.17g, eps*_2 = %.17g, eps*_4 = %.17g", curve[0], curve[1], curve[3]);
    r.data["eps"] = curve;
  });

  // Random label sets with N <= 12, some with repeated labels.
  std::vector<Tensord> sets;
  for (std::uint64_t t = 0; t < 60; ++t) {
    Rng rng(5000 + t);
    const int n = 1 + static_cast<int>(t % 12);
    Tensord y(n, 1 + rng.below(2));
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
    if (t % 2 == 1) {
      const int distinct = 1 + rng.below(n);
      for (int i = distinct; i < n; ++i) y.row(i) = y.row(rng.below(distinct));
    }
    sets.push_back(std::move(y));
  }
  std::vector<std::vector<double>> curves;
  for (const auto& y : sets) curves.push_back(theory::exhaustive_eps_curve(y));

  s.check("eps_monotone_exhaustive", [&](CheckResult& r) {
    int violations = 0;
    for (const auto& c : curves)
      for (std::size_t m = 1; m < c.size(); ++m) violations += c[m] > c[m - 1] ? 1 : 0;
    r.pass = violations == 0;
    r.detail = std::to_string(sets.size()) + " label sets with N <= 12, " + std::to_string(violations) +
               " increases of eps* in M (zero tolerance)";
    r.data["violations"] = violations;
  });

  s.check("kmeans_matches_oracle", [&](CheckResult& r) {
    std::ofstream csv(s.artifact("eps_curves.csv"));
    csv << "set,N,M,eps_exhaustive,eps_kmeans\n";
    int disagreements = 0;
    double worst = 0.0;
    for (std::size_t t = 0; t < sets.size(); ++t) {
      const int n = static_cast<int>(sets[t].rows());
      for (int m = 1; m <= n; ++m) {
        const auto est = theory::optimal_eps(sets[t], m, t);
        const double ex = curves[t][static_cast<std::size_t>(m - 1)];
        const double diff = std::abs(est.kmeans - ex);
        worst = std::max(worst, diff);
        // Equal up to summation order.
        if (diff > 1e-12 * (1.0 + ex)) ++disagreements;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu,%d,%d,%.17g,%.17g\n", t, n, m, ex, est.kmeans);
        csv << buf;
      }
    }
    r.pass = disagreements == 0;
    r.detail = std::to_string(disagreements) + " disagreements, max difference " + fmt("%.3g", worst);
    r.data = {{"disagreements", disagreements}, {"max_difference", worst}};
  });

  s.check("decomposition_mismatch_fixture", [&](CheckResult& r) {
    // Codewords 0 and 1, decoder 5 - 5c: latent 0.2 picks c = 0 (decodes to 5)
    // while the label 0.5 is nearest f_d(1) = 0. L = 20.25, L_C = 0.25, L_A = 20.
    Tensorf c(2, 1);
    c << 0.f, 1.f;
    const theory::Solution sol{linear_map("enc", Tensorf::Identity(1, 1), Tensorf::Zero(1, 1)), codebook::make_codebook(c),
                               linear_map("dec", Tensorf::Constant(1, 1, -5.f), Tensorf::Constant(1, 1, 5.f)), "fixture"};
    const auto d = theory::decompose_loss(sol, column({0.2}), column({0.5}), theory::LossKind::Squared);
    r.pass = std::abs(d.L_A - 20.0) < 1e-6 && std::abs(d.L - 20.25) < 1e-6 && d.mismatches == std::vector<int>{0};
    r.detail = fmt("L = %.9g, L_C = %.9g, L_A = %.9g (expected 20.25, 0.25, 20)", d.L, d.L_C, d.L_A);
    r.data = {{"L", d.L}, {"L_C", d.L_C}, {"L_A", d.L_A}};
  });

  theory::SampleComplexityConfig sc_cfg;
  theory::SampleComplexityReport sc;
  std::string sc_error;
  try {
    sc = theory::sample_complexity_experiment(theory::quadratic_task(), sc_cfg);
    theory::write_sample_complexity_csv(s.artifact("sample_complexity.csv"), sc.rows);
    std::ofstream csv(s.artifact("sample_complexity_slope.csv"));
    csv << "N,mean_gap,log_N,log_mean_gap\n";
    for (std::size_t i = 0; i < sc.ns.size(); ++i) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", sc.ns[i], sc.mean_gap[i], std::log(static_cast<double>(sc.ns[i])),
                    std::log(sc.mean_gap[i]));
      csv << buf;
    }
    csv << "# slope " << fmt("%.6g", sc.slope) << " spearman " << fmt("%.6g", sc.spearman) << " p " << fmt("%.6g", sc.p_value) << "\n";
  } catch (const std::exception& e) {
    sc_error = e.what();
  }

  s.check("decomposition_additivity", [&](CheckResult& r) {
    if (!sc_error.empty()) throw std::runtime_error(sc_error);
    double worst = 0.0;
    int pairs = 0;
    for (const auto& row : sc.rows) {
      worst = std::max(worst, std::abs(row.L - (row.L_C + row.L_A)));
      ++pairs;
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const int m = 1 + rng.below(6);
      const theory::Solution sol{Mlpf("enc", {2, 5, 2}, {Activation::Tanh, Activation::Identity}, rng),
                                 codebook::init_codebook<float>(rng, m, 2, codebook::InitStrategy::Gaussian),
                                 Mlpf("dec", {2, 1}, {Activation::Identity}, rng), "random"};
      const auto data = theory::quadratic_task().sample(rng, 100);
      for (auto kind : {theory::LossKind::Squared, theory::LossKind::Euclidean}) {
        const auto d = theory::decompose_loss(sol, data.x, data.y, kind);
        worst = std::max(worst, std::abs(d.L - (d.L_C + d.L_A)));
        ++pairs;
      }
    }
    r.pass = worst < 1e-6;
    r.detail = std::to_string(pairs) + " model/dataset pairs, max |L - (L_C + L_A)| " + fmt("%.3g", worst);
    r.data = {{"pairs", pairs}, {"max_error", worst}};
  });

  s.check("sample_complexity_slope", [&](CheckResult& r) {
    if (!sc_error.empty()) throw std::runtime_error(sc_error);
    r.pass = sc.slope_ok;
    r.detail = fmt("log-log slope %.4f (required in [%.1f, %.1f])", sc.slope, sc_cfg.slope_lo, sc_cfg.slope_hi);
    r.data = {{"slope", sc.slope}, {"mean_gap", sc.mean_gap}, {"ns", sc.ns}};
  });

  s.check("sample_complexity_correlation", [&](CheckResult& r) {
    if (!sc_error.empty()) throw std::runtime_error(sc_error);
    r.pass = sc.correlation_ok;
    r.detail = fmt("Spearman rho %.4f, permutation p %.4g (required negative, p < %.2g)", sc.spearman, sc.p_value, sc_cfg.p_threshold);
    r.data = {{"spearman", sc.spearman}, {"p_value", sc.p_value}};
  });

  s.check("kclass_equivalence", [&](CheckResult& r) {
    int samples = 0, agreements = 0;
    for (int classes : {2, 3, 4}) {
      Rng rng(600 + static_cast<std::uint64_t>(classes));
      const auto task = theory::blobs_task(classes);
      const auto train = task.sample(rng, 800);
      const auto eval = task.sample(rng, 1000);
      const auto clf = theory::train_classifier(train, classes, 4, 400, 11 + static_cast<std::uint64_t>(classes));
      const Tensorf feats = clf.encoder.forward(Tensorf(eval.x.cast<float>()));
      const auto rep = theory::kclass_equivalence(feats, clf.weights.value);
      samples += rep.samples;
      agreements += rep.agreements;
    }
    r.pass = samples > 0 && agreements == samples;
    r.detail = std::to_string(agreements) + "/" + std::to_string(samples) + " evaluation points agree (3 trained classifiers)";
    r.data = {{"samples", samples}, {"agreements", agreements}};
  });
  return s.finish();
}

// ---------------------------------------------------------------- rl

RunOutcome run_cells(Suite& s, const ExperimentConfig& cfg) {
  RunOptions ro;
  ro.jobs = s.opts().jobs;
  ro.force = true;
  ro.log = s.opts().log;
  return run(cfg, ro);
}

SuiteReport suite_rl(const VerifyOptions& opts) {
  Suite s("rl", opts);
  const bool full = opts.scale == "full";
  if (!full && opts.scale != "ci") throw ConfigError("verify: scale must be ci or full");
  const fs::path runs = s.dir() / "runs";

  // Stage 1: codeword purity and noise stability, 5 seeds.
  ExperimentConfig st1;
  st1.set_json("module", "abstraction");
  st1.set_json("out_dir", runs.string());
  st1.set_json("gridworld.size", full ? 10 : 6);
  st1.set_json("gridworld.samples", full ? 30000 : 10800);
  st1.set_json("abstraction.codebook_size", full ? 100 : 36);
  st1.set_json("abstraction.lambda", 100.0);
  st1.set_json("sweep.seed", Json::array({0, 1, 2, 3, 4}));
  const double purity_min = full ? 0.8 : 0.75, stability_min = full ? 0.95 : 0.9;
  std::vector<double> purities, stabilities;
  std::string st1_error;
  try {
    const auto out = run_cells(s, st1);
    std::ofstream csv(s.artifact("stage1.csv"));
    csv << "seed,purity,purity_by_cell,purity_by_codeword,stability,distinct_codewords\n";
    for (const auto& m : out.manifests) {
      if (!m.ok()) throw std::runtime_error("stage-1 run " + m.run_id + " failed: " + m.error);
      purities.push_back(m.summary.at("purity").get<double>());
      stabilities.push_back(m.summary.at("stability").get<double>());
      char buf[200];
      std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%d\n", static_cast<unsigned long long>(m.seed), purities.back(),
                    m.summary.at("purity_by_cell").get<double>(), m.summary.at("purity_by_codeword").get<double>(),
                    stabilities.back(), m.summary.at("distinct_codewords").get<int>());
      csv << buf;
    }
  } catch (const std::exception& e) {
    st1_error = e.what();
  }
  s.check("stage1_purity", [&](CheckResult& r) {
    if (!st1_error.empty()) throw std::runtime_error(st1_error);
    const double med = stats::median(purities);
    r.pass = med >= purity_min;
    r.detail = fmt("median purity %.4f over 5 seeds (required >= %.2f)", med, purity_min);
    r.data = {{"median", med}, {"values", purities}};
  });
  s.check("stage1_stability", [&](CheckResult& r) {
    if (!st1_error.empty()) throw std::runtime_error(st1_error);
    const double med = stats::median(stabilities);
    r.pass = med >= stability_min;
    r.detail = fmt("median noise-seed stability %.4f over 5 seeds (required >= %.2f)", med, stability_min);
    r.data = {{"median", med}, {"values", stabilities}};
  });

  // Stage 2: sample budget x codebook size.
  const auto profile = full ? dqn::TradeoffProfile::full() : dqn::TradeoffProfile::ci();
  dqn::TradeoffVerdict verdict;
  std::string st2_error;
  try {
    const auto out = run_cells(s, tradeoff_config(profile, runs));
    const auto rows = tradeoff_rows(out.manifests);
    dqn::write_tradeoff_csv(s.artifact("tradeoff.csv"), rows);
    verdict = dqn::judge_tradeoff(profile, rows);
    plot(out.manifests, {"final_return", "abstraction.codebook_size", "gridworld.samples", "final greedy return vs sample budget"},
         s.dir() / "tradeoff_final_return");
    s.artifact("tradeoff_final_return.csv");
    s.artifact("tradeoff_final_return.svg");
    std::vector<RunManifest> smallest;
    for (const auto& m : out.manifests)
      if (m.config.at("gridworld").at("samples").get<int>() == profile.budgets.front()) smallest.push_back(m);
    plot(smallest, {"eval_return", "abstraction.codebook_size", "", "learning curves at the smallest budget"},
         s.dir() / "tradeoff_curves_smallest_budget");
    s.artifact("tradeoff_curves_smallest_budget.csv");
    s.artifact("tradeoff_curves_smallest_budget.svg");
  } catch (const std::exception& e) {
    st2_error = e.what();
  }
  auto note = [&](const std::string& prefix) {
    std::string out;
    for (const auto& n : verdict.notes)
      if (n.rfind(prefix, 0) == 0) out += (out.empty() ? "" : "; ") + n;
    return out;
  };
  const std::string small = "budget " + std::to_string(profile.budgets.front()) + ":";
  const std::string middle = "budget " + std::to_string(profile.budgets[profile.budgets.size() / 2]) + ":";
  const std::string large = "budget " + std::to_string(profile.budgets.back()) + ":";
  s.check("tradeoff_small_budget", [&](CheckResult& r) {
    if (!st2_error.empty()) throw std::runtime_error(st2_error);
    r.pass = verdict.small_budget_discrete_wins;
    r.detail = note(small);
    r.data = {{"best_M", verdict.best_small_M}, {"p_value", verdict.small_budget_p}};
  });
  s.check("tradeoff_large_budget", [&](CheckResult& r) {
    if (!st2_error.empty()) throw std::runtime_error(st2_error);
    r.pass = verdict.large_budget_continuous_close;
    r.detail = note(large);
  });
  s.check("tradeoff_middle_budget", [&](CheckResult& r) {
    if (!st2_error.empty()) throw std::runtime_error(st2_error);
    r.pass = verdict.middle_budget_monotone;
    r.detail = note(middle);
  });
  return s.finish();
}

// ---------------------------------------------------------------- dg

SuiteReport suite_dg(const VerifyOptions& opts) {
  Suite s("dg", opts);

  s.check("cdann_identity", [&](CheckResult& r) {
    double worst_value = 0.0, worst_grad = 0.0;
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      dg::DgConfig tied;
      tied.method = dg::Method::Fdann;
      tied.multiplier = 1;
      tied.tie_fine_to_classifier = true;
      dg::DgConfig cd = tied;
      cd.method = dg::Method::Cdann;
      cd.tie_fine_to_classifier = false;
      const int classes = 2 + trial % 3;
      Rng init(100 + static_cast<std::uint64_t>(trial));
      const auto m = dg::make_model<double>(10, classes, 3, tied, init);
      const auto b = domain_batch(rng, 40, 10, classes, 3);
      Graph<double> g1, g2;
      const auto a = dg::fdann_loss(g1, m, tied, b.x, b.y, b.domain).align;
      const auto c = dg::fdann_loss(g2, m, cd, b.x, b.y, b.domain).align;
      worst_value = std::max(worst_value, std::abs(a.value()(0, 0) - c.value()(0, 0)));
      const auto ga = g1.backward(a);
      const auto gc = g2.backward(c);
      auto mm = m;
      for (auto* p : mm.parameters()) worst_grad = std::max(worst_grad, (ga.of(*p) - gc.of(*p)).cwiseAbs().maxCoeff());
    }
    r.pass = worst_value < 1e-6 && worst_grad < 1e-6;
    r.detail = fmt("tied codebook, multiplier 1 vs class-conditional: max loss difference %.3g, max gradient difference %.3g",
                   worst_value, worst_grad);
    r.data = {{"max_value_difference", worst_value}, {"max_gradient_difference", worst_grad}};
  });

  s.check("gradient_reversal_identity", [&](CheckResult& r) {
    double worst = 0.0;
    bool disc_equal = true;
    Rng rng(4);
    for (double beta : {1.0, 0.7, 0.0}) {
      dg::DgConfig cfg;
      cfg.method = dg::Method::Dann;
      cfg.beta = beta;
      Rng init(8);
      auto m = dg::make_model<double>(10, 2, 3, cfg, init);
      const auto b = domain_batch(rng, 24, 10, 2, 3);
      Graph<double> g1;
      const auto with = g1.backward(dg::fdann_loss(g1, m, cfg, b.x, b.y, b.domain).align);
      Graph<double> g2;
      const auto without = g2.backward(cross_entropy(m.discriminator.forward(m.encoder.forward(g2.constant(b.x))), b.domain));
      for (const auto* p : m.encoder.parameters()) {
        const Tensord expected = -beta * without.of(*p);
        worst = std::max(worst, (with.of(*p) - expected).cwiseAbs().maxCoeff() / std::max(1.0, expected.cwiseAbs().maxCoeff()));
      }
      for (const auto* p : m.discriminator.parameters()) disc_equal = disc_equal && with.of(*p) == without.of(*p);
    }
    r.pass = worst < 1e-6 && disc_equal;
    r.detail = fmt("encoder gradient vs -beta x unreversed: max deviation %.3g", worst) +
               (disc_equal ? "; discriminator gradients identical" : "; discriminator gradients differ");
    r.data["max_deviation"] = worst;
  });

  ExperimentConfig cfg;
  cfg.set_json("module", "dg");
  cfg.set_json("out_dir", (s.dir() / "runs").string());
  cfg.set_json("sweep.dg.method", Json::array({"erm", "dann", "cdann", "fdann"}));
  cfg.set_json("sweep.seed", Json::array({0, 1, 2, 3, 4}));
  std::vector<RunManifest> manifests;
  dg::DgVerdict verdict;
  std::string error;
  try {
    const auto out = run_cells(s, cfg);
    manifests = out.manifests;
    std::vector<dg::DgRow> rows;
    std::ofstream acc(s.artifact("dg_accuracy.csv"));
    std::ofstream pur(s.artifact("dg_purity.csv"));
    acc << "method,seed,target_acc\n";
    pur << "seed,mode_purity,mode_coverage,used_codewords\n";
    for (const auto& m : manifests) {
      if (!m.ok()) throw std::runtime_error("dg run " + m.run_id + " failed: " + m.error);
      const auto method = m.config.at("dg").at("method").get<std::string>();
      const double a = m.summary.at("target_accuracy").get<double>();
      rows.push_back({dg::parse_method(method), m.seed, m.config.at("dg").at("multiplier").get<int>(), a,
                      m.summary.value("mode_purity", 0.0)});
      char buf[160];
      std::snprintf(buf, sizeof buf, ",%llu,%.9g\n", static_cast<unsigned long long>(m.seed), a);
      acc << method << buf;
      if (m.summary.contains("mode_purity")) {
        std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%d\n", static_cast<unsigned long long>(m.seed),
                      m.summary.at("mode_purity").get<double>(), m.summary.at("mode_coverage").get<double>(),
                      m.summary.at("used_codewords").get<int>());
        pur << buf;
      }
    }
    verdict = dg::judge_dg(rows);
    plot(manifests, {"target_accuracy", "dg.method", "seed", "target accuracy per seed"}, s.dir() / "dg_target_accuracy");
    s.artifact("dg_target_accuracy.csv");
    s.artifact("dg_target_accuracy.svg");
  } catch (const std::exception& e) {
    error = e.what();
  }
  s.check("fdann_vs_cdann", [&](CheckResult& r) {
    if (!error.empty()) throw std::runtime_error(error);
    r.pass = verdict.fdann_mean >= verdict.cdann_mean && verdict.p_vs_cdann < 0.1;
    r.detail = fmt("mean target accuracy fdann %.4f vs cdann %.4f, paired sign test p %.4g", verdict.fdann_mean,
                   verdict.cdann_mean, verdict.p_vs_cdann);
    r.data = {{"fdann", verdict.fdann_mean}, {"cdann", verdict.cdann_mean}, {"p_value", verdict.p_vs_cdann}};
  });
  s.check("fdann_vs_dann", [&](CheckResult& r) {
    if (!error.empty()) throw std::runtime_error(error);
    r.pass = verdict.fdann_mean >= verdict.dann_mean && verdict.p_vs_dann < 0.1;
    r.detail = fmt("mean target accuracy fdann %.4f vs dann %.4f, paired sign test p %.4g", verdict.fdann_mean,
                   verdict.dann_mean, verdict.p_vs_dann);
    r.data = {{"fdann", verdict.fdann_mean}, {"dann", verdict.dann_mean}, {"p_value", verdict.p_vs_dann}};
  });
  s.check("kclass_equivalence", [&](CheckResult& r) {
    if (!error.empty()) throw std::runtime_error(error);
    double worst = 1.0;
    for (const auto& m : manifests) worst = std::min(worst, m.summary.at("kclass_agreement").get<double>());
    r.pass = worst == 1.0;
    r.detail = fmt("lowest agreement between classifier argmax and inner-product quantization: %.6f over %g trained models", worst,
                   static_cast<double>(manifests.size()));
    r.data["min_agreement"] = worst;
  });
  return s.finish();
}

}  // namespace

SuiteReport verify(const std::string& suite, const VerifyOptions& opts) {
  if (!opts.fault.empty() && std::find(fault_names().begin(), fault_names().end(), opts.fault) == fault_names().end()) {
    throw ConfigError("unknown fault '" + opts.fault + "'");
  }
  if (suite == "ot") return suite_ot(opts);
  if (suite == "theory") return suite_theory(opts);
  if (suite == "rl") return suite_rl(opts);
  if (suite == "dg") return suite_dg(opts);
  throw ConfigError("unknown suite '" + suite + "' (expected ot, theory, rl or dg)");
}

}  // namespace tdrl::harness
