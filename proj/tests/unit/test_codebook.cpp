#include "doctest.h"

#include "tdrl/codebook/codebook.hpp"
#include "tdrl/core/grad_check.hpp"
#include "tdrl/core/optimizer.hpp"
#include "tdrl/oracles/lp.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

using namespace tdrl;
using namespace tdrl::codebook;

namespace {

template <typename S>
Tensor<S> random_tensor(Rng& rng, int rows, int cols, double scale = 1.0) {
  Tensor<S> t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(-scale, scale));
  return t;
}

// Exhaustive per-point scan in double, strict < so ties go to the lowest index.
std::vector<int> brute_force_nearest(const Tensorf& z, const Tensorf& c) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index m = 0; m < c.rows(); ++m) {
      double d = 0;
      for (Eigen::Index k = 0; k < z.cols(); ++k) {
        const double diff = static_cast<double>(z(i, k)) - static_cast<double>(c(m, k));
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(m);
      }
    }
    out.push_back(best);
  }
  return out;
}

Tensord mixture(Rng& rng, const Tensord& centers, double sd, int n, std::vector<int>& mode) {
  Tensord x(n, centers.cols());
  mode.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int k = rng.below(static_cast<int>(centers.rows()));
    mode[static_cast<std::size_t>(i)] = k;
    for (Eigen::Index j = 0; j < centers.cols(); ++j) x(i, j) = centers(k, j) + rng.normal(0.0, sd);
  }
  return x;
}

}  // namespace

TEST_CASE("quantize: member of the codebook") {
  Rng rng(1);
  auto cb = make_codebook(random_tensor<float>(rng, 5, 3));
  const Tensorf z = cb.codewords.value.row(3);
  const auto q = quantize(cb, z);
  CHECK(q.indices[0] == 3);
  CHECK(q.quantized == z);
}

TEST_CASE("quantize: nearest by inspection and lowest-index ties") {
  Tensorf c(2, 2);
  c << 0, 0, 1, 0;
  auto cb = make_codebook(c);
  Tensorf z(2, 2);
  z << 0.9f, 0.f, 0.5f, 0.f;
  const auto q = quantize(cb, z);
  CHECK(q.indices[0] == 1);
  CHECK(q.indices[1] == 0);
}

TEST_CASE("quantize: 64 random points vs 8 codewords match an exhaustive scan") {
  Rng rng(21);
  auto cb = make_codebook(random_tensor<float>(rng, 8, 4));
  const Tensorf z = random_tensor<float>(rng, 64, 4);
  const auto q = quantize(cb, z);
  CHECK(q.indices == brute_force_nearest(z, cb.codewords.value));
  for (int i = 0; i < 64; ++i) CHECK(q.quantized.row(i) == cb.codewords.value.row(q.indices[static_cast<std::size_t>(i)]));
}

TEST_CASE("quantize: empty batch and dimension mismatch") {
  auto cb = make_codebook(Tensorf(Tensorf::Ones(3, 2)));
  const auto q = quantize(cb, Tensorf(0, 2));
  CHECK(q.indices.empty());
  CHECK(q.quantized.rows() == 0);
  CHECK_THROWS_AS(quantize(cb, Tensorf(Tensorf::Ones(1, 3))), ContractError);
}

TEST_CASE("quantize: idempotence and monotone refinement over nested codebooks") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed);
    const Tensorf big = random_tensor<float>(rng, 12, 3);
    const int small_m = 1 + rng.below(11);
    auto coarse = make_codebook(Tensorf(big.topRows(small_m)));
    auto fine = make_codebook(big);
    const Tensorf z = random_tensor<float>(rng, 40, 3, 2.0);
    const auto q = quantize(fine, z);
    CHECK(quantize(fine, q.quantized).indices == q.indices);
    const auto qc = quantize(coarse, z);
    for (int i = 0; i < 40; ++i) {
      CHECK(q.distances(i, q.indices[static_cast<std::size_t>(i)]) <=
            qc.distances(i, qc.indices[static_cast<std::size_t>(i)]));
    }
  }
}

TEST_CASE("straight-through: forward is the quantized batch, backward is identity to z") {
  Rng rng(2);
  auto cb = make_codebook(random_tensor<float>(rng, 4, 2));
  Parameter<float> z{"z", random_tensor<float>(rng, 6, 2), true};
  const auto q = quantize(cb, z.value);
  Graph<float> g;
  auto out = straight_through(g.param(z), q);
  g.param(cb.codewords);
  CHECK(std::memcmp(out.value().data(), q.quantized.data(), sizeof(float) * 12) == 0);
  auto grads = g.backward(sum(out));
  CHECK(grads.of(z).isOnes());
  CHECK(grads.of(cb.codewords).isZero());
}

TEST_CASE("straight-through: dLoss/dz equals the decoder-input finite difference at the quantized point") {
  Rng rng(3);
  auto cb = make_codebook(random_tensor<double>(rng, 5, 3));
  Parameter<double> z{"z", random_tensor<double>(rng, 4, 3), true};
  const Tensord w = random_tensor<double>(rng, 3, 2);
  const Tensord target = random_tensor<double>(rng, 4, 2);
  const auto q = quantize(cb, z.value);
  auto decoder_loss = [&](const Tensord& input) {
    return (Tensord((input * w).array().tanh().matrix()) - target).squaredNorm();
  };
  Graph<double> g;
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
  CHECK((grads.of(z) - numeric).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("codebook_loss: batch equal to codewords with uniform pi is zero") {
  Rng rng(4);
  auto cb = make_codebook(random_tensor<double>(rng, 6, 2));
  for (Solver s : {Solver::Exact, Solver::Sinkhorn}) {
    Graph<double> g;
    LossDiagnostics diag;
    auto loss = codebook_loss(g.constant(cb.codewords.value), g.param(cb.codewords), g.param(cb.pi_logits),
                              {1.0, s, ot::CostKind::SquaredEuclidean, 0.01, 5000, 1e-9}, &diag);
    CHECK(loss.value()(0, 0) >= 0.0);
    CHECK(loss.value()(0, 0) < (s == Solver::Exact ? 1e-12 : 1e-3));
  }
}

TEST_CASE("codebook_loss: single codeword forces the plan") {
  Rng rng(5);
  auto cb = make_codebook(random_tensor<double>(rng, 1, 3));
  const Tensord z = random_tensor<double>(rng, 7, 3);
  double expected = 0.0;
  for (int i = 0; i < 7; ++i) expected += (z.row(i) - cb.codewords.value.row(0)).squaredNorm();
  expected = 2.5 * expected / 7.0;
  for (Solver s : {Solver::Exact, Solver::Sinkhorn}) {
    Graph<double> g;
    auto loss = codebook_loss(g.constant(z), g.param(cb.codewords), g.param(cb.pi_logits), {2.5, s});
    CHECK(loss.value()(0, 0) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("codebook_loss: exact solver equals the LP oracle times lambda") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(40 + seed);
    auto cb = make_codebook(random_tensor<double>(rng, 3, 2));
    cb.pi_logits.value = random_tensor<double>(rng, 1, 3);
    const Tensord z = random_tensor<double>(rng, 6, 2);
    Graph<double> g;
    auto loss = codebook_loss(g.constant(z), g.param(cb.codewords), g.param(cb.pi_logits), {0.7, Solver::Exact});
    const double oracle = oracle::transport_lp(Vectord::Constant(6, 1.0 / 6.0), cb.pi(),
                                               ot::cost_matrix(z, cb.codewords.value, ot::CostKind::SquaredEuclidean));
    CHECK(loss.value()(0, 0) == doctest::Approx(0.7 * oracle).epsilon(1e-9));
  }
}

TEST_CASE("codebook_loss: lambda = 0 is exactly zero with zero gradients") {
  Rng rng(6);
  auto cb = make_codebook(random_tensor<float>(rng, 4, 2));
  Parameter<float> z{"z", random_tensor<float>(rng, 5, 2), true};
  Graph<float> g;
  auto loss = codebook_loss(g.param(z), g.param(cb.codewords), g.param(cb.pi_logits), {0.0, Solver::Sinkhorn});
  CHECK(loss.value()(0, 0) == 0.0f);
  auto grads = g.backward(loss);
  CHECK(grads.of(z).isZero());
  CHECK(grads.of(cb.codewords).isZero());
  CHECK(grads.of(cb.pi_logits).isZero());
}

TEST_CASE("codebook_loss: envelope gradients match finite differences of the exact value") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(60 + seed);
    auto cb = make_codebook(random_tensor<double>(rng, 3, 2));
    cb.pi_logits.value = random_tensor<double>(rng, 1, 3);
    Parameter<double> z{"z", random_tensor<double>(rng, 6, 2), true};
    auto build = [&](Graph<double>& g) {
      return codebook_loss(g.param(z), g.param(cb.codewords), g.param(cb.pi_logits), {1.3, Solver::Exact});
    };
    auto report = grad_check<double>(build, {&z, &cb.codewords, &cb.pi_logits}, 1e-4, 1e-6);
    INFO("seed " << seed << " max error " << report.max_error());
    CHECK(report.pass());
  }
}

TEST_CASE("codebook_loss: sinkhorn gradients track the exact ones") {
  Rng rng(70);
  auto cb = make_codebook(random_tensor<double>(rng, 4, 2));
  const Tensord z = random_tensor<double>(rng, 16, 2);
  auto grads_for = [&](Solver s) {
    Graph<double> g;
    auto loss = codebook_loss(g.constant(z), g.param(cb.codewords), g.param(cb.pi_logits),
                              {1.0, s, ot::CostKind::SquaredEuclidean, 0.001, 100000, 1e-10});
    return g.backward(loss).of(cb.codewords);
  };
  const Tensord exact = grads_for(Solver::Exact);
  const Tensord approx = grads_for(Solver::Sinkhorn);
  CHECK((exact - approx).cwiseAbs().maxCoeff() < 2e-2 * exact.cwiseAbs().maxCoeff());
}

TEST_CASE("init_codebook: single codeword, determinism, and k-means++ coverage") {
  Rng a(9), b(9);
  auto one = init_codebook<float>(a, 1, 3, InitStrategy::Gaussian);
  const auto q = quantize(one, Tensorf(Tensorf::Random(10, 3)));
  for (int idx : q.indices) CHECK(idx == 0);
  Rng a2(9);
  auto c1 = init_codebook<float>(a2, 6, 3, InitStrategy::Gaussian);
  auto c2 = init_codebook<float>(b, 6, 3, InitStrategy::Gaussian);
  CHECK(c1.codewords.value == c2.codewords.value);
  CHECK(c1.pi_logits.value.isZero());

  Tensord centers(3, 2);
  centers << 0, 0, 10, 0, 0, 10;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<int> mode;
    const Tensorf batch = mixture(rng, centers, 0.5, 90, mode).cast<float>();
    auto cb = init_codebook<float>(rng, 3, 2, InitStrategy::KMeansPlusPlus, &batch);
    std::set<int> covered;
    for (int m = 0; m < 3; ++m) {
      for (int k = 0; k < 3; ++k) {
        bool inside = true;
        for (int j = 0; j < 2; ++j) {
          double lo = 1e9, hi = -1e9;
          for (int i = 0; i < 90; ++i) {
            if (mode[static_cast<std::size_t>(i)] != k) continue;
            lo = std::min(lo, static_cast<double>(batch(i, j)));
            hi = std::max(hi, static_cast<double>(batch(i, j)));
          }
          inside = inside && cb.codewords.value(m, j) >= lo && cb.codewords.value(m, j) <= hi;
        }
        if (inside) covered.insert(k);
      }
    }
    CHECK(covered.size() == 3);
  }
}

TEST_CASE("training on a well-separated mixture gives each mode its own codeword") {
  Tensord centers(4, 2);
  centers << 0, 0, 1, 0, 0, 1, 1, 1;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto cb = init_codebook<float>(rng, 4, 2, InitStrategy::Gaussian);
    Optimizer<float> opt(cb.parameters(), {OptimizerKind::Adam, 0.02});
    std::vector<int> mode;
    for (int step = 0; step < 2000; ++step) {
      const Tensorf batch = mixture(rng, centers, 0.05, 64, mode).cast<float>();
      Graph<float> g;
      auto loss = codebook_loss(g.constant(batch), g.param(cb.codewords), g.param(cb.pi_logits), {1.0, Solver::Sinkhorn});
      opt.step(g.backward(loss));
    }
    const Tensorf eval = mixture(rng, centers, 0.05, 400, mode).cast<float>();
    const auto q = quantize(cb, eval);
    std::vector<std::set<int>> per_mode(4);
    for (int i = 0; i < 400; ++i) per_mode[static_cast<std::size_t>(mode[static_cast<std::size_t>(i)])].insert(q.indices[static_cast<std::size_t>(i)]);
    std::set<int> distinct;
    for (const auto& s : per_mode) {
      CHECK(s.size() == 1);
      distinct.insert(*s.begin());
    }
    CHECK(distinct.size() == 4);
  }
}

TEST_CASE("dead codewords are re-seeded after the patience window") {
  Tensorf c(2, 1);
  c << 0.f, 100.f;
  auto cb = make_codebook(c);
  DeadCodewordMonitor monitor(2, 100);
  Rng rng(1);
  const Tensorf z = Tensorf::Constant(8, 1, 0.5f);
  int reseeded = 0;
  for (int t = 0; t < 99; ++t) reseeded += monitor.observe_and_reseed(cb, quantize(cb, z), z, rng);
  CHECK(reseeded == 0);
  reseeded += monitor.observe_and_reseed(cb, quantize(cb, z), z, rng);
  CHECK(reseeded == 1);
  CHECK(cb.codewords.value(1, 0) == 0.5f);
  CHECK(monitor.total_reseeds() == 1);
}

TEST_CASE("codebook checkpoint round trip is bit-exact") {
  Rng rng(12);
  auto cb = init_codebook<float>(rng, 7, 3, InitStrategy::Gaussian, nullptr, Metric::NegativeInnerProduct, "fine");
  cb.pi_logits.value = random_tensor<float>(rng, 1, 7);
  const auto path = std::filesystem::temp_directory_path() / "tdrl_codebook_test.bin";
  save_codebook(path, cb);
  const auto back = load_codebook(path);
  CHECK(back.metric == Metric::NegativeInnerProduct);
  CHECK(back.codewords.name == "fine.codewords");
  CHECK(std::memcmp(back.codewords.value.data(), cb.codewords.value.data(), sizeof(float) * 21) == 0);
  CHECK(std::memcmp(back.pi_logits.value.data(), cb.pi_logits.value.data(), sizeof(float) * 7) == 0);
  std::filesystem::remove(path);
}
