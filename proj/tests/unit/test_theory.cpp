#include "doctest.h"

#include "tdrl/core/stats.hpp"
#include "tdrl/theory/clustering.hpp"
#include "tdrl/theory/lab.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace tdrl;
using namespace tdrl::theory;

namespace {

Tensord column(std::initializer_list<double> v) {
  Tensord t(static_cast<Eigen::Index>(v.size()), 1);
  int i = 0;
  for (double x : v) t(i++, 0) = x;
  return t;
}

// Independent oracle: every map from N points to M labels (M^N of them),
// each group predicted by its mean, summed in the plainest possible way.
double all_assignments_eps(const Tensord& y, int m) {
  const int n = static_cast<int>(y.rows());
  std::vector<int> a(static_cast<std::size_t>(n), 0);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    double total = 0.0;
    for (int g = 0; g < m; ++g) {
      std::vector<int> members;
      for (int i = 0; i < n; ++i)
        if (a[static_cast<std::size_t>(i)] == g) members.push_back(i);
      if (members.empty()) continue;
      for (Eigen::Index d = 0; d < y.cols(); ++d) {
        double mean = 0.0;
        for (int i : members) mean += y(i, d);
        mean /= static_cast<double>(members.size());
        for (int i : members) total += (y(i, d) - mean) * (y(i, d) - mean);
      }
    }
    best = std::min(best, total / n);
    int k = 0;
    while (k < n && ++a[static_cast<std::size_t>(k)] == m) a[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  return best;
}

Tensord random_labels(Rng& rng, int n, int d) {
  Tensord y(n, d);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
  return y;
}

Mlpf linear_map(const std::string& name, const Tensorf& w, const Tensorf& b) {
  return Mlpf::from_parameters(name, {static_cast<int>(w.rows()), static_cast<int>(w.cols())}, {Activation::Identity},
                               {{name + ".w0", w, true}, {name + ".b0", b, true}});
}

Solution fixture_solution(const Tensorf& codewords, float dec_w, float dec_b) {
  return {linear_map("enc", Tensorf::Identity(codewords.cols(), codewords.cols()), Tensorf::Zero(1, codewords.cols())),
          codebook::make_codebook(codewords), linear_map("dec", Tensorf::Constant(1, 1, dec_w), Tensorf::Constant(1, 1, dec_b)),
          "fixture"};
}

}  // namespace

TEST_CASE("optimal_eps: the {0,1,2,3} fixture") {
  const Tensord y = column({0, 1, 2, 3});
  CHECK(optimal_eps(y, 1, 0).value() == doctest::Approx(1.25).epsilon(1e-15));
  CHECK(optimal_eps(y, 2, 0).value() == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(optimal_eps(y, 3, 0).value() <= 0.25);
  CHECK(optimal_eps(y, 4, 0).value() == 0.0);
  const auto two = exhaustive_partition(y, 2);
  CHECK(two.assignment == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("exhaustive partition matches the all-assignments oracle") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const int n = 2 + rng.below(6);
    const int m = 1 + rng.below(n);
    const Tensord y = random_labels(rng, n, 1 + rng.below(2));
    CHECK(exhaustive_partition(y, m).eps == doctest::Approx(all_assignments_eps(y, m)).epsilon(1e-12));
  }
}

TEST_CASE("k-means estimator agrees with the exhaustive oracle for N <= 12") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(1000 + seed);
    const int n = 3 + rng.below(10);
    const Tensord y = random_labels(rng, n, 1 + rng.below(3));
    const auto curve = exhaustive_eps_curve(y);
    for (int m = 1; m <= n; ++m) {
      const auto est = optimal_eps(y, m, seed);
      REQUIRE(est.exhaustive.has_value());
      INFO("seed " << seed << " n " << n << " m " << m);
      CHECK(std::abs(est.kmeans - *est.exhaustive) <= 1e-12 * (1.0 + *est.exhaustive));
      CHECK(curve[static_cast<std::size_t>(m - 1)] == *est.exhaustive);
    }
  }
}

TEST_CASE("exhaustive eps* is monotone with zero tolerance and vanishes at M = distinct labels") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(2000 + seed);
    const int n = 2 + rng.below(11);
    Tensord y = random_labels(rng, n, 1);
    // Repeat some labels so "distinct values" is smaller than N.
    const int distinct = 1 + rng.below(n);
    for (int i = distinct; i < n; ++i) y(i, 0) = y(rng.below(distinct), 0);
    const auto curve = exhaustive_eps_curve(y);
    for (std::size_t m = 1; m < curve.size(); ++m) CHECK(curve[m] <= curve[m - 1]);
    std::set<double> values(y.data(), y.data() + n);
    CHECK(curve[values.size() - 1] == 0.0);
    std::vector<int> ms(static_cast<std::size_t>(n));
    for (int m = 1; m <= n; ++m) ms[static_cast<std::size_t>(m - 1)] = m;
    const auto report = monotonicity_check(y, ms, seed);
    CHECK(report.pass());
  }
}

TEST_CASE("monotonicity: fixture sequence, constant labels, and a two-mode mixture") {
  const auto fixture = monotonicity_check(column({0, 1, 2, 3}), {1, 2, 3, 4}, 0);
  CHECK(fixture.pass());
  CHECK(fixture.eps[0] == 1.25);
  CHECK(fixture.eps[1] == 0.25);
  CHECK(fixture.eps[2] <= 0.25);
  CHECK(fixture.eps[3] == 0.0);

  Rng rng(3);
  const auto constant = constant_task().sample(rng, 50);
  const auto flat = monotonicity_check(constant.y, {1, 2, 4, 8}, 0);
  for (double e : flat.eps) CHECK(e == doctest::Approx(0.0).epsilon(1e-20));

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r(seed);
    const auto s = two_mode_task().sample(r, 200);
    const auto rep = monotonicity_check(s.y, {1, 2, 4, 8}, seed);
    INFO("seed " << seed);
    CHECK(rep.pass());
    CHECK_FALSE(rep.from_oracle[0]);
  }
}

TEST_CASE("decompose_loss: exact additivity on random solutions and datasets") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int m = 1 + rng.below(6);
    Solution sol{Mlpf("enc", {2, 5, 2}, {Activation::Tanh, Activation::Identity}, rng),
                 codebook::init_codebook<float>(rng, m, 2, codebook::InitStrategy::Gaussian),
                 Mlpf("dec", {2, 1}, {Activation::Identity}, rng), "random"};
    const auto data = quadratic_task().sample(rng, 100);
    for (LossKind kind : {LossKind::Squared, LossKind::Euclidean}) {
      const auto r = decompose_loss(sol, data.x, data.y, kind);
      CHECK(std::abs(r.L - (r.L_C + r.L_A)) < 1e-6);
      for (int i = 0; i < 100; ++i) CHECK(std::abs(r.per_sample_L(i) - (r.per_sample_C(i) + r.per_sample_A(i))) < 1e-12);
      CHECK(r.L_A >= -1e-6);
      for (int i : r.mismatches) CHECK(r.per_sample_A(i) > 0.0);
    }
  }
}

TEST_CASE("decompose_loss: agreeing assignments give zero discrepancy") {
  Tensorf c(3, 1);
  c << -1.f, 0.f, 2.f;
  const Solution sol = fixture_solution(c, 1.f, 0.f);  // decoder is the identity, labels equal inputs
  const Tensord x = column({-1.2, -0.3, 0.4, 1.5, 2.5});
  const auto r = decompose_loss(sol, x, x, LossKind::Euclidean);
  CHECK(r.L_A == 0.0);
  CHECK(r.L == r.L_C);
  CHECK(r.mismatches.empty());
}

TEST_CASE("decompose_loss: hand-built mismatch fixture") {
  // Codewords 0 and 1, decoder f_d(c) = 5 - 5c. The latent z = 0.2 is nearer
  // c = 0 (decodes to 5) while the label 0.5 is nearer f_d(1) = 0:
  // L = (0.5 - 5)^2 = 20.25, L_C = 0.5^2 = 0.25, L_A = 20.
  Tensorf c(2, 1);
  c << 0.f, 1.f;
  const Solution sol = fixture_solution(c, -5.f, 5.f);
  const auto r = decompose_loss(sol, column({0.2}), column({0.5}), LossKind::Squared);
  CHECK(r.L == doctest::Approx(20.25));
  CHECK(r.L_C == doctest::Approx(0.25));
  CHECK(r.L_A == doctest::Approx(20.0));
  CHECK(r.mismatches == std::vector<int>{0});
  CHECK(r.latent_index[0] == 0);
  CHECK(r.output_index[0] == 1);
}

TEST_CASE("decompose_loss: a single codeword forces zero discrepancy") {
  Rng rng(8);
  Solution sol{Mlpf("enc", {2, 1}, {Activation::Identity}, rng),
               codebook::init_codebook<float>(rng, 1, 1, codebook::InitStrategy::Gaussian),
               Mlpf("dec", {1, 1}, {Activation::Identity}, rng), "m1"};
  const auto data = quadratic_task().sample(rng, 64);
  const auto r = decompose_loss(sol, data.x, data.y, LossKind::Squared);
  CHECK(r.L_A == 0.0);
  CHECK(r.per_sample_A.isZero());
}

TEST_CASE("decompose_loss: cross-entropy keeps additivity") {
  Rng rng(9);
  Solution sol{Mlpf("enc", {2, 3}, {Activation::Identity}, rng),
               codebook::init_codebook<float>(rng, 5, 3, codebook::InitStrategy::Gaussian),
               Mlpf("dec", {3, 3}, {Activation::Identity}, rng), "ce"};
  const auto data = blobs_task(3).sample(rng, 80);
  const auto r = decompose_loss(sol, data.x, data.y, LossKind::CrossEntropy);
  CHECK(std::abs(r.L - (r.L_C + r.L_A)) < 1e-6);
}

TEST_CASE("sample complexity: argument checks and the M = 1 degenerate case") {
  SampleComplexityConfig cfg;
  cfg.ns = {64, 256};
  CHECK_THROWS_AS(sample_complexity_experiment(quadratic_task(), cfg), ContractError);
  cfg.ns = {32, 64, 128};
  cfg.seeds = 3;
  cfg.eval_multiplier = 10;
  cfg.solution.M = 1;
  cfg.solution.steps = 100;
  cfg.permutations = 100;
  const auto rep = sample_complexity_experiment(quadratic_task(), cfg);
  for (const auto& row : rep.rows) CHECK(row.gap == 0.0);
}

TEST_CASE("sample complexity: doubling M does not shrink the gap on average") {
  SampleComplexityConfig cfg;
  cfg.seeds = 10;
  cfg.permutations = 100;
  cfg.solution.M = 4;
  const auto four = sample_complexity_experiment(quadratic_task(), cfg);
  cfg.solution.M = 8;
  const auto eight = sample_complexity_experiment(quadratic_task(), cfg);
  REQUIRE(four.rows.size() == eight.rows.size());
  double diff = 0.0;
  for (std::size_t i = 0; i < four.rows.size(); ++i) diff += eight.rows[i].gap - four.rows[i].gap;
  CHECK(diff >= 0.0);
  CHECK(four.held_out_size == 409600);
}

TEST_CASE("sample complexity CSV has the declared columns") {
  const auto path = std::filesystem::temp_directory_path() / "tdrl_sc.csv";
  write_sample_complexity_csv(path, {{1, 4, 64, 0.1, 0.5, 0.3, 0.2, 0.01, 0.05}});
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header == "seed,M,N,eps_star,L,L_C,L_A,gap");
  CHECK(line.rfind("1,4,64,", 0) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("k-class equivalence: inner-product quantization reproduces classifier argmax") {
  Rng rng(4);
  // Random logits: softmax is monotone, so its argmax is the logit argmax.
  const Tensorf z = Tensorf::Random(200, 3);
  const Tensorf w = Tensorf::Random(3, 5);
  CHECK(kclass_equivalence(z, w).rate() == 1.0);
  const Tensorf logits = z * w;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index a = 0, b = 0;
    logits.row(i).maxCoeff(&a);
    const Eigen::RowVectorXf p = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    (p / p.sum()).maxCoeff(&b);
    CHECK(a == b);
  }
  for (int classes : {2, 4}) {
    const auto train = blobs_task(classes).sample(rng, 800);
    const auto eval = blobs_task(classes).sample(rng, 1000);
    const auto clf = train_classifier(train, classes, 4, 400, 11);
    const Tensorf feats = clf.encoder.forward(Tensorf(eval.x.cast<float>()));
    const auto rep = kclass_equivalence(feats, clf.weights.value);
    CHECK(rep.samples == 1000);
    CHECK(rep.rate() == 1.0);
  }
}
