#include "doctest.h"

#include "tdrl/abstraction/abstraction.hpp"
#include "tdrl/core/optimizer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace tdrl;
using namespace tdrl::abstraction;
using gridworld::GridConfig;

namespace {

GridConfig small_grid() {
  GridConfig g;
  g.size = 6;
  return g;
}

Tensorf rows_of(const Tensorf& x, int first, int count) { return x.middleRows(first, count); }

// (row, col) / size for each hidden state.
Tensorf oracle_latent(const std::vector<gridworld::GridState>& states, int size) {
  Tensorf z(static_cast<Eigen::Index>(states.size()), 2);
  for (std::size_t i = 0; i < states.size(); ++i) {
    z(static_cast<Eigen::Index>(i), 0) = static_cast<float>(states[i].row) / static_cast<float>(size);
    z(static_cast<Eigen::Index>(i), 1) = static_cast<float>(states[i].col) / static_cast<float>(size);
  }
  return z;
}

Tensorf gather(const Tensorf& t, const std::vector<int>& idx) {
  Tensorf out(static_cast<Eigen::Index>(idx.size()), t.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.row(idx[i]);
  return out;
}

template <typename V>
V gather(const V& v, const std::vector<int>& idx) {
  V out;
  for (int i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

AbstractionConfig oracle_head_config() {
  AbstractionConfig cfg;
  cfg.latent_dim = 2;
  cfg.codebook_size = 0;
  return cfg;
}

}  // namespace

TEST_CASE("untrained model: inverse loss near log 4, ratio loss near log 2") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 1, 256);
  AbstractionConfig cfg;
  Rng rng(3);
  const auto model = make_model(g.pixels(), cfg, rng);
  Graph<float> graph;
  auto phi = latent_nodes(model, graph.constant(data.x)).phi;
  auto phi_next = latent_nodes(model, graph.constant(data.x_next)).phi;
  const auto inv = inverse_loss(model, phi, phi_next, data.a).value()(0, 0);
  const auto perm = negative_permutation(data.size(), rng);
  const auto ratio = ratio_loss(model, phi, phi_next, perm).value()(0, 0);
  CHECK(std::abs(inv - std::log(4.0)) < 0.1);
  CHECK(std::abs(ratio - std::log(2.0)) < 0.05);
}

TEST_CASE("inverse loss on a single transition equals that sample's cross-entropy") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 2, 1);
  Rng rng(4);
  const auto model = make_model(g.pixels(), AbstractionConfig{}, rng);
  Graph<float> graph;
  auto phi = latent_nodes(model, graph.constant(data.x)).phi;
  auto phi_next = latent_nodes(model, graph.constant(data.x_next)).phi;
  const float loss = inverse_loss(model, phi, phi_next, data.a).value()(0, 0);

  Tensorf joint(1, 2 * model.latent_dim());
  joint << abstract_state(model, data.x), abstract_state(model, data.x_next);
  const Tensorf logits = model.inverse_head.forward(joint);
  const double mx = logits.maxCoeff();
  double lse = 0.0;
  for (int k = 0; k < 4; ++k) lse += std::exp(logits(0, k) - mx);
  const double expected = mx + std::log(lse) - logits(0, data.a[0]);
  CHECK(loss == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("ratio loss needs a negative") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 2, 1);
  Rng rng(4);
  const auto model = make_model(g.pixels(), AbstractionConfig{}, rng);
  Graph<float> graph;
  auto phi = latent_nodes(model, graph.constant(data.x)).phi;
  const std::vector<int> perm{0};
  CHECK_THROWS_AS(ratio_loss(model, phi, phi, perm), ContractError);
  CHECK_THROWS_AS(negative_permutation(1, rng), ContractError);
}

TEST_CASE("negative permutation is a derangement") {
  Rng rng(9);
  for (int n = 2; n < 40; ++n) {
    const auto p = negative_permutation(n, rng);
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i) {
      CHECK(sorted[static_cast<std::size_t>(i)] == i);
      CHECK(p[static_cast<std::size_t>(i)] != i);
    }
  }
}

TEST_CASE("oracle latent: trained heads reach low inverse and ratio loss") {
  GridConfig g;
  g.noise_sd = 0.0;
  const auto data = gridworld::collect_random_walk(g, 5, 10000);
  const Tensorf z = oracle_latent(data.s, g.size);
  const Tensorf zn = oracle_latent(data.s_next, g.size);
  Rng rng(6);
  auto model = make_model(g.pixels(), oracle_head_config(), rng);
  auto params = model.inverse_head.parameters();
  for (auto* p : model.ratio_head.parameters()) params.push_back(p);
  Optimizer<float> opt(params, {OptimizerKind::Adam, 3e-3});
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  const int batch = 256;
  for (int step = 0; step < 4000; ++step) {
    if (step % (data.size() / batch) == 0) rng.shuffle(std::span<int>(order));
    const int first = (step % (data.size() / batch)) * batch;
    const std::vector<int> idx(order.begin() + first, order.begin() + first + batch);
    Graph<float> graph;
    auto p = graph.constant(gather(z, idx));
    auto pn = graph.constant(gather(zn, idx));
    const auto a = gather(data.a, idx);
    const auto perm = negative_permutation(batch, rng);
    auto loss = inverse_loss(model, p, pn, a) + ratio_loss(model, p, pn, perm);
    opt.step(graph.backward(loss));
  }

  std::vector<int> moved;
  for (int i = 0; i < data.size(); ++i) {
    if (!(data.s[static_cast<std::size_t>(i)] == data.s_next[static_cast<std::size_t>(i)])) moved.push_back(i);
  }
  Graph<float> graph;
  const auto a = gather(data.a, moved);
  const float inv = inverse_loss(model, graph.constant(gather(z, moved)), graph.constant(gather(zn, moved)), a).value()(0, 0);
  CHECK(inv < 0.05f);
  const auto perm = negative_permutation(data.size(), rng);
  const float ratio = ratio_loss(model, graph.constant(z), graph.constant(zn), perm).value()(0, 0);
  CHECK(ratio < 0.3f);
}

TEST_CASE("ratio head cannot beat log 2 when the next observation never changes") {
  auto g = small_grid();
  auto data = gridworld::collect_random_walk(g, 8, 2048);
  const Tensorf fixed = gridworld::render(g, {2, 2}, 77);
  for (int i = 0; i < data.size(); ++i) data.x_next.row(i) = fixed;
  Rng rng(10);
  auto model = make_model(g.pixels(), oracle_head_config(), rng);
  auto params = model.encoder.parameters();
  for (auto* p : model.ratio_head.parameters()) params.push_back(p);
  Optimizer<float> opt(params, {OptimizerKind::Adam, 3e-3});
  float last = 0.0f;
  for (int step = 0; step < 300; ++step) {
    const int first = (step % 16) * 128;
    Graph<float> graph;
    auto phi = latent_nodes(model, graph.constant(rows_of(data.x, first, 128))).phi;
    auto phi_next = latent_nodes(model, graph.constant(rows_of(data.x_next, first, 128))).phi;
    auto loss = ratio_loss(model, phi, phi_next, negative_permutation(128, rng));
    last = loss.value()(0, 0);
    opt.step(graph.backward(loss));
  }
  CHECK(std::abs(last - std::log(2.0f)) < 0.05f);
}

TEST_CASE("train_abstraction: continuous run is bitwise reproducible") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 12, 3000);
  AbstractionConfig cfg;
  cfg.codebook_size = 0;
  cfg.seed = 4;
  const auto a = train_abstraction(data, cfg);
  const auto b = train_abstraction(data, cfg);
  CHECK(a.steps == 600);
  const auto& pa = a.model.encoder.parameter_values();
  const auto& pb = b.model.encoder.parameter_values();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].value == pb[i].value);
  CHECK(a.model.inverse_head.parameter_values()[0].value == b.model.inverse_head.parameter_values()[0].value);
  CHECK(a.epochs.back().total == b.epochs.back().total);
  cfg.seed = 5;
  const auto c = train_abstraction(data, cfg);
  CHECK(c.model.encoder.parameter_values()[0].value != pa[0].value);
}

TEST_CASE("train_abstraction: lambda 0 leaves the codebook where it was seeded") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 13, 1500);
  AbstractionConfig cfg;
  cfg.codebook_size = 36;
  cfg.weights.lambda = 0.0;
  cfg.warmup_fraction = 0.0;
  cfg.steps = 20;
  const auto short_run = train_abstraction(data, cfg);
  cfg.steps = 60;
  const auto long_run = train_abstraction(data, cfg);
  CHECK(short_run.model.codebook->codewords.value == long_run.model.codebook->codewords.value);
  CHECK(short_run.model.codebook->pi_logits.value.isZero());
  CHECK(long_run.model.codebook->pi_logits.value.isZero());
  CHECK(short_run.model.encoder.parameter_values()[0].value != long_run.model.encoder.parameter_values()[0].value);
  for (const auto& e : long_run.epochs) CHECK(e.quantize == 0.0);

  cfg.weights.lambda = 100.0;
  const auto moving = train_abstraction(data, cfg);
  CHECK(moving.model.codebook->codewords.value != long_run.model.codebook->codewords.value);
}

TEST_CASE("train_abstraction: total loss is the weighted sum of its terms") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 14, 2000);
  AbstractionConfig cfg;
  cfg.codebook_size = 36;
  cfg.warmup_fraction = 0.5;
  int seen = 0;
  const auto r = train_abstraction(data, cfg, [&](const EpochMetrics&) { ++seen; });
  CHECK(seen == static_cast<int>(r.epochs.size()));
  bool quantized_epoch = false;
  for (const auto& e : r.epochs) {
    CHECK(e.max_additivity_error < 1e-6);
    if (e.quantize > 0.0) {
      quantized_epoch = true;
      CHECK(e.occupancy.size() == 36u);
    }
  }
  CHECK(quantized_epoch);
}

TEST_CASE("train_abstraction: non-finite input aborts naming the last good epoch") {
  const auto g = small_grid();
  auto data = gridworld::collect_random_walk(g, 15, 1024);
  for (int i = 0; i < data.size(); ++i) {
    if (i % 2) data.x(i, 5) = std::numeric_limits<float>::quiet_NaN();
  }
  AbstractionConfig cfg;
  cfg.codebook_size = 0;
  try {
    train_abstraction(data, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("last good epoch none") != std::string::npos);
  }
}

TEST_CASE("purity: random codeword assignment is at chance level") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 16, 4000);
  Rng rng(19);
  std::vector<int> random_codes;
  for (int i = 0; i < data.size(); ++i) random_codes.push_back(rng.below(36));
  CHECK(purity(random_codes, data.s, g).value() <= 2.0 / 36.0 + 0.05);

  std::vector<int> exact_codes;
  for (const auto& s : data.s) exact_codes.push_back(gridworld::cell_index(g, s));
  CHECK(purity(exact_codes, data.s, g).value() == 1.0);

  std::vector<int> merged;  // two cells per codeword
  for (const auto& s : data.s) merged.push_back(gridworld::cell_index(g, s) / 2);
  const auto pm = purity(merged, data.s, g);
  CHECK(pm.by_cell == 1.0);
  CHECK(pm.by_codeword == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("purity: untrained encoder is far from a clean abstraction") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 16, 4000);
  AbstractionConfig cfg;
  cfg.latent_dim = 4;
  cfg.codebook_size = 36;
  Rng rng(17);
  auto model = make_model(g.pixels(), cfg, rng);
  CHECK(purity(model, data.x, data.s, g).value() < 0.5);
  const auto rows = latent_map(model, g);
  CHECK(rows.size() == 36u);
  for (const auto& r : rows) CHECK(r.codeword >= 0);
}

TEST_CASE("latent map: continuous model leaves the codeword column empty") {
  const auto g = small_grid();
  AbstractionConfig cfg;
  cfg.codebook_size = 0;
  Rng rng(18);
  const auto model = make_model(g.pixels(), cfg, rng);
  const auto rows = latent_map(model, g);
  const auto path = std::filesystem::temp_directory_path() / "tdrl_latent_map.csv";
  write_latent_csv(path, rows);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "row,col,z0,z1,codeword");
  int count = 0;
  while (std::getline(in, line)) {
    CHECK(line.back() == ',');
    ++count;
  }
  CHECK(count == 36);
  std::filesystem::remove(path);
}

TEST_CASE("trained discrete abstraction on the reduced grid") {
  const auto g = small_grid();
  const auto data = gridworld::collect_random_walk(g, 1000, 10800);
  AbstractionConfig cfg;
  cfg.latent_dim = 4;
  cfg.codebook_size = 36;
  cfg.seed = 0;
  const auto r = train_abstraction(data, cfg);
  const auto p = purity(r.model, data.x, data.s, g);
  const auto rows = latent_map(r.model, g);
  INFO("purity " << p.by_cell << "/" << p.by_codeword << " stability " << stability(rows));
  CHECK(p.value() >= 0.75);
  CHECK(stability(rows) >= 0.9);
  CHECK(distinct_codewords(rows) >= 32);

  const auto path = std::filesystem::temp_directory_path() / "tdrl_abstraction.bin";
  save_model(path, r.model);
  const auto loaded = load_model(path);
  std::filesystem::remove(path);
  CHECK(loaded.codebook->codewords.value == r.model.codebook->codewords.value);
  CHECK(codeword_indices(loaded, data.x) == codeword_indices(r.model, data.x));
  const auto p2 = purity(loaded, data.x.topRows(5000), std::vector<gridworld::GridState>(data.s.begin(), data.s.begin() + 5000), g);
  const auto p3 = purity(loaded, data.x.topRows(5000), std::vector<gridworld::GridState>(data.s.begin(), data.s.begin() + 5000), g);
  CHECK(p2.by_cell == p3.by_cell);
}
