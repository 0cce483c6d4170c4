#include "tdrl/abstraction/abstraction.hpp"

#include "tdrl/core/archive.hpp"
#include "tdrl/core/checkpoint.hpp"
#include "tdrl/core/optimizer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace tdrl::abstraction {

void LossWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || lambda < 0.0) throw ContractError("abstraction: loss weights must be >= 0");
  if (eta != 0.0) throw ContractError("abstraction: smoothness loss is not implemented; eta must be 0");
}

int AbstractionConfig::resolved_steps(int samples) const {
  return steps > 0 ? steps : std::max(1, 200 * samples / 1000);
}

void AbstractionConfig::validate() const {
  weights.validate();
  if (latent_dim < 1 || encoder_hidden < 1 || head_hidden < 1) throw ContractError("abstraction: sizes must be >= 1");
  if (codebook_size < 0) throw ContractError("abstraction: codebook size must be >= 0");
  if (batch < 2) throw ContractError("abstraction: batch must be >= 2 for the ratio loss");
  if (!(lr > 0.0)) throw ContractError("abstraction: lr must be positive");
}

ParameterList<float> AbstractionModel::parameters() {
  ParameterList<float> out = encoder.parameters();
  for (auto* p : inverse_head.parameters()) out.push_back(p);
  for (auto* p : ratio_head.parameters()) out.push_back(p);
  if (codebook) {
    for (auto* p : codebook->parameters()) out.push_back(p);
  }
  return out;
}

AbstractionModel make_model(int input_dim, const AbstractionConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.latent_dim;
  AbstractionModel m;
  m.encoder = Mlpf("encoder", {input_dim, cfg.encoder_hidden, d}, {Activation::Tanh, cfg.latent_activation}, rng);
  m.inverse_head = Mlpf("inverse", {2 * d, cfg.head_hidden, gridworld::kNumActions}, {Activation::Relu, Activation::Identity}, rng);
  m.ratio_head = Mlpf("ratio", {2 * d, cfg.head_hidden, 1}, {Activation::Relu, Activation::Identity}, rng);
  if (cfg.discrete()) m.codebook = codebook::init_codebook<float>(rng, cfg.codebook_size, d, codebook::InitStrategy::Gaussian);
  return m;
}

Tensorf encode(const AbstractionModel& model, const Tensorf& x) { return model.encoder.forward(x); }

Tensorf abstract_state(const AbstractionModel& model, const Tensorf& x) {
  Tensorf z = encode(model, x);
  if (!model.codebook) return z;
  return codebook::quantize(*model.codebook, z).quantized;
}

std::vector<int> codeword_indices(const AbstractionModel& model, const Tensorf& x) {
  if (!model.codebook) throw ContractError("codeword_indices: continuous model has no codebook");
  return codebook::quantize(*model.codebook, encode(model, x)).indices;
}

LatentNodes latent_nodes(const AbstractionModel& model, Var<float> x, bool quantized) {
  Var<float> z = model.encoder.forward(x);
  if (!model.codebook || !quantized) return {z, z};
  auto q = codebook::quantize(*model.codebook, z.value());
  return {z, straight_through(z, std::move(q.quantized))};
}

Var<float> inverse_loss(const AbstractionModel& model, Var<float> phi, Var<float> phi_next, std::span<const int> actions) {
  if (phi.rows() < 1) throw ContractError("inverse_loss: empty batch");
  return cross_entropy(model.inverse_head.forward(concat_cols(phi, phi_next)), actions);
}

std::vector<int> negative_permutation(int n, Rng& rng) {
  if (n < 2) throw ContractError("negative_permutation: needs at least 2 items");
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  // Sattolo's algorithm: a uniformly random single n-cycle.
  for (int i = n - 1; i > 0; --i) std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(rng.below(i))]);
  return p;
}

Var<float> ratio_loss(const AbstractionModel& model, Var<float> phi, Var<float> phi_next, std::span<const int> perm) {
  const auto b = phi.rows();
  if (b < 2) throw ContractError("ratio_loss: batch of 1 has no negative");
  if (static_cast<Eigen::Index>(perm.size()) != b) throw DimensionError("ratio_loss: permutation length");
  const std::vector<float> ones(static_cast<std::size_t>(b), 1.0f);
  const std::vector<float> zeros(static_cast<std::size_t>(b), 0.0f);
  auto pos = model.ratio_head.forward(concat_cols(phi, phi_next));
  auto neg = model.ratio_head.forward(concat_cols(phi, gather_rows(phi_next, perm)));
  return (bce_with_logits(pos, std::span<const float>(ones)) + bce_with_logits(neg, std::span<const float>(zeros))) * 0.5f;
}

LossTerms abstraction_loss(const AbstractionModel& model, Graph<float>& g, const Tensorf& x, const Tensorf& x_next,
                           std::span<const int> actions, const AbstractionConfig& cfg, Rng& rng, bool quantized) {
  const auto b = static_cast<int>(x.rows());
  Tensorf stacked(2 * b, x.cols());
  stacked.topRows(b) = x;
  stacked.bottomRows(b) = x_next;
  std::vector<int> first(static_cast<std::size_t>(b)), second(static_cast<std::size_t>(b));
  std::iota(first.begin(), first.end(), 0);
  std::iota(second.begin(), second.end(), b);

  const auto nodes = latent_nodes(model, g.constant(std::move(stacked)), quantized);
  auto phi = gather_rows(nodes.phi, std::span<const int>(first));
  auto phi_next = gather_rows(nodes.phi, std::span<const int>(second));
  const auto perm = negative_permutation(b, rng);

  LossTerms t;
  auto inv = inverse_loss(model, phi, phi_next, actions);
  auto ratio = ratio_loss(model, phi, phi_next, perm);
  t.inv = inv.value()(0, 0);
  t.ratio = ratio.value()(0, 0);
  t.total = inv * static_cast<float>(cfg.weights.alpha) + ratio * static_cast<float>(cfg.weights.beta);
  if (model.codebook && quantized) {
    codebook::LossOptions lo;
    lo.lambda = cfg.weights.lambda;
    lo.solver = cfg.solver;
    lo.epsilon_factor = cfg.epsilon_factor;
    codebook::LossDiagnostics diag;
    auto quant = codebook::codebook_loss(nodes.z, g.param(model.codebook->codewords), g.param(model.codebook->pi_logits), lo, &diag);
    t.quantize = diag.distance;
    t.total = t.total + quant;
  }
  return t;
}

namespace {

std::string last_good(const std::vector<EpochMetrics>& epochs) {
  return epochs.empty() ? std::string("none") : std::to_string(epochs.back().epoch);
}

}  // namespace

TrainResult train_abstraction(const gridworld::TransitionBatch& data, const AbstractionConfig& cfg,
                              const EpochCallback& on_epoch) {
  cfg.validate();
  const int n = data.size();
  if (n < 2) throw ContractError("train_abstraction: needs at least 2 transitions");
  const int batch = std::min(cfg.batch, n);
  const int total_steps = cfg.resolved_steps(n);
  const int per_epoch = n / batch;

  Rng root(cfg.seed);
  Rng init_rng = root.fork(1);
  Rng order_rng = root.fork(2);
  Rng neg_rng = root.fork(3);
  Rng reseed_rng = root.fork(4);

  TrainResult result;
  result.model = make_model(data.grid.pixels(), cfg, init_rng);
  AbstractionModel& model = result.model;
  Optimizer<float> opt(model.parameters(), {OptimizerKind::Adam, cfg.lr});
  codebook::DeadCodewordMonitor monitor(std::max(cfg.codebook_size, 1), cfg.dead_patience);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Tensorf x(batch, data.x.cols()), xn(batch, data.x.cols());
  std::vector<int> a(static_cast<std::size_t>(batch));

  const int warmup = model.codebook ? static_cast<int>(cfg.warmup_fraction * total_steps) : 0;
  auto seed_codebook = [&] {
    // Seeded from encodings of a random slice of the data; moments are still
    // zero because the codebook received no gradient so far.
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    init_rng.shuffle(std::span<int>(idx));
    const int w = std::min(n, std::max(8 * cfg.codebook_size, 2048));
    Tensorf warm(w, data.x.cols());
    for (int i = 0; i < w; ++i) warm.row(i) = data.x.row(idx[static_cast<std::size_t>(i)]);
    const Tensorf zw = encode(model, warm);
    auto seeded = codebook::init_codebook<float>(init_rng, cfg.codebook_size, cfg.latent_dim,
                                                 cfg.init, &zw);
    model.codebook->codewords.value = seeded.codewords.value;
    model.codebook->pi_logits.value = seeded.pi_logits.value;
  };

  EpochMetrics acc;
  int in_epoch = 0;
  for (int step = 0; step < total_steps; ++step) {
    const bool quantized = step >= warmup;
    if (model.codebook && step == warmup) seed_codebook();
    const int slot = step % per_epoch;
    if (slot == 0) order_rng.shuffle(std::span<int>(order));
    for (int i = 0; i < batch; ++i) {
      const int r = order[static_cast<std::size_t>(slot * batch + i)];
      x.row(i) = data.x.row(r);
      xn.row(i) = data.x_next.row(r);
      a[static_cast<std::size_t>(i)] = data.a[static_cast<std::size_t>(r)];
    }

    Graph<float> g;
    LossTerms t;
    try {
      t = abstraction_loss(model, g, x, xn, a, cfg, neg_rng, quantized);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) + "; last good epoch " +
                         last_good(result.epochs));
    }
    const double total = t.total.value()(0, 0);
    if (!std::isfinite(total)) {
      throw NumericError("train_abstraction: non-finite loss at step " + std::to_string(step) +
                         "; last good epoch " + last_good(result.epochs));
    }
    const double expected = cfg.weights.alpha * t.inv + cfg.weights.beta * t.ratio +
                            (model.codebook && quantized ? cfg.weights.lambda * t.quantize : 0.0);
    acc.max_additivity_error = std::max(acc.max_additivity_error, std::abs(total - expected) / std::max(1.0, std::abs(expected)));
    if (cfg.lr_decay) opt.set_learning_rate(cfg.lr * (1.0 - static_cast<double>(step) / total_steps));
    try {
      opt.step(g.backward(t.total));
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + "; last good epoch " + last_good(result.epochs));
    }

    acc.inv += t.inv;
    acc.ratio += t.ratio;
    acc.quantize += t.quantize;
    acc.total += total;
    ++in_epoch;
    if (model.codebook && quantized) {
      const Tensorf z = encode(model, x);
      const auto q = codebook::quantize(*model.codebook, z);
      if (acc.occupancy.empty()) acc.occupancy.assign(static_cast<std::size_t>(cfg.codebook_size), 0);
      for (int idx : q.indices) ++acc.occupancy[static_cast<std::size_t>(idx)];
      acc.reseeds += monitor.observe_and_reseed(*model.codebook, q, z, reseed_rng);
    }
    if (slot == per_epoch - 1 || step == total_steps - 1) {
      acc.epoch = static_cast<int>(result.epochs.size());
      acc.step = step + 1;
      acc.inv /= in_epoch;
      acc.ratio /= in_epoch;
      acc.quantize /= in_epoch;
      acc.total /= in_epoch;
      if (on_epoch) on_epoch(acc);
      result.epochs.push_back(std::move(acc));
      acc = {};
      in_epoch = 0;
    }
  }
  result.steps = total_steps;
  return result;
}

Purity purity(const AbstractionModel& model, const Tensorf& x, const std::vector<gridworld::GridState>& states,
              const gridworld::GridConfig& grid) {
  if (static_cast<Eigen::Index>(states.size()) != x.rows()) throw DimensionError("purity: states vs rows");
  return purity(codeword_indices(model, x), states, grid);
}

Purity purity(const std::vector<int>& idx, const std::vector<gridworld::GridState>& states,
              const gridworld::GridConfig& grid) {
  if (states.size() != idx.size()) throw DimensionError("purity: states vs codewords");
  if (states.empty()) throw ContractError("purity: empty sample");
  std::map<int, std::map<int, int>> per_cell, per_code;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int cell = gridworld::cell_index(grid, states[i]);
    ++per_cell[cell][idx[i]];
    ++per_code[idx[i]][cell];
  }
  auto majority = [](const std::map<int, int>& m) {
    int total = 0, best = 0;
    for (const auto& [k, v] : m) {
      total += v;
      best = std::max(best, v);
    }
    return std::pair{best, total};
  };
  Purity p;
  for (const auto& [cell, m] : per_cell) {
    const auto [best, total] = majority(m);
    p.by_cell += static_cast<double>(best) / total;
  }
  p.by_cell /= static_cast<double>(per_cell.size());
  for (const auto& [code, m] : per_code) p.by_codeword += majority(m).first;
  p.by_codeword /= static_cast<double>(idx.size());
  return p;
}

std::vector<LatentRow> latent_map(const AbstractionModel& model, const gridworld::GridConfig& grid, int noise_seeds,
                                  std::uint64_t seed) {
  gridworld::GridConfig clean = grid;
  clean.noise_sd = 0.0;
  Tensorf noiseless(grid.cells(), grid.pixels());
  Tensorf noisy(grid.cells() * noise_seeds, grid.pixels());
  Rng rng(seed);
  for (int c = 0; c < grid.cells(); ++c) {
    const auto s = gridworld::cell_state(grid, c);
    noiseless.row(c) = gridworld::render(clean, s, 0);
    for (int k = 0; k < noise_seeds; ++k) noisy.row(c * noise_seeds + k) = gridworld::render(grid, s, rng.next_u64());
  }
  const Tensorf z = encode(model, noiseless);
  std::vector<int> base, others;
  if (model.codebook) {
    base = codeword_indices(model, noiseless);
    others = codeword_indices(model, noisy);
  }
  std::vector<LatentRow> rows;
  for (int c = 0; c < grid.cells(); ++c) {
    LatentRow r{gridworld::cell_state(grid, c), z.row(c), -1, true};
    if (model.codebook) {
      r.codeword = base[static_cast<std::size_t>(c)];
      const int first = others[static_cast<std::size_t>(c * noise_seeds)];
      for (int k = 1; k < noise_seeds; ++k) {
        if (others[static_cast<std::size_t>(c * noise_seeds + k)] != first) r.stable = false;
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

double stability(const std::vector<LatentRow>& rows) {
  if (rows.empty()) return 0.0;
  int ok = 0;
  for (const auto& r : rows) ok += r.stable ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

int distinct_codewords(const std::vector<LatentRow>& rows) {
  std::vector<int> seen;
  for (const auto& r : rows) {
    if (r.codeword >= 0 && std::find(seen.begin(), seen.end(), r.codeword) == seen.end()) seen.push_back(r.codeword);
  }
  return static_cast<int>(seen.size());
}

void write_latent_csv(const std::filesystem::path& path, const std::vector<LatentRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("latent csv: cannot write " + path.string());
  const auto d = rows.empty() ? 0 : rows.front().z.size();
  out << "row,col";
  for (Eigen::Index k = 0; k < d; ++k) out << ",z" << k;
  out << ",codeword\n";
  char buf[32];
  for (const auto& r : rows) {
    out << r.cell.row << ',' << r.cell.col;
    for (Eigen::Index k = 0; k < d; ++k) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(r.z(k)));
      out << ',' << buf;
    }
    out << ',';
    if (r.codeword >= 0) out << r.codeword;
    out << '\n';
  }
}

void save_model(const std::filesystem::path& path, const AbstractionModel& model) {
  Archive ar("abstraction", kAbstractionFormatVersion);
  write_mlp(ar, "encoder", model.encoder);
  write_mlp(ar, "inverse", model.inverse_head);
  write_mlp(ar, "ratio", model.ratio_head);
  ar.set("codebook_size", std::to_string(model.codebook ? model.codebook->size() : 0));
  if (model.codebook) {
    ar.set("codebook.metric", codebook::metric_name(model.codebook->metric));
    ar.add_f32("codebook.codewords", model.codebook->codewords.value);
    ar.add_f32("codebook.pi_logits", model.codebook->pi_logits.value);
  }
  ar.save(path);
}

AbstractionModel load_model(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path, "abstraction");
  if (ar.version() != kAbstractionFormatVersion) throw std::runtime_error("abstraction: unsupported version");
  AbstractionModel m;
  m.encoder = read_mlp(ar, "encoder");
  m.inverse_head = read_mlp(ar, "inverse");
  m.ratio_head = read_mlp(ar, "ratio");
  if (std::stoi(ar.get("codebook_size")) > 0) {
    auto cb = codebook::make_codebook<float>(ar.f32("codebook.codewords"), codebook::parse_metric(ar.get("codebook.metric")));
    cb.pi_logits.value = ar.f32("codebook.pi_logits");
    if (cb.dim() != m.encoder.out_dim()) throw std::runtime_error("abstraction: codebook dim disagrees with encoder");
    m.codebook = std::move(cb);
  }
  return m;
}

}  // namespace tdrl::abstraction
