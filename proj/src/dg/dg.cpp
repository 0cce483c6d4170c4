#include "tdrl/dg/dg.hpp"

#include "tdrl/core/optimizer.hpp"
#include "tdrl/core/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tdrl::dg {

void GeneratorConfig::validate() const {
  if (classes < 2 || modes < 1) throw ContractError("generator: need K >= 2 and J >= 1");
  if (signal_dims < 2 || signal_dims > dim) throw ContractError("generator: signal_dims must be in [2, dim]");
  if (source_domains < 1 || per_domain < 1) throw ContractError("generator: need at least one source domain and sample");
  if (noise_sd < 0.0 || shift_scale < 0.0) throw ContractError("generator: scales must be >= 0");
  if (mode_weight_spread < 0.0 || mode_weight_spread >= 1.0) throw ContractError("generator: mode_weight_spread must be in [0, 1)");
}

DomainData MultiDomainDataset::pooled_sources() const {
  DomainData out;
  int n = 0;
  for (const auto& d : sources) n += d.size();
  out.x.resize(n, cfg.dim);
  int r = 0;
  for (const auto& d : sources) {
    out.x.middleRows(r, d.size()) = d.x;
    r += d.size();
    out.y.insert(out.y.end(), d.y.begin(), d.y.end());
    out.mode.insert(out.mode.end(), d.mode.begin(), d.mode.end());
    out.domain.insert(out.domain.end(), d.domain.begin(), d.domain.end());
  }
  return out;
}

MultiDomainDataset generate(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng root(seed);
  Rng layout = root.fork(1);
  MultiDomainDataset out;
  out.cfg = cfg;
  const int clusters = cfg.classes * cfg.modes;
  const int domains = cfg.source_domains + 1;
  // Cluster i sits at angle 2 pi i / (K J) and belongs to class i mod K.
  Tensord centers = Tensord::Zero(clusters, cfg.dim);
  for (int i = 0; i < clusters; ++i) {
    const double t = 2.0 * std::numbers::pi * i / clusters;
    centers(i, 0) = cfg.radius * std::cos(t);
    centers(i, 1) = cfg.radius * std::sin(t);
  }
  for (int e = 0; e < domains; ++e) {
    Tensord shift = Tensord::Zero(clusters, cfg.dim);
    for (int i = 0; i < clusters; ++i) {
      for (int j = cfg.signal_dims; j < cfg.dim; ++j) shift(i, j) = layout.normal(0.0, cfg.shift_scale);
    }
    Tensord mode_weight(cfg.classes, cfg.modes);
    for (int k = 0; k < cfg.classes; ++k) {
      double total = 0.0;
      for (int j = 0; j < cfg.modes; ++j) {
        mode_weight(k, j) = layout.uniform(0.5 - 0.5 * cfg.mode_weight_spread, 0.5 + 0.5 * cfg.mode_weight_spread);
        total += mode_weight(k, j);
      }
      mode_weight.row(k) /= total;
    }
    Rng draw = root.fork(100 + static_cast<std::uint64_t>(e));
    DomainData d;
    d.x.resize(cfg.per_domain, cfg.dim);
    for (int n = 0; n < cfg.per_domain; ++n) {
      const int k = draw.below(cfg.classes);
      double u = draw.uniform(), acc = 0.0;
      int j = 0;
      for (; j + 1 < cfg.modes; ++j) {
        acc += mode_weight(k, j);
        if (u < acc) break;
      }
      const int c = j * cfg.classes + k;
      for (int col = 0; col < cfg.dim; ++col) {
        d.x(n, col) = static_cast<float>(centers(c, col) + shift(c, col) + draw.normal(0.0, cfg.noise_sd));
      }
      d.y.push_back(k);
      d.mode.push_back(j);
      d.domain.push_back(e);
    }
    if (e < cfg.source_domains) {
      out.sources.push_back(std::move(d));
    } else {
      out.target = std::move(d);
    }
  }
  return out;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::Erm: return "erm";
    case Method::Dann: return "dann";
    case Method::Cdann: return "cdann";
    case Method::Fdann: return "fdann";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::Erm, Method::Dann, Method::Cdann, Method::Fdann}) {
    if (name == method_name(m)) return m;
  }
  throw ContractError("unknown method '" + name + "' (erm|dann|cdann|fdann)");
}

void DgConfig::validate() const {
  if (latent_dim < 1 || hidden < 1 || disc_hidden < 1) throw ContractError("dg: layer sizes must be >= 1");
  if (method == Method::Fdann && !tie_fine_to_classifier && multiplier < 2) {
    throw ContractError("dg: fdann needs multiplier >= 2 (use a tied codebook for M = K)");
  }
  if (multiplier < 1) throw ContractError("dg: multiplier must be >= 1");
  if (lambda < 0.0 || beta < 0.0) throw ContractError("dg: lambda and beta must be >= 0");
  if (batch < 1 || steps < 0) throw ContractError("dg: batch must be >= 1 and steps >= 0");
}

int condition_width(Method method, int classes, int fine_size) {
  switch (method) {
    case Method::Cdann: return classes;
    case Method::Fdann: return fine_size;
    default: return 0;
  }
}

std::vector<int> predict(const FdannModelf& m, const Tensorf& x) { return predict_from_latent(m, m.encoder.forward(x)); }

double accuracy(const FdannModelf& m, const DomainData& d) {
  const auto p = predict(m, d.x);
  int hit = 0;
  for (int i = 0; i < d.size(); ++i) hit += p[static_cast<std::size_t>(i)] == d.y[static_cast<std::size_t>(i)] ? 1 : 0;
  return d.size() ? static_cast<double>(hit) / d.size() : 0.0;
}

DgResult train_dg(const MultiDomainDataset& data, const DgConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng root(seed);
  DgResult r;
  const int domains = static_cast<int>(data.sources.size());
  r.model = make_model<float>(data.cfg.dim, data.cfg.classes, domains, cfg, root);
  FdannModelf& m = r.model;
  const DomainData pooled = data.pooled_sources();

  if (m.fine) {
    Rng pick = root.fork(6);
    const int n = std::min(2000, pooled.size());
    std::vector<int> order(static_cast<std::size_t>(pooled.size()));
    for (int i = 0; i < pooled.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    pick.shuffle(std::span<int>(order));
    Tensorf warm(n, data.cfg.dim);
    for (int i = 0; i < n; ++i) warm.row(i) = pooled.x.row(order[static_cast<std::size_t>(i)]);
    const Tensorf z = m.encoder.forward(warm);
    auto seeded = codebook::init_codebook<float>(pick, m.fine->size(), m.latent_dim(), codebook::InitStrategy::KMeans, &z);
    m.fine->codewords.value = seeded.codewords.value;
  }

  Optimizer<float> opt(m.parameters(), {OptimizerKind::Adam, cfg.lr});
  Rng batch_rng = root.fork(4);
  const int b = cfg.batch;
  Tensorf x(b * domains, data.cfg.dim);
  std::vector<int> y(static_cast<std::size_t>(b * domains)), dom(static_cast<std::size_t>(b * domains));
  for (int step = 0; step < cfg.steps; ++step) {
    for (int e = 0; e < domains; ++e) {
      const auto& d = data.sources[static_cast<std::size_t>(e)];
      for (int i = 0; i < b; ++i) {
        const int s = batch_rng.below(d.size());
        const auto row = static_cast<std::size_t>(e * b + i);
        x.row(static_cast<Eigen::Index>(row)) = d.x.row(s);
        y[row] = d.y[static_cast<std::size_t>(s)];
        dom[row] = e;
      }
    }
    Graph<float> g;
    const auto l = fdann_loss(g, m, cfg, x, y, dom);
    try {
      opt.step(g.backward(l.total));
    } catch (const NumericError& err) {
      throw NumericError(std::string(err.what()) + " at step " + std::to_string(step));
    }
  }

  Graph<float> g;
  const auto l = fdann_loss(g, m, cfg, pooled.x, pooled.y, pooled.domain);
  r.final_classify = l.classify.value()(0, 0);
  r.final_codeword = l.codeword.value()(0, 0);
  r.final_align = l.align.value()(0, 0);
  r.source_accuracy = accuracy(m, pooled);
  r.target_accuracy = accuracy(m, data.target);
  return r;
}

ModePurity mode_purity_report(const std::vector<int>& codeword, const DomainData& d, int codewords, int classes, int modes) {
  if (static_cast<int>(codeword.size()) != d.size()) throw DimensionError("mode_purity: one codeword per sample");
  const int cells = classes * modes;
  ModePurity p;
  p.histogram.assign(static_cast<std::size_t>(codewords), std::vector<long>(static_cast<std::size_t>(cells), 0));
  for (int i = 0; i < d.size(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    ++p.histogram.at(static_cast<std::size_t>(codeword[s]))[static_cast<std::size_t>(d.y[s] * modes + d.mode[s])];
  }
  std::vector<bool> owned(static_cast<std::size_t>(cells), false);
  double sum = 0.0;
  for (const auto& h : p.histogram) {
    long total = 0;
    for (long c : h) total += c;
    if (total == 0) continue;
    const auto top = std::max_element(h.begin(), h.end());
    owned[static_cast<std::size_t>(top - h.begin())] = true;
    sum += static_cast<double>(*top) / static_cast<double>(total);
    ++p.used_codewords;
  }
  p.mean_purity = p.used_codewords ? sum / p.used_codewords : 0.0;
  p.coverage = static_cast<double>(std::count(owned.begin(), owned.end(), true)) / cells;
  return p;
}

ModePurity mode_purity_report(const FdannModelf& m, const DomainData& d, int modes) {
  return mode_purity_report(fine_indices(m, m.encoder.forward(d.x)), d, m.fine_size(), m.classes, modes);
}

bool DgVerdict::pass() const {
  return fdann_mean >= cdann_mean && fdann_mean >= dann_mean && p_vs_cdann < 0.1 && p_vs_dann < 0.1;
}

DgVerdict judge_dg(const std::vector<DgRow>& rows) {
  auto collect = [&](Method m) {
    std::vector<std::pair<std::uint64_t, double>> out;
    for (const auto& r : rows) {
      if (r.method == m) out.emplace_back(r.seed, r.target_accuracy);
    }
    return out;
  };
  auto mean_of = [](const std::vector<std::pair<std::uint64_t, double>>& v) {
    std::vector<double> xs;
    for (const auto& [s, a] : v) xs.push_back(a);
    return stats::mean(xs);
  };
  auto paired_p = [](const std::vector<std::pair<std::uint64_t, double>>& a, const std::vector<std::pair<std::uint64_t, double>>& b) {
    int wins = 0, n = 0;
    for (const auto& [sa, va] : a) {
      for (const auto& [sb, vb] : b) {
        if (sa != sb || va == vb) continue;
        ++n;
        wins += va > vb ? 1 : 0;
      }
    }
    return stats::sign_test_one_sided(wins, n);
  };
  const auto f = collect(Method::Fdann);
  const auto c = collect(Method::Cdann);
  const auto d = collect(Method::Dann);
  DgVerdict v;
  v.fdann_mean = mean_of(f);
  v.cdann_mean = mean_of(c);
  v.dann_mean = mean_of(d);
  v.p_vs_cdann = paired_p(f, c);
  v.p_vs_dann = paired_p(f, d);
  return v;
}

}  // namespace tdrl::dg
