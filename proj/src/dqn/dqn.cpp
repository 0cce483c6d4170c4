#include "tdrl/dqn/dqn.hpp"

#include "tdrl/core/archive.hpp"
#include "tdrl/core/checkpoint.hpp"
#include "tdrl/core/optimizer.hpp"
#include "tdrl/core/stats.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

namespace tdrl::dqn {

ReplayBuffer::ReplayBuffer(int capacity, int dim)
    : capacity_(capacity), dim_(dim), z_(capacity, dim), z_next_(capacity, dim),
      a_(static_cast<std::size_t>(capacity)), r_(static_cast<std::size_t>(capacity)),
      done_(static_cast<std::size_t>(capacity)) {
  if (capacity < 1 || dim < 1) throw ContractError("replay: capacity and dim must be >= 1");
}

void ReplayBuffer::push(const Transition& t) {
  if (t.z.size() != dim_ || t.z_next.size() != dim_) throw DimensionError("replay: transition dim mismatch");
  if (t.a < 0 || t.a >= gridworld::kNumActions) throw ContractError("replay: invalid action");
  z_.row(next_) = t.z;
  z_next_.row(next_) = t.z_next;
  a_[static_cast<std::size_t>(next_)] = t.a;
  r_[static_cast<std::size_t>(next_)] = t.r;
  done_[static_cast<std::size_t>(next_)] = t.done ? 1.0f : 0.0f;
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

Batch ReplayBuffer::sample(int batch, Rng& rng) const {
  if (batch < 1 || batch > size_) throw ContractError("replay: batch must be in [1, size]");
  Batch b;
  // Floyd's algorithm: `batch` distinct slots, each subset equally likely.
  for (int j = size_ - batch; j < size_; ++j) {
    const int t = rng.below(j + 1);
    if (std::find(b.slots.begin(), b.slots.end(), t) == b.slots.end()) {
      b.slots.push_back(t);
    } else {
      b.slots.push_back(j);
    }
  }
  b.z.resize(batch, dim_);
  b.z_next.resize(batch, dim_);
  for (int i = 0; i < batch; ++i) {
    const auto s = static_cast<std::size_t>(b.slots[static_cast<std::size_t>(i)]);
    b.z.row(i) = z_.row(static_cast<Eigen::Index>(s));
    b.z_next.row(i) = z_next_.row(static_cast<Eigen::Index>(s));
    b.a.push_back(a_[s]);
    b.r.push_back(r_[s]);
    b.done.push_back(done_[s]);
  }
  return b;
}

void DqnConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("dqn: gamma must be in (0, 1]");
  if (batch < 1 || capacity < batch) throw ContractError("dqn: need 1 <= batch <= capacity");
  if (steps < 1 || eval_every < 1 || eval_episodes < 1 || target_sync < 1) throw ContractError("dqn: counts must be >= 1");
  if (eps_decay_steps < 1) throw ContractError("dqn: eps_decay_steps must be >= 1");
}

double epsilon_at(const DqnConfig& cfg, int step) {
  if (step >= cfg.eps_decay_steps) return cfg.eps_end;
  return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * static_cast<double>(step) / cfg.eps_decay_steps;
}

Var<float> q_update(Graph<float>& g, const Mlpf& qnet, const Mlpf& target, const Batch& batch, double gamma) {
  const Tensorf next_q = target.forward(batch.z_next);
  Tensorf y(batch.z.rows(), 1);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    y(i, 0) = batch.r[k] + static_cast<float>(gamma) * next_q.row(i).maxCoeff() * (1.0f - batch.done[k]);
  }
  auto q = gather_cols(qnet.forward(g.constant(batch.z)), std::span<const int>(batch.a));
  return mean(square(q - g.constant(std::move(y))));
}

Featurizer abstraction_features(const abstraction::AbstractionModel& model) {
  return [&model](const Tensorf& obs) { return abstraction::abstract_state(model, obs); };
}

Featurizer oracle_features(const gridworld::GridConfig& grid) {
  return [grid](const Tensorf& obs) {
    const auto s = gridworld::brightest_cell(grid, obs.row(0));
    Tensorf f = Tensorf::Zero(1, 2 * grid.size);
    f(0, s.row) = 1.0f;
    f(0, grid.size + s.col) = 1.0f;
    return f;
  };
}

double DqnResult::auc() const {
  if (curve.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : curve) s += p.mean_return;
  return s / static_cast<double>(curve.size());
}

double DqnResult::final_return() const { return stats::mean(final_returns); }

namespace {

int greedy(const Mlpf& qnet, const Tensorf& f) {
  const Tensorf q = qnet.forward(f);
  Eigen::Index best = 0;
  q.row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

void copy_values(const Mlpf& from, Mlpf& to) {
  auto dst = to.parameters();
  const auto& src = from.parameter_values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i].value;
}

}  // namespace

std::uint64_t eval_episode_seed(const DqnConfig& cfg, int episode) {
  return Rng::mix(cfg.eval_seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(episode + 1));
}

std::vector<double> evaluate_policy(const gridworld::Policy& policy, const EnvConfig& env, const DqnConfig& cfg) {
  std::vector<double> out;
  for (int e = 0; e < cfg.eval_episodes; ++e) {
    out.push_back(gridworld::run_episode(policy, env.grid, env.episode, eval_episode_seed(cfg, e)).ret);
  }
  return out;
}

std::vector<double> evaluate(const Mlpf& qnet, const Featurizer& features, const EnvConfig& env, const DqnConfig& cfg) {
  return evaluate_policy([&](const Tensorf& obs, Rng&) { return greedy(qnet, features(obs)); }, env, cfg);
}

DqnResult train_dqn(const Featurizer& features, int feature_dim, const EnvConfig& env, const DqnConfig& cfg,
                    std::uint64_t seed) {
  cfg.validate();
  env.grid.validate();
  Rng root(seed);
  Rng net_rng = root.fork(1);
  Rng act_rng = root.fork(2);
  Rng episode_rng = root.fork(3);
  Rng replay_rng = root.fork(4);

  DqnResult result;
  result.qnet = Mlpf("q", {feature_dim, cfg.hidden, gridworld::kNumActions}, {Activation::Relu, Activation::Identity}, net_rng);
  Mlpf& qnet = result.qnet;
  Mlpf target = qnet;
  Optimizer<float> opt(qnet.parameters(), {OptimizerKind::Adam, cfg.lr});
  ReplayBuffer replay(cfg.capacity, feature_dim);

  gridworld::GridState s;
  Rng noise;
  Tensorf f;
  int t = 0;
  auto reset = [&] {
    const std::uint64_t ep = episode_rng.next_u64();
    s = gridworld::episode_start(env.grid, env.episode, ep);
    noise = Rng(ep).fork(2);
    f = features(gridworld::render(env.grid, s, noise.next_u64()));
    t = 0;
  };
  reset();

  for (int step = 0; step < cfg.steps; ++step) {
    const double eps = epsilon_at(cfg, step);
    const int a = act_rng.bernoulli(eps) ? act_rng.below(gridworld::kNumActions) : greedy(qnet, f);
    const auto s_next = gridworld::step(env.grid, s, a);
    const Tensorf f_next = features(gridworld::render(env.grid, s_next, noise.next_u64()));
    ++t;
    const bool terminal = s_next == env.episode.goal;
    replay.push({f.row(0), a, static_cast<float>(env.episode.step_reward), f_next.row(0), terminal});
    if (terminal || t >= env.episode.max_steps) {
      reset();
    } else {
      s = s_next;
      f = f_next;
    }

    if (step >= cfg.learning_starts && replay.size() >= cfg.batch) {
      Graph<float> g;
      auto loss = q_update(g, qnet, target, replay.sample(cfg.batch, replay_rng), cfg.gamma);
      if (!std::isfinite(loss.value()(0, 0))) throw NumericError("train_dqn: non-finite TD loss at step " + std::to_string(step));
      opt.step(g.backward(loss));
    }
    if ((step + 1) % cfg.target_sync == 0) copy_values(qnet, target);
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      const auto returns = evaluate(qnet, features, env, cfg);
      int wins = 0;
      for (double r : returns) wins += r > -env.episode.max_steps ? 1 : 0;
      result.curve.push_back({step + 1, stats::mean(returns), static_cast<double>(wins) / returns.size(), eps});
      if (step + 1 == cfg.steps) result.final_returns = returns;
    }
  }

  result.random_baseline = stats::mean(evaluate_policy(gridworld::random_policy(), env, cfg));
  std::vector<double> late;
  for (const auto& p : result.curve) {
    if (p.step >= 0.8 * cfg.steps) late.push_back(p.mean_return);
  }
  result.diverged = !late.empty() && stats::mean(late) < result.random_baseline;
  return result;
}

void save_policy(const std::filesystem::path& path, const Mlpf& qnet) {
  Archive ar("policy", kPolicyFormatVersion);
  write_mlp(ar, "q", qnet);
  ar.save(path);
}

Mlpf load_policy(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path, "policy");
  if (ar.version() != kPolicyFormatVersion) throw std::runtime_error("policy: unsupported version");
  return read_mlp(ar, "q");
}

TradeoffProfile TradeoffProfile::ci() {
  TradeoffProfile p;
  p.name = "ci";
  p.env.grid.size = 6;
  p.env.episode.max_steps = 100;
  p.budgets = {1000, 3000, 10000};
  p.codebook_sizes = {18, 36, 180, 0};
  p.seeds = {0, 1, 2};
  p.stage1.latent_dim = 4;
  p.stage2.steps = 10000;
  return p;
}

TradeoffProfile TradeoffProfile::full() {
  TradeoffProfile p;
  p.name = "full";
  p.env.grid.size = 10;
  p.env.episode.max_steps = 200;
  p.budgets = {3000, 10000, 30000};
  p.codebook_sizes = {50, 100, 500, 0};
  p.seeds = {0, 1, 2, 3, 4};
  p.stage1.latent_dim = 4;
  p.stage2.steps = 20000;
  return p;
}

gridworld::GridState goal_for_seed(const gridworld::GridConfig& grid, std::uint64_t seed) {
  Rng goal_rng = Rng(seed).fork(7);
  return gridworld::cell_state(grid, goal_rng.below(grid.cells()));
}

CellOutput run_cell(const EnvConfig& env_base, abstraction::AbstractionConfig stage1, const DqnConfig& stage2, int budget,
                    int M, std::uint64_t seed, const abstraction::EpochCallback& on_epoch) {
  const auto data = gridworld::collect_random_walk(env_base.grid, Rng::mix(seed * 1000003ULL + static_cast<std::uint64_t>(budget)), budget);
  EnvConfig env = env_base;
  env.episode.goal = goal_for_seed(env.grid, seed);
  stage1.codebook_size = M;
  stage1.seed = seed;
  CellOutput out{{}, abstraction::train_abstraction(data, stage1, on_epoch), {}, env.episode.goal};
  const auto& model = out.stage1.model;
  out.row.budget = budget;
  out.row.M = M;
  out.row.seed = seed;
  if (M > 0) out.row.purity = abstraction::purity(model, data.x, data.s, env.grid).value();
  out.stage2 = train_dqn(abstraction_features(model), model.latent_dim(), env, stage2, seed);
  out.row.final_return = out.stage2.final_return();
  out.row.auc = out.stage2.auc();
  out.row.diverged = out.stage2.diverged;
  out.row.final_returns = out.stage2.final_returns;
  return out;
}

TradeoffRow run_tradeoff_cell(const TradeoffProfile& p, int budget, int M, std::uint64_t seed) {
  return run_cell(p.env, p.stage1, p.stage2, budget, M, seed).row;
}

std::vector<TradeoffRow> sweep_tradeoff(const TradeoffProfile& p, const RowCallback& on_row) {
  std::vector<TradeoffRow> rows;
  for (int budget : p.budgets) {
    for (int M : p.codebook_sizes) {
      for (auto seed : p.seeds) {
        rows.push_back(run_tradeoff_cell(p, budget, M, seed));
        if (on_row) on_row(rows.back());
      }
    }
  }
  return rows;
}

void write_tradeoff_csv(const std::filesystem::path& path, const std::vector<TradeoffRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("tradeoff csv: cannot write " + path.string());
  out << "budget,M,seed,final_return,auc,purity,diverged\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%llu,%.6f,%.6f,%.6f,%d\n", r.budget, r.M,
                  static_cast<unsigned long long>(r.seed), r.final_return, r.auc, r.purity, r.diverged ? 1 : 0);
    out << buf;
  }
}

TradeoffVerdict judge_tradeoff(const TradeoffProfile& p, const std::vector<TradeoffRow>& rows, double tolerance) {
  TradeoffVerdict v;
  auto cell_mean = [&](int budget, int M) {
    std::vector<double> xs;
    for (const auto& r : rows) {
      if (r.budget == budget && r.M == M) xs.push_back(r.final_return);
    }
    return xs.empty() ? std::numeric_limits<double>::quiet_NaN() : stats::mean(xs);
  };
  std::vector<int> budgets = p.budgets;
  std::sort(budgets.begin(), budgets.end());
  std::vector<int> discrete;
  for (int M : p.codebook_sizes) {
    if (M > 0) discrete.push_back(M);
  }
  std::sort(discrete.begin(), discrete.end());
  if (budgets.empty() || discrete.empty()) return v;
  char buf[200];

  const int small = budgets.front();
  double best = -std::numeric_limits<double>::infinity();
  for (int M : discrete) {
    const double m = cell_mean(small, M);
    if (m > best) {
      best = m;
      v.best_small_M = M;
    }
  }
  const double cont_small = cell_mean(small, 0);
  int wins = 0, n = 0;
  for (const auto& d : rows) {
    if (d.budget != small || d.M != v.best_small_M) continue;
    for (const auto& c : rows) {
      if (c.budget != small || c.M != 0 || c.seed != d.seed) continue;
      for (std::size_t e = 0; e < std::min(d.final_returns.size(), c.final_returns.size()); ++e) {
        if (d.final_returns[e] == c.final_returns[e]) continue;
        ++n;
        wins += d.final_returns[e] > c.final_returns[e] ? 1 : 0;
      }
    }
  }
  v.small_budget_p = n > 0 ? stats::sign_test_one_sided(wins, n) : 1.0;
  v.small_budget_discrete_wins = best > cont_small && v.small_budget_p < 0.1;
  std::snprintf(buf, sizeof buf, "budget %d: best discrete M=%d mean %.3f vs continuous %.3f, sign test %d/%d p=%.4g", small,
                v.best_small_M, best, cont_small, wins, n, v.small_budget_p);
  v.notes.emplace_back(buf);

  const int large = budgets.back();
  double best_large = -std::numeric_limits<double>::infinity();
  for (int M : discrete) best_large = std::max(best_large, cell_mean(large, M));
  const double cont_large = cell_mean(large, 0);
  v.large_budget_continuous_close = cont_large >= best_large - tolerance;
  std::snprintf(buf, sizeof buf, "budget %d: continuous %.3f vs best discrete %.3f", large, cont_large, best_large);
  v.notes.emplace_back(buf);

  const int middle = budgets[budgets.size() / 2];
  v.middle_budget_monotone = true;
  std::string line = "budget " + std::to_string(middle) + ":";
  for (std::size_t i = 0; i < discrete.size(); ++i) {
    const double m = cell_mean(middle, discrete[i]);
    std::snprintf(buf, sizeof buf, " M=%d %.3f", discrete[i], m);
    line += buf;
    if (i > 0 && m < cell_mean(middle, discrete[i - 1]) - tolerance) v.middle_budget_monotone = false;
  }
  v.notes.push_back(line);
  return v;
}

}  // namespace tdrl::dqn
