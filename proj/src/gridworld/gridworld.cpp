#include "tdrl/gridworld/gridworld.hpp"

#include "tdrl/core/archive.hpp"

#include <cmath>
#include <deque>
#include <numbers>

namespace tdrl::gridworld {

void GridConfig::validate() const {
  if (size < 2) throw ContractError("grid: size must be >= 2");
  if (cell_px < 1) throw ContractError("grid: cell_px must be >= 1");
  if (!(noise_sd >= 0.0)) throw ContractError("grid: noise_sd must be >= 0");
}

GridState step(const GridConfig& cfg, GridState s, int action) {
  switch (action) {
    case Up: s.row = std::max(0, s.row - 1); break;
    case Down: s.row = std::min(cfg.size - 1, s.row + 1); break;
    case Left: s.col = std::max(0, s.col - 1); break;
    case Right: s.col = std::min(cfg.size - 1, s.col + 1); break;
    default: throw ContractError("grid: invalid action " + std::to_string(action));
  }
  return s;
}

Tensorf render(const GridConfig& cfg, GridState s, std::uint64_t noise_seed) {
  if (s.row < 0 || s.row >= cfg.size || s.col < 0 || s.col >= cfg.size) throw ContractError("render: state out of bounds");
  const int side = cfg.side();
  Tensorf img = Tensorf::Zero(1, side * side);
  for (int r = 0; r < cfg.cell_px; ++r) {
    for (int c = 0; c < cfg.cell_px; ++c) {
      img(0, (s.row * cfg.cell_px + r) * side + s.col * cfg.cell_px + c) = 1.0f;
    }
  }
  if (cfg.noise_sd > 0.0) {
    Rng rng(noise_seed);
    for (Eigen::Index i = 0; i < img.size(); ++i) {
      const double v = img(0, i) + rng.normal(0.0, cfg.noise_sd);
      img(0, i) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

GridState brightest_cell(const GridConfig& cfg, const Eigen::Ref<const Eigen::RowVectorXf>& pixels) {
  const int side = cfg.side();
  if (pixels.size() != side * side) throw DimensionError("brightest_cell: image size mismatch");
  int best = 0;
  double best_sum = -1.0;
  for (int cell = 0; cell < cfg.cells(); ++cell) {
    const GridState s = cell_state(cfg, cell);
    double sum = 0.0;
    for (int r = 0; r < cfg.cell_px; ++r)
      for (int c = 0; c < cfg.cell_px; ++c) sum += pixels((s.row * cfg.cell_px + r) * side + s.col * cfg.cell_px + c);
    if (sum > best_sum) {
      best_sum = sum;
      best = cell;
    }
  }
  return cell_state(cfg, best);
}

double clamped_noise_mean(double sd) {
  if (sd <= 0.0) return 0.0;
  const double t = 1.0 / sd;
  const double pdf0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const double pdf_t = pdf0 * std::exp(-0.5 * t * t);
  const double upper_tail = 0.5 * std::erfc(t / std::sqrt(2.0));
  return sd * (pdf0 - pdf_t) + upper_tail;
}

TransitionBatch collect_random_walk(const GridConfig& cfg, std::uint64_t seed, int n_steps, double reset_prob) {
  cfg.validate();
  if (n_steps < 1) throw ContractError("collect_random_walk: n_steps must be >= 1");
  if (!(reset_prob >= 0.0 && reset_prob <= 1.0)) throw ContractError("collect_random_walk: reset_prob outside [0, 1]");
  Rng rng(seed);
  Rng walk = rng.fork(1);
  Rng noise = rng.fork(2);
  TransitionBatch b;
  b.grid = cfg;
  b.seed = seed;
  b.reset_prob = reset_prob;
  b.x.resize(n_steps, cfg.pixels());
  b.x_next.resize(n_steps, cfg.pixels());
  b.a.resize(static_cast<std::size_t>(n_steps));
  b.done.resize(static_cast<std::size_t>(n_steps));
  b.s.resize(static_cast<std::size_t>(n_steps));
  b.s_next.resize(static_cast<std::size_t>(n_steps));

  GridState s = cell_state(cfg, walk.below(cfg.cells()));
  Tensorf obs = render(cfg, s, noise.next_u64());
  for (int t = 0; t < n_steps; ++t) {
    const int a = walk.below(kNumActions);
    const GridState next = step(cfg, s, a);
    const Tensorf next_obs = render(cfg, next, noise.next_u64());
    const bool reset = walk.bernoulli(reset_prob);
    b.x.row(t) = obs;
    b.x_next.row(t) = next_obs;
    b.a[static_cast<std::size_t>(t)] = a;
    b.done[static_cast<std::size_t>(t)] = reset ? 1 : 0;
    b.s[static_cast<std::size_t>(t)] = s;
    b.s_next[static_cast<std::size_t>(t)] = next;
    if (reset) {
      s = cell_state(cfg, walk.below(cfg.cells()));
      obs = render(cfg, s, noise.next_u64());
    } else {
      s = next;
      obs = next_obs;
    }
  }
  return b;
}

void save_dataset(const std::filesystem::path& path, const TransitionBatch& b) {
  Archive ar("transitions", kDatasetFormatVersion);
  ar.set("grid", std::to_string(b.grid.size));
  ar.set("cell_px", std::to_string(b.grid.cell_px));
  char sd[64];
  std::snprintf(sd, sizeof sd, "%.17g", b.grid.noise_sd);
  ar.set("sigma", sd);
  std::snprintf(sd, sizeof sd, "%.17g", b.reset_prob);
  ar.set("reset_prob", sd);
  ar.set("count", std::to_string(b.size()));
  ar.set("seed", std::to_string(b.seed));
  ar.add_f32("x", b.x);
  ar.add_i32("a", b.a);
  ar.add_f32("x_next", b.x_next);
  ar.add_u8("done", b.done);
  std::vector<std::int32_t> s, sn;
  for (int t = 0; t < b.size(); ++t) {
    s.push_back(cell_index(b.grid, b.s[static_cast<std::size_t>(t)]));
    sn.push_back(cell_index(b.grid, b.s_next[static_cast<std::size_t>(t)]));
  }
  ar.add_i32("eval.state", s);
  ar.add_i32("eval.next_state", sn);
  ar.save(path);
}

TransitionBatch load_dataset(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path, "transitions");
  if (ar.version() != kDatasetFormatVersion) throw std::runtime_error("dataset: unsupported version");
  TransitionBatch b;
  b.grid.size = std::stoi(ar.get("grid"));
  b.grid.cell_px = std::stoi(ar.get("cell_px"));
  b.grid.noise_sd = std::stod(ar.get("sigma"));
  b.reset_prob = std::stod(ar.get("reset_prob"));
  b.seed = std::stoull(ar.get("seed"));
  b.x = ar.f32("x");
  b.x_next = ar.f32("x_next");
  b.a = ar.i32("a");
  b.done = ar.u8("done");
  const auto s = ar.i32("eval.state");
  const auto sn = ar.i32("eval.next_state");
  const auto n = static_cast<std::size_t>(std::stoll(ar.get("count")));
  if (b.a.size() != n || b.done.size() != n || s.size() != n || sn.size() != n ||
      b.x.rows() != static_cast<Eigen::Index>(n) || b.x.cols() != b.grid.pixels()) {
    throw std::runtime_error("dataset: buffer sizes disagree with header");
  }
  for (std::size_t t = 0; t < n; ++t) {
    b.s.push_back(cell_state(b.grid, s[t]));
    b.s_next.push_back(cell_state(b.grid, sn[t]));
  }
  return b;
}

GridState episode_start(const GridConfig& grid, const EpisodeConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng(seed).fork(1);
  const int goal = cell_index(grid, cfg.goal);
  int idx = rng.below(grid.cells() - 1);
  if (idx >= goal) ++idx;
  return cell_state(grid, idx);
}

EpisodeResult run_episode(const Policy& policy, const GridConfig& grid, const EpisodeConfig& cfg, std::uint64_t seed) {
  grid.validate();
  if (cfg.max_steps < 1) throw ContractError("run_episode: max_steps must be >= 1");
  Rng rng(seed);
  Rng noise = rng.fork(2);
  Rng act = rng.fork(3);
  GridState s = episode_start(grid, cfg, seed);
  EpisodeResult r;
  while (r.steps < cfg.max_steps) {
    const int a = policy(render(grid, s, noise.next_u64()), act);
    s = step(grid, s, a);
    ++r.steps;
    r.ret += cfg.step_reward;
    if (s == cfg.goal) {
      r.success = true;
      break;
    }
  }
  return r;
}

int bfs_distance(const GridConfig& grid, GridState from, GridState to) {
  std::vector<int> dist(static_cast<std::size_t>(grid.cells()), -1);
  std::deque<GridState> queue{from};
  dist[static_cast<std::size_t>(cell_index(grid, from))] = 0;
  while (!queue.empty()) {
    const GridState s = queue.front();
    queue.pop_front();
    if (s == to) return dist[static_cast<std::size_t>(cell_index(grid, s))];
    for (int a = 0; a < kNumActions; ++a) {
      const GridState n = step(grid, s, a);
      auto& d = dist[static_cast<std::size_t>(cell_index(grid, n))];
      if (d < 0) {
        d = dist[static_cast<std::size_t>(cell_index(grid, s))] + 1;
        queue.push_back(n);
      }
    }
  }
  return -1;
}

Policy random_policy() {
  return [](const Tensorf&, Rng& rng) { return rng.below(kNumActions); };
}

Policy greedy_oracle_policy(const GridConfig& grid, GridState goal) {
  return [grid, goal](const Tensorf& obs, Rng&) {
    const GridState s = brightest_cell(grid, obs.row(0));
    if (s.row > goal.row) return static_cast<int>(Up);
    if (s.row < goal.row) return static_cast<int>(Down);
    if (s.col > goal.col) return static_cast<int>(Left);
    return static_cast<int>(Right);
  };
}

}  // namespace tdrl::gridworld
