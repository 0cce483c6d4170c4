#pragma once

#include "tdrl/core/rng.hpp"
#include "tdrl/core/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace tdrl::gridworld {

struct GridState {
  int row = 0;
  int col = 0;
  bool operator==(const GridState&) const = default;
};

enum Action : int { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr int kNumActions = 4;

/// Grid of size x size cells rendered as (3 size) x (3 size) pixels.
struct GridConfig {
  int size = 10;
  double noise_sd = 0.1;
  int cell_px = 3;

  int side() const { return size * cell_px; }
  int pixels() const { return side() * side(); }
  int cells() const { return size * size; }
  void validate() const;
};

inline int cell_index(const GridConfig& cfg, GridState s) { return s.row * cfg.size + s.col; }
inline GridState cell_state(const GridConfig& cfg, int index) { return {index / cfg.size, index % cfg.size}; }

/// One move; moving into a wall leaves the state unchanged.
GridState step(const GridConfig& cfg, GridState s, int action);

/// Flattened image [1, side^2]: agent block 1.0, background 0.0, plus additive
/// Gaussian noise clamped to [0, 1]. Identical (state, noise_seed) give
/// identical images.
Tensorf render(const GridConfig& cfg, GridState s, std::uint64_t noise_seed);

/// Grid cell whose 3x3 block has the largest pixel sum (lowest index on ties).
GridState brightest_cell(const GridConfig& cfg, const Eigen::Ref<const Eigen::RowVectorXf>& pixels);

/// E[clamp(X, 0, 1)] for X ~ N(0, sd^2): the expected background pixel.
double clamped_noise_mean(double sd);

/// Offline transitions. Hidden states are kept for evaluation only and never
/// enter training.
struct TransitionBatch {
  GridConfig grid;
  std::uint64_t seed = 0;
  double reset_prob = 0.0;
  Tensorf x;       // [N, P]
  std::vector<int> a;
  Tensorf x_next;  // [N, P]
  std::vector<std::uint8_t> done;
  std::vector<GridState> s;
  std::vector<GridState> s_next;

  int size() const { return static_cast<int>(a.size()); }
};

/// Uniform-random actions from a uniform start; after each transition, with
/// probability reset_prob the episode ends (done = 1) and the walk teleports
/// to a uniform random cell. Within an episode x[t+1] is x_next[t].
inline constexpr double kDefaultResetProb = 0.05;
TransitionBatch collect_random_walk(const GridConfig& cfg, std::uint64_t seed, int n_steps,
                                    double reset_prob = kDefaultResetProb);

inline constexpr int kDatasetFormatVersion = 1;
void save_dataset(const std::filesystem::path& path, const TransitionBatch& batch);
TransitionBatch load_dataset(const std::filesystem::path& path);

struct EpisodeConfig {
  GridState goal{0, 0};
  int max_steps = 200;
  double step_reward = -1.0;
};

struct EpisodeResult {
  double ret = 0.0;
  int steps = 0;
  bool success = false;
};

using Policy = std::function<int(const Tensorf& observation, Rng& rng)>;

/// Uniform random non-goal start, -1 per step, ends at the goal or after
/// max_steps. The seed fixes the start cell and every render's noise.
EpisodeResult run_episode(const Policy& policy, const GridConfig& grid, const EpisodeConfig& cfg, std::uint64_t seed);

/// Start cell run_episode uses for this seed.
GridState episode_start(const GridConfig& grid, const EpisodeConfig& cfg, std::uint64_t seed);

/// Shortest number of moves between two cells (breadth-first search over step()).
int bfs_distance(const GridConfig& grid, GridState from, GridState to);

Policy random_policy();
/// Reads the agent cell off the image and moves greedily toward the goal.
Policy greedy_oracle_policy(const GridConfig& grid, GridState goal);

}  // namespace tdrl::gridworld
