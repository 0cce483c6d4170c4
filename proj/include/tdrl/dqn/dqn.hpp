#pragma once

#include "tdrl/abstraction/abstraction.hpp"
#include "tdrl/core/mlp.hpp"
#include "tdrl/gridworld/gridworld.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace tdrl::dqn {

struct Transition {
  Eigen::RowVectorXf z;
  int a = 0;
  float r = 0.0f;
  Eigen::RowVectorXf z_next;
  bool done = false;
};

struct Batch {
  Tensorf z;       // [B, d]
  std::vector<int> a;
  std::vector<float> r;
  Tensorf z_next;  // [B, d]
  std::vector<float> done;
  std::vector<int> slots;  // buffer positions drawn
};

/// Fixed-capacity circular store; the oldest transition is overwritten.
class ReplayBuffer {
public:
  ReplayBuffer(int capacity, int dim);

  void push(const Transition& t);
  /// `batch` distinct slots drawn uniformly.
  Batch sample(int batch, Rng& rng) const;

  int size() const { return size_; }
  int capacity() const { return capacity_; }
  int dim() const { return dim_; }

private:
  int capacity_;
  int dim_;
  int size_ = 0;
  int next_ = 0;
  Tensorf z_, z_next_;
  std::vector<int> a_;
  std::vector<float> r_, done_;
};

struct DqnConfig {
  double gamma = 0.99;
  double eps_start = 1.0;
  double eps_end = 0.05;
  int eps_decay_steps = 5000;
  int target_sync = 500;
  int capacity = 10000;
  int batch = 64;
  double lr = 1e-3;
  int hidden = 64;
  int steps = 20000;
  int learning_starts = 500;
  int eval_every = 500;
  int eval_episodes = 20;
  std::uint64_t eval_seed = 0x5eed;  // shared by every run so start cells line up
  void validate() const;
};

/// Linear from eps_start to eps_end over eps_decay_steps, then flat.
double epsilon_at(const DqnConfig& cfg, int step);

/// mean (Q(z,a) - (r + gamma max_a' Q_target(z',a') (1 - done)))^2
Var<float> q_update(Graph<float>& g, const Mlpf& qnet, const Mlpf& target, const Batch& batch, double gamma);

/// Maps a pixel observation [1, P] to the Q-network input row.
using Featurizer = std::function<Tensorf(const Tensorf& observation)>;

/// phi(x): codeword vector for discrete models, encoder output otherwise.
Featurizer abstraction_features(const abstraction::AbstractionModel& model);
/// One-hot (row, col) of the brightest block; a reference abstraction.
Featurizer oracle_features(const gridworld::GridConfig& grid);

struct EvalPoint {
  int step = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  double epsilon = 0.0;
};

struct DqnResult {
  Mlpf qnet;
  std::vector<EvalPoint> curve;
  std::vector<double> final_returns;  // per evaluation episode, in episode order
  double random_baseline = 0.0;       // random policy on the same evaluation episodes
  bool diverged = false;
  double auc() const;
  double final_return() const;
};

struct EnvConfig {
  gridworld::GridConfig grid;
  gridworld::EpisodeConfig episode;
};

/// Greedy-policy returns on cfg.eval_episodes episodes seeded from eval_seed.
/// Seed of evaluation episode `episode`; identical for every run with the same cfg.eval_seed.
std::uint64_t eval_episode_seed(const DqnConfig& cfg, int episode);
std::vector<double> evaluate_policy(const gridworld::Policy& policy, const EnvConfig& env, const DqnConfig& cfg);
std::vector<double> evaluate(const Mlpf& qnet, const Featurizer& features, const EnvConfig& env, const DqnConfig& cfg);

/// DQN with uniform replay and a periodically synced target network. The
/// featurizer is treated as frozen.
DqnResult train_dqn(const Featurizer& features, int feature_dim, const EnvConfig& env, const DqnConfig& cfg,
                    std::uint64_t seed);

inline constexpr int kPolicyFormatVersion = 1;
void save_policy(const std::filesystem::path& path, const Mlpf& qnet);
Mlpf load_policy(const std::filesystem::path& path);

/// One cell of the sample-budget x codebook-size grid (M = 0 is continuous).
struct TradeoffRow {
  int budget = 0;
  int M = 0;
  std::uint64_t seed = 0;
  double final_return = 0.0;
  double auc = 0.0;
  double purity = 0.0;
  bool diverged = false;
  std::vector<double> final_returns;
};

struct TradeoffProfile {
  std::string name;
  EnvConfig env;
  std::vector<int> budgets;
  std::vector<int> codebook_sizes;
  std::vector<std::uint64_t> seeds;
  abstraction::AbstractionConfig stage1;
  DqnConfig stage2;

  /// 6x6 grid, budgets {1k, 3k, 10k}, M in {18, 36, 180, continuous}, 3 seeds.
  static TradeoffProfile ci();
  /// 10x10 grid, budgets {3k, 10k, 30k}, M in {50, 100, 500, continuous}, 5 seeds.
  static TradeoffProfile full();
};

/// Everything one grid cell produces: stage-1 model and epochs, stage-2 run.
struct CellOutput {
  TradeoffRow row;
  abstraction::TrainResult stage1;
  DqnResult stage2;
  gridworld::GridState goal;
};

/// Collects `budget` random-walk transitions, trains the abstraction with
/// codebook size M and runs DQN on it. Data and goal depend only on (budget,
/// seed), so every M sees the same inputs.
CellOutput run_cell(const EnvConfig& env, abstraction::AbstractionConfig stage1, const DqnConfig& stage2, int budget, int M,
                    std::uint64_t seed, const abstraction::EpochCallback& on_epoch = {});
gridworld::GridState goal_for_seed(const gridworld::GridConfig& grid, std::uint64_t seed);

TradeoffRow run_tradeoff_cell(const TradeoffProfile& p, int budget, int M, std::uint64_t seed);

using RowCallback = std::function<void(const TradeoffRow&)>;
std::vector<TradeoffRow> sweep_tradeoff(const TradeoffProfile& p, const RowCallback& on_row = {});

void write_tradeoff_csv(const std::filesystem::path& path, const std::vector<TradeoffRow>& rows);

struct TradeoffVerdict {
  bool small_budget_discrete_wins = false;
  double small_budget_p = 1.0;
  int best_small_M = 0;
  bool large_budget_continuous_close = false;
  bool middle_budget_monotone = false;
  std::vector<std::string> notes;
  bool pass() const { return small_budget_discrete_wins && large_budget_continuous_close && middle_budget_monotone; }
};

/// Directional checks on a completed sweep: smallest budget, best discrete M
/// beats continuous (one-sided sign test over seed x evaluation-episode pairs,
/// p < 0.1); largest budget, continuous within `tolerance` of the best;
/// middle budget, seed-mean return non-decreasing in M within `tolerance`.
TradeoffVerdict judge_tradeoff(const TradeoffProfile& p, const std::vector<TradeoffRow>& rows, double tolerance = 1.0);

}  // namespace tdrl::dqn
