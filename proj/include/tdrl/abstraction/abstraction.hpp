#pragma once

#include "tdrl/codebook/codebook.hpp"
#include "tdrl/core/mlp.hpp"
#include "tdrl/gridworld/gridworld.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tdrl::abstraction {

struct LossWeights {
  double alpha = 1.0;   // inverse
  double beta = 1.0;    // ratio
  double eta = 0.0;     // smoothness; kept for the config surface, must stay 0
  double lambda = 100.0;
  void validate() const;
};

struct AbstractionConfig {
  int latent_dim = 2;
  int encoder_hidden = 32;
  int head_hidden = 64;
  Activation latent_activation = Activation::Identity;
  int codebook_size = 100;  // 0 = continuous baseline
  LossWeights weights;
  codebook::Solver solver = codebook::Solver::Sinkhorn;
  codebook::InitStrategy init = codebook::InitStrategy::KMeans;
  double epsilon_factor = 0.01;  // Sinkhorn epsilon relative to the mean batch cost
  double lr = 3e-3;
  bool lr_decay = true;  // linear decay to zero over the run
  int batch = 128;
  int steps = 0;  // 0 = 200 per thousand samples
  double warmup_fraction = 0.8;  // leading share of steps trained continuous before the codebook is seeded
  int dead_patience = 200;
  std::uint64_t seed = 0;

  bool discrete() const { return codebook_size > 0; }
  int resolved_steps(int samples) const;
  void validate() const;
};

/// phi = Q_C o f_e with inverse-dynamics and transition-ratio heads.
struct AbstractionModel {
  Mlpf encoder;       // pixels -> 32 (tanh) -> latent
  Mlpf inverse_head;  // [z, z'] -> 64 (relu) -> 4 logits
  Mlpf ratio_head;    // [z, z~] -> 64 (relu) -> 1 logit
  std::optional<codebook::Codebookf> codebook;

  int latent_dim() const { return encoder.out_dim(); }
  int input_dim() const { return encoder.in_dim(); }
  ParameterList<float> parameters();
};

AbstractionModel make_model(int input_dim, const AbstractionConfig& cfg, Rng& rng);

/// Continuous encoder output f_e(x).
Tensorf encode(const AbstractionModel& model, const Tensorf& x);
/// phi(x): the quantized latent when a codebook is present, else f_e(x).
Tensorf abstract_state(const AbstractionModel& model, const Tensorf& x);
/// Codeword index per row; requires a codebook.
std::vector<int> codeword_indices(const AbstractionModel& model, const Tensorf& x);

/// Encoder output and its straight-through quantization (the same node when
/// continuous).
struct LatentNodes {
  Var<float> z;
  Var<float> phi;
};
LatentNodes latent_nodes(const AbstractionModel& model, Var<float> x, bool quantized = true);

/// Mean cross-entropy of the inverse head predicting a from (phi, phi_next).
Var<float> inverse_loss(const AbstractionModel& model, Var<float> phi, Var<float> phi_next, std::span<const int> actions);

/// Derangement of 0..n-1 (no fixed points), uniform over cyclic permutations.
std::vector<int> negative_permutation(int n, Rng& rng);

/// Mean binary cross-entropy over B positive pairs (phi, phi_next) and B
/// negatives (phi, phi_next[perm]).
Var<float> ratio_loss(const AbstractionModel& model, Var<float> phi, Var<float> phi_next, std::span<const int> perm);

struct LossTerms {
  Var<float> total;
  double inv = 0.0;
  double ratio = 0.0;
  double quantize = 0.0;  // unweighted distance
};

/// Full objective on one batch: alpha L_inv + beta L_ratio + lambda L_quantize.
LossTerms abstraction_loss(const AbstractionModel& model, Graph<float>& g, const Tensorf& x, const Tensorf& x_next,
                           std::span<const int> actions, const AbstractionConfig& cfg, Rng& rng,
                           bool quantized = true);

struct EpochMetrics {
  int epoch = 0;
  int step = 0;
  double inv = 0.0;
  double ratio = 0.0;
  double quantize = 0.0;
  double total = 0.0;
  double max_additivity_error = 0.0;
  std::vector<int> occupancy;  // codeword use counts over the epoch; empty when continuous
  int reseeds = 0;
};

struct TrainResult {
  AbstractionModel model;
  std::vector<EpochMetrics> epochs;
  int steps = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Adam on the weighted objective over shuffled minibatches. A non-finite
/// loss aborts with a NumericError naming the last good epoch.
TrainResult train_abstraction(const gridworld::TransitionBatch& data, const AbstractionConfig& cfg,
                              const EpochCallback& on_epoch = {});

/// Agreement between codewords and hidden cells on a labelled sample.
/// by_cell: share of each cell's samples on that cell's majority codeword,
/// averaged over cells (noise splitting lowers it). by_codeword: share of
/// samples whose codeword's majority cell is their own cell (merged cells
/// lower it). value() is the smaller of the two.
struct Purity {
  double by_cell = 0.0;
  double by_codeword = 0.0;
  double value() const { return std::min(by_cell, by_codeword); }
};

Purity purity(const std::vector<int>& codewords, const std::vector<gridworld::GridState>& states,
              const gridworld::GridConfig& grid);
Purity purity(const AbstractionModel& model, const Tensorf& x, const std::vector<gridworld::GridState>& states,
              const gridworld::GridConfig& grid);

struct LatentRow {
  gridworld::GridState cell;
  Eigen::RowVectorXf z;  // noiseless render
  int codeword = -1;     // noiseless render; -1 when continuous
  bool stable = true;    // every noisy render lands on one codeword
};

/// Per-cell latent table: noiseless render plus `noise_seeds` noisy renders.
std::vector<LatentRow> latent_map(const AbstractionModel& model, const gridworld::GridConfig& grid, int noise_seeds = 10,
                                  std::uint64_t seed = 0);
double stability(const std::vector<LatentRow>& rows);
int distinct_codewords(const std::vector<LatentRow>& rows);
void write_latent_csv(const std::filesystem::path& path, const std::vector<LatentRow>& rows);

inline constexpr int kAbstractionFormatVersion = 1;
void save_model(const std::filesystem::path& path, const AbstractionModel& model);
AbstractionModel load_model(const std::filesystem::path& path);

}  // namespace tdrl::abstraction
