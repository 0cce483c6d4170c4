#pragma once

#include "tdrl/codebook/codebook.hpp"
#include "tdrl/core/mlp.hpp"
#include "tdrl/theory/task.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tdrl::theory {

/// Encoder, codebook and decoder of a trained discrete representation.
struct Solution {
  Mlpf encoder;
  codebook::Codebookf codebook;
  Mlpf decoder;
  std::string provenance;
};

struct DecompositionReport {
  double L = 0.0;
  double L_C = 0.0;
  double L_A = 0.0;
  Vectord per_sample_L;
  Vectord per_sample_C;
  Vectord per_sample_A;
  std::vector<int> latent_index;  // nearest codeword to f_e(x) in latent space
  std::vector<int> output_index;  // codeword whose decoding is nearest the label
  std::vector<int> mismatches;    // samples where the two disagree
};

/// Per sample: l = loss(y, f_d(Q_C(f_e(x)))), l_C = min_m loss(y, f_d(c_m)),
/// l_A = l - l_C. Output ties prefer the latent choice, so a sample is a
/// mismatch exactly when l_A > 0. Means are reported with L = L_C + L_A.
DecompositionReport decompose_loss(const Solution& sol, const Tensord& x, const Tensord& y, LossKind loss);

struct SolutionConfig {
  int M = 4;
  int latent_dim = 1;
  int encoder_hidden = 0;  // 0: linear encoder
  double lambda = 1.0;
  int steps = 1500;
  int batch = 64;
  double lr = 1e-2;
};

/// Minimizes loss(y, f_d(ST(Q_C(f_e(x))))) + lambda * W(f_e # P^N, P_{c,pi}) with
/// Adam on minibatches of the training sample. Metric losses train on their
/// squared form; cross entropy trains directly.
Solution train_solution(const SyntheticTask& task, const Sample& train, const SolutionConfig& cfg,
                        std::uint64_t seed);

struct SampleComplexityConfig {
  SolutionConfig solution;
  std::vector<int> ns{64, 256, 1024, 4096};
  int seeds = 10;
  int eval_multiplier = 100;  // held-out size = multiplier x max N
  double slope_lo = -0.8;
  double slope_hi = -0.2;
  double p_threshold = 0.05;
  int permutations = 20000;
  std::uint64_t base_seed = 0;
};

struct SampleComplexityRow {
  int seed = 0;
  int M = 0;
  int N = 0;
  double eps_star = 0.0;
  double L = 0.0;
  double L_C = 0.0;
  double L_A = 0.0;
  double L_A_population = 0.0;
  double gap = 0.0;
};

struct SampleComplexityReport {
  std::vector<SampleComplexityRow> rows;
  std::vector<int> ns;
  std::vector<double> mean_gap;  // per N, averaged over seeds
  double slope = 0.0;
  double spearman = 0.0;
  double p_value = 1.0;
  int held_out_size = 0;
  bool slope_ok = false;
  bool correlation_ok = false;
  bool pass() const { return slope_ok && correlation_ok; }
};

/// Trains one solution per (seed, N), measures |L_A(P^N) - L_A(P_hat)| with
/// P_hat a held-out sample, and fits the log-log slope of the seed mean.
SampleComplexityReport sample_complexity_experiment(const SyntheticTask& task, const SampleComplexityConfig& cfg);

struct KClassReport {
  int samples = 0;
  int agreements = 0;
  double rate() const { return samples ? static_cast<double>(agreements) / samples : 1.0; }
};

/// Compares argmax_k z . w_k with nearest-codeword quantization of z under the
/// negative inner product over the codebook whose rows are the w_k.
/// `weights` is the classifier matrix [d, K] (logits = z * weights).
KClassReport kclass_equivalence(const Tensorf& features, const Tensorf& weights);

struct Classifier {
  Mlpf encoder;
  Parameter<float> weights;  // [d, K], no bias
};

/// Encoder plus bias-free linear head trained with softmax cross-entropy.
Classifier train_classifier(const Sample& train, int classes, int latent_dim, int steps, std::uint64_t seed);

/// Rows (seed, M, N, eps_star, L, L_C, L_A, gap).
void write_sample_complexity_csv(const std::filesystem::path& path, const std::vector<SampleComplexityRow>& rows);

}  // namespace tdrl::theory
