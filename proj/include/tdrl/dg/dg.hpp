#pragma once

#include "tdrl/codebook/codebook.hpp"
#include "tdrl/core/mlp.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tdrl::dg {

/// K classes x J modes placed alternately on a circle in the first
/// `signal_dims` coordinates, so every class is a union of separated modes.
/// Each (class, mode, domain) gets its own offset in the remaining nuisance
/// coordinates and each (class, domain) its own split between modes.
struct GeneratorConfig {
  int dim = 10;
  int classes = 2;
  int modes = 2;
  int source_domains = 3;
  int per_domain = 2000;
  int signal_dims = 2;
  double radius = 5.0;
  double noise_sd = 0.5;
  double shift_scale = 1.0;
  double mode_weight_spread = 0.8;  // within-class mode weight p ~ U(0.5 - s/2, 0.5 + s/2)
  void validate() const;
};

struct DomainData {
  Tensorf x;               // [n, dim]
  std::vector<int> y;      // class
  std::vector<int> mode;   // mode within class, evaluator only
  std::vector<int> domain;
  int size() const { return static_cast<int>(y.size()); }
};

struct MultiDomainDataset {
  GeneratorConfig cfg;
  std::vector<DomainData> sources;
  DomainData target;
  DomainData pooled_sources() const;
};

/// Sources use domains 0..E-1 and the target domain E.
MultiDomainDataset generate(const GeneratorConfig& cfg, std::uint64_t seed);

enum class Method { Erm, Dann, Cdann, Fdann };
const char* method_name(Method m);
Method parse_method(const std::string& name);

struct DgConfig {
  Method method = Method::Fdann;
  int latent_dim = 16;
  int hidden = 64;
  int disc_hidden = 64;
  int multiplier = 4;  // M = K x multiplier fine codewords
  double lambda = 0.1;
  double beta = 1.0;   // gradient reversal coefficient
  double lr = 1e-3;
  int batch = 32;      // per source domain
  int steps = 2000;
  codebook::Solver solver = codebook::Solver::Sinkhorn;
  double epsilon_factor = 0.05;
  bool tie_fine_to_classifier = false;  // C = W, nearest by inner product
  void validate() const;
};

template <typename Scalar>
struct FdannModel {
  Mlp<Scalar> encoder;
  Parameter<Scalar> classifier;  // W, [latent, K]; logits = z W
  std::optional<codebook::Codebook<Scalar>> fine;
  Mlp<Scalar> discriminator;     // input [z, one-hot condition]
  int classes = 0;
  int domains = 0;
  bool tied = false;

  int latent_dim() const { return static_cast<int>(classifier.value.rows()); }
  int fine_size() const { return tied ? classes : (fine ? fine->size() : 0); }
  ParameterList<Scalar> parameters() {
    auto out = encoder.parameters();
    out.push_back(&classifier);
    if (fine) {
      for (auto* p : fine->parameters()) out.push_back(p);
    }
    for (auto* p : discriminator.parameters()) out.push_back(p);
    return out;
  }
};
using FdannModelf = FdannModel<float>;

/// Width of the one-hot condition fed to the discriminator.
int condition_width(Method method, int classes, int fine_size);

/// Codebook is built uninitialised (Gaussian) unless tied; training seeds it.
template <typename Scalar>
FdannModel<Scalar> make_model(int input_dim, int classes, int domains, const DgConfig& cfg, Rng& rng) {
  cfg.validate();
  FdannModel<Scalar> m;
  m.classes = classes;
  m.domains = domains;
  m.tied = cfg.tie_fine_to_classifier;
  Rng enc_rng = rng.fork(1);
  Rng cls_rng = rng.fork(2);
  Rng disc_rng = rng.fork(3);
  Rng cb_rng = rng.fork(5);
  m.encoder = Mlp<Scalar>("encoder", {input_dim, cfg.hidden, cfg.latent_dim}, {Activation::Relu, Activation::Identity},
                          enc_rng);
  const double a = std::sqrt(6.0 / (cfg.latent_dim + classes));
  Tensor<Scalar> w(cfg.latent_dim, classes);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(cls_rng.uniform(-a, a));
  m.classifier = {"classifier.w", std::move(w), true};
  if (cfg.method == Method::Fdann && !m.tied) {
    m.fine = codebook::init_codebook<Scalar>(cb_rng, classes * cfg.multiplier, cfg.latent_dim,
                                             codebook::InitStrategy::Gaussian, nullptr,
                                             codebook::Metric::SquaredEuclidean, "fine");
  }
  const int cond = condition_width(cfg.method, classes, m.fine_size());
  m.discriminator = Mlp<Scalar>("discriminator", {cfg.latent_dim + cond, cfg.disc_hidden, std::max(domains, 1)},
                                {Activation::Relu, Activation::Identity}, disc_rng);
  return m;
}

/// argmax_k z . w_k, ties to the lowest class.
template <typename Scalar>
std::vector<int> predict_from_latent(const FdannModel<Scalar>& m, const Tensor<Scalar>& z) {
  const Tensor<Scalar> logits = z * m.classifier.value;
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index k = 0;
    logits.row(i).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

/// phi(x): nearest fine codeword; with a tied codebook, nearest class vector by inner product.
template <typename Scalar>
std::vector<int> fine_indices(const FdannModel<Scalar>& m, const Tensor<Scalar>& z) {
  if (m.tied) {
    return codebook::quantize(codebook::make_codebook<Scalar>(m.classifier.value.transpose(),
                                                              codebook::Metric::NegativeInnerProduct),
                              z)
        .indices;
  }
  if (!m.fine) throw ContractError("fine_indices: model has no fine codebook");
  return codebook::quantize(*m.fine, z).indices;
}

template <typename Scalar>
Tensor<Scalar> one_hot(std::span<const int> idx, int width) {
  Tensor<Scalar> out = Tensor<Scalar>::Zero(static_cast<Eigen::Index>(idx.size()), width);
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i), idx[i]) = Scalar(1);
  return out;
}

template <typename Scalar>
struct DgLosses {
  Var<Scalar> classify;  // L_W
  Var<Scalar> codeword;  // L_C
  Var<Scalar> align;     // L_D
  Var<Scalar> total;
  double distance = 0.0;  // unweighted transport term inside L_C
};

/// Loss terms on a batch that may mix source domains; the transport part of
/// L_C is averaged over the domains present.
template <typename Scalar>
DgLosses<Scalar> fdann_loss(Graph<Scalar>& g, const FdannModel<Scalar>& m, const DgConfig& cfg, const Tensor<Scalar>& x,
                            std::span<const int> y, std::span<const int> domain) {
  if (x.rows() != static_cast<Eigen::Index>(y.size()) || y.size() != domain.size()) {
    throw DimensionError("fdann_loss: batch arrays differ in length");
  }
  DgLosses<Scalar> out;
  const Var<Scalar> zero = g.constant(Tensor<Scalar>::Zero(1, 1));
  auto z = m.encoder.forward(g.constant(x));
  auto w = g.param(m.classifier);
  out.classify = cross_entropy(matmul(z, w), y);

  out.codeword = zero;
  if (cfg.method == Method::Fdann) {
    const auto idx = fine_indices(m, z.value());
    Var<Scalar> q = zero;
    if (m.tied) {
      Tensor<Scalar> qv(z.rows(), z.cols());
      for (Eigen::Index i = 0; i < z.rows(); ++i) qv.row(i) = m.classifier.value.col(idx[static_cast<std::size_t>(i)]).transpose();
      q = straight_through(z, std::move(qv));
      out.codeword = cross_entropy(matmul(q, w), y);
    } else {
      auto c = g.param(m.fine->codewords);
      // Value is the codeword; gradient reaches both the codeword and z.
      q = gather_rows(c, std::span<const int>(idx)) + z - g.detach(z);
      out.codeword = cross_entropy(matmul(q, w), y);
      if (cfg.lambda > 0.0) {
        std::vector<std::vector<int>> rows(static_cast<std::size_t>(std::max(m.domains, 1)));
        for (std::size_t i = 0; i < domain.size(); ++i) rows.at(static_cast<std::size_t>(domain[i])).push_back(static_cast<int>(i));
        const codebook::LossOptions lo{cfg.lambda, cfg.solver, ot::CostKind::SquaredEuclidean, cfg.epsilon_factor};
        auto pi = g.param(m.fine->pi_logits);
        Var<Scalar> transport = zero;
        int present = 0;
        for (const auto& r : rows) {
          if (r.empty()) continue;
          codebook::LossDiagnostics d;
          transport = transport + codebook::codebook_loss(gather_rows(z, std::span<const int>(r)), c, pi, lo, &d);
          out.distance += d.distance;
          ++present;
        }
        out.codeword = out.codeword + transport * (Scalar(1) / static_cast<Scalar>(present));
        out.distance /= present;
      }
    }
  }

  out.align = zero;
  if (cfg.method != Method::Erm) {
    auto h = grad_reverse(z, static_cast<Scalar>(cfg.beta));
    if (cfg.method == Method::Cdann) {
      const auto pred = predict_from_latent(m, z.value());
      h = concat_cols(h, g.constant(one_hot<Scalar>(pred, m.classes)));
    } else if (cfg.method == Method::Fdann) {
      const auto idx = fine_indices(m, z.value());
      h = concat_cols(h, g.constant(one_hot<Scalar>(idx, m.fine_size())));
    }
    out.align = cross_entropy(m.discriminator.forward(h), domain);
  }
  out.total = out.classify + out.codeword + out.align;
  return out;
}

struct DgResult {
  FdannModelf model;
  double target_accuracy = 0.0;
  double source_accuracy = 0.0;
  double final_classify = 0.0;
  double final_codeword = 0.0;
  double final_align = 0.0;
};

DgResult train_dg(const MultiDomainDataset& data, const DgConfig& cfg, std::uint64_t seed);

double accuracy(const FdannModelf& m, const DomainData& d);
std::vector<int> predict(const FdannModelf& m, const Tensorf& x);

struct ModePurity {
  std::vector<std::vector<long>> histogram;  // [codeword][class * modes + mode]
  double mean_purity = 0.0;                  // over codewords with assignments
  double coverage = 0.0;                     // share of (class, mode) cells that own a majority codeword
  int used_codewords = 0;
};

ModePurity mode_purity_report(const std::vector<int>& codeword, const DomainData& d, int codewords, int classes, int modes);
ModePurity mode_purity_report(const FdannModelf& m, const DomainData& d, int modes);

struct DgRow {
  Method method = Method::Erm;
  std::uint64_t seed = 0;
  int multiplier = 0;
  double target_accuracy = 0.0;
  double purity = 0.0;
};

struct DgVerdict {
  double fdann_mean = 0.0;
  double cdann_mean = 0.0;
  double dann_mean = 0.0;
  double p_vs_cdann = 1.0;
  double p_vs_dann = 1.0;
  bool pass() const;
};

/// Paired by seed; ties dropped from the sign test.
DgVerdict judge_dg(const std::vector<DgRow>& rows);

}  // namespace tdrl::dg
