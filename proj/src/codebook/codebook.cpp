#include "tdrl/codebook/codebook.hpp"

#include "tdrl/core/archive.hpp"

namespace tdrl::codebook {

const char* metric_name(Metric m) {
  return m == Metric::SquaredEuclidean ? "squared_euclidean" : "negative_inner_product";
}

Metric parse_metric(const std::string& name) {
  if (name == "squared_euclidean") return Metric::SquaredEuclidean;
  if (name == "negative_inner_product") return Metric::NegativeInnerProduct;
  throw std::invalid_argument("unknown metric '" + name + "'");
}

const char* solver_name(Solver s) { return s == Solver::Exact ? "exact" : "sinkhorn"; }

Solver parse_solver(const std::string& name) {
  if (name == "exact") return Solver::Exact;
  if (name == "sinkhorn") return Solver::Sinkhorn;
  throw std::invalid_argument("unknown solver '" + name + "' (expected exact or sinkhorn)");
}

const char* init_strategy_name(InitStrategy s) {
  switch (s) {
    case InitStrategy::Gaussian: return "gaussian";
    case InitStrategy::KMeansPlusPlus: return "kmeans++";
    case InitStrategy::KMeans: return "kmeans";
  }
  return "?";
}

InitStrategy parse_init_strategy(const std::string& name) {
  if (name == "gaussian") return InitStrategy::Gaussian;
  if (name == "kmeans++") return InitStrategy::KMeansPlusPlus;
  if (name == "kmeans") return InitStrategy::KMeans;
  throw std::invalid_argument("unknown init strategy '" + name + "'");
}

void save_codebook(const std::filesystem::path& path, const Codebookf& cb) {
  Archive a("codebook", kCodebookFormatVersion);
  a.set("M", std::to_string(cb.size()));
  a.set("d", std::to_string(cb.dim()));
  a.set("metric", metric_name(cb.metric));
  a.set("name", cb.codewords.name.substr(0, cb.codewords.name.rfind('.')));
  a.add_f32("codewords", cb.codewords.value);
  a.add_f32("pi_logits", cb.pi_logits.value);
  a.save(path);
}

Codebookf load_codebook(const std::filesystem::path& path) {
  const Archive a = Archive::load(path, "codebook");
  if (a.version() != kCodebookFormatVersion) throw std::runtime_error("codebook: unsupported version");
  auto cb = make_codebook(a.f32("codewords"), parse_metric(a.get("metric")), a.get("name"));
  cb.pi_logits.value = a.f32("pi_logits");
  if (cb.size() != std::stoi(a.get("M")) || cb.dim() != std::stoi(a.get("d")) || cb.pi_logits.value.cols() != cb.size()) {
    throw std::runtime_error("codebook: header does not match buffers");
  }
  return cb;
}

}  // namespace tdrl::codebook
