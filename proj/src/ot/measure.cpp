#include "tdrl/ot/measure.hpp"

namespace tdrl::ot {

const char* cost_kind_name(CostKind k) {
  switch (k) {
    case CostKind::SquaredEuclidean: return "squared_euclidean";
    case CostKind::Euclidean: return "euclidean";
    case CostKind::Custom: return "custom";
  }
  return "?";
}

CostKind parse_cost_kind(const std::string& name) {
  if (name == "squared_euclidean") return CostKind::SquaredEuclidean;
  if (name == "euclidean") return CostKind::Euclidean;
  throw std::invalid_argument("unknown cost kind '" + name + "' (expected squared_euclidean or euclidean)");
}

}  // namespace tdrl::ot
