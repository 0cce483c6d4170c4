#include "tdrl/core/checkpoint.hpp"

#include <sstream>
#include <stdexcept>

namespace tdrl {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

namespace {

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) os << ',';
    os << fmt(items[i]);
  }
  return os.str();
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

void write_mlp(Archive& archive, const std::string& prefix, const Mlpf& mlp) {
  archive.set(prefix + ".name", mlp.name());
  archive.set(prefix + ".dims", join(mlp.dims(), [](int d) { return d; }));
  archive.set(prefix + ".activations", join(mlp.activations(), [](Activation a) { return activation_name(a); }));
  const auto& params = mlp.parameter_values();
  for (std::size_t i = 0; i < params.size(); ++i) {
    archive.add_f32(prefix + ".p" + std::to_string(i), params[i].value);
  }
}

Mlpf read_mlp(const Archive& archive, const std::string& prefix) {
  std::vector<int> dims;
  for (const auto& d : split(archive.get(prefix + ".dims"))) dims.push_back(std::stoi(d));
  std::vector<Activation> acts;
  for (const auto& a : split(archive.get(prefix + ".activations"))) acts.push_back(parse_activation(a));
  if (dims.size() != acts.size() + 1) throw std::runtime_error("checkpoint: dims/activations mismatch");
  const std::string name = archive.get(prefix + ".name");
  std::vector<Parameter<float>> params;
  for (std::size_t l = 0; l < acts.size(); ++l) {
    params.push_back({name + ".w" + std::to_string(l), archive.f32(prefix + ".p" + std::to_string(2 * l)), true});
    params.push_back({name + ".b" + std::to_string(l), archive.f32(prefix + ".p" + std::to_string(2 * l + 1)), true});
  }
  return Mlpf::from_parameters(name, dims, acts, std::move(params));
}

void save_mlp(const std::filesystem::path& path, const Mlpf& mlp) {
  Archive a("params", kParamsFormatVersion);
  write_mlp(a, "mlp", mlp);
  a.save(path);
}

Mlpf load_mlp(const std::filesystem::path& path) {
  return read_mlp(Archive::load(path, "params"), "mlp");
}

}  // namespace tdrl
