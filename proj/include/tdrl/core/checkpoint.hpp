#pragma once

#include "tdrl/core/archive.hpp"
#include "tdrl/core/mlp.hpp"

#include <string>

namespace tdrl {

inline constexpr int kParamsFormatVersion = 1;

/// Store an MLP under `prefix`: dims and activation tags as metadata, one f32
/// buffer per parameter in declaration order.
void write_mlp(Archive& archive, const std::string& prefix, const Mlpf& mlp);
Mlpf read_mlp(const Archive& archive, const std::string& prefix);

void save_mlp(const std::filesystem::path& path, const Mlpf& mlp);
Mlpf load_mlp(const std::filesystem::path& path);

}  // namespace tdrl
