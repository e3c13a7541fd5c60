#pragma once

#include <string>
#include <utility>
#include <vector>

#include "prevalens/tensor.hpp"

namespace prevalens {

using NamedParams = std::vector<std::pair<std::string, TensorPtr>>;

// Flat binary container shared by all models.
//
// Layout: magic "QNT1", version u32, then one record per parameter:
//   name_len u32, name bytes, rank u32, dims u32[rank], values f64[prod(dims)]
// All integers and floats are little-endian.
void save_params(const std::string& path, const NamedParams& params);
NamedParams load_params(const std::string& path);

// Flat "key: value" sidecar files used for model configs and run manifests.
void save_kv(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> load_kv(const std::string& path);

}  // namespace prevalens
