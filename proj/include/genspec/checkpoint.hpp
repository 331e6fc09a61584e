#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "genspec/optim.hpp"

namespace genspec {

// Binary parameter container:
//   "GMZW" | version u32 | count u32 |
//   count x { name_len u16 | name bytes | rank u32 | extents u32[rank] | f64 payload }
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes);

/// Lookup helpers for metadata scalars stored next to the weights.
const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);
double find_scalar(const std::vector<NamedTensor>& tensors, const std::string& name);
bool has_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace genspec
