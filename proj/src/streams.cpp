#include "genspec/streams.hpp"

#include "genspec/error.hpp"

namespace genspec {

NoiseStreams::NoiseStreams(std::uint64_t base_seed, std::size_t count, std::size_t first_index) {
  streams_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) streams_.emplace_back(derive_seed(base_seed, {first_index + i}));
}

Tensor NoiseStreams::gaussian(const Shape& shape) {
  if (shape.empty() || shape[0] != streams_.size()) {
    throw ShapeError("noise batch " + shape_str(shape) + " needs " + std::to_string(streams_.size()) + " rows");
  }
  Tensor out(shape, 0.0);
  auto v = out.data_mut();
  const std::size_t row = v.size() / shape[0];
  for (std::size_t n = 0; n < shape[0]; ++n) {
    for (std::size_t i = 0; i < row; ++i) v[n * row + i] = streams_[n].normal();
  }
  return out;
}

}  // namespace genspec
