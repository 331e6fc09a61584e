#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "genspec/rng.hpp"
#include "genspec/tensor.hpp"

namespace genspec {

// One random stream per sample of a batch, so a sample's draws do not depend
// on which other samples share its batch.
class NoiseStreams {
 public:
  /// Stream i is seeded with derive_seed(base_seed, {first_index + i}).
  NoiseStreams(std::uint64_t base_seed, std::size_t count, std::size_t first_index = 0);

  std::size_t size() const { return streams_.size(); }
  Rng& operator[](std::size_t i) { return streams_.at(i); }

  /// Standard normals shaped (N, ...); row n comes from stream n. N must equal size().
  Tensor gaussian(const Shape& shape);

 private:
  std::vector<Rng> streams_;
};

}  // namespace genspec
