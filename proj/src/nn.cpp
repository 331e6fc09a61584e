#include "genspec/nn.hpp"

#include <cmath>

#include "genspec/error.hpp"

namespace genspec::nn {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

Conv::Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, Rng& rng, double gain)
    : weight(init_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng, gain)),
      bias(Shape{out}, 0.0),
      stride(stride_),
      pad(kernel / 2) {}

void Conv::register_in(ParameterSet& params, const std::string& prefix) {
  params.add(prefix + ".weight", weight);
  params.add(prefix + ".bias", bias);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double gain)
    : weight(init_uniform({in, out}, in, rng, gain)), bias(Shape{out}, 0.0) {}

void Linear::register_in(ParameterSet& params, const std::string& prefix) {
  params.add(prefix + ".weight", weight);
  params.add(prefix + ".bias", bias);
}

void LayerNorm::register_in(ParameterSet& params, const std::string& prefix) {
  params.add(prefix + ".gamma", gamma);
  params.add(prefix + ".beta", beta);
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

Tensor add_channel_bias(const Tensor& maps, const Tensor& per_channel) {
  if (maps.rank() != 4 || per_channel.rank() != 2 || per_channel.size(0) != maps.size(0) ||
      per_channel.size(1) != maps.size(1)) {
    throw ShapeError("add_channel_bias: " + shape_str(maps.shape()) + " with " + shape_str(per_channel.shape()));
  }
  return add(maps, reshape(per_channel, {maps.size(0), maps.size(1), 1, 1}));
}

}  // namespace genspec::nn
