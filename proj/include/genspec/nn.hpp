#pragma once

#include <string>

#include "genspec/optim.hpp"
#include "genspec/rng.hpp"
#include "genspec/tensor.hpp"

// Small layer helpers shared by the tokenizers, the denoiser, the sequence
// model and the feature extractor.
namespace genspec::nn {

struct Conv {
  Tensor weight;  // (out, in, k, k)
  Tensor bias;    // (out)
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
  void register_in(ParameterSet& params, const std::string& prefix);
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
  void register_in(ParameterSet& params, const std::string& prefix);
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim) : gamma(Shape{dim}, 1.0), beta(Shape{dim}, 0.0) {}
  Tensor operator()(const Tensor& x) const { return layernorm(x, gamma, beta); }
  void register_in(ParameterSet& params, const std::string& prefix);
};

/// Uniform fan-in scaled initializer (He-style for gain sqrt(2)).
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain);

/// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

/// Adds a per-(sample, channel) vector (N,C) to feature maps (N,C,H,W).
Tensor add_channel_bias(const Tensor& maps, const Tensor& per_channel);

}  // namespace genspec::nn
