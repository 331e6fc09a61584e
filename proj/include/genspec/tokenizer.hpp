#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "genspec/checkpoint.hpp"
#include "genspec/nn.hpp"
#include "genspec/optim.hpp"
#include "genspec/rng.hpp"
#include "genspec/tensor.hpp"

namespace genspec {

/// Diagonal Gaussian q(z|x); both tensors shaped (N, C, h, w).
struct VaePosterior {
  Tensor mu;
  Tensor logvar;
};

struct Codebook {
  Tensor entries;  // (K, dim)

  std::size_t size() const { return entries.size(0); }
  std::size_t dim() const { return entries.size(1); }
};

/// Raster-ordered grid of codebook indices; flattening gives the sequence s.
struct TokenGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
  bool operator==(const TokenGrid&) const = default;
};

enum class TokenizerKind { Vae, Vq };

struct TokenizerConfig {
  TokenizerKind kind = TokenizerKind::Vae;
  std::size_t image_size = 32;
  std::size_t downsample = 4;       // F; must be 4 for this encoder layout
  std::size_t latent_channels = 4;  // VAE latent channels, or code dimension for VQ
  std::size_t codebook_size = 64;   // K (VQ only)
  std::size_t width = 16;           // base conv width
};

// Conv encoder with total stride 4: two stride-2 stages, then a 1x1 head.
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(std::size_t width, std::size_t out_channels, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void register_in(ParameterSet& params, const std::string& prefix);

 private:
  nn::Conv stem_, down1_, down2_, mid_, head_;
};

// Mirror of ConvEncoder with nearest upsampling; sigmoid output in (0,1).
class ConvDecoder {
 public:
  ConvDecoder() = default;
  ConvDecoder(std::size_t in_channels, std::size_t width, Rng& rng);
  Tensor operator()(const Tensor& z) const;
  void register_in(ParameterSet& params, const std::string& prefix);

 private:
  nn::Conv in_, mid_, up1_, up2_, out_;
};

class Tokenizer {
 public:
  Tokenizer(const TokenizerConfig& config, std::uint64_t seed);

  const TokenizerConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::size_t latent_size() const { return config_.image_size / config_.downsample; }

  /// VAE: posterior of an (N,1,H,W) batch. Rejects sizes not divisible by F.
  VaePosterior encode_posterior(const Tensor& x) const;
  /// VQ: continuous pre-quantization latent (N, dim, h, w).
  Tensor encode_continuous(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;

  const Codebook& codebook() const { return codebook_; }
  /// Seeds the codebook with K distinct encoder outputs drawn from the batch.
  void init_codebook(const Tensor& x, Rng& rng);

  /// Deterministic latent used by the priors: mu for the VAE, z_q for VQ.
  Tensor encode_latent(const Tensor& x) const;
  std::vector<TokenGrid> encode_tokens(const Tensor& x) const;
  Tensor decode_tokens(const std::vector<TokenGrid>& tokens) const;
  /// Encode then decode without sampling.
  Tensor reconstruct(const Tensor& x) const;

  std::vector<NamedTensor> state() const;
  static Tokenizer from_state(const std::vector<NamedTensor>& state);

 private:
  void check_input(const Tensor& x) const;

  TokenizerConfig config_;
  ConvEncoder encoder_;
  ConvDecoder decoder_;
  Codebook codebook_;
  ParameterSet params_;
};

/// Reparameterized draw z = mu + exp(logvar/2) * eps.
Tensor vae_sample(const VaePosterior& post, Rng& rng);
/// Closed-form KL(q || N(0,I)) summed over latent elements, averaged over the batch axis.
Tensor kl_divergence(const VaePosterior& post);
/// mean((x - xhat)^2) + kl_weight * KL.
Tensor elbo_loss(const Tensor& x, const Tensor& xhat, const VaePosterior& post, double kl_weight);

struct QuantizeResult {
  Tensor z_q;          // straight-through output: value = codebook entries, gradient -> z
  Tensor z_q_codebook; // codebook-tracked copy used by the codebook loss term
  std::vector<TokenGrid> tokens;
};

/// Nearest codebook entry per cell (ties -> lowest index).
QuantizeResult vq_quantize(const Tensor& z, const Codebook& codebook);
/// Index of the nearest entry to `v` by squared distance; ties -> lowest index.
std::size_t nearest_code(std::span<const double> v, const Codebook& codebook);

/// Squared-norm terms, per sample, averaged over the batch:
/// |x - xhat|^2 + |sg[z] - z_q|^2 + beta |z - sg[z_q]|^2.
Tensor vq_loss(const Tensor& x, const Tensor& xhat, const Tensor& z, const Tensor& z_q, double beta);

using Discriminator = std::function<Tensor(const Tensor&)>;

struct GanLosses {
  Tensor generator;
  Tensor discriminator;
  bool clamped = false;  // some probability hit the [1e-7, 1-1e-7] clamp
};

/// Non-saturating patch GAN losses averaged over the logit map (sigmoid link).
GanLosses gan_losses(const Tensor& x, const Tensor& xhat, const Discriminator& disc);

Tensor vqgan_total(const Tensor& vq, const Tensor& generator_loss, double lambda);

class PatchDiscriminator {
 public:
  PatchDiscriminator(std::size_t width, std::uint64_t seed);
  /// (N,1,H,W) -> (N,1,H/4,W/4) logits.
  Tensor operator()(const Tensor& x) const;
  ParameterSet& params() { return params_; }

 private:
  nn::Conv c1_, c2_, head_;
  ParameterSet params_;
};

}  // namespace genspec
