#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "genspec/checkpoint.hpp"
#include "genspec/nn.hpp"
#include "genspec/optim.hpp"
#include "genspec/rng.hpp"
#include "genspec/streams.hpp"
#include "genspec/tensor.hpp"

namespace genspec {

/// Linear-beta schedule. Index conventions: beta[t-1] and sigma[t-1] belong to
/// step t in [1, T]; alpha_bar[t] for t in [0, T] with alpha_bar[0] = 1.
struct NoiseSchedule {
  std::size_t T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  double eta = 1.0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;
};

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end, double eta);

/// sigma for a (possibly strided) jump t -> t_prev under the eta family.
double step_sigma(const NoiseSchedule& s, std::size_t t, std::size_t t_prev);

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, for t in [0, T].
Tensor forward_marginal(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s);

struct DenoiserConfig {
  std::size_t channels = 4;  // latent channels
  std::size_t width = 24;    // level-1 width; deeper levels use 2x
  std::size_t time_dim = 32;
};

// Three-level conv U-shape (8x8 -> 4x4 -> 2x2 at desk scale) with additive
// skips and a sinusoidal timestep embedding injected as per-channel biases.
// The output conv starts at zero, so an untrained model predicts eps = 0.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);

  /// eps_hat for z_t (N,C,h,w); `t` holds one timestep per sample.
  Tensor operator()(const Tensor& z_t, const std::vector<std::size_t>& t) const;

  const DenoiserConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  Tensor time_features(const std::vector<std::size_t>& t) const;

  DenoiserConfig config_;
  nn::Linear time1_, time2_;
  nn::Linear temb1_, temb2_, temb3_, temb4_, temb5_;
  nn::Conv in_, enc1_, down1_, enc2_, down2_, mid_, up2_, dec2_, up1_, dec1_, out_;
  ParameterSet params_;
};

/// Noise predictor signature used by the sampling routines; lets tests plug in oracles.
using NoisePredictor = std::function<Tensor(const Tensor& z_t, const std::vector<std::size_t>& t)>;

struct DiffusionModel {
  Denoiser net;
  NoiseSchedule schedule;
  double latent_scale = 1.0;  // latents are divided by this before diffusion

  NoisePredictor predictor() const;
  std::vector<NamedTensor> state() const;
  static DiffusionModel from_state(const std::vector<NamedTensor>& state);
};

/// Mean-per-element MSE between predicted and true noise at t ~ U{1..T} per sample.
Tensor ddpm_loss(const NoisePredictor& model, const Tensor& z0, const NoiseSchedule& s, NoiseStreams& rng);

/// One reverse transition t -> t_prev given eps_hat. Throws NumericError when
/// the direction-term radicand is negative beyond rounding.
Tensor reverse_step_eps(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, std::size_t t_prev,
                        const NoiseSchedule& s, double tau, NoiseStreams& rng);

/// t -> t-1 with the model's noise prediction.
Tensor reverse_step(const Tensor& z_t, std::size_t t, const NoisePredictor& model, const NoiseSchedule& s,
                    double tau, NoiseStreams& rng);

/// Descending visit list T = t_0 > t_1 > ... > 0 with `steps` transitions,
/// evenly spaced; steps == T visits every timestep.
std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t steps);

struct SampleOptions {
  double tau = 1.0;
  std::size_t steps = 0;  // 0 means T
};

/// Reverse chain from a given z_T.
Tensor sample_from(const Tensor& z_T, const NoisePredictor& model, const NoiseSchedule& s,
                   const SampleOptions& opt, NoiseStreams& rng);
/// z_T ~ N(0, I) then the reverse chain.
Tensor sample(const NoisePredictor& model, const NoiseSchedule& s, const Shape& shape, const SampleOptions& opt,
              NoiseStreams& rng);

/// Known-region injection. `mask` is (N,1,h,w) or (N,C,h,w) with 1 = unknown.
/// Known cells of the result equal z_known bitwise.
Tensor inpaint(const NoisePredictor& model, const NoiseSchedule& s, const Tensor& z_known, const Tensor& mask,
               const SampleOptions& opt, NoiseStreams& rng);

}  // namespace genspec
