#include "genspec/diffusion.hpp"

#include <cmath>

#include "genspec/error.hpp"

namespace genspec {

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end, double eta) {
  if (T == 0) throw UsageError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw UsageError("need 0 < beta_start <= beta_end < 1");
  }
  if (!(eta >= 0.0 && eta <= 1.0)) throw UsageError("eta must lie in [0,1]");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.eta = eta;
  s.beta.resize(T);
  s.alpha_bar.resize(T + 1);
  s.alpha_bar[0] = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    s.beta[t - 1] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t - 1]);
  }
  s.sigma.resize(T);
  for (std::size_t t = 1; t <= T; ++t) s.sigma[t - 1] = step_sigma(s, t, t - 1);
  return s;
}

double step_sigma(const NoiseSchedule& s, std::size_t t, std::size_t t_prev) {
  if (t == 0 || t > s.T || t_prev >= t) throw UsageError("invalid transition " + std::to_string(t) + " -> " +
                                                          std::to_string(t_prev));
  const double ab_t = s.alpha_bar[t], ab_p = s.alpha_bar[t_prev];
  return s.eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
}

Tensor forward_marginal(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
  if (t > s.T) throw UsageError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.T) + "]");
  if (z0.shape() != eps.shape()) throw ShapeError("forward_marginal: " + shape_str(z0.shape()) + " vs " +
                                                  shape_str(eps.shape()));
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
  return add(scale(z0, a), scale(eps, b));
}

namespace {

Tensor sinusoidal(const std::vector<std::size_t>& t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor out({t.size(), dim}, 0.0);
  auto v = out.data_mut();
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(t[n]) * freq;
      v[n * dim + i] = std::sin(arg);
      v[n * dim + half + i] = std::cos(arg);
    }
  }
  return out;
}

const double kReluGain = std::sqrt(2.0);

}  // namespace

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  if (config.channels == 0 || config.width == 0 || config.time_dim < 2 || config.time_dim % 2 != 0) {
    throw UsageError("denoiser needs positive widths and an even time_dim");
  }
  Rng rng(seed);
  const std::size_t c = config.channels, w = config.width, w2 = 2 * config.width, hid = 2 * config.time_dim;
  time1_ = nn::Linear(config.time_dim, hid, rng);
  time2_ = nn::Linear(hid, hid, rng);
  temb1_ = nn::Linear(hid, w, rng);
  temb2_ = nn::Linear(hid, w2, rng);
  temb3_ = nn::Linear(hid, w2, rng);
  temb4_ = nn::Linear(hid, w2, rng);
  temb5_ = nn::Linear(hid, w, rng);
  in_ = nn::Conv(c, w, 3, 1, rng);
  enc1_ = nn::Conv(w, w, 3, 1, rng, kReluGain);
  down1_ = nn::Conv(w, w2, 3, 2, rng, kReluGain);
  enc2_ = nn::Conv(w2, w2, 3, 1, rng, kReluGain);
  down2_ = nn::Conv(w2, w2, 3, 2, rng, kReluGain);
  mid_ = nn::Conv(w2, w2, 3, 1, rng, kReluGain);
  up2_ = nn::Conv(w2, w2, 1, 1, rng);
  dec2_ = nn::Conv(w2, w2, 3, 1, rng, kReluGain);
  up1_ = nn::Conv(w2, w, 1, 1, rng);
  dec1_ = nn::Conv(w, w, 3, 1, rng, kReluGain);
  out_ = nn::Conv(w, c, 3, 1, rng);
  out_.weight = Tensor(out_.weight.shape(), 0.0);

  time1_.register_in(params_, "time1");
  time2_.register_in(params_, "time2");
  temb1_.register_in(params_, "temb1");
  temb2_.register_in(params_, "temb2");
  temb3_.register_in(params_, "temb3");
  temb4_.register_in(params_, "temb4");
  temb5_.register_in(params_, "temb5");
  in_.register_in(params_, "in");
  enc1_.register_in(params_, "enc1");
  down1_.register_in(params_, "down1");
  enc2_.register_in(params_, "enc2");
  down2_.register_in(params_, "down2");
  mid_.register_in(params_, "mid");
  up2_.register_in(params_, "up2");
  dec2_.register_in(params_, "dec2");
  up1_.register_in(params_, "up1");
  dec1_.register_in(params_, "dec1");
  out_.register_in(params_, "out");
}

Tensor Denoiser::time_features(const std::vector<std::size_t>& t) const {
  return gelu(time2_(gelu(time1_(sinusoidal(t, config_.time_dim)))));
}

Tensor Denoiser::operator()(const Tensor& z_t, const std::vector<std::size_t>& t) const {
  if (z_t.rank() != 4 || z_t.size(1) != config_.channels || z_t.size(2) % 4 != 0 || z_t.size(3) % 4 != 0) {
    throw ShapeError("denoiser input " + shape_str(z_t.shape()) + " needs (N," + std::to_string(config_.channels) +
                     ",h,w) with h, w divisible by 4");
  }
  if (t.size() != z_t.size(0)) throw ShapeError("denoiser needs one timestep per sample");
  const Tensor emb = time_features(t);
  auto block = [&](const Tensor& h, const nn::Conv& conv, const nn::Linear& proj) {
    return add(h, conv(relu(nn::add_channel_bias(h, proj(emb)))));
  };
  const Tensor e1 = block(in_(z_t), enc1_, temb1_);
  const Tensor e2 = block(relu(down1_(e1)), enc2_, temb2_);
  const Tensor m = block(relu(down2_(e2)), mid_, temb3_);
  const Tensor u2 = block(add(up2_(upsample2x(m)), e2), dec2_, temb4_);
  const Tensor u1 = block(add(up1_(upsample2x(u2)), e1), dec1_, temb5_);
  return out_(relu(u1));
}

NoisePredictor DiffusionModel::predictor() const {
  return [this](const Tensor& z, const std::vector<std::size_t>& t) { return net(z, t); };
}

std::vector<NamedTensor> DiffusionModel::state() const {
  const DenoiserConfig& c = net.config();
  std::vector<NamedTensor> out{
      {"meta.prior", Tensor::scalar(0.0)},
      {"meta.channels", Tensor::scalar(static_cast<double>(c.channels))},
      {"meta.width", Tensor::scalar(static_cast<double>(c.width))},
      {"meta.time_dim", Tensor::scalar(static_cast<double>(c.time_dim))},
      {"meta.T", Tensor::scalar(static_cast<double>(schedule.T))},
      {"meta.beta_start", Tensor::scalar(schedule.beta_start)},
      {"meta.beta_end", Tensor::scalar(schedule.beta_end)},
      {"meta.eta", Tensor::scalar(schedule.eta)},
      {"meta.latent_scale", Tensor::scalar(latent_scale)},
  };
  for (const NamedTensor& p : net.params().items()) out.push_back({p.name, p.tensor.detach()});
  return out;
}

DiffusionModel DiffusionModel::from_state(const std::vector<NamedTensor>& state) {
  if (!has_tensor(state, "meta.prior") || find_scalar(state, "meta.prior") != 0.0) {
    throw DataError("checkpoint is not a diffusion prior");
  }
  DenoiserConfig c;
  c.channels = static_cast<std::size_t>(find_scalar(state, "meta.channels"));
  c.width = static_cast<std::size_t>(find_scalar(state, "meta.width"));
  c.time_dim = static_cast<std::size_t>(find_scalar(state, "meta.time_dim"));
  DiffusionModel m{Denoiser(c, 0),
                   make_schedule(static_cast<std::size_t>(find_scalar(state, "meta.T")),
                                 find_scalar(state, "meta.beta_start"), find_scalar(state, "meta.beta_end"),
                                 find_scalar(state, "meta.eta")),
                   find_scalar(state, "meta.latent_scale")};
  m.net.params().load(state);
  return m;
}

Tensor ddpm_loss(const NoisePredictor& model, const Tensor& z0, const NoiseSchedule& s, NoiseStreams& rng) {
  if (z0.rank() < 1 || z0.size(0) != rng.size()) throw ShapeError("ddpm_loss needs one stream per sample");
  const std::size_t N = z0.size(0), row = z0.numel() / N;
  std::vector<std::size_t> t(N);
  for (std::size_t n = 0; n < N; ++n) t[n] = 1 + static_cast<std::size_t>(rng[n].below(s.T));
  const Tensor eps = rng.gaussian(z0.shape());
  std::vector<double> a(z0.numel()), b(z0.numel());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < row; ++i) {
      a[n * row + i] = std::sqrt(s.alpha_bar[t[n]]);
      b[n * row + i] = std::sqrt(1.0 - s.alpha_bar[t[n]]);
    }
  }
  const Tensor z_t = add(mul(z0, Tensor(z0.shape(), std::move(a))), mul(eps, Tensor(z0.shape(), std::move(b))));
  return nn::mse(model(z_t, t), eps);
}

Tensor reverse_step_eps(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, std::size_t t_prev,
                        const NoiseSchedule& s, double tau, NoiseStreams& rng) {
  if (!(tau >= 0.0)) throw UsageError("tau must be >= 0");
  if (z_t.shape() != eps_hat.shape()) throw ShapeError("reverse_step: " + shape_str(z_t.shape()) + " vs " +
                                                       shape_str(eps_hat.shape()));
  const double sigma = step_sigma(s, t, t_prev);
  const double ab_t = s.alpha_bar[t], ab_p = s.alpha_bar[t_prev];
  double radicand = 1.0 - ab_p - sigma * sigma;
  if (radicand < 0.0) {
    if (radicand < -1e-12) {
      throw NumericError("negative radicand " + std::to_string(radicand) + " at t=" + std::to_string(t));
    }
    radicand = 0.0;
  }
  const double c0 = std::sqrt(ab_p) / std::sqrt(ab_t);
  const double c_eps = std::sqrt(radicand) - c0 * std::sqrt(1.0 - ab_t);
  const double c_noise = tau * sigma;
  Tensor out(z_t.shape(), 0.0);
  auto o = out.data_mut();
  const auto z = z_t.data(), e = eps_hat.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c0 * z[i] + c_eps * e[i];
  if (c_noise != 0.0) {
    const Tensor noise = rng.gaussian(z_t.shape());
    const auto nz = noise.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += c_noise * nz[i];
  }
  return out;
}

Tensor reverse_step(const Tensor& z_t, std::size_t t, const NoisePredictor& model, const NoiseSchedule& s,
                    double tau, NoiseStreams& rng) {
  NoGradGuard guard;
  const Tensor eps_hat = model(z_t, std::vector<std::size_t>(z_t.size(0), t));
  return reverse_step_eps(z_t, eps_hat, t, t - 1, s, tau, rng);
}

std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t steps) {
  if (steps == 0 || steps > T) throw UsageError("steps must lie in [1, " + std::to_string(T) + "]");
  std::vector<std::size_t> ts(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    // round(T * (steps - i) / steps) keeps the endpoints at T and 0
    ts[i] = (T * (steps - i) + steps / 2) / steps;
  }
  return ts;
}

namespace {

std::size_t resolve_steps(const NoiseSchedule& s, const SampleOptions& opt) { return opt.steps == 0 ? s.T : opt.steps; }

}  // namespace

Tensor sample_from(const Tensor& z_T, const NoisePredictor& model, const NoiseSchedule& s,
                   const SampleOptions& opt, NoiseStreams& rng) {
  NoGradGuard guard;
  const auto ts = sampling_timesteps(s.T, resolve_steps(s, opt));
  Tensor z = z_T.detach();
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const Tensor eps_hat = model(z, std::vector<std::size_t>(z.size(0), ts[i]));
    z = reverse_step_eps(z, eps_hat, ts[i], ts[i + 1], s, opt.tau, rng);
  }
  return z;
}

Tensor sample(const NoisePredictor& model, const NoiseSchedule& s, const Shape& shape, const SampleOptions& opt,
              NoiseStreams& rng) {
  return sample_from(rng.gaussian(shape), model, s, opt, rng);
}

namespace {

// Overwrites the known cells of `z` (mask == 0) with `known`.
void inject(Tensor& z, const Tensor& known, const std::vector<char>& unknown) {
  auto o = z.data_mut();
  const auto k = known.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (!unknown[i]) o[i] = k[i];
  }
}

}  // namespace

Tensor inpaint(const NoisePredictor& model, const NoiseSchedule& s, const Tensor& z_known, const Tensor& mask,
               const SampleOptions& opt, NoiseStreams& rng) {
  NoGradGuard guard;
  if (z_known.rank() != 4 || mask.rank() != 4 || mask.size(0) != z_known.size(0) ||
      (mask.size(1) != 1 && mask.size(1) != z_known.size(1)) || mask.size(2) != z_known.size(2) ||
      mask.size(3) != z_known.size(3)) {
    throw ShapeError("inpaint mask " + shape_str(mask.shape()) + " does not match latent " +
                     shape_str(z_known.shape()));
  }
  const std::size_t N = z_known.size(0), C = z_known.size(1), HW = z_known.size(2) * z_known.size(3);
  std::vector<char> unknown(z_known.numel());
  bool any = false;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < HW; ++i) {
        const double m = mask.at((n * mask.size(1) + (mask.size(1) == 1 ? 0 : c)) * HW + i);
        if (m != 0.0 && m != 1.0) throw UsageError("inpaint mask must be binary");
        unknown[(n * C + c) * HW + i] = m == 1.0;
        any = any || m == 1.0;
      }
    }
  }
  if (!any) return z_known.detach();

  const auto ts = sampling_timesteps(s.T, resolve_steps(s, opt));
  Tensor z = rng.gaussian(z_known.shape());
  inject(z, forward_marginal(z_known, s.T, rng.gaussian(z_known.shape()), s), unknown);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const Tensor eps_hat = model(z, std::vector<std::size_t>(N, ts[i]));
    z = reverse_step_eps(z, eps_hat, ts[i], ts[i + 1], s, opt.tau, rng);
    if (ts[i + 1] == 0) {
      inject(z, z_known, unknown);
    } else {
      inject(z, forward_marginal(z_known, ts[i + 1], rng.gaussian(z_known.shape()), s), unknown);
    }
  }
  return z;
}

}  // namespace genspec
