#include "genspec/train.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>

#include "genspec/checkpoint.hpp"
#include "genspec/error.hpp"

namespace genspec {

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Vae: return "vae";
    case ModelKind::Vq: return "vq";
    case ModelKind::Features: return "features";
    case ModelKind::Diffusion: return "diffusion";
    case ModelKind::Causal: return "causal";
    case ModelKind::Masked: return "masked";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  for (ModelKind k : {ModelKind::Vae, ModelKind::Vq, ModelKind::Features, ModelKind::Diffusion, ModelKind::Causal,
                      ModelKind::Masked}) {
    if (name == model_kind_name(k)) return k;
  }
  throw UsageError("unknown model kind '" + name + "'");
}

AdamConfig optimizer_preset(ModelKind kind) {
  AdamConfig c;
  c.lr = 1e-4;
  switch (kind) {
    case ModelKind::Vae:
    case ModelKind::Vq:
    case ModelKind::Features:
      break;
    case ModelKind::Diffusion:
      c.beta2 = 0.95;
      c.weight_decay = 0.01;
      c.warmup_steps = 200;
      break;
    case ModelKind::Masked:
      c.beta2 = 0.96;
      c.weight_decay = 0.01;
      c.warmup_steps = 200;
      break;
    case ModelKind::Causal:
      c.weight_decay = 0.01;
      c.decoupled = false;
      break;
  }
  return c;
}

namespace {

constexpr std::size_t kEvalBatch = 100;
constexpr std::uint64_t kValStream = 0x7661;  // fixed stream for validation noise and masks

using BatchLoss = std::function<Tensor(const std::vector<std::size_t>& batch, std::size_t step)>;

std::vector<std::vector<double>> snapshot(const ParameterSet& params) {
  std::vector<std::vector<double>> out;
  for (const NamedTensor& p : params.items()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore(ParameterSet& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = params.items()[i].tensor.data_mut();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

void check_finite(double loss, const char* what, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string("non-finite ") + what + " loss at step " + std::to_string(step));
  }
}

TrainReport run_loop(const char* name, ParameterSet& params, std::size_t n_train, const TrainSchedule& s,
                     const BatchLoss& batch_loss, const std::function<double()>& val_loss,
                     const std::function<std::vector<NamedTensor>()>& state) {
  if (s.batch_size == 0 || n_train < s.batch_size) {
    throw UsageError("training set of " + std::to_string(n_train) + " is smaller than batch size " +
                     std::to_string(s.batch_size));
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto log = [&](const std::string& line) {
    if (s.progress) *s.progress << name << ' ' << line << std::endl;
  };

  TrainReport report;
  report.initial_val_loss = val_loss();
  check_finite(report.initial_val_loss, "validation", 0);
  report.best_val_loss = report.initial_val_loss;
  auto best = snapshot(params);
  if (!s.checkpoint.empty()) save_checkpoint(s.checkpoint, state());
  log("epoch=0 val_loss=" + std::to_string(report.initial_val_loss));

  OptimState opt = make_optim_state(params, s.optim);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= s.epochs; ++epoch) {
    Rng shuffle(derive_seed(s.seed, {0x5348, epoch}));
    for (std::size_t i = n_train; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double running = 0.0;
    std::size_t counted = 0;
    for (std::size_t b = 0; b + s.batch_size <= n_train; b += s.batch_size) {
      const std::vector<std::size_t> batch(order.begin() + b, order.begin() + b + s.batch_size);
      params.zero_grad();
      const Tensor loss = batch_loss(batch, step);
      check_finite(loss.item(), "training", step);
      backward(loss);
      optim_step(params, opt);
      ++step;
      running += loss.item();
      ++counted;
      if (s.log_every && step % s.log_every == 0) {
        log("step=" + std::to_string(step) + " loss=" + std::to_string(running / counted) +
            " elapsed=" + std::to_string(elapsed()));
      }
    }
    const double v = val_loss();
    check_finite(v, "validation", step);
    report.final_val_loss = v;
    if (v < report.best_val_loss) {
      report.best_val_loss = v;
      report.best_epoch = epoch;
      best = snapshot(params);
      if (!s.checkpoint.empty()) save_checkpoint(s.checkpoint, state());
    }
    log("epoch=" + std::to_string(epoch) + " val_loss=" + std::to_string(v) + " best=" +
        std::to_string(report.best_val_loss) + " elapsed=" + std::to_string(elapsed()));
  }
  restore(params, best);
  report.steps = step;
  report.seconds = elapsed();
  return report;
}

std::vector<const Image*> pick(const std::vector<Image>& images, const std::vector<std::size_t>& idx) {
  std::vector<const Image*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&images[i]);
  return out;
}

// Mean of a per-chunk loss over `count` items, weighted by chunk size.
double chunked_mean(std::size_t count, const std::function<double(std::size_t, std::size_t)>& chunk) {
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t b = 0; b < count; b += kEvalBatch) {
    const std::size_t e = std::min(count, b + kEvalBatch);
    total += chunk(b, e) * static_cast<double>(e - b);
  }
  return total / static_cast<double>(count);
}

std::vector<std::size_t> range(std::size_t b, std::size_t e) {
  std::vector<std::size_t> v(e - b);
  std::iota(v.begin(), v.end(), b);
  return v;
}

// The four flip variants of every training image, so priors see the same
// augmentation the tokenizer was trained with.
std::vector<Image> flip_variants(const std::vector<Image>& images) {
  std::vector<Image> out;
  out.reserve(images.size() * 4);
  for (const Image& img : images) {
    out.push_back(img);
    out.push_back(flip_horizontal(img));
    out.push_back(flip_vertical(img));
    out.push_back(flip_vertical(flip_horizontal(img)));
  }
  return out;
}

// Picks one random flip variant per source image for this step.
std::vector<std::size_t> variant_rows(const std::vector<std::size_t>& batch, std::uint64_t seed, std::size_t step) {
  Rng rng(derive_seed(seed, {0x464c, step}));
  std::vector<std::size_t> rows;
  rows.reserve(batch.size());
  for (std::size_t i : batch) rows.push_back(i * 4 + rng.below(4));
  return rows;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t per = t.numel() / t.size(0);
  Shape shape = t.shape();
  shape[0] = rows.size();
  std::vector<double> v;
  v.reserve(rows.size() * per);
  for (std::size_t r : rows) v.insert(v.end(), t.data().begin() + r * per, t.data().begin() + (r + 1) * per);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

Tensor encode_latents(const Tokenizer& tokenizer, const std::vector<Image>& images) {
  NoGradGuard guard;
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < images.size(); b += kEvalBatch) {
    const std::size_t e = std::min(images.size(), b + kEvalBatch);
    parts.push_back(tokenizer.encode_latent(images_to_tensor(pick(images, range(b, e)))).detach());
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 0).detach();
}

std::vector<TokenSeq> encode_sequences(const Tokenizer& tokenizer, const std::vector<Image>& images) {
  std::vector<TokenSeq> out;
  out.reserve(images.size());
  for (std::size_t b = 0; b < images.size(); b += kEvalBatch) {
    const std::size_t e = std::min(images.size(), b + kEvalBatch);
    for (TokenGrid& g : tokenizer.encode_tokens(images_to_tensor(pick(images, range(b, e))))) {
      out.push_back(std::move(g.indices));
    }
  }
  return out;
}

TrainReport train_tokenizer(Tokenizer& tok, const Dataset& train, const Dataset& val, const TokenizerLoss& loss,
                            const TrainSchedule& s) {
  const bool vq = tok.config().kind == TokenizerKind::Vq;
  if (vq) {
    Rng init(derive_seed(s.seed, {0x4342}));
    std::vector<std::size_t> first(std::min(train.images.size(), s.batch_size));
    for (std::size_t& i : first) i = init.below(train.images.size());
    tok.init_codebook(images_to_tensor(pick(train.images, first)), init);
  }
  std::optional<PatchDiscriminator> disc;
  std::optional<OptimState> disc_opt;
  if (loss.gan) {
    if (!vq) throw UsageError("the adversarial term applies to VQ tokenizers only");
    disc.emplace(loss.disc_width, derive_seed(s.seed, {0x4449}));
    disc_opt = make_optim_state(disc->params(), s.optim);
  }

  auto objective = [&](const Tensor& x, Rng& rng, const PatchDiscriminator* d) -> Tensor {
    if (!vq) {
      const VaePosterior post = tok.encode_posterior(x);
      return elbo_loss(x, tok.decode(vae_sample(post, rng)), post, loss.kl_weight);
    }
    const Tensor z = tok.encode_continuous(x);
    const QuantizeResult q = vq_quantize(z, tok.codebook());
    const Tensor xhat = tok.decode(q.z_q);
    const Tensor base = vq_loss(x, xhat, z, q.z_q_codebook, loss.beta);
    if (!d) return base;
    const GanLosses g = gan_losses(x, xhat, [d](const Tensor& t) { return (*d)(t); });
    return vqgan_total(base, g.generator, loss.gan_weight);
  };

  auto batch_loss = [&](const std::vector<std::size_t>& batch, std::size_t step) {
    Rng rng(derive_seed(s.seed, {0x5442, step}));
    std::vector<Image> imgs;
    imgs.reserve(batch.size());
    for (std::size_t i : batch) imgs.push_back(augment(train.images[i], rng));
    const Tensor x = images_to_tensor(imgs);
    if (disc) {
      Tensor xhat;
      {
        NoGradGuard guard;
        xhat = tok.reconstruct(x).detach();
      }
      disc->params().zero_grad();
      const GanLosses g = gan_losses(x, xhat, [&](const Tensor& t) { return (*disc)(t); });
      backward(g.discriminator);
      optim_step(disc->params(), *disc_opt);
      disc->params().zero_grad();
    }
    return objective(x, rng, disc ? &*disc : nullptr);
  };

  auto val_loss = [&] {
    Rng rng(derive_seed(s.seed, {kValStream}));
    return chunked_mean(val.images.size(), [&](std::size_t b, std::size_t e) {
      return objective(images_to_tensor(pick(val.images, range(b, e))), rng, nullptr).item();
    });
  };
  return run_loop(vq ? "train-vq" : "train-vae", tok.params(), train.images.size(), s, batch_loss, val_loss,
                  [&] { return tok.state(); });
}

TrainReport train_features(FeatureExtractor& fx, const Dataset& train, const Dataset& val, double noise_std,
                           const TrainSchedule& s) {
  auto objective = [&](const Tensor& x, Rng& rng) {
    Tensor noisy = x.detach();
    for (double& v : noisy.data_mut()) v += noise_std * rng.normal();
    return nn::mse(fx.decode(fx.encode(noisy)), x);
  };
  auto batch_loss = [&](const std::vector<std::size_t>& batch, std::size_t step) {
    Rng rng(derive_seed(s.seed, {0x4645, step}));
    std::vector<Image> imgs;
    for (std::size_t i : batch) imgs.push_back(augment(train.images[i], rng));
    return objective(images_to_tensor(imgs), rng);
  };
  auto val_loss = [&] {
    Rng rng(derive_seed(s.seed, {kValStream}));
    return chunked_mean(val.images.size(), [&](std::size_t b, std::size_t e) {
      return objective(images_to_tensor(pick(val.images, range(b, e))), rng).item();
    });
  };
  return run_loop("train-features", fx.params(), train.images.size(), s, batch_loss, val_loss,
                  [&] { return fx.state(); });
}

TrainReport train_diffusion(DiffusionModel& model, const Tokenizer& tok, const Dataset& train, const Dataset& val,
                            const TrainSchedule& s) {
  const Tensor raw = encode_latents(tok, flip_variants(train.images));
  double sum = 0.0, sq = 0.0;
  for (double v : raw.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(raw.numel());
  const double var = sq / n - (sum / n) * (sum / n);
  if (!(var > 0.0)) throw NumericError("training latents have zero variance");
  model.latent_scale = std::sqrt(var);
  const Tensor latents = scale(raw, 1.0 / model.latent_scale).detach();
  const Tensor val_latents = scale(encode_latents(tok, val.images), 1.0 / model.latent_scale).detach();
  const NoisePredictor eps = model.predictor();

  auto batch_loss = [&](const std::vector<std::size_t>& batch, std::size_t step) {
    NoiseStreams streams(derive_seed(s.seed, {0x4446, step}), batch.size());
    return ddpm_loss(eps, gather_rows(latents, variant_rows(batch, s.seed, step)), model.schedule, streams);
  };
  auto val_loss = [&] {
    return chunked_mean(val.images.size(), [&](std::size_t b, std::size_t e) {
      NoiseStreams streams(derive_seed(s.seed, {kValStream}), e - b, b);
      return ddpm_loss(eps, slice(val_latents, 0, b, e), model.schedule, streams).item();
    });
  };
  return run_loop("train-diffusion", model.net.params(), train.images.size(), s, batch_loss, val_loss,
                  [&] { return model.state(); });
}

TrainReport train_seq_model(SeqModel& model, const Tokenizer& tok, const Dataset& train, const Dataset& val,
                            const MaskRatioDist& ratios, const TrainSchedule& s) {
  if (tok.config().kind != TokenizerKind::Vq) throw UsageError("token priors need a VQ tokenizer");
  if (tok.config().codebook_size != model.config().vocab) {
    throw UsageError("prior vocabulary " + std::to_string(model.config().vocab) + " does not match codebook size " +
                     std::to_string(tok.config().codebook_size));
  }
  validate(ratios);
  const std::vector<TokenSeq> seqs = encode_sequences(tok, flip_variants(train.images));
  const std::vector<TokenSeq> val_seqs = encode_sequences(tok, val.images);
  if (seqs.front().size() != model.config().seq_len) throw ShapeError("token grid does not match prior seq_len");
  const bool causal = model.config().causal;

  auto masks_for = [&](std::size_t count, Rng& rng) {
    std::vector<PositionMask> masks;
    for (std::size_t i = 0; i < count; ++i) {
      masks.push_back(random_position_mask(model.config().seq_len, sample_mask_ratio(ratios, rng), rng));
    }
    return masks;
  };
  auto batch_loss = [&](const std::vector<std::size_t>& batch, std::size_t step) {
    std::vector<TokenSeq> b;
    for (std::size_t r : variant_rows(batch, s.seed, step)) b.push_back(seqs[r]);
    if (causal) return causal_nll(model, b);
    Rng rng(derive_seed(s.seed, {0x4d41, step}));
    return masked_nll(model, b, masks_for(b.size(), rng));
  };
  auto val_loss = [&] {
    Rng rng(derive_seed(s.seed, {kValStream}));
    return chunked_mean(val_seqs.size(), [&](std::size_t b, std::size_t e) {
      const std::vector<TokenSeq> chunk(val_seqs.begin() + b, val_seqs.begin() + e);
      return causal ? causal_nll(model, chunk).item() : masked_nll(model, chunk, masks_for(chunk.size(), rng)).item();
    });
  };
  return run_loop(causal ? "train-causal" : "train-masked", model.params(), train.images.size(), s, batch_loss,
                  val_loss, [&] { return model.state(); });
}

}  // namespace genspec
