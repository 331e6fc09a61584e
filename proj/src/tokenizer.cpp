#include "genspec/tokenizer.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "genspec/error.hpp"

namespace genspec {

namespace {

const double kReluGain = std::sqrt(2.0);

std::size_t batch_count(const Tensor& t) { return t.rank() == 4 ? t.size(0) : 1; }

Tensor one_minus(const Tensor& t) { return add_scalar(scale(t, -1.0), 1.0); }

}  // namespace

ConvEncoder::ConvEncoder(std::size_t width, std::size_t out_channels, Rng& rng)
    : stem_(1, width, 3, 1, rng, kReluGain),
      down1_(width, 2 * width, 3, 2, rng, kReluGain),
      down2_(2 * width, 2 * width, 3, 2, rng, kReluGain),
      mid_(2 * width, 2 * width, 3, 1, rng, kReluGain),
      head_(2 * width, out_channels, 1, 1, rng) {}

Tensor ConvEncoder::operator()(const Tensor& x) const {
  Tensor h = relu(stem_(x));
  h = relu(down1_(h));
  h = relu(down2_(h));
  h = add(h, relu(mid_(h)));
  return head_(h);
}

void ConvEncoder::register_in(ParameterSet& params, const std::string& prefix) {
  stem_.register_in(params, prefix + ".stem");
  down1_.register_in(params, prefix + ".down1");
  down2_.register_in(params, prefix + ".down2");
  mid_.register_in(params, prefix + ".mid");
  head_.register_in(params, prefix + ".head");
}

ConvDecoder::ConvDecoder(std::size_t in_channels, std::size_t width, Rng& rng)
    : in_(in_channels, 2 * width, 3, 1, rng, kReluGain),
      mid_(2 * width, 2 * width, 3, 1, rng, kReluGain),
      up1_(2 * width, width, 3, 1, rng, kReluGain),
      up2_(width, width, 3, 1, rng, kReluGain),
      out_(width, 1, 3, 1, rng) {}

Tensor ConvDecoder::operator()(const Tensor& z) const {
  Tensor h = relu(in_(z));
  h = add(h, relu(mid_(h)));
  h = relu(up1_(upsample2x(h)));
  h = relu(up2_(upsample2x(h)));
  return sigmoid(out_(h));
}

void ConvDecoder::register_in(ParameterSet& params, const std::string& prefix) {
  in_.register_in(params, prefix + ".in");
  mid_.register_in(params, prefix + ".mid");
  up1_.register_in(params, prefix + ".up1");
  up2_.register_in(params, prefix + ".up2");
  out_.register_in(params, prefix + ".out");
}

Tokenizer::Tokenizer(const TokenizerConfig& config, std::uint64_t seed) : config_(config) {
  if (config.downsample != 4) throw UsageError("tokenizer supports downsampling factor 4 only");
  if (config.image_size % config.downsample != 0) {
    throw UsageError("image size " + std::to_string(config.image_size) + " not divisible by F=4");
  }
  if (config.latent_channels == 0 || config.width == 0) throw UsageError("tokenizer widths must be positive");
  Rng rng(seed);
  const bool vae = config.kind == TokenizerKind::Vae;
  encoder_ = ConvEncoder(config.width, vae ? 2 * config.latent_channels : config.latent_channels, rng);
  decoder_ = ConvDecoder(config.latent_channels, config.width, rng);
  encoder_.register_in(params_, "encoder");
  decoder_.register_in(params_, "decoder");
  if (!vae) {
    if (config.codebook_size < 2) throw UsageError("codebook needs K >= 2");
    codebook_.entries = nn::init_uniform({config.codebook_size, config.latent_channels}, 1, rng, 1.0);
    params_.add("codebook.entries", codebook_.entries);
  }
}

void Tokenizer::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.size(1) != 1) throw ShapeError("tokenizer expects (N,1,H,W), got " + shape_str(x.shape()));
  if (x.size(2) % config_.downsample != 0 || x.size(3) % config_.downsample != 0) {
    throw ShapeError("image " + shape_str(x.shape()) + " not divisible by F=" + std::to_string(config_.downsample));
  }
}

VaePosterior Tokenizer::encode_posterior(const Tensor& x) const {
  if (config_.kind != TokenizerKind::Vae) throw UsageError("encode_posterior needs a VAE tokenizer");
  check_input(x);
  Tensor h = encoder_(x);
  const std::size_t c = config_.latent_channels;
  return {slice(h, 1, 0, c), slice(h, 1, c, 2 * c)};
}

Tensor Tokenizer::encode_continuous(const Tensor& x) const {
  if (config_.kind != TokenizerKind::Vq) throw UsageError("encode_continuous needs a VQ tokenizer");
  check_input(x);
  return encoder_(x);
}

Tensor Tokenizer::decode(const Tensor& z) const {
  if (z.rank() != 4 || z.size(1) != config_.latent_channels) {
    throw ShapeError("decoder expects (N," + std::to_string(config_.latent_channels) + ",h,w), got " +
                     shape_str(z.shape()));
  }
  return decoder_(z);
}

void Tokenizer::init_codebook(const Tensor& x, Rng& rng) {
  NoGradGuard guard;
  const Tensor z = permute(encode_continuous(x), {0, 2, 3, 1});
  const std::size_t dim = config_.latent_channels;
  const std::size_t cells = z.numel() / dim;
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = cells; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  auto entries = codebook_.entries.data_mut();
  for (std::size_t k = 0; k < codebook_.size(); ++k) {
    const std::size_t cell = order[k % cells];
    for (std::size_t d = 0; d < dim; ++d) {
      // repeated cells (batch smaller than K) get jittered copies
      const double jitter = k >= cells ? 1e-3 * rng.normal() : 0.0;
      entries[k * dim + d] = z.at(cell * dim + d) + jitter;
    }
  }
}

Tensor Tokenizer::encode_latent(const Tensor& x) const {
  if (config_.kind == TokenizerKind::Vae) return encode_posterior(x).mu;
  return vq_quantize(encode_continuous(x), codebook_).z_q;
}

std::vector<TokenGrid> Tokenizer::encode_tokens(const Tensor& x) const {
  NoGradGuard guard;
  return vq_quantize(encode_continuous(x), codebook_).tokens;
}

Tensor Tokenizer::decode_tokens(const std::vector<TokenGrid>& tokens) const {
  if (config_.kind != TokenizerKind::Vq) throw UsageError("decode_tokens needs a VQ tokenizer");
  if (tokens.empty()) throw ShapeError("decode_tokens: empty batch");
  const std::size_t h = tokens[0].height, w = tokens[0].width;
  std::vector<std::size_t> idx;
  idx.reserve(tokens.size() * h * w);
  for (const TokenGrid& g : tokens) {
    if (g.height != h || g.width != w || g.size() != h * w) throw ShapeError("token grids must share one shape");
    for (std::size_t i : g.indices) {
      if (i >= codebook_.size()) throw ShapeError("token index " + std::to_string(i) + " outside codebook");
    }
    idx.insert(idx.end(), g.indices.begin(), g.indices.end());
  }
  const Tensor z = permute(embed(codebook_.entries, idx, {tokens.size(), h, w}), {0, 3, 1, 2});
  return decode(z);
}

Tensor Tokenizer::reconstruct(const Tensor& x) const { return decode(encode_latent(x)); }

std::vector<NamedTensor> Tokenizer::state() const {
  std::vector<NamedTensor> out;
  out.push_back({"meta.kind", Tensor::scalar(config_.kind == TokenizerKind::Vae ? 0.0 : 1.0)});
  out.push_back({"meta.F", Tensor::scalar(static_cast<double>(config_.downsample))});
  out.push_back({"meta.K", Tensor::scalar(static_cast<double>(config_.codebook_size))});
  out.push_back({"meta.dim", Tensor::scalar(static_cast<double>(config_.latent_channels))});
  out.push_back({"meta.width", Tensor::scalar(static_cast<double>(config_.width))});
  out.push_back({"meta.image_size", Tensor::scalar(static_cast<double>(config_.image_size))});
  for (const NamedTensor& p : params_.items()) out.push_back({p.name, p.tensor.detach()});
  return out;
}

Tokenizer Tokenizer::from_state(const std::vector<NamedTensor>& state) {
  if (!has_tensor(state, "meta.kind")) throw DataError("checkpoint is not a tokenizer (missing meta.kind)");
  TokenizerConfig cfg;
  cfg.kind = find_scalar(state, "meta.kind") == 0.0 ? TokenizerKind::Vae : TokenizerKind::Vq;
  cfg.downsample = static_cast<std::size_t>(find_scalar(state, "meta.F"));
  cfg.codebook_size = static_cast<std::size_t>(find_scalar(state, "meta.K"));
  cfg.latent_channels = static_cast<std::size_t>(find_scalar(state, "meta.dim"));
  cfg.width = static_cast<std::size_t>(find_scalar(state, "meta.width"));
  cfg.image_size = static_cast<std::size_t>(find_scalar(state, "meta.image_size"));
  Tokenizer tok(cfg, 0);
  tok.params_.load(state);
  return tok;
}

Tensor vae_sample(const VaePosterior& post, Rng& rng) {
  if (post.mu.shape() != post.logvar.shape()) {
    throw ShapeError("posterior mu " + shape_str(post.mu.shape()) + " vs logvar " + shape_str(post.logvar.shape()));
  }
  std::vector<double> eps(post.mu.numel());
  for (double& e : eps) e = rng.normal();
  return add(post.mu, mul(exp(scale(post.logvar, 0.5)), Tensor(post.mu.shape(), std::move(eps))));
}

Tensor kl_divergence(const VaePosterior& post) {
  if (post.mu.shape() != post.logvar.shape()) {
    throw ShapeError("posterior mu " + shape_str(post.mu.shape()) + " vs logvar " + shape_str(post.logvar.shape()));
  }
  Tensor terms = sub(add(square(post.mu), exp(post.logvar)), add_scalar(post.logvar, 1.0));
  return scale(sum(terms), 0.5 / static_cast<double>(batch_count(post.mu)));
}

Tensor elbo_loss(const Tensor& x, const Tensor& xhat, const VaePosterior& post, double kl_weight) {
  if (kl_weight < 0.0) throw UsageError("kl_weight must be >= 0");
  Tensor rec = nn::mse(x, xhat);
  if (kl_weight == 0.0) return rec;
  return add(rec, scale(kl_divergence(post), kl_weight));
}

std::size_t nearest_code(std::span<const double> v, const Codebook& codebook) {
  const std::size_t dim = codebook.dim();
  if (v.size() != dim) throw ShapeError("code vector length does not match codebook dim");
  const auto e = codebook.entries.data();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < codebook.size(); ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = v[j] - e[k * dim + j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

QuantizeResult vq_quantize(const Tensor& z, const Codebook& codebook) {
  if (z.rank() != 4 || z.size(1) != codebook.dim()) {
    throw ShapeError("vq_quantize: latent " + shape_str(z.shape()) + " vs codebook dim " +
                     std::to_string(codebook.dim()));
  }
  const std::size_t N = z.size(0), D = z.size(1), H = z.size(2), W = z.size(3);
  QuantizeResult out;
  out.tokens.resize(N);
  std::vector<std::size_t> flat;
  flat.reserve(N * H * W);
  std::vector<double> cell(D);
  const auto zv = z.data();
  for (std::size_t n = 0; n < N; ++n) {
    TokenGrid& g = out.tokens[n];
    g.height = H;
    g.width = W;
    g.indices.resize(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
      for (std::size_t d = 0; d < D; ++d) cell[d] = zv[(n * D + d) * H * W + i];
      g.indices[i] = nearest_code(cell, codebook);
      flat.push_back(g.indices[i]);
    }
  }
  out.z_q_codebook = permute(embed(codebook.entries, flat, {N, H, W}), {0, 3, 1, 2});
  out.z_q = straight_through(z, out.z_q_codebook);
  return out;
}

Tensor vq_loss(const Tensor& x, const Tensor& xhat, const Tensor& z, const Tensor& z_q, double beta) {
  if (beta < 0.0) throw UsageError("beta must be >= 0");
  const double inv_n = 1.0 / static_cast<double>(batch_count(x));
  Tensor rec = sum(square(sub(x, xhat)));
  Tensor codebook_term = sum(square(sub(stop_gradient(z), z_q)));
  Tensor commitment = sum(square(sub(z, stop_gradient(z_q))));
  return scale(add(add(rec, codebook_term), scale(commitment, beta)), inv_n);
}

namespace {

constexpr double kProbFloor = 1e-7;

// Clamps probabilities into [1e-7, 1-1e-7]; the gradient passes through unchanged.
Tensor clamp_prob(const Tensor& p, bool& clamped) {
  std::vector<double> v(p.data().begin(), p.data().end());
  for (double& x : v) {
    const double c = std::clamp(x, kProbFloor, 1.0 - kProbFloor);
    if (c != x) clamped = true;
    x = c;
  }
  return straight_through(p, Tensor(p.shape(), std::move(v)));
}

}  // namespace

GanLosses gan_losses(const Tensor& x, const Tensor& xhat, const Discriminator& disc) {
  GanLosses out;
  const Tensor p_real = clamp_prob(sigmoid(disc(x)), out.clamped);
  const Tensor p_fake = clamp_prob(sigmoid(disc(xhat)), out.clamped);
  out.generator = scale(mean(log(p_fake)), -1.0);
  out.discriminator = scale(add(mean(log(p_real)), mean(log(one_minus(p_fake)))), -1.0);
  return out;
}

Tensor vqgan_total(const Tensor& vq, const Tensor& generator_loss, double lambda) {
  if (lambda < 0.0) throw UsageError("lambda must be >= 0");
  return add(vq, scale(generator_loss, lambda));
}

PatchDiscriminator::PatchDiscriminator(std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  c1_ = nn::Conv(1, width, 3, 2, rng, kReluGain);
  c2_ = nn::Conv(width, 2 * width, 3, 2, rng, kReluGain);
  head_ = nn::Conv(2 * width, 1, 3, 1, rng);
  c1_.register_in(params_, "disc.c1");
  c2_.register_in(params_, "disc.c2");
  head_.register_in(params_, "disc.head");
}

Tensor PatchDiscriminator::operator()(const Tensor& x) const { return head_(relu(c2_(relu(c1_(x))))); }

}  // namespace genspec
