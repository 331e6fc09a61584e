#include "genspec/tokprior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "genspec/error.hpp"

namespace genspec {

SeqModel::SeqModel(const SeqModelConfig& config, std::uint64_t seed) : config_(config) {
  if (config.vocab < 2 || config.seq_len == 0 || config.blocks == 0 || config.heads == 0 ||
      config.d_model % config.heads != 0) {
    throw UsageError("sequence model needs K >= 2, positive sizes and d_model divisible by heads");
  }
  Rng rng(seed);
  const std::size_t d = config.d_model;
  token_embed_ = nn::init_uniform({config.vocab + 1, d}, 3, rng, 0.1);
  pos_embed_ = nn::init_uniform({config.seq_len, d}, 3, rng, 0.1);
  params_.add("embed.token", token_embed_);
  params_.add("embed.pos", pos_embed_);
  blocks_.resize(config.blocks);
  for (std::size_t i = 0; i < config.blocks; ++i) {
    Block& b = blocks_[i];
    b.ln1 = nn::LayerNorm(d);
    b.ln2 = nn::LayerNorm(d);
    b.qkv = nn::Linear(d, 3 * d, rng);
    b.proj = nn::Linear(d, d, rng, 0.5);
    b.fc1 = nn::Linear(d, 4 * d, rng);
    b.fc2 = nn::Linear(4 * d, d, rng, 0.5);
    const std::string p = "block" + std::to_string(i);
    b.ln1.register_in(params_, p + ".ln1");
    b.qkv.register_in(params_, p + ".qkv");
    b.proj.register_in(params_, p + ".proj");
    b.ln2.register_in(params_, p + ".ln2");
    b.fc1.register_in(params_, p + ".fc1");
    b.fc2.register_in(params_, p + ".fc2");
  }
  ln_out_ = nn::LayerNorm(d);
  head_ = nn::Linear(d, config.vocab, rng, 0.5);
  ln_out_.register_in(params_, "ln_out");
  head_.register_in(params_, "head");
}

Tensor SeqModel::attention(const Block& b, const Tensor& x) const {
  const std::size_t N = x.size(0), L = x.size(1), d = config_.d_model, H = config_.heads, dh = d / H;
  const Tensor qkv = permute(reshape(b.qkv(x), {N, L, 3, H, dh}), {2, 0, 3, 1, 4});
  auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, i + 1), {N * H, L, dh}); };
  const Tensor q = part(0), k = part(1), v = part(2);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (config_.causal) {
    // exp underflows to exactly 0, so future positions contribute nothing
    Tensor future({L, L}, 0.0);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = i + 1; j < L; ++j) future.data_mut()[i * L + j] = -1e30;
    scores = add(scores, future);
  }
  const Tensor out = matmul(softmax(scores, -1), v);
  return b.proj(reshape(permute(reshape(out, {N, H, L, dh}), {0, 2, 1, 3}), {N, L, d}));
}

Tensor SeqModel::forward(const std::vector<TokenSeq>& inputs) const {
  if (inputs.empty()) throw ShapeError("sequence model: empty batch");
  const std::size_t N = inputs.size(), L = inputs[0].size();
  if (L == 0 || L > config_.seq_len) {
    throw ShapeError("sequence length " + std::to_string(L) + " outside [1, " + std::to_string(config_.seq_len) + "]");
  }
  std::vector<std::size_t> ids;
  ids.reserve(N * L);
  for (const TokenSeq& s : inputs) {
    if (s.size() != L) throw ShapeError("sequences in a batch must share one length");
    for (std::size_t t : s) {
      if (t > config_.vocab) throw DataError("token id " + std::to_string(t) + " outside vocabulary");
      ids.push_back(t);
    }
  }
  Tensor x = add(embed(token_embed_, ids, {N, L}), slice(pos_embed_, 0, 0, L));
  for (const Block& b : blocks_) {
    x = add(x, attention(b, b.ln1(x)));
    x = add(x, b.fc2(gelu(b.fc1(b.ln2(x)))));
  }
  return head_(ln_out_(x));
}

namespace {

void check_tokens(const std::vector<TokenSeq>& seqs, std::size_t vocab) {
  for (const TokenSeq& s : seqs) {
    for (std::size_t t : s) {
      if (t >= vocab) throw DataError("token index " + std::to_string(t) + " >= K=" + std::to_string(vocab));
    }
  }
}

}  // namespace

Tensor SeqModel::causal_logits(const std::vector<TokenSeq>& seqs, std::size_t length) const {
  if (!config_.causal) throw UsageError("causal_logits needs a causal model");
  std::vector<TokenSeq> inputs;
  inputs.reserve(seqs.size());
  for (const TokenSeq& s : seqs) {
    if (s.size() + 1 < length) throw ShapeError("sequence shorter than requested length");
    TokenSeq in(length);
    in[0] = special_token();
    std::copy_n(s.begin(), length - 1, in.begin() + 1);
    inputs.push_back(std::move(in));
  }
  return forward(inputs);
}

Tensor SeqModel::masked_logits(const std::vector<TokenSeq>& seqs, const std::vector<PositionMask>& masks) const {
  if (config_.causal) throw UsageError("masked_logits needs a bidirectional model");
  if (masks.size() != seqs.size()) throw ShapeError("one mask per sequence required");
  std::vector<TokenSeq> inputs = seqs;
  for (std::size_t n = 0; n < seqs.size(); ++n) {
    if (masks[n].size() != seqs[n].size()) throw ShapeError("mask length does not match sequence length");
    for (std::size_t i = 0; i < seqs[n].size(); ++i) {
      if (masks[n][i]) inputs[n][i] = special_token();
    }
  }
  return forward(inputs);
}

std::vector<NamedTensor> SeqModel::state() const {
  std::vector<NamedTensor> out{
      {"meta.prior", Tensor::scalar(config_.causal ? 1.0 : 2.0)},
      {"meta.vocab", Tensor::scalar(static_cast<double>(config_.vocab))},
      {"meta.seq_len", Tensor::scalar(static_cast<double>(config_.seq_len))},
      {"meta.d_model", Tensor::scalar(static_cast<double>(config_.d_model))},
      {"meta.heads", Tensor::scalar(static_cast<double>(config_.heads))},
      {"meta.blocks", Tensor::scalar(static_cast<double>(config_.blocks))},
  };
  for (const NamedTensor& p : params_.items()) out.push_back({p.name, p.tensor.detach()});
  return out;
}

SeqModel SeqModel::from_state(const std::vector<NamedTensor>& state) {
  if (!has_tensor(state, "meta.prior")) throw DataError("checkpoint is not a prior (missing meta.prior)");
  const double kind = find_scalar(state, "meta.prior");
  if (kind != 1.0 && kind != 2.0) throw DataError("checkpoint is not a token prior");
  SeqModelConfig c;
  c.causal = kind == 1.0;
  c.vocab = static_cast<std::size_t>(find_scalar(state, "meta.vocab"));
  c.seq_len = static_cast<std::size_t>(find_scalar(state, "meta.seq_len"));
  c.d_model = static_cast<std::size_t>(find_scalar(state, "meta.d_model"));
  c.heads = static_cast<std::size_t>(find_scalar(state, "meta.heads"));
  c.blocks = static_cast<std::size_t>(find_scalar(state, "meta.blocks"));
  SeqModel m(c, 0);
  m.params_.load(state);
  return m;
}

Tensor causal_nll_from_logits(const Tensor& logits, const std::vector<TokenSeq>& seqs) {
  if (logits.rank() != 3 || logits.size(0) != seqs.size()) {
    throw ShapeError("logits " + shape_str(logits.shape()) + " do not match " + std::to_string(seqs.size()) +
                     " sequences");
  }
  const std::size_t L = logits.size(1);
  check_tokens(seqs, logits.size(2));
  std::vector<std::size_t> targets;
  for (const TokenSeq& s : seqs) {
    if (s.size() < L) throw ShapeError("sequence shorter than logits");
    targets.insert(targets.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(L));
  }
  return scale(mean(gather(log_softmax(logits, -1), targets)), -1.0);
}

Tensor causal_nll(const SeqModel& model, const std::vector<TokenSeq>& seqs) {
  check_tokens(seqs, model.config().vocab);
  if (seqs.empty()) throw ShapeError("causal_nll: empty batch");
  return causal_nll_from_logits(model.causal_logits(seqs, seqs[0].size()), seqs);
}

Tensor masked_nll_from_logits(const Tensor& logits, const std::vector<TokenSeq>& seqs,
                              const std::vector<PositionMask>& masks) {
  if (logits.rank() != 3 || logits.size(0) != seqs.size() || masks.size() != seqs.size()) {
    throw ShapeError("logits " + shape_str(logits.shape()) + " do not match the batch");
  }
  check_tokens(seqs, logits.size(2));
  const std::size_t N = seqs.size(), L = logits.size(1);
  std::vector<std::size_t> targets;
  std::vector<double> weights(N * L, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    if (seqs[n].size() != L || masks[n].size() != L) throw ShapeError("sequence or mask length mismatch");
    const auto count = static_cast<std::size_t>(std::count_if(masks[n].begin(), masks[n].end(), [](auto m) { return m != 0; }));
    if (count == 0) throw UsageError("masked_nll: empty mask");
    for (std::size_t i = 0; i < L; ++i) {
      if (masks[n][i]) weights[n * L + i] = 1.0 / static_cast<double>(count * N);
    }
    targets.insert(targets.end(), seqs[n].begin(), seqs[n].end());
  }
  const Tensor picked = gather(log_softmax(logits, -1), targets);
  return scale(sum(mul(picked, Tensor({N, L}, std::move(weights)))), -1.0);
}

Tensor masked_nll(const SeqModel& model, const std::vector<TokenSeq>& seqs, const std::vector<PositionMask>& masks) {
  check_tokens(seqs, model.config().vocab);
  return masked_nll_from_logits(model.masked_logits(seqs, masks), seqs, masks);
}

void validate(const MaskRatioDist& d) {
  if (!(d.lo >= 0.0 && d.lo < d.hi && d.hi <= 1.0 && d.stddev > 0.0)) {
    throw UsageError("mask ratio distribution needs 0 <= lo < hi <= 1 and stddev > 0");
  }
}

double sample_mask_ratio(const MaskRatioDist& d, Rng& rng) {
  validate(d);
  for (;;) {
    const double r = d.mean + d.stddev * rng.normal();
    if (r >= d.lo && r <= d.hi) return r;
  }
}

PositionMask random_position_mask(std::size_t length, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw UsageError("mask ratio must lie in [0,1]");
  const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * length)), 1, length);
  std::vector<std::size_t> order(length);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < count; ++i) std::swap(order[i], order[i + rng.below(length - i)]);
  PositionMask m(length, 0);
  for (std::size_t i = 0; i < count; ++i) m[order[i]] = 1;
  return m;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t gumbel_argmax(std::span<const double> logits, Rng& rng) {
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double v = logits[i] + rng.gumbel();
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

std::size_t sample_token(std::span<const double> logits, double tau, std::size_t top_k, Rng& rng) {
  const std::size_t K = logits.size();
  if (top_k == 0) top_k = K;
  if (top_k > K) throw UsageError("top_k exceeds vocabulary size");
  if (!(tau >= 0.0)) throw UsageError("tau must be >= 0");
  if (tau == 0.0 || top_k == 1) return argmax(logits);
  std::vector<std::size_t> keep(K);
  std::iota(keep.begin(), keep.end(), 0);
  if (top_k < K) {
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    keep.resize(top_k);
    std::sort(keep.begin(), keep.end());
  }
  std::vector<double> scaled(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) scaled[i] = logits[keep[i]] / tau;
  return keep[gumbel_argmax(scaled, rng)];
}

std::vector<TokenSeq> sample_causal(const SeqModel& model, const std::vector<TokenSeq>& seqs,
                                    const std::vector<std::size_t>& prefix_lengths, const CausalOptions& opt,
                                    NoiseStreams& rng) {
  NoGradGuard guard;
  const std::size_t N = seqs.size(), L = model.config().seq_len, K = model.config().vocab;
  if (prefix_lengths.size() != N || rng.size() != N) throw ShapeError("sample_causal: batch size mismatch");
  if (N == 0) return {};
  std::vector<TokenSeq> out = seqs;
  std::size_t start = L;
  for (std::size_t n = 0; n < N; ++n) {
    if (prefix_lengths[n] > L) throw ShapeError("prefix longer than the sequence");
    out[n].resize(L, 0);
    for (std::size_t i = 0; i < prefix_lengths[n]; ++i) {
      if (out[n][i] >= K) throw DataError("prefix token outside vocabulary");
    }
    start = std::min(start, prefix_lengths[n]);
  }
  for (std::size_t i = start; i < L; ++i) {
    const Tensor logits = model.causal_logits(out, i + 1);
    for (std::size_t n = 0; n < N; ++n) {
      if (i < prefix_lengths[n]) continue;
      const auto row = logits.data().subspan((n * (i + 1) + i) * K, K);
      out[n][i] = sample_token(row, opt.tau, opt.top_k, rng[n]);
    }
  }
  return out;
}

std::vector<std::size_t> maskgit_schedule(std::size_t masked, std::size_t steps) {
  if (steps == 0) throw UsageError("maskgit needs steps >= 1");
  std::vector<std::size_t> fixed(steps);
  std::size_t remaining = masked;
  for (std::size_t r = 1; r <= steps; ++r) {
    std::size_t next = 0;
    if (r < steps) {
      const double frac = std::cos(std::numbers::pi / 2.0 * static_cast<double>(r) / static_cast<double>(steps));
      next = std::min(remaining, static_cast<std::size_t>(std::ceil(static_cast<double>(masked) * frac)));
    }
    fixed[r - 1] = remaining - next;
    remaining = next;
  }
  return fixed;
}

std::vector<TokenSeq> maskgit_decode(const SeqModel& model, const std::vector<TokenSeq>& known,
                                     const std::vector<PositionMask>& masks, const MaskGitOptions& opt,
                                     NoiseStreams& rng) {
  NoGradGuard guard;
  const std::size_t N = known.size(), K = model.config().vocab;
  if (masks.size() != N || rng.size() != N) throw ShapeError("maskgit_decode: batch size mismatch");
  if (!(opt.tau >= 0.0)) throw UsageError("tau must be >= 0");
  std::vector<TokenSeq> out = known;
  std::vector<PositionMask> current = masks;
  std::vector<std::vector<std::size_t>> plan(N);
  bool any = false;
  for (std::size_t n = 0; n < N; ++n) {
    if (masks[n].size() != known[n].size()) throw ShapeError("mask length does not match sequence length");
    const auto count = static_cast<std::size_t>(std::count_if(masks[n].begin(), masks[n].end(), [](auto m) { return m != 0; }));
    plan[n] = maskgit_schedule(count, opt.steps);
    for (std::size_t i = 0; i < known[n].size(); ++i) {
      if (masks[n][i]) {
        out[n][i] = 0;  // placeholder; replaced by MASK at the input
        any = true;
      } else if (known[n][i] >= K) {
        throw DataError("known token outside vocabulary");
      }
    }
  }
  if (!any) return out;

  for (std::size_t r = 0; r < opt.steps; ++r) {
    const double tau_r = opt.tau * (1.0 - static_cast<double>(r) / static_cast<double>(opt.steps));
    const Tensor logits = model.masked_logits(out, current);
    const std::size_t L = logits.size(1);
    for (std::size_t n = 0; n < N; ++n) {
      if (plan[n][r] == 0) continue;
      struct Candidate {
        std::size_t pos, token;
        double confidence;
      };
      std::vector<Candidate> cands;
      std::vector<double> scaled(K);
      for (std::size_t i = 0; i < L; ++i) {
        if (!current[n][i]) continue;
        const auto row = logits.data().subspan((n * L + i) * K, K);
        std::size_t tok;
        if (tau_r == 0.0) {
          tok = argmax(row);
        } else {
          for (std::size_t k = 0; k < K; ++k) scaled[k] = row[k] / tau_r;
          tok = opt.gumbel ? gumbel_argmax(scaled, rng[n]) : argmax(scaled);
        }
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        double conf = row[tok] - mx - std::log(z);
        if (opt.gumbel && tau_r > 0.0) conf += tau_r * rng[n].gumbel();
        cands.push_back({i, tok, conf});
      }
      std::stable_sort(cands.begin(), cands.end(),
                       [](const Candidate& a, const Candidate& b) { return a.confidence > b.confidence; });
      for (std::size_t j = 0; j < plan[n][r] && j < cands.size(); ++j) {
        out[n][cands[j].pos] = cands[j].token;
        current[n][cands[j].pos] = 0;
      }
    }
  }
  return out;
}

}  // namespace genspec
