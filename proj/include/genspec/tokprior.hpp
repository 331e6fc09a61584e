#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "genspec/checkpoint.hpp"
#include "genspec/nn.hpp"
#include "genspec/optim.hpp"
#include "genspec/rng.hpp"
#include "genspec/streams.hpp"
#include "genspec/tensor.hpp"
#include "genspec/tokenizer.hpp"

namespace genspec {

using TokenSeq = std::vector<std::size_t>;
/// Per-position flags, 1 = masked (unknown).
using PositionMask = std::vector<std::uint8_t>;

struct SeqModelConfig {
  std::size_t vocab = 64;  // K; id K is reserved (BOS when causal, MASK when bidirectional)
  std::size_t seq_len = 64;
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t blocks = 2;
  bool causal = false;
};

// Pre-norm transformer over token sequences emitting K-way logits per position.
// Causal mode shifts the input right by one BOS token, so the logits at
// position i see only tokens before i.
class SeqModel {
 public:
  SeqModel(const SeqModelConfig& config, std::uint64_t seed);

  const SeqModelConfig& config() const { return config_; }
  std::size_t special_token() const { return config_.vocab; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Raw network on input ids (N, L) with ids in [0, K]; returns (N, L, K).
  Tensor forward(const std::vector<TokenSeq>& inputs) const;
  /// Causal: logits predicting each of the first `length` tokens of every sequence.
  Tensor causal_logits(const std::vector<TokenSeq>& seqs, std::size_t length) const;
  /// Bidirectional: logits with masked positions replaced by the MASK token.
  Tensor masked_logits(const std::vector<TokenSeq>& seqs, const std::vector<PositionMask>& masks) const;

  std::vector<NamedTensor> state() const;
  static SeqModel from_state(const std::vector<NamedTensor>& state);

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear qkv, proj, fc1, fc2;
  };
  Tensor attention(const Block& b, const Tensor& x) const;

  SeqModelConfig config_;
  Tensor token_embed_;  // (K+1, d)
  Tensor pos_embed_;    // (seq_len, d)
  std::vector<Block> blocks_;
  nn::LayerNorm ln_out_;
  nn::Linear head_;
  ParameterSet params_;
};

/// Mean over positions of -log softmax(l_i)[s_i], averaged over the batch.
Tensor causal_nll_from_logits(const Tensor& logits, const std::vector<TokenSeq>& seqs);
Tensor causal_nll(const SeqModel& model, const std::vector<TokenSeq>& seqs);

/// Mean of -log p over masked positions only, averaged over the batch.
/// Every mask must be non-empty.
Tensor masked_nll_from_logits(const Tensor& logits, const std::vector<TokenSeq>& seqs,
                              const std::vector<PositionMask>& masks);
Tensor masked_nll(const SeqModel& model, const std::vector<TokenSeq>& seqs, const std::vector<PositionMask>& masks);

struct MaskRatioDist {
  double mean = 0.5;
  double stddev = 0.25;
  double lo = 0.05;
  double hi = 0.95;

  static MaskRatioDist maskgit() { return {0.5, 0.25, 0.05, 0.95}; }
  static MaskRatioDist mage() { return {0.55, 0.25, 0.5, 1.0}; }
};

void validate(const MaskRatioDist& dist);
/// Truncated normal by rejection.
double sample_mask_ratio(const MaskRatioDist& dist, Rng& rng);
/// Uniformly chosen positions, max(1, round(ratio * length)) of them.
PositionMask random_position_mask(std::size_t length, double ratio, Rng& rng);

/// Index of the largest value; ties go to the lower index.
std::size_t argmax(std::span<const double> values);
/// argmax(l + Gumbel noise) over all entries.
std::size_t gumbel_argmax(std::span<const double> logits, Rng& rng);
/// Draw from softmax(l / tau) restricted to the top_k logits (ties at the k-th
/// logit go to the lower index); tau == 0 means greedy.
std::size_t sample_token(std::span<const double> logits, double tau, std::size_t top_k, Rng& rng);

struct CausalOptions {
  double tau = 1.0;
  std::size_t top_k = 0;  // 0 means K
};

/// Completes each sequence to the full length, keeping its first
/// prefix_lengths[n] tokens fixed.
std::vector<TokenSeq> sample_causal(const SeqModel& model, const std::vector<TokenSeq>& seqs,
                                    const std::vector<std::size_t>& prefix_lengths, const CausalOptions& opt,
                                    NoiseStreams& rng);

/// Tokens fixed in each round for |M| masked positions: after round r,
/// ceil(|M| cos(pi/2 r/steps)) stay masked, reaching 0 after the last round.
std::vector<std::size_t> maskgit_schedule(std::size_t masked, std::size_t steps);

struct MaskGitOptions {
  std::size_t steps = 8;
  double tau = 1.0;
  bool gumbel = true;  // false: no Gumbel noise in candidates or confidences
};

/// Iterative parallel decoding. Unmasked tokens are copied through untouched.
std::vector<TokenSeq> maskgit_decode(const SeqModel& model, const std::vector<TokenSeq>& known,
                                     const std::vector<PositionMask>& masks, const MaskGitOptions& opt,
                                     NoiseStreams& rng);

}  // namespace genspec
