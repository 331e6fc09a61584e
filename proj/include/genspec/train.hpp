#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "genspec/data.hpp"
#include "genspec/diffusion.hpp"
#include "genspec/metrics.hpp"
#include "genspec/optim.hpp"
#include "genspec/tokenizer.hpp"
#include "genspec/tokprior.hpp"

namespace genspec {

enum class ModelKind { Vae, Vq, Features, Diffusion, Causal, Masked };

const char* model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Optimizer row for each model family (lr 1e-4 everywhere).
AdamConfig optimizer_preset(ModelKind kind);

struct TrainSchedule {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  AdamConfig optim;
  std::uint64_t seed = 0;
  /// Best checkpoint is (re)written here whenever validation improves; empty = memory only.
  std::filesystem::path checkpoint;
  std::ostream* progress = nullptr;
  std::size_t log_every = 25;
};

struct TrainReport {
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  double final_val_loss = 0.0;
  std::size_t best_epoch = 0;  // 0 = initialization
  std::size_t steps = 0;
  double seconds = 0.0;
};

struct TokenizerLoss {
  double kl_weight = 1e-6;
  double beta = 0.25;
  bool gan = false;
  double gan_weight = 0.1;
  std::size_t disc_width = 16;
};

// Every trainer evaluates the validation loss before the first step and after
// each epoch, keeps the best parameters, and restores them on return. A
// non-finite loss throws NumericError and leaves the last checkpoint intact.

TrainReport train_tokenizer(Tokenizer& tokenizer, const Dataset& train, const Dataset& val, const TokenizerLoss& loss,
                            const TrainSchedule& schedule);

TrainReport train_features(FeatureExtractor& extractor, const Dataset& train, const Dataset& val, double noise_std,
                           const TrainSchedule& schedule);

/// Sets model.latent_scale from the training latents, then fits the denoiser.
TrainReport train_diffusion(DiffusionModel& model, const Tokenizer& tokenizer, const Dataset& train,
                            const Dataset& val, const TrainSchedule& schedule);

/// Causal models use the next-token loss; bidirectional ones the masked loss
/// with per-sample ratios drawn from `ratios`.
TrainReport train_seq_model(SeqModel& model, const Tokenizer& tokenizer, const Dataset& train, const Dataset& val,
                            const MaskRatioDist& ratios, const TrainSchedule& schedule);

/// Token sequences (raster order) for a set of images.
std::vector<TokenSeq> encode_sequences(const Tokenizer& tokenizer, const std::vector<Image>& images);
/// Deterministic latents for a set of images, batched without gradients.
Tensor encode_latents(const Tokenizer& tokenizer, const std::vector<Image>& images);

}  // namespace genspec
