#include <filesystem>

#include "doctest.h"
#include "genspec/checkpoint.hpp"
#include "genspec/error.hpp"
#include "genspec/train.hpp"

using namespace genspec;

namespace {

struct Fixture {
  Dataset train = generate_dataset(3, Split::Train, 96, 32);
  Dataset val = generate_dataset(3, Split::Val, 32, 32);
};

TrainSchedule quick(ModelKind kind, std::size_t epochs) {
  TrainSchedule s;
  s.epochs = epochs;
  s.batch_size = 16;
  s.optim = optimizer_preset(kind);
  s.optim.lr = 2e-3;
  s.optim.warmup_steps = std::min<std::size_t>(s.optim.warmup_steps, 5);
  s.seed = 9;
  return s;
}

Tokenizer quick_vq(const Fixture& f) {
  TokenizerConfig cfg;
  cfg.kind = TokenizerKind::Vq;
  cfg.latent_channels = 8;
  cfg.width = 8;
  Tokenizer tok(cfg, 4);
  train_tokenizer(tok, f.train, f.val, {}, quick(ModelKind::Vq, 2));
  return tok;
}

}  // namespace

TEST_CASE("optimizer presets") {
  CHECK(optimizer_preset(ModelKind::Diffusion).lr == 1e-4);
  CHECK(optimizer_preset(ModelKind::Masked).beta2 == 0.96);
  CHECK(optimizer_preset(ModelKind::Masked).weight_decay == 0.01);
  CHECK(optimizer_preset(ModelKind::Diffusion).warmup_steps == 200);
  CHECK_FALSE(optimizer_preset(ModelKind::Causal).decoupled);
  CHECK(parse_model_kind("masked") == ModelKind::Masked);
  CHECK_THROWS_AS(parse_model_kind("gan"), UsageError);
}

TEST_CASE("every model kind lowers its validation loss") {
  const Fixture f;
  SUBCASE("vae") {
    TokenizerConfig cfg;
    cfg.width = 8;
    Tokenizer tok(cfg, 1);
    const TrainReport r = train_tokenizer(tok, f.train, f.val, {}, quick(ModelKind::Vae, 2));
    CHECK(r.best_val_loss < r.initial_val_loss);
    CHECK(r.steps == 12);
  }
  SUBCASE("vq with adversarial term") {
    TokenizerConfig cfg;
    cfg.kind = TokenizerKind::Vq;
    cfg.latent_channels = 8;
    cfg.width = 8;
    Tokenizer tok(cfg, 2);
    TokenizerLoss loss;
    loss.gan = true;
    const TrainReport r = train_tokenizer(tok, f.train, f.val, loss, quick(ModelKind::Vq, 2));
    CHECK(r.best_val_loss < r.initial_val_loss);
  }
  SUBCASE("features") {
    FeatureExtractor fx(32, 16, 3);
    const TrainReport r = train_features(fx, f.train, f.val, 0.1, quick(ModelKind::Features, 2));
    CHECK(r.best_val_loss < r.initial_val_loss);
  }
  SUBCASE("diffusion") {
    TokenizerConfig cfg;
    cfg.width = 8;
    Tokenizer tok(cfg, 1);
    DiffusionModel model{Denoiser({4, 8, 16}, 5), make_schedule(50, 1e-4, 0.02, 1.0), 1.0};
    const TrainReport r = train_diffusion(model, tok, f.train, f.val, quick(ModelKind::Diffusion, 3));
    CHECK(r.best_val_loss < r.initial_val_loss);
    CHECK(model.latent_scale > 0.0);
  }
  SUBCASE("causal and masked priors") {
    const Tokenizer tok = quick_vq(f);
    for (bool causal : {true, false}) {
      SeqModelConfig cfg;
      cfg.d_model = 16;
      cfg.blocks = 1;
      cfg.causal = causal;
      SeqModel model(cfg, 6);
      const TrainReport r = train_seq_model(model, tok, f.train, f.val, MaskRatioDist::maskgit(),
                                            quick(causal ? ModelKind::Causal : ModelKind::Masked, 2));
      CHECK(r.best_val_loss < r.initial_val_loss);
    }
  }
}

TEST_CASE("best checkpoint is written and restored") {
  const Fixture f;
  const auto path = std::filesystem::temp_directory_path() / "genspec_train_best.gmzw";
  FeatureExtractor fx(32, 16, 3);
  TrainSchedule s = quick(ModelKind::Features, 2);
  s.checkpoint = path;
  const TrainReport r = train_features(fx, f.train, f.val, 0.1, s);
  const FeatureExtractor back = FeatureExtractor::from_state(load_checkpoint(path));
  const Tensor a = fx.features(f.val.images), b = back.features(f.val.images);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK(r.best_val_loss <= r.final_val_loss);
  std::filesystem::remove(path);
}

TEST_CASE("divergence aborts and keeps the last good checkpoint") {
  const Fixture f;
  const auto path = std::filesystem::temp_directory_path() / "genspec_train_nan.gmzw";
  FeatureExtractor fx(32, 16, 3);
  const FeatureExtractor init = FeatureExtractor::from_state(fx.state());
  TrainSchedule s = quick(ModelKind::Features, 3);
  s.optim.lr = 1e305;
  s.checkpoint = path;
  CHECK_THROWS_AS(train_features(fx, f.train, f.val, 0.1, s), NumericError);
  const FeatureExtractor kept = FeatureExtractor::from_state(load_checkpoint(path));
  const Tensor a = init.features(f.val.images), b = kept.features(f.val.images);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  std::filesystem::remove(path);
}

TEST_CASE("training is reproducible") {
  const Fixture f;
  FeatureExtractor a(32, 16, 3), b(32, 16, 3);
  train_features(a, f.train, f.val, 0.1, quick(ModelKind::Features, 1));
  train_features(b, f.train, f.val, 0.1, quick(ModelKind::Features, 1));
  CHECK(encode_checkpoint(a.state()) == encode_checkpoint(b.state()));
}

TEST_CASE("undersized training set is rejected") {
  const Fixture f;
  FeatureExtractor fx(32, 16, 3);
  TrainSchedule s = quick(ModelKind::Features, 1);
  s.batch_size = 500;
  CHECK_THROWS_AS(train_features(fx, f.train, f.val, 0.1, s), UsageError);
}
