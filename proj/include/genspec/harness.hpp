#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "genspec/data.hpp"
#include "genspec/diffusion.hpp"
#include "genspec/metrics.hpp"
#include "genspec/tokenizer.hpp"
#include "genspec/tokprior.hpp"
#include "genspec/train.hpp"

namespace genspec {

enum class MaskGeometry { RandomRect, RandomToken, RasterSuffix };

const char* geometry_name(MaskGeometry g);
MaskGeometry parse_geometry(const std::string& name);

struct MaskSpec {
  double ratio = 0.0;
  MaskGeometry geometry = MaskGeometry::RandomRect;
  std::uint64_t seed = 0;
};

// Three aligned views of one mask (1 = unknown). Masks are built on the latent
// cell grid, so every pixel block is either fully masked or fully known.
struct MaskViews {
  std::size_t grid = 0;   // latent cells per side
  std::size_t block = 0;  // pixels per cell side
  Image pixel;            // image_size x image_size, values 0/1
  PositionMask cells;     // grid*grid, raster order; doubles as the token mask

  std::size_t masked_cells() const;
  double fraction() const;
  /// (1, 1, grid, grid) tensor view.
  Tensor latent() const;
};

/// Masks round(ratio * grid^2) cells. Random rectangles are anchored on
/// unmasked cells and never overshoot, so at most grid^2 (capped at 64)
/// rectangles are needed.
MaskViews make_mask(const MaskSpec& spec, std::size_t image_size, std::size_t downsample = 4);

/// output * mask + input * (1 - mask), pixelwise.
Image composite(const Image& output, const Image& input, const Image& pixel_mask);

// One generative model with its tokenizer. Exactly one of diffusion / prior is set.
struct SpectrumModel {
  std::string name;
  std::string checkpoint;  // provenance
  const Tokenizer* tokenizer = nullptr;
  const DiffusionModel* diffusion = nullptr;
  const SeqModel* prior = nullptr;
  std::size_t diffusion_steps = 0;  // 0 = every timestep
  std::size_t maskgit_steps = 8;
  std::size_t top_k = 0;

  ModelKind kind() const;
  /// Causal priors can only continue a prefix, so they get raster-suffix masks.
  MaskGeometry geometry(MaskGeometry requested) const;
};

/// Inpaints a batch. Returns raw decoded outputs; known pixels are not
/// composited. `first_index` selects the per-sample noise streams.
std::vector<Image> inpaint_images(const SpectrumModel& model, const std::vector<Image>& images,
                                  const std::vector<MaskViews>& masks, double tau, std::uint64_t seed,
                                  std::size_t first_index = 0);
/// Unconditional samples, i.e. inpainting with everything masked.
std::vector<Image> generate_images(const SpectrumModel& model, std::size_t n, double tau, std::uint64_t seed,
                                   std::size_t first_index = 0);

struct SweepCell {
  std::string model;
  double ratio = 0.0;
  double tau = 0.0;
  std::string geometry;
  std::size_t n_samples = 0;
  bool failed = false;
  double rfid = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double tps = 0.0;           // wall-clock seconds per sample; not part of the deterministic table
  bool composite_exact = false;  // composited outputs match the input on every known pixel

  bool operator==(const SweepCell&) const = default;
};

struct SweepResult {
  std::vector<std::string> models;
  std::vector<double> ratios;
  std::vector<double> taus;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> provenance;  // "name=checkpoint" per model
  std::vector<SweepCell> cells;         // model-major, then ratio, then tau

  const SweepCell& cell(const std::string& model, double ratio, double tau) const;
};

struct SweepOptions {
  std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> taus{0.25, 0.5, 0.75, 1.0, 1.25, 1.5};
  std::size_t n = 200;
  std::uint64_t seed = 0;
  MaskGeometry geometry = MaskGeometry::RandomRect;
  std::size_t threads = 1;
  std::size_t batch = 50;
};

/// Every (model, ratio, tau) cell on the first n held-out images. A model
/// that cannot inpaint yields failed cells; the sweep continues.
SweepResult run_spectrum(const std::vector<SpectrumModel>& models, const std::vector<Image>& held_out,
                         const FeatureExtractor& extractor, const SweepOptions& options);

/// gFID / KID of n unconditional samples per model against `reference`.
/// The last report is the reference-against-itself control.
std::vector<MetricsReport> run_unconditional(const std::vector<SpectrumModel>& models,
                                             const std::vector<Image>& reference, const FeatureExtractor& extractor,
                                             std::size_t n, double tau, std::uint64_t seed, std::size_t threads = 1);

/// Long-format table (no timing columns) and its parser.
std::string sweep_csv(const SweepResult& sweep);
SweepResult parse_sweep_csv(const std::string& text);
std::string timing_csv(const SweepResult& sweep);

/// Writes sweep.csv, timing.csv, and per-model curves_<model>.svg and heatmap_<model>.svg.
std::vector<std::filesystem::path> export_sweep(const SweepResult& sweep, const std::filesystem::path& dir);

struct Spearman {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, t approximation
};

/// Rank correlation with average ranks for ties.
Spearman spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace genspec
