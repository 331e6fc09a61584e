#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "genspec/checkpoint.hpp"
#include "genspec/data.hpp"
#include "genspec/nn.hpp"
#include "genspec/optim.hpp"
#include "genspec/tensor.hpp"

namespace genspec {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) on unit-range images; MSE == 0 yields kPsnrCap.
double psnr(const Image& x, const Image& y);

/// Mean SSIM over all valid 7x7 uniform windows (population moments,
/// C1 = 0.01^2, C2 = 0.03^2). Images smaller than 7 use one full-size window.
double ssim(const Image& x, const Image& y);

// Denoising autoencoder; the encoder half is the frozen feature map used by
// the Frechet and kernel distances.
class FeatureExtractor {
 public:
  FeatureExtractor(std::size_t image_size, std::size_t dim, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  std::size_t image_size() const { return image_size_; }
  /// (N,1,H,W) -> (N, dim).
  Tensor encode(const Tensor& x) const;
  Tensor decode(const Tensor& features) const;
  /// Features of a batch of images, computed without gradient tracking.
  Tensor features(const std::vector<Image>& images, std::size_t batch = 128) const;

  ParameterSet& params() { return params_; }
  std::vector<NamedTensor> state() const;
  static FeatureExtractor from_state(const std::vector<NamedTensor>& state);

 private:
  std::size_t image_size_, dim_;
  nn::Conv c1_, c2_, c3_;
  nn::Linear to_feat_, from_feat_;
  nn::Conv d1_, d2_, d3_;
  ParameterSet params_;
};

struct FeatureStats {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim, row-major, unbiased
};

/// Sample mean and unbiased covariance of the rows of an (N, D) tensor.
FeatureStats feature_stats(const Tensor& features);
FeatureStats feature_stats(const std::vector<Image>& images, const FeatureExtractor& extractor);

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// Unbiased MMD^2 with kernel (x.y / D + 1)^3.
double kid(const Tensor& features_a, const Tensor& features_b);

/// Wall-clock seconds per sample of `sampler(n)`, median of three repeats.
double time_per_sample(const std::function<void(std::size_t)>& sampler, std::size_t n);

struct MetricsReport {
  double fid = 0.0;
  double kid = 0.0;
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  double tps_seconds = 0.0;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  std::string provenance;

  std::string csv() const;  // header line + one row
  std::string text() const;
};

/// Mean PSNR and SSIM over paired images.
std::pair<double, double> paired_fidelity(const std::vector<Image>& a, const std::vector<Image>& b);

}  // namespace genspec
