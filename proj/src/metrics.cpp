#include "genspec/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "genspec/error.hpp"

namespace genspec {

namespace {

void check_pair(const Image& x, const Image& y) {
  if (x.height != y.height || x.width != y.width) {
    throw ShapeError("image shapes differ: " + std::to_string(x.height) + "x" + std::to_string(x.width) + " vs " +
                     std::to_string(y.height) + "x" + std::to_string(y.width));
  }
}

}  // namespace

double psnr(const Image& x, const Image& y) {
  check_pair(x, y);
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (x.pixels[i] - y.pixels[i]) * (x.pixels[i] - y.pixels[i]);
  if (se == 0.0) return kPsnrCap;
  return 10.0 * std::log10(1.0 / (se / static_cast<double>(x.size())));
}

double ssim(const Image& x, const Image& y) {
  check_pair(x, y);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t wh = std::min<std::size_t>(7, x.height), ww = std::min<std::size_t>(7, x.width);
  const double area = static_cast<double>(wh * ww);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t r = 0; r + wh <= x.height; ++r) {
    for (std::size_t c = 0; c + ww <= x.width; ++c) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < wh; ++i) {
        for (std::size_t j = 0; j < ww; ++j) {
          const double a = x.at(r + i, c + j), b = y.at(r + i, c + j);
          sx += a;
          sy += b;
          sxx += a * a;
          syy += b * b;
          sxy += a * b;
        }
      }
      const double mx = sx / area, my = sy / area;
      const double vx = sxx / area - mx * mx, vy = syy / area - my * my, cxy = sxy / area - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

std::pair<double, double> paired_fidelity(const std::vector<Image>& a, const std::vector<Image>& b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("paired metrics need equally sized, non-empty sets");
  double p = 0.0, s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    p += psnr(a[i], b[i]);
    s += ssim(a[i], b[i]);
  }
  return {p / static_cast<double>(a.size()), s / static_cast<double>(a.size())};
}

namespace {

const double kReluGain = std::sqrt(2.0);

}  // namespace

FeatureExtractor::FeatureExtractor(std::size_t image_size, std::size_t dim, std::uint64_t seed)
    : image_size_(image_size), dim_(dim) {
  if (image_size < 8 || image_size % 8 != 0) throw UsageError("feature extractor needs image size divisible by 8");
  if (dim == 0) throw UsageError("feature dimension must be positive");
  Rng rng(seed);
  const std::size_t s = image_size / 8;
  c1_ = nn::Conv(1, 8, 3, 2, rng, kReluGain);
  c2_ = nn::Conv(8, 16, 3, 2, rng, kReluGain);
  c3_ = nn::Conv(16, 32, 3, 2, rng, kReluGain);
  to_feat_ = nn::Linear(32 * s * s, dim, rng);
  from_feat_ = nn::Linear(dim, 32 * s * s, rng, kReluGain);
  d1_ = nn::Conv(32, 16, 3, 1, rng, kReluGain);
  d2_ = nn::Conv(16, 8, 3, 1, rng, kReluGain);
  d3_ = nn::Conv(8, 1, 3, 1, rng);
  c1_.register_in(params_, "feat.c1");
  c2_.register_in(params_, "feat.c2");
  c3_.register_in(params_, "feat.c3");
  to_feat_.register_in(params_, "feat.out");
  from_feat_.register_in(params_, "dae.in");
  d1_.register_in(params_, "dae.d1");
  d2_.register_in(params_, "dae.d2");
  d3_.register_in(params_, "dae.d3");
}

Tensor FeatureExtractor::encode(const Tensor& x) const {
  if (x.rank() != 4 || x.size(1) != 1 || x.size(2) != image_size_ || x.size(3) != image_size_) {
    throw ShapeError("feature extractor expects (N,1," + std::to_string(image_size_) + "," +
                     std::to_string(image_size_) + "), got " + shape_str(x.shape()));
  }
  const Tensor h = relu(c3_(relu(c2_(relu(c1_(x))))));
  return to_feat_(reshape(h, {x.size(0), h.numel() / x.size(0)}));
}

Tensor FeatureExtractor::decode(const Tensor& f) const {
  const std::size_t s = image_size_ / 8;
  Tensor h = reshape(relu(from_feat_(f)), {f.size(0), 32, s, s});
  h = relu(d1_(upsample2x(h)));
  h = relu(d2_(upsample2x(h)));
  return sigmoid(d3_(upsample2x(h)));
}

Tensor FeatureExtractor::features(const std::vector<Image>& images, std::size_t batch) const {
  if (images.empty()) throw ShapeError("no images to featurize");
  NoGradGuard guard;
  std::vector<double> out;
  out.reserve(images.size() * dim_);
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t end = std::min(images.size(), start + batch);
    const std::vector<Image> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                  images.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor f = encode(images_to_tensor(part));
    out.insert(out.end(), f.data().begin(), f.data().end());
  }
  return Tensor({images.size(), dim_}, std::move(out));
}

std::vector<NamedTensor> FeatureExtractor::state() const {
  std::vector<NamedTensor> out{{"meta.features", Tensor::scalar(static_cast<double>(dim_))},
                               {"meta.image_size", Tensor::scalar(static_cast<double>(image_size_))}};
  for (const NamedTensor& p : params_.items()) out.push_back({p.name, p.tensor.detach()});
  return out;
}

FeatureExtractor FeatureExtractor::from_state(const std::vector<NamedTensor>& state) {
  if (!has_tensor(state, "meta.features")) throw DataError("checkpoint is not a feature extractor");
  FeatureExtractor fx(static_cast<std::size_t>(find_scalar(state, "meta.image_size")),
                      static_cast<std::size_t>(find_scalar(state, "meta.features")), 0);
  fx.params_.load(state);
  return fx;
}

FeatureStats feature_stats(const Tensor& features) {
  if (features.rank() != 2) throw ShapeError("features must be (N, D), got " + shape_str(features.shape()));
  const std::size_t N = features.size(0), D = features.size(1);
  if (N < 2) throw UsageError("feature statistics need at least 2 samples");
  FeatureStats st;
  st.dim = D;
  st.count = N;
  st.mean.assign(D, 0.0);
  const auto f = features.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) st.mean[d] += f[n * D + d];
  for (double& m : st.mean) m /= static_cast<double>(N);
  st.cov.assign(D * D, 0.0);
  std::vector<double> centered(D);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t d = 0; d < D; ++d) centered[d] = f[n * D + d] - st.mean[d];
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = i; j < D; ++j) st.cov[i * D + j] += centered[i] * centered[j];
  }
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = i; j < D; ++j) {
      st.cov[i * D + j] /= static_cast<double>(N - 1);
      st.cov[j * D + i] = st.cov[i * D + j];
    }
  }
  return st;
}

FeatureStats feature_stats(const std::vector<Image>& images, const FeatureExtractor& extractor) {
  if (images.size() < 2) throw UsageError("feature statistics need at least 2 images");
  return feature_stats(extractor.features(images));
}

namespace {

using Matrix = Eigen::MatrixXd;

Matrix to_matrix(const FeatureStats& s) {
  Matrix m(s.dim, s.dim);
  double scale = 0.0;
  for (std::size_t i = 0; i < s.dim; ++i) {
    for (std::size_t j = 0; j < s.dim; ++j) {
      m(i, j) = s.cov[i * s.dim + j];
      scale = std::max(scale, std::abs(m(i, j)));
    }
  }
  for (std::size_t i = 0; i < s.dim; ++i) {
    for (std::size_t j = i + 1; j < s.dim; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * std::max(1.0, scale)) {
        throw NumericError("covariance is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  return m;
}

Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim != b.dim || a.mean.size() != a.dim || b.mean.size() != b.dim || a.cov.size() != a.dim * a.dim ||
      b.cov.size() != b.dim * b.dim) {
    throw ShapeError("feature statistics dimensions differ");
  }
  const Matrix sa = to_matrix(a), sb = to_matrix(b);
  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.dim; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Matrix ra = psd_sqrt(sa);
  Matrix prod = ra * sb * ra;
  prod = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(prod, Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) tr_sqrt += std::sqrt(std::max(0.0, eig.eigenvalues()(i)));
  return std::max(0.0, mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt);
}

double kid(const Tensor& fa, const Tensor& fb) {
  if (fa.rank() != 2 || fb.rank() != 2 || fa.size(1) != fb.size(1)) {
    throw ShapeError("kid: feature sets " + shape_str(fa.shape()) + " and " + shape_str(fb.shape()));
  }
  const std::size_t m = fa.size(0), n = fb.size(0), D = fa.size(1);
  if (m < 2 || n < 2) throw UsageError("kid needs at least 2 vectors per side");
  auto kernel = [D](const double* x, const double* y) {
    double dot = 0.0;
    for (std::size_t d = 0; d < D; ++d) dot += x[d] * y[d];
    const double k = dot / static_cast<double>(D) + 1.0;
    return k * k * k;
  };
  const double* a = fa.data().data();
  const double* b = fb.data().data();
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) kaa += 2.0 * kernel(a + i * D, a + j * D);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) kbb += 2.0 * kernel(b + i * D, b + j * D);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) kab += kernel(a + i * D, b + j * D);
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  return kaa / (dm * (dm - 1)) + kbb / (dn * (dn - 1)) - 2.0 * kab / (dm * dn);
}

double time_per_sample(const std::function<void(std::size_t)>& sampler, std::size_t n) {
  if (n < 3) throw UsageError("time_per_sample needs n >= 3");
  std::vector<double> runs;
  for (int rep = 0; rep < 3; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    sampler(n);
    runs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(runs.begin(), runs.end());
  return runs[1] / static_cast<double>(n);
}

std::string MetricsReport::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "fid,kid,psnr_mean,ssim_mean,tps_seconds,n_real,n_fake,provenance\n";
  os << fid << ',' << kid << ',' << psnr_mean << ',' << ssim_mean << ',' << tps_seconds << ',' << n_real << ','
     << n_fake << ',' << provenance << '\n';
  return os.str();
}

std::string MetricsReport::text() const {
  std::ostringstream os;
  os.precision(6);
  os << "FID        " << fid << "\nKID        " << kid << "\nPSNR (dB)  " << psnr_mean << "\nSSIM       "
     << ssim_mean << "\nTPS (s)    " << tps_seconds << "\nsamples    " << n_fake << " generated / " << n_real
     << " reference\nsource     " << provenance << '\n';
  return os.str();
}

}  // namespace genspec
