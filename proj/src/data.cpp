#include "genspec/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "binio.hpp"
#include "genspec/error.hpp"
#include "genspec/parallel.hpp"

namespace genspec {

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw UsageError("unknown split '" + name + "' (expected train, val or test)");
}

namespace {

Image blur_binomial3(const Image& in) {
  static constexpr double w[3] = {0.25, 0.5, 0.25};
  const std::size_t H = in.height, W = in.width;
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  Image tmp(H, W), out(H, W);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      double s = 0.0;
      for (int k = -1; k <= 1; ++k) s += w[k + 1] * in.at(r, clampi(static_cast<std::ptrdiff_t>(c) + k, W));
      tmp.at(r, c) = s;
    }
  }
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      double s = 0.0;
      for (int k = -1; k <= 1; ++k) s += w[k + 1] * tmp.at(clampi(static_cast<std::ptrdiff_t>(r) + k, H), c);
      out.at(r, c) = s;
    }
  }
  return out;
}

}  // namespace

namespace {

PhantomParams draw_params(Rng& rng, std::size_t size) {
  const double n = static_cast<double>(size);
  PhantomParams p;
  p.center_x = n / 2.0 + rng.uniform(-0.1, 0.1) * n;
  p.center_y = n / 2.0 + rng.uniform(-0.1, 0.1) * n;
  p.pool_radius = rng.uniform(0.10, 0.16) * n;
  p.outer_radius = p.pool_radius + rng.uniform(0.06, 0.10) * n;
  p.eccentricity = rng.uniform(-0.12, 0.12);
  p.angle = rng.uniform(0.0, std::numbers::pi);
  p.background = rng.uniform(0.05, 0.15);
  p.myocardium = rng.uniform(0.35, 0.50);
  p.pool = rng.uniform(0.75, 0.95);
  p.noise_std = rng.uniform(0.01, 0.03);
  return p;
}

}  // namespace

PhantomParams phantom_params(std::uint64_t seed, std::size_t size) {
  if (size < 16) throw UsageError("phantom size must be >= 16, got " + std::to_string(size));
  Rng rng(seed);
  return draw_params(rng, size);
}

Image generate_phantom(std::uint64_t seed, std::size_t size) {
  if (size < 16) throw UsageError("phantom size must be >= 16, got " + std::to_string(size));
  Rng rng(seed);
  const PhantomParams p = draw_params(rng, size);
  const double ax = 1.0 + p.eccentricity, ay = 1.0 - p.eccentricity;
  const double ct = std::cos(p.angle), st = std::sin(p.angle);
  Image img(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double dx = static_cast<double>(c) + 0.5 - p.center_x;
      const double dy = static_cast<double>(r) + 0.5 - p.center_y;
      const double u = (dx * ct + dy * st) / ax;
      const double v = (-dx * st + dy * ct) / ay;
      const double rad = std::sqrt(u * u + v * v);
      double value = p.background;
      if (rad < p.outer_radius) value = p.myocardium;
      if (rad < p.pool_radius) value = p.pool;
      img.at(r, c) = value + p.noise_std * rng.normal();
    }
  }
  img = blur_binomial3(img);
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return img;
}

std::uint64_t phantom_seed(std::uint64_t base_seed, Split split, std::size_t index) {
  if (index >= kSplitStride) throw UsageError("dataset index exceeds split range");
  return base_seed + static_cast<std::uint64_t>(split) * kSplitStride + index;
}

Dataset generate_dataset(std::uint64_t base_seed, Split split, std::size_t count, std::size_t size,
                         std::size_t threads) {
  if (count >= kSplitStride) throw UsageError("dataset count must stay below 2^32");
  Dataset ds;
  ds.split = split;
  ds.seed = base_seed;
  ds.images.resize(count);
  parallel_for(count, threads, [&](std::size_t i) {
    ds.images[i] = generate_phantom(phantom_seed(base_seed, split, i), size);
  });
  return ds;
}

Image center_crop(const Image& image, std::size_t target) {
  if (target == 0 || target > image.height || target > image.width) {
    throw ShapeError("crop target " + std::to_string(target) + " exceeds image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width));
  }
  const std::size_t r0 = (image.height - target) / 2;
  const std::size_t c0 = (image.width - target) / 2;
  Image out(target, target);
  for (std::size_t r = 0; r < target; ++r) {
    for (std::size_t c = 0; c < target; ++c) out.at(r, c) = image.at(r0 + r, c0 + c);
  }
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) out.at(r, c) = image.at(r, image.width - 1 - c);
  }
  return out;
}

Image flip_vertical(const Image& image) {
  Image out(image.height, image.width);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) out.at(r, c) = image.at(image.height - 1 - r, c);
  }
  return out;
}

Image augment(const Image& image, Rng& rng) {
  const bool h = rng.bernoulli(0.5);
  const bool v = rng.bernoulli(0.5);
  Image out = h ? flip_horizontal(image) : image;
  return v ? flip_vertical(out) : out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  binio::Writer w;
  const std::size_t size = dataset.image_size();
  w.bytes("GMZD");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(dataset.images.size()));
  w.u32(static_cast<std::uint32_t>(size));
  w.buffer().reserve(kDatasetHeaderBytes + dataset.images.size() * size * size * 8);
  for (const Image& img : dataset.images) {
    if (img.height != size || img.width != size) throw ShapeError("dataset images must share one square size");
    for (double p : img.pixels) {
      if (!(p >= 0.0 && p <= 1.0)) throw DataError("pixel value " + std::to_string(p) + " outside [0,1]");
      w.f64(p);
    }
  }
  binio::write_file(path, w.buffer());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  if (r.bytes(4, "magic") != "GMZD") throw DataError("bad dataset magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) throw DataError("unsupported dataset version " + std::to_string(version), 4);
  const std::uint32_t count = r.u32("count");
  const std::uint32_t size = r.u32("size");
  const std::size_t payload = static_cast<std::size_t>(count) * size * size * 8;
  r.need(payload, "pixel payload");
  if (r.remaining() != payload) throw DataError("trailing bytes after pixel payload", kDatasetHeaderBytes + payload);
  Dataset ds;
  ds.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Image img(size, size);
    for (double& p : img.pixels) {
      const std::size_t at = r.offset();
      p = r.f64("pixel");
      if (!(p >= 0.0 && p <= 1.0)) throw DataError("pixel value " + std::to_string(p) + " outside [0,1]", at);
    }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

Tensor images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("cannot stack zero images");
  const std::size_t H = images[0]->height, W = images[0]->width;
  std::vector<double> v;
  v.reserve(images.size() * H * W);
  for (const Image* img : images) {
    if (img->height != H || img->width != W) throw ShapeError("images in a batch must share a shape");
    v.insert(v.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor({images.size(), 1, H, W}, std::move(v));
}

Tensor images_to_tensor(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  for (const Image& img : images) ptrs.push_back(&img);
  return images_to_tensor(ptrs);
}

std::vector<Image> tensor_to_images(const Tensor& t) {
  if (t.rank() != 4 || t.size(1) != 1) throw ShapeError("expected (N,1,H,W), got " + shape_str(t.shape()));
  const std::size_t N = t.size(0), H = t.size(2), W = t.size(3);
  std::vector<Image> out(N, Image(H, W));
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(t.data().data() + n * H * W, H * W, out[n].pixels.begin());
  }
  return out;
}

}  // namespace genspec
