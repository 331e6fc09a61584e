#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "genspec/rng.hpp"
#include "genspec/tensor.hpp"

namespace genspec {

/// Grayscale image, row-major, values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  std::size_t size() const { return pixels.size(); }
  bool operator==(const Image&) const = default;
};

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct Dataset {
  Split split = Split::Train;
  std::uint64_t seed = 0;
  std::vector<Image> images;

  std::size_t image_size() const { return images.empty() ? 0 : images.front().height; }
};

struct PhantomParams {
  double center_x = 0.0, center_y = 0.0;  // pixel units, pixel centers at +0.5
  double pool_radius = 0.0, outer_radius = 0.0;
  double eccentricity = 0.0;  // axis scales (1+e, 1-e)
  double angle = 0.0;
  double background = 0.0, myocardium = 0.0, pool = 0.0;
  double noise_std = 0.0;
};

/// Draws the shape parameters consumed by generate_phantom for this seed.
PhantomParams phantom_params(std::uint64_t seed, std::size_t size);

/// Procedural short-axis-like slice: noisy dark background, mid-intensity
/// myocardial annulus around a bright blood pool, elliptical and jittered,
/// 3x3 binomial blur, clamped to [0,1].
Image generate_phantom(std::uint64_t seed, std::size_t size);

/// Per-image seed for index `i` of a split. Splits occupy disjoint ranges of
/// width 2^32 above the base seed.
std::uint64_t phantom_seed(std::uint64_t base_seed, Split split, std::size_t index);
inline constexpr std::uint64_t kSplitStride = std::uint64_t{1} << 32;

Dataset generate_dataset(std::uint64_t base_seed, Split split, std::size_t count, std::size_t size,
                         std::size_t threads = 1);

/// Window offset floor((dim - target)/2) along each axis.
Image center_crop(const Image& image, std::size_t target);
Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);
/// Independent 50% horizontal and 50% vertical flips.
Image augment(const Image& image, Rng& rng);

// "GMZD" | version u32 | count u32 | size u32 | count*size*size f64 (LE)
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 16;

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Stacks images into an (N,1,H,W) tensor.
Tensor images_to_tensor(const std::vector<Image>& images);
Tensor images_to_tensor(const std::vector<const Image*>& images);
/// Splits an (N,1,H,W) tensor back into images.
std::vector<Image> tensor_to_images(const Tensor& t);

}  // namespace genspec
