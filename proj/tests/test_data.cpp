#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "genspec/data.hpp"
#include "genspec/error.hpp"

using namespace genspec;

namespace {

std::vector<double> sorted_pixels(const Image& img) {
  std::vector<double> v = img.pixels;
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("phantoms are deterministic per seed") {
  CHECK(generate_phantom(42, 32) == generate_phantom(42, 32));
  CHECK_FALSE(generate_phantom(42, 32) == generate_phantom(43, 32));
  CHECK_THROWS_AS(generate_phantom(1, 15), UsageError);
}

TEST_CASE("annulus is brighter than the background") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t n = 64;
    const Image img = generate_phantom(seed, n);
    const PhantomParams p = phantom_params(seed, n);
    // Region masks from the geometry; a 1 px margin covers the blur footprint.
    double ring = 0.0, bg = 0.0;
    int ring_n = 0, bg_n = 0;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const double dx = c + 0.5 - p.center_x, dy = r + 0.5 - p.center_y;
        const double u = (dx * std::cos(p.angle) + dy * std::sin(p.angle)) / (1 + p.eccentricity);
        const double v = (-dx * std::sin(p.angle) + dy * std::cos(p.angle)) / (1 - p.eccentricity);
        const double rad = std::hypot(u, v);
        if (rad > p.pool_radius + 1.0 && rad < p.outer_radius - 1.0) {
          ring += img.at(r, c);
          ++ring_n;
        } else if (rad > p.outer_radius + 1.0) {
          bg += img.at(r, c);
          ++bg_n;
        }
      }
    }
    REQUIRE(ring_n > 0);
    REQUIRE(bg_n > 0);
    CHECK(ring / ring_n > bg / bg_n);
  }
}

TEST_CASE("pixels stay within [0,1]") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Image img = generate_phantom(seed, 32);
    const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    REQUIRE(*lo >= 0.0);
    REQUIRE(*hi <= 1.0);
  }
}

TEST_CASE("center crop") {
  Image big(160, 160);
  for (std::size_t i = 0; i < big.size(); ++i) big.pixels[i] = static_cast<double>(i) / big.size();
  const Image crop = center_crop(big, 128);
  CHECK(crop.height == 128);
  CHECK(crop.at(0, 0) == big.at(16, 16));
  CHECK(crop.at(127, 127) == big.at(143, 143));

  CHECK(center_crop(big, 160) == big);
  CHECK_THROWS_AS(center_crop(big, 161), ShapeError);

  Image embedded(160, 160, -1.0);
  for (std::size_t r = 0; r < 128; ++r)
    for (std::size_t c = 0; c < 128; ++c) embedded.at(r + 16, c + 16) = crop.at(r, c);
  for (std::size_t r = 16; r < 144; ++r)
    for (std::size_t c = 16; c < 144; ++c) REQUIRE(embedded.at(r, c) == big.at(r, c));

  Image odd(33, 33);
  CHECK(center_crop(odd, 32).height == 32);
}

TEST_CASE("flips") {
  const Image img = generate_phantom(3, 32);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(flip_vertical(flip_vertical(img)) == img);
  CHECK(flip_horizontal(img).at(5, 0) == img.at(5, 31));

  Image sym(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) sym.at(r, c) = std::min({r, c, 3 - r, 3 - c}) * 0.1;
  CHECK(flip_horizontal(sym) == sym);
  CHECK(flip_vertical(sym) == sym);

  Rng rng(7);
  Image probe(2, 2);
  probe.pixels = {0.0, 0.1, 0.2, 0.3};
  int h = 0, v = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Image out = augment(probe, rng);
    CHECK(sorted_pixels(out) == sorted_pixels(probe));
    // top-left pixel identifies the flip combination
    const double tl = out.at(0, 0);
    if (tl == 0.1 || tl == 0.3) ++h;
    if (tl == 0.2 || tl == 0.3) ++v;
  }
  CHECK(std::abs(h / double(draws) - 0.5) <= 0.02);
  CHECK(std::abs(v / double(draws) - 0.5) <= 0.02);
}

TEST_CASE("dataset container") {
  const auto dir = std::filesystem::temp_directory_path() / "genspec_data_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ds.bin";
  const Dataset ds = generate_dataset(9, Split::Val, 5, 32, 2);
  save_dataset(ds, path);
  CHECK(std::filesystem::file_size(path) == kDatasetHeaderBytes + 8 * 5 * 32 * 32);

  const Dataset back = load_dataset(path);
  REQUIRE(back.images.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(back.images[i] == ds.images[i]);

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(load_dataset(path), DataError);
  }
  SUBCASE("truncation reports an offset") {
    std::filesystem::resize_file(path, kDatasetHeaderBytes + 100);
    try {
      load_dataset(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(e.offset() != DataError::npos);
    }
  }
  SUBCASE("out-of-range pixel reports its offset") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(kDatasetHeaderBytes + 8 * 3);
    const double bad = 1.5;
    f.write(reinterpret_cast<const char*>(&bad), 8);
    f.close();
    try {
      load_dataset(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(e.offset() == kDatasetHeaderBytes + 8 * 3);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("generation is pure and splits are disjoint") {
  const Dataset a = generate_dataset(100, Split::Train, 4, 32, 1);
  const Dataset b = generate_dataset(100, Split::Train, 4, 32, 3);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.images[i] == b.images[i]);

  const std::uint64_t base = 100;
  const std::uint64_t last_train = phantom_seed(base, Split::Train, kSplitStride - 1);
  CHECK(last_train < phantom_seed(base, Split::Val, 0));
  CHECK(phantom_seed(base, Split::Val, kSplitStride - 1) < phantom_seed(base, Split::Test, 0));
  CHECK_THROWS_AS(phantom_seed(base, Split::Train, kSplitStride), UsageError);
}

TEST_CASE("tensor conversion round trip") {
  const Dataset ds = generate_dataset(1, Split::Test, 3, 16);
  const Tensor t = images_to_tensor(ds.images);
  CHECK(t.shape() == Shape{3, 1, 16, 16});
  const auto back = tensor_to_images(t);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == ds.images[i]);
}
