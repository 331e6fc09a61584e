#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "genspec/cli.hpp"
#include "genspec/data.hpp"
#include "genspec/diffusion.hpp"
#include "genspec/error.hpp"
#include "genspec/harness.hpp"
#include "genspec/metrics.hpp"
#include "genspec/tokprior.hpp"

namespace py = pybind11;
using namespace genspec;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array image_array(const Image& img) {
  Array a({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

Image array_image(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  Image img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Array images_array(const std::vector<Image>& images) {
  const std::size_t h = images.empty() ? 0 : images.front().height, w = images.empty() ? 0 : images.front().width;
  Array a({images.size(), h, w});
  double* out = a.mutable_data();
  for (const Image& img : images) out = std::copy(img.pixels.begin(), img.pixels.end(), out);
  return a;
}

std::vector<Image> array_images(const Array& a) {
  if (a.ndim() != 3) throw ShapeError("expected an (N, H, W) array");
  const auto n = static_cast<std::size_t>(a.shape(0)), h = static_cast<std::size_t>(a.shape(1)),
             w = static_cast<std::size_t>(a.shape(2));
  std::vector<Image> out(n, Image(h, w));
  for (std::size_t i = 0; i < n; ++i) std::copy(a.data() + i * h * w, a.data() + (i + 1) * h * w, out[i].pixels.begin());
  return out;
}

Tensor matrix_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected an (N, D) array");
  return Tensor({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                std::vector<double>(a.data(), a.data() + a.size()));
}

FeatureStats stats_from(const Array& mean, const Array& cov) {
  if (mean.ndim() != 1 || cov.ndim() != 2 || cov.shape(0) != mean.shape(0) || cov.shape(1) != mean.shape(0)) {
    throw ShapeError("mean must be (D,) and cov (D, D)");
  }
  FeatureStats s;
  s.dim = static_cast<std::size_t>(mean.shape(0));
  s.count = 2;
  s.mean.assign(mean.data(), mean.data() + mean.size());
  s.cov.assign(cov.data(), cov.data() + cov.size());
  return s;
}

}  // namespace

PYBIND11_MODULE(_genspec, m) {
  m.doc() = "Phantom data, metrics, masks and schedules from the genspec C++ core";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("generate_phantom", [](std::uint64_t seed, std::size_t size) { return image_array(generate_phantom(seed, size)); },
        py::arg("seed"), py::arg("size") = 32);
  m.def(
      "generate_dataset",
      [](std::uint64_t seed, const std::string& split, std::size_t count, std::size_t size) {
        return images_array(generate_dataset(seed, parse_split(split), count, size).images);
      },
      py::arg("seed"), py::arg("split"), py::arg("count"), py::arg("size") = 32);
  m.def("load_dataset", [](const std::string& path) { return images_array(load_dataset(path).images); });
  m.def("save_dataset", [](const Array& images, const std::string& path) {
    Dataset ds;
    ds.images = array_images(images);
    save_dataset(ds, path);
  });

  m.def("psnr", [](const Array& x, const Array& y) { return psnr(array_image(x), array_image(y)); });
  m.def("ssim", [](const Array& x, const Array& y) { return ssim(array_image(x), array_image(y)); });
  m.def(
      "frechet_distance",
      [](const Array& mean_a, const Array& cov_a, const Array& mean_b, const Array& cov_b) {
        return frechet_distance(stats_from(mean_a, cov_a), stats_from(mean_b, cov_b));
      },
      py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));
  m.def("kid", [](const Array& a, const Array& b) { return kid(matrix_tensor(a), matrix_tensor(b)); });
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) {
    const Spearman s = spearman(x, y);
    return py::make_tuple(s.rho, s.p_value);
  });

  m.def(
      "make_mask",
      [](double ratio, const std::string& geometry, std::uint64_t seed, std::size_t image_size,
         std::size_t downsample) {
        const MaskViews v = make_mask({ratio, parse_geometry(geometry), seed}, image_size, downsample);
        py::array_t<std::uint8_t> cells({v.grid, v.grid});
        std::copy(v.cells.begin(), v.cells.end(), cells.mutable_data());
        return py::make_tuple(image_array(v.pixel), cells);
      },
      py::arg("ratio"), py::arg("geometry") = "random-rect", py::arg("seed") = 0, py::arg("image_size") = 32,
      py::arg("downsample") = 4);

  m.def("maskgit_schedule", &maskgit_schedule, py::arg("masked"), py::arg("steps"));
  m.def("sampling_timesteps", &sampling_timesteps, py::arg("T"), py::arg("steps"));
  m.def(
      "noise_schedule",
      [](std::size_t T, double beta_start, double beta_end, double eta) {
        const NoiseSchedule s = make_schedule(T, beta_start, beta_end, eta);
        py::dict d;
        d["beta"] = s.beta;
        d["alpha_bar"] = s.alpha_bar;
        d["sigma"] = s.sigma;
        return d;
      },
      py::arg("T") = 200, py::arg("beta_start") = 5e-4, py::arg("beta_end") = 0.1, py::arg("eta") = 1.0);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> argv{"genspec"};
        argv.insert(argv.end(), args.begin(), args.end());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = dispatch(argv, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs a genspec subcommand; returns (exit_code, stdout, stderr).");
  m.def("selftest", [] {
    py::list out;
    for (const SelfCheck& c : run_selftest()) out.append(py::make_tuple(c.name, c.passed, c.detail));
    return out;
  });
}
