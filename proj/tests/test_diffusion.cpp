#include <bit>
#include <cmath>

#include "doctest.h"
#include "genspec/diffusion.hpp"
#include "genspec/error.hpp"
#include "genspec/gradcheck.hpp"

using namespace genspec;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

NoisePredictor zero_model() {
  return [](const Tensor& z, const std::vector<std::size_t>&) { return Tensor(z.shape(), 0.0); };
}

NoisePredictor constant_eps(const Tensor& eps) {
  return [eps](const Tensor&, const std::vector<std::size_t>&) { return eps; };
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("schedule construction") {
  const NoiseSchedule s = make_schedule(200, 1e-4, 0.02, 1.0);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.alpha_bar[1] == 1.0 - s.beta[0]);
  CHECK(s.beta[0] == 1e-4);
  CHECK(s.beta[199] == doctest::Approx(0.02).epsilon(1e-14));
  for (std::size_t t = 1; t <= s.T; ++t) {
    REQUIRE(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    REQUIRE(1.0 - s.alpha_bar[t - 1] - s.sigma[t - 1] * s.sigma[t - 1] >= -1e-15);
  }
  const NoiseSchedule det = make_schedule(200, 1e-4, 0.02, 0.0);
  for (double v : det.sigma) CHECK(v == 0.0);

  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02, 1.0), UsageError);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02, 1.0), UsageError);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0, 1.0), UsageError);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 0.02, 1.5), UsageError);
}

TEST_CASE("forward marginal") {
  Rng rng(1);
  const Tensor z0 = random_tensor({2, 3}, rng), eps = random_tensor({2, 3}, rng);
  const NoiseSchedule s = make_schedule(50, 1e-4, 0.02, 1.0);
  CHECK(bitwise_equal(forward_marginal(z0, 0, eps, s), z0));
  CHECK_THROWS_AS(forward_marginal(z0, 51, eps, s), UsageError);

  const NoiseSchedule harsh = make_schedule(60, 0.999, 0.999, 1.0);
  const Tensor zt = forward_marginal(z0, 60, eps, harsh);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(zt.at(i) - eps.at(i)) < 1e-12);
}

TEST_CASE("single-step transitions compose to the closed-form marginal") {
  // Each trial runs a whole 4x8x8 latent through 50 single-step transitions.
  const NoiseSchedule s = make_schedule(200, 1e-4, 0.02, 1.0);
  const double z0 = 1.3;
  const std::size_t trials = 10000, steps = 50;
  NoiseStreams streams(2, trials);
  Tensor z({trials, 4, 8, 8}, z0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const Tensor eps = streams.gaussian(z.shape());
    z = add(scale(z, std::sqrt(1.0 - s.beta[t - 1])), scale(eps, std::sqrt(s.beta[t - 1])));
  }
  double m = 0.0, m2 = 0.0;
  for (double v : z.data()) {
    m += v;
    m2 += v * v;
  }
  m /= z.numel();
  const double var = m2 / z.numel() - m * m;
  const double want_m = std::sqrt(s.alpha_bar[steps]) * z0, want_v = 1.0 - s.alpha_bar[steps];
  CHECK(std::abs(m - want_m) / want_m < 0.01);
  CHECK(std::abs(var - want_v) / want_v < 0.01);
}

TEST_CASE("ddpm loss") {
  const NoiseSchedule s = make_schedule(200, 1e-4, 0.02, 1.0);
  Rng rng(3);
  const Tensor z0 = random_tensor({4, 2, 4, 4}, rng);

  SUBCASE("oracle noise predictor gives zero loss") {
    const std::size_t row = z0.numel() / 4;
    NoisePredictor oracle = [&](const Tensor& zt, const std::vector<std::size_t>& t) {
      Tensor e(zt.shape(), 0.0);
      for (std::size_t n = 0; n < 4; ++n) {
        const double a = std::sqrt(s.alpha_bar[t[n]]), b = std::sqrt(1.0 - s.alpha_bar[t[n]]);
        for (std::size_t i = 0; i < row; ++i) e.data_mut()[n * row + i] = (zt.at(n * row + i) - a * z0.at(n * row + i)) / b;
      }
      return e;
    };
    NoiseStreams streams(5, 4);
    CHECK(ddpm_loss(oracle, z0, s, streams).item() < 1e-20);
  }
  SUBCASE("zero predictor gives unit mean-per-element loss") {
    const Tensor big({1000, 2, 8, 8}, 0.5);
    NoiseStreams streams(6, 1000);
    CHECK(ddpm_loss(zero_model(), big, s, streams).item() == doctest::Approx(1.0).epsilon(0.02));
  }
  SUBCASE("parameter gradient matches finite differences") {
    Denoiser net({2, 4, 4}, 7);
    Tensor& w = net.params().items()[net.params().size() - 4].tensor;  // dec1.weight
    REQUIRE(net.params().items()[net.params().size() - 4].name == "dec1.weight");
    auto loss_at = [&] {
      NoiseStreams streams(8, 4);
      return ddpm_loss([&](const Tensor& z, const std::vector<std::size_t>& t) { return net(z, t); }, z0, s, streams);
    };
    // the zero-initialized head would hide everything upstream
    Tensor& head = net.params().items()[net.params().size() - 2].tensor;
    Rng init(9);
    for (double& v : head.data_mut()) v = init.uniform(-0.3, 0.3);

    net.params().zero_grad();
    backward(loss_at());
    const std::vector<double> analytic(w.grad().begin(), w.grad().end());
    const Tensor fd = finite_diff_grad(
        [&](const Tensor& probe) {
          const std::vector<double> saved(w.data().begin(), w.data().end());
          std::copy(probe.data().begin(), probe.data().end(), w.data_mut().begin());
          const double v = loss_at().item();
          std::copy(saved.begin(), saved.end(), w.data_mut().begin());
          return v;
        },
        w);
    CHECK(max_relative_error(analytic, fd.data()) <= 1e-4);
  }
}

TEST_CASE("reverse step") {
  const NoiseSchedule det = make_schedule(200, 1e-4, 0.02, 0.0);
  Rng rng(10);
  const Tensor z0 = random_tensor({2, 2, 4, 4}, rng);
  NoiseStreams eps_src(11, 2);
  const Tensor eps = eps_src.gaussian(z0.shape());

  SUBCASE("oracle noise with zero sigma lands on the marginal") {
    NoiseStreams streams(1, 2);
    for (std::size_t t : {1u, 2u, 50u, 200u}) {
      const Tensor prev = reverse_step(forward_marginal(z0, t, eps, det), t, constant_eps(eps), det, 1.0, streams);
      const Tensor want = forward_marginal(z0, t - 1, eps, det);
      for (std::size_t i = 0; i < z0.numel(); ++i) CHECK(std::abs(prev.at(i) - want.at(i)) < 1e-12);
    }
  }
  SUBCASE("tau = 0 ignores the random stream") {
    const NoiseSchedule s = make_schedule(200, 1e-4, 0.02, 1.0);
    NoiseStreams a(1, 2), b(2, 2);
    const Tensor zt = forward_marginal(z0, 80, eps, s);
    CHECK(bitwise_equal(reverse_step(zt, 80, constant_eps(eps), s, 0.0, a),
                        reverse_step(zt, 80, constant_eps(eps), s, 0.0, b)));
  }
  SUBCASE("tau = 1 output variance equals sigma_t^2") {
    const NoiseSchedule s = make_schedule(200, 1e-4, 0.02, 1.0);
    const std::size_t n = 10000, t = 120;
    const Tensor zt({n, 1, 4, 4}, 0.3);
    const Tensor e({n, 1, 4, 4}, -0.2);
    NoiseStreams streams(3, n);
    const Tensor out = reverse_step(zt, t, constant_eps(e), s, 1.0, streams);
    // every cell shares the same mean, so pool all of them
    double m = 0.0, m2 = 0.0;
    for (double v : out.data()) {
      m += v;
      m2 += v * v;
    }
    m /= out.numel();
    const double var = m2 / out.numel() - m * m;
    const double sig2 = s.sigma[t - 1] * s.sigma[t - 1];
    CHECK(std::abs(var - sig2) / sig2 < 0.02);
  }
}

TEST_CASE("full oracle chain recovers z0") {
  const NoiseSchedule det = make_schedule(200, 1e-4, 0.02, 0.0);
  Rng rng(12);
  const Tensor z0 = random_tensor({3, 2, 4, 4}, rng);
  NoiseStreams eps_src(13, 3);
  const Tensor eps = eps_src.gaussian(z0.shape());
  NoiseStreams streams(14, 3);
  const Tensor out = sample_from(forward_marginal(z0, 200, eps, det), constant_eps(eps), det, {}, streams);
  for (std::size_t i = 0; i < z0.numel(); ++i) CHECK(std::abs(out.at(i) - z0.at(i)) < 1e-8);

  SampleOptions strided;
  strided.steps = 37;
  NoiseStreams again(14, 3);
  const Tensor out2 = sample_from(forward_marginal(z0, 200, eps, det), constant_eps(eps), det, strided, again);
  for (std::size_t i = 0; i < z0.numel(); ++i) CHECK(std::abs(out2.at(i) - z0.at(i)) < 1e-8);
}

TEST_CASE("sampling timesteps") {
  const auto full = sampling_timesteps(200, 200);
  REQUIRE(full.size() == 201);
  for (std::size_t i = 0; i <= 200; ++i) CHECK(full[i] == 200 - i);
  CHECK(sampling_timesteps(200, 1) == std::vector<std::size_t>{200, 0});
  const auto half = sampling_timesteps(200, 100);
  CHECK(half.size() == 101);
  CHECK(half[1] == 198);
  CHECK_THROWS_AS(sampling_timesteps(200, 0), UsageError);
  CHECK_THROWS_AS(sampling_timesteps(200, 201), UsageError);
}

TEST_CASE("sampling contracts") {
  const NoiseSchedule s = make_schedule(200, 1e-4, 0.02, 1.0);
  NoiseStreams init(20, 2);
  const Tensor zT = init.gaussian({2, 4, 8, 8});
  SampleOptions cold;
  cold.tau = 0.0;

  NoiseStreams a(1, 2), b(2, 2);
  const Tensor x1 = sample_from(zT, zero_model(), s, cold, a);
  const Tensor x2 = sample_from(zT, zero_model(), s, cold, b);
  CHECK(bitwise_equal(x1, x2));

  // eps_hat = 0 makes every step z <- c0 * z with c0 = sqrt(abar_prev / abar_t)
  const double gain = 1.0 / std::sqrt(s.alpha_bar[200]);
  for (std::size_t i = 0; i < zT.numel(); ++i) {
    REQUIRE(std::isfinite(x1.at(i)));
    CHECK(x1.at(i) == doctest::Approx(gain * zT.at(i)).epsilon(1e-10));
  }

  NoiseStreams c(3, 2);
  const Tensor warm = sample(zero_model(), s, {2, 4, 8, 8}, {}, c);
  for (double v : warm.data()) CHECK(std::isfinite(v));
}

TEST_CASE("known-region injection") {
  const NoiseSchedule s = make_schedule(200, 1e-4, 0.02, 1.0);
  NoiseStreams src(30, 3);
  const Tensor known = src.gaussian({3, 4, 8, 8});
  NoisePredictor toy = [&](const Tensor& z, const std::vector<std::size_t>& t) {
    return scale(z, 0.5 * std::sqrt(1.0 - s.alpha_bar[t[0]]));
  };

  SUBCASE("empty mask returns the input") {
    NoiseStreams r(1, 3);
    CHECK(bitwise_equal(inpaint(toy, s, known, Tensor({3, 1, 8, 8}, 0.0), {}, r), known));
  }
  SUBCASE("known cells are bitwise preserved") {
    Tensor mask({3, 1, 8, 8}, 0.0);
    for (std::size_t i = 0; i < mask.numel(); i += 3) mask.data_mut()[i] = 1.0;
    NoiseStreams r(2, 3);
    SampleOptions opt;
    opt.steps = 50;
    const Tensor out = inpaint(toy, s, known, mask, opt, r);
    std::size_t changed = 0;
    for (std::size_t n = 0; n < 3; ++n) {
      for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t i = 0; i < 64; ++i) {
          const std::size_t at = (n * 4 + c) * 64 + i;
          if (mask.at(n * 64 + i) == 0.0) {
            REQUIRE(std::bit_cast<std::uint64_t>(out.at(at)) == std::bit_cast<std::uint64_t>(known.at(at)));
          } else if (out.at(at) != known.at(at)) {
            ++changed;
          }
        }
      }
    }
    CHECK(changed > 0);
  }
  SUBCASE("full mask matches unconditional moments") {
    const std::size_t n = 500;
    NoiseStreams ks(31, n);
    const Tensor z_known = ks.gaussian({n, 4, 8, 8});
    SampleOptions opt;
    opt.steps = 40;
    NoiseStreams r1(4, n), r2(5, n);
    const Tensor a = inpaint(toy, s, z_known, Tensor({n, 1, 8, 8}, 1.0), opt, r1);
    const Tensor b = sample(toy, s, {n, 4, 8, 8}, opt, r2);
    auto moments = [](const Tensor& t) {
      double m = 0.0, m2 = 0.0;
      for (double v : t.data()) {
        m += v;
        m2 += v * v;
      }
      m /= t.numel();
      return std::pair{m, m2 / t.numel() - m * m};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    CHECK(std::abs(ma - mb) < 0.05 * std::sqrt(vb));
    CHECK(std::abs(va - vb) / vb < 0.05);
  }
  SUBCASE("mask shape must match") {
    NoiseStreams r(1, 3);
    CHECK_THROWS_AS(inpaint(toy, s, known, Tensor({3, 1, 4, 4}, 1.0), {}, r), ShapeError);
  }
}

TEST_CASE("denoiser and checkpoint") {
  DiffusionModel m{Denoiser({4, 8, 8}, 40), make_schedule(200, 1e-4, 0.02, 1.0), 0.6};
  NoiseStreams r(1, 2);
  const Tensor z = r.gaussian({2, 4, 8, 8});
  const Tensor e = m.net(z, {5, 100});
  CHECK(e.shape() == z.shape());
  for (double v : e.data()) CHECK(v == 0.0);

  Rng rng(2);
  for (auto& p : m.net.params().items())
    for (double& v : p.tensor.data_mut()) v += rng.uniform(-0.01, 0.01);
  const DiffusionModel back = DiffusionModel::from_state(m.state());
  CHECK(back.latent_scale == 0.6);
  CHECK(back.schedule.T == 200);
  CHECK(bitwise_equal(back.net(z, {5, 100}), m.net(z, {5, 100})));
  CHECK_THROWS_AS(m.net(z, {1}), ShapeError);
}
