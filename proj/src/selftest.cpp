#include <cmath>
#include <functional>
#include <sstream>

#include "genspec/cli.hpp"
#include "genspec/diffusion.hpp"
#include "genspec/error.hpp"
#include "genspec/gradcheck.hpp"
#include "genspec/harness.hpp"
#include "genspec/metrics.hpp"
#include "genspec/tokprior.hpp"

namespace genspec {

namespace {

std::string num(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

SelfCheck op_gradients() {
  double worst = 0.0;
  std::string worst_op = "none";
  for (const OpGradCase& c : standard_op_cases(11)) {
    const OpGradReport r = check_op_gradient(c, 12);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_op = op_kind_name(r.kind);
    }
  }
  return {"op gradients vs central differences", worst <= 1e-4, "worst " + worst_op + " " + num(worst)};
}

SelfCheck oracle_chain() {
  const NoiseSchedule s = make_schedule(50, 1e-4, 0.02, 0.0);
  Rng rng(3);
  Tensor z0({2, 4, 4, 4}), eps({2, 4, 4, 4});
  for (double& v : z0.data_mut()) v = rng.normal();
  for (double& v : eps.data_mut()) v = rng.normal();
  // the exact noise predictor for this z0
  const NoisePredictor oracle = [&](const Tensor& zt, const std::vector<std::size_t>& t) {
    const double ab = s.alpha_bar[t.front()];
    return scale(sub(zt, scale(z0, std::sqrt(ab))), 1.0 / std::sqrt(1.0 - ab));
  };
  NoiseStreams streams(1, 2);
  const Tensor out = sample_from(forward_marginal(z0, 50, eps, s), oracle, s, {1.0, 0}, streams);
  const double err = max_relative_error(out.data(), z0.data());
  return {"deterministic reverse chain recovers z0", err <= 1e-8, "error " + num(err)};
}

SelfCheck injection() {
  const NoiseSchedule s = make_schedule(20, 1e-4, 0.02, 1.0);
  Rng rng(4);
  Tensor z({3, 4, 8, 8});
  for (double& v : z.data_mut()) v = rng.normal();
  const NoisePredictor noise = [&](const Tensor& zt, const std::vector<std::size_t>&) { return scale(zt, 0.3); };
  bool exact = true;
  for (double ratio : {0.0, 0.3, 0.7, 1.0}) {
    std::vector<double> m;
    for (std::uint64_t i = 0; i < 3; ++i) {
      const MaskViews v = make_mask({ratio, MaskGeometry::RandomRect, i}, 32);
      m.insert(m.end(), v.cells.begin(), v.cells.end());
    }
    NoiseStreams streams(5, 3);
    const Tensor out = inpaint(noise, s, z, Tensor({3, 1, 8, 8}, m), {1.0, 0}, streams);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t k = 0; k < 64; ++k) {
          const std::size_t at = (n * 4 + c) * 64 + k;
          if (m[n * 64 + k] == 0.0 && out.at(at) != z.at(at)) exact = false;
        }
  }
  return {"known latent cells survive inpainting bitwise", exact, ""};
}

SelfCheck causal_invariance() {
  SeqModelConfig cfg;
  cfg.vocab = 8;
  cfg.seq_len = 12;
  cfg.d_model = 16;
  cfg.blocks = 1;
  cfg.causal = true;
  const SeqModel model(cfg, 2);
  TokenSeq a(12), b;
  for (std::size_t i = 0; i < 12; ++i) a[i] = (i * 5) % 8;
  b = a;
  for (std::size_t i = 7; i < 12; ++i) b[i] = (b[i] + 3) % 8;
  NoGradGuard guard;
  const Tensor la = model.causal_logits({a}, 12), lb = model.causal_logits({b}, 12);
  bool same = true;
  for (std::size_t i = 0; i < 8 * 8; ++i) same = same && la.at(i) == lb.at(i);
  return {"causal logits ignore future tokens", same, ""};
}

SelfCheck schedule_sums() {
  bool ok = true;
  for (std::size_t m : {1, 7, 64}) {
    for (std::size_t steps : {1, 3, 8, 12}) {
      const auto counts = maskgit_schedule(m, steps);
      std::size_t total = 0;
      for (std::size_t c : counts) total += c;
      ok = ok && total == m && counts.size() == steps;
    }
  }
  return {"maskgit schedule counts sum to |M|", ok, ""};
}

SelfCheck metric_oracles() {
  const double p = psnr(Image(8, 8, 0.0), Image(8, 8, 0.1));
  FeatureStats a{1, 10, {0.3}, {4.0}}, b{1, 10, {-1.2}, {0.25}};
  const double fd = frechet_distance(a, b);
  const bool ok = std::abs(p - 20.0) < 1e-9 && std::abs(fd - (1.5 * 1.5 + 1.5 * 1.5)) < 1e-8;
  return {"psnr and frechet closed forms", ok, "psnr " + num(p) + ", fd " + num(fd)};
}

SelfCheck mask_fractions() {
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double f = make_mask({0.5, MaskGeometry::RandomRect, seed}, 32).fraction();
    ok = ok && f >= 0.45 && f <= 0.55;
  }
  return {"random-rect masks hit the target ratio", ok, ""};
}

}  // namespace

std::vector<SelfCheck> run_selftest() {
  const std::vector<std::function<SelfCheck()>> checks{op_gradients,  oracle_chain,   injection,     causal_invariance,
                                                       schedule_sums, metric_oracles, mask_fractions};
  std::vector<SelfCheck> out;
  for (const auto& check : checks) {
    try {
      out.push_back(check());
    } catch (const std::exception& e) {
      out.push_back({"(check threw)", false, e.what()});
    }
  }
  return out;
}

}  // namespace genspec
