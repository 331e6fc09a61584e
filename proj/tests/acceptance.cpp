// Acceptance run: trains the desk-scale zoo through the genspec binary (cached
// in a work directory), then prints one PASS/FAIL line per criterion.

#include <CLI11.hpp>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "genspec/checkpoint.hpp"
#include "genspec/gradcheck.hpp"
#include "genspec/harness.hpp"

using namespace genspec;
namespace fs = std::filesystem;

namespace {

// Pinned desk-scale protocol.
constexpr std::size_t kSweepN = 200;
constexpr std::size_t kSweepDiffusionSteps = 100;
constexpr std::uint64_t kSeed = 1;
const std::string kLr = "1e-3";

struct Outcome {
  int id;
  std::string title;
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct Workspace {
  fs::path exe;
  fs::path dir;
  mutable bool stale = false;  // a step reran, so cached outputs downstream are out of date

  fs::path at(const std::string& name) const { return dir / name; }

  // Runs genspec unless a marker with identical arguments exists; returns the
  // wall-clock seconds of the (possibly cached) run.
  double step(const std::string& name, const std::vector<std::string>& args) const {
    std::string cmd = exe.string();
    for (const std::string& a : args) cmd += " '" + a + "'";
    const fs::path marker = at(name + ".done");
    if (fs::exists(marker)) {
      std::istringstream in(slurp(marker));
      std::string recorded;
      double secs = 0.0;
      std::getline(in, recorded);
      in >> secs;
      if (recorded == cmd && !stale) {
        std::cerr << "[cached] " << name << '\n';
        return secs;
      }
    }
    std::cerr << "[run] " << name << std::endl;
    stale = true;
    const Timer t;
    const int rc = std::system((cmd + " > '" + at(name + ".log").string() + "' 2>&1").c_str());
    const double secs = t.seconds();
    if (rc != 0) throw std::runtime_error(name + " failed, see " + at(name + ".log").string());
    std::ofstream(marker) << cmd << '\n' << secs << '\n';
    return secs;
  }
};

struct Zoo {
  double vae_seconds = 0.0, vq_seconds = 0.0;
};

Zoo train_zoo(const Workspace& ws) {
  Zoo z;
  const std::string data = ws.at("data").string();
  ws.step("gen-data", {"gen-data", "--out", data, "--seed", std::to_string(kSeed)});
  const std::vector<std::string> common{"--data", data, "--lr", kLr, "--seed", std::to_string(kSeed)};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    return a;
  };
  z.vae_seconds = ws.step("vae", with({"train-tokenizer", "--kind", "vae", "--width", "16", "--epochs", "15", "--out",
                                       ws.at("vae.gmzw").string()}));
  z.vq_seconds = ws.step("vq", with({"train-tokenizer", "--kind", "vq", "--width", "16", "--epochs", "12", "--out",
                                     ws.at("vq.gmzw").string()}));
  ws.step("features", with({"train-tokenizer", "--kind", "features", "--epochs", "20", "--out",
                            ws.at("features.gmzw").string()}));
  for (const char* kind : {"causal", "masked"}) {
    ws.step(kind, with({"train-prior", "--kind", kind, "--tokenizer", ws.at("vq.gmzw").string(), "--epochs", "40",
                        "--out", ws.at(std::string(kind) + ".gmzw").string()}));
  }
  ws.step("diffusion", with({"train-prior", "--kind", "diffusion", "--tokenizer", ws.at("vae.gmzw").string(),
                             "--beta-start", "5e-4", "--beta-end", "0.1", "--epochs", "80", "--out",
                             ws.at("diffusion.gmzw").string()}));
  return z;
}

// ---- 1 ----

Outcome autodiff() {
  const Timer t;
  double worst = 0.0;
  std::string worst_op;
  std::set<std::string> kinds;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const OpGradCase& c : standard_op_cases(seed)) {
      const OpGradReport r = check_op_gradient(c, seed + 100);
      kinds.insert(op_kind_name(r.kind));
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_op = op_kind_name(r.kind);
      }
    }
  }
  const double secs = t.seconds();
  return {1, "autodiff soundness", worst <= 1e-4 && kinds.size() == 27 && secs < 60,
          std::to_string(kinds.size()) + " op kinds, worst relative error " + fmt("%.2e", worst) + " (" + worst_op +
              ", limit 1e-4), " + fmt("%.1f", secs) + " s (limit 60 s)"};
}

// ---- 2 ----

Outcome diffusion_algebra() {
  const Timer t;
  const std::size_t T = 200;
  // independent linear-beta products
  std::vector<double> beta(T), abar(T + 1, 1.0);
  for (std::size_t i = 0; i < T; ++i) {
    beta[i] = 1e-4 + (0.02 - 1e-4) * static_cast<double>(i) / static_cast<double>(T - 1);
    abar[i + 1] = abar[i] * (1.0 - beta[i]);
  }
  const NoiseSchedule s = make_schedule(T, 1e-4, 0.02, 0.0);

  Rng rng(7);
  Tensor z0({4, 4, 8, 8}), eps({4, 4, 8, 8});
  for (double& v : z0.data_mut()) v = rng.normal();
  for (double& v : eps.data_mut()) v = rng.normal();
  const NoisePredictor oracle = [&](const Tensor& zt, const std::vector<std::size_t>& ts) {
    Tensor e(zt.shape());
    const std::size_t per = zt.numel() / zt.size(0);
    for (std::size_t n = 0; n < zt.size(0); ++n) {
      const double ab = abar[ts[n]];
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t i = n * per + k;
        e.data_mut()[i] = (zt.at(i) - std::sqrt(ab) * z0.at(i)) / std::sqrt(1.0 - ab);
      }
    }
    return e;
  };
  Tensor zT(z0.shape());
  for (std::size_t i = 0; i < zT.numel(); ++i) {
    zT.data_mut()[i] = std::sqrt(abar[T]) * z0.at(i) + std::sqrt(1.0 - abar[T]) * eps.at(i);
  }
  NoiseStreams streams(3, 4);
  const Tensor rec = sample_from(zT, oracle, s, {1.0, 0}, streams);
  double chain_err = 0.0;
  for (std::size_t i = 0; i < rec.numel(); ++i) chain_err = std::max(chain_err, std::abs(rec.at(i) - z0.at(i)));

  // 10^4 trials of a 4x8x8 latent through 50 single-step transitions
  const std::size_t trials = 10000, steps = 50;
  const double start = 0.8;
  NoiseStreams mc(11, trials);
  Tensor z({trials, 4, 8, 8}, start);
  for (std::size_t k = 1; k <= steps; ++k) {
    const Tensor e = mc.gaussian(z.shape());
    auto zv = z.data_mut();
    for (std::size_t i = 0; i < zv.size(); ++i) zv[i] = std::sqrt(1.0 - beta[k - 1]) * zv[i] + std::sqrt(beta[k - 1]) * e.at(i);
  }
  double m = 0.0, m2 = 0.0;
  for (double v : z.data()) m += v;
  m /= static_cast<double>(z.numel());
  for (double v : z.data()) m2 += (v - m) * (v - m);
  m2 /= static_cast<double>(z.numel() - 1);
  const double want_m = std::sqrt(abar[steps]) * start, want_v = 1.0 - abar[steps];
  const double em = std::abs(m - want_m) / want_m, ev = std::abs(m2 - want_v) / want_v;
  const double secs = t.seconds();
  return {2, "forward/reverse algebra", chain_err <= 1e-8 && em <= 0.01 && ev <= 0.01 && secs < 120,
          "oracle chain max error " + fmt("%.2e", chain_err) + " (limit 1e-8); composed marginal mean error " +
              fmt("%.3f%%", 100 * em) + ", variance error " + fmt("%.3f%%", 100 * ev) + " (limit 1%); " +
              fmt("%.1f", secs) + " s (limit 120 s)"};
}

// ---- 3 ----

Outcome injection(const Workspace& ws, const std::vector<Image>& test, const SweepResult& sweep) {
  const Tokenizer vae = Tokenizer::from_state(load_checkpoint(ws.at("vae.gmzw")));
  const DiffusionModel dm = DiffusionModel::from_state(load_checkpoint(ws.at("diffusion.gmzw")));
  const std::size_t n = 20;
  const std::vector<Image> imgs(test.begin(), test.begin() + n);
  NoGradGuard guard;
  const Tensor z = scale(vae.encode_latent(images_to_tensor(imgs)), 1.0 / dm.latent_scale);
  std::size_t latent_bad = 0, pixel_bad = 0, known = 0;
  for (std::size_t ri = 0; ri <= 10; ++ri) {
    const double ratio = 0.1 * static_cast<double>(ri);
    std::vector<MaskViews> masks;
    std::vector<double> cells;
    for (std::size_t i = 0; i < n; ++i) {
      masks.push_back(make_mask({ratio, MaskGeometry::RandomRect, derive_seed(5, {ri, i})}, 32));
      cells.insert(cells.end(), masks.back().cells.begin(), masks.back().cells.end());
    }
    NoiseStreams streams(derive_seed(9, {ri}), n);
    const Tensor out = inpaint(dm.predictor(), dm.schedule, z, Tensor({n, 1, 8, 8}, cells), {1.0, 20}, streams);
    const std::size_t C = z.size(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < 64; ++k) {
          const std::size_t at = (i * C + c) * 64 + k;
          if (cells[i * 64 + k] == 0.0) {
            ++known;
            latent_bad += std::bit_cast<std::uint64_t>(out.at(at)) != std::bit_cast<std::uint64_t>(z.at(at));
          }
        }
    const auto decoded = tensor_to_images(vae.decode(scale(out, dm.latent_scale)));
    for (std::size_t i = 0; i < n; ++i) {
      const Image comp = composite(decoded[i], imgs[i], masks[i].pixel);
      for (std::size_t k = 0; k < comp.size(); ++k) {
        if (masks[i].pixel.pixels[k] == 0.0) pixel_bad += comp.pixels[k] != imgs[i].pixels[k];
      }
    }
  }
  std::size_t sweep_bad = 0;
  for (const SweepCell& c : sweep.cells) sweep_bad += !c.composite_exact;
  return {3, "known-region exactness", latent_bad == 0 && pixel_bad == 0 && sweep_bad == 0 && known > 0,
          std::to_string(latent_bad) + " of " + std::to_string(known) + " known latent values differ over 11 ratios; " +
              std::to_string(pixel_bad) + " composited known pixels differ; " + std::to_string(sweep_bad) +
              " sweep cells not exact"};
}

// ---- 4 ----

Outcome discrete_prior(const Workspace& ws) {
  const SeqModel causal = SeqModel::from_state(load_checkpoint(ws.at("causal.gmzw")));
  const SeqModel masked = SeqModel::from_state(load_checkpoint(ws.at("masked.gmzw")));
  const std::size_t L = causal.config().seq_len, K = causal.config().vocab;
  Rng rng(13);

  // (a) future-token perturbation
  std::size_t changed = 0;
  for (int trial = 0; trial < 10; ++trial) {
    TokenSeq a(L);
    for (auto& v : a) v = rng.below(K);
    const std::size_t cut = 1 + rng.below(L - 1);
    TokenSeq b = a;
    for (std::size_t i = cut; i < L; ++i) b[i] = rng.below(K);
    NoGradGuard guard;
    const Tensor la = causal.causal_logits({a}, L), lb = causal.causal_logits({b}, L);
    for (std::size_t i = 0; i < cut * K; ++i) changed += la.at(i) != lb.at(i);
  }

  // (b) gradient of the masked loss w.r.t. the logits of unmasked positions
  std::vector<TokenSeq> seqs(4, TokenSeq(L));
  std::vector<PositionMask> masks;
  for (auto& s : seqs)
    for (auto& v : s) v = rng.below(K);
  for (int i = 0; i < 4; ++i) masks.push_back(random_position_mask(L, 0.4, rng));
  Tensor logits;
  {
    NoGradGuard guard;
    logits = masked.masked_logits(seqs, masks).detach();
  }
  logits.set_requires_grad(true);
  backward(masked_nll_from_logits(logits, seqs, masks));
  double leak = 0.0, masked_grad = 0.0;
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        double& worst = masks[n][i] ? masked_grad : leak;
        worst = std::max(worst, std::abs(logits.grad()[(n * L + i) * K + k]));
      }

  // (c) schedule arithmetic
  const auto counts = maskgit_schedule(64, 8);
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;

  // (d) Gumbel-max on a 4-way toy against softmax
  const std::vector<double> l{0.5, -1.0, 1.2, 0.0};
  double zsum = 0.0;
  for (double v : l) zsum += std::exp(v);
  std::vector<double> freq(4, 0.0);
  const int draws = 100000;
  Rng g(17);
  for (int i = 0; i < draws; ++i) freq[gumbel_argmax(l, g)] += 1.0 / draws;
  double tv = 0.0;
  for (int k = 0; k < 4; ++k) tv += 0.5 * std::abs(freq[k] - std::exp(l[k]) / zsum);

  const bool pass = changed == 0 && leak == 0.0 && masked_grad > 0.0 && total == 64 && tv <= 0.02;
  return {4, "discrete-prior correctness", pass,
          std::to_string(changed) + " causal logits changed by future edits; max unmasked-logit gradient " +
              fmt("%.1e", leak) + " (masked " + fmt("%.1e", masked_grad) + "); schedule sums to " +
              std::to_string(total) + " of 64; Gumbel TV " + fmt("%.4f", tv) + " (limit 0.02)"};
}

// ---- 5 ----

Outcome metric_oracles() {
  FeatureStats a{1, 10, {0.3}, {4.0}}, b{1, 10, {-1.2}, {0.25}};
  const double fd1 = frechet_distance(a, b), want1 = 1.5 * 1.5 + (2.0 - 0.5) * (2.0 - 0.5);
  FeatureStats c{3, 10, {0, 0, 0}, {1, 0, 0, 0, 1, 0, 0, 0, 1}}, d{3, 10, {1, -2, 0.5}, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
  const double fds = frechet_distance(c, d);
  const double p = psnr(Image(8, 8, 0.0), Image(8, 8, 0.1));
  Rng rng(23);
  std::vector<double> vals;
  for (int r = 0; r < 100; ++r) {
    std::vector<double> x(50 * 4), y(50 * 4);
    for (double& v : x) v = rng.normal();
    for (double& v : y) v = rng.normal();
    vals.push_back(kid(Tensor({50, 4}, x), Tensor({50, 4}, y)));
  }
  double m = 0.0, var = 0.0;
  for (double v : vals) m += v / 100.0;
  for (double v : vals) var += (v - m) * (v - m) / 99.0;
  const double se = std::sqrt(var / 100.0);
  const bool pass = std::abs(fd1 - want1) <= 1e-8 && std::abs(fds - 5.25) <= 1e-8 && std::abs(p - 20.0) <= 1e-9 &&
                    std::abs(m) <= 3 * se;
  return {5, "metric oracles", pass,
          "1-D Frechet error " + fmt("%.1e", std::abs(fd1 - want1)) + ", mean-shift " + fmt("%.10g", fds) +
              " (want 5.25), PSNR(MSE 0.01) " + fmt("%.12g", p) + " dB, KID null mean " + fmt("%.2e", m) + " vs 3 SE " +
              fmt("%.2e", 3 * se)};
}

// ---- 6 ----

Outcome tokenizers(const Workspace& ws, const Zoo& zoo, const std::vector<Image>& test, const std::vector<Image>& val) {
  const Tokenizer vae = Tokenizer::from_state(load_checkpoint(ws.at("vae.gmzw")));
  const Tokenizer vq = Tokenizer::from_state(load_checkpoint(ws.at("vq.gmzw")));
  NoGradGuard guard;
  auto recon_psnr = [&](const Tokenizer& t) {
    double total = 0.0;
    for (std::size_t b = 0; b < test.size(); b += 100) {
      const std::vector<Image> chunk(test.begin() + b, test.begin() + std::min(test.size(), b + 100));
      const auto rec = tensor_to_images(t.reconstruct(images_to_tensor(chunk)));
      for (std::size_t i = 0; i < chunk.size(); ++i) total += psnr(rec[i], chunk[i]);
    }
    return total / static_cast<double>(test.size());
  };
  const double p_vae = recon_psnr(vae), p_vq = recon_psnr(vq);
  std::set<std::size_t> used;
  for (const TokenGrid& g : vq.encode_tokens(images_to_tensor(val))) used.insert(g.indices.begin(), g.indices.end());
  const double util = static_cast<double>(used.size()) / static_cast<double>(vq.config().codebook_size);
  const double minutes = (zoo.vae_seconds + zoo.vq_seconds) / 60.0;
  return {6, "desk-scale tokenizers", p_vae >= 25.0 && p_vq >= 22.0 && util >= 0.5 && minutes <= 30.0,
          "VAE PSNR " + fmt("%.2f", p_vae) + " dB (>= 25), VQ PSNR " + fmt("%.2f", p_vq) + " dB (>= 22), codebook use " +
              fmt("%.1f%%", 100 * util) + " (>= 50%), training " + fmt("%.1f", minutes) + " min (<= 30)"};
}

// ---- 7 ----

struct Uncond {
  std::map<std::string, double> fid;
};

Uncond read_unconditional(const fs::path& csv) {
  Uncond u;
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const std::string name = line.substr(0, line.find(','));
    u.fid[name] = std::stod(line.substr(line.find(',') + 1));
  }
  return u;
}

Outcome spectrum(const Workspace& ws, const SweepResult& s, const Uncond& u, const std::vector<Image>& test,
                 double minutes) {
  std::ostringstream d;
  bool pass = minutes <= 20.0;
  const std::vector<Image> gt(test.begin(), test.begin() + kSweepN);
  for (const std::string& m : s.models) {
    std::vector<double> ratios, ps;
    for (double r : s.ratios) {
      ratios.push_back(r);
      ps.push_back(s.cell(m, r, 1.0).psnr);
    }
    const Spearman sp = spearman(ratios, ps);
    const Tokenizer tok = Tokenizer::from_state(load_checkpoint(ws.at(m == "diffusion" ? "vae.gmzw" : "vq.gmzw")));
    double tok_psnr;
    {
      NoGradGuard guard;
      tok_psnr = paired_fidelity(tensor_to_images(tok.reconstruct(images_to_tensor(gt))), gt).first;
    }
    const double p0 = s.cell(m, 0.0, 1.0).psnr, r1 = s.cell(m, 1.0, 1.0).rfid, g = u.fid.at(m);
    const bool a = sp.rho < 0 && sp.p_value < 0.05;
    const bool b = std::abs(p0 - tok_psnr) <= 0.1 && std::abs(r1 - g) / g <= 0.15;
    pass = pass && a && b;
    d << m << ": rho " << fmt("%.3f", sp.rho) << " p " << fmt("%.1e", sp.p_value) << ", ratio-0 PSNR "
      << fmt("%.2f", p0) << " vs tokenizer " << fmt("%.2f", tok_psnr) << ", ratio-1 rFID " << fmt("%.3g", r1)
      << " vs gFID " << fmt("%.3g", g) << " (" << fmt("%+.1f%%", 100 * (r1 - g) / g) << "); ";
  }
  const double e0 = s.cell("diffusion", 0.0, 1.0).rfid, e1 = s.cell("diffusion", 1.0, 1.0).rfid;
  double peak = -1.0, peak_at = 0.0;
  for (double r : s.ratios) {
    if (r > 0.0 && r < 1.0 && s.cell("diffusion", r, 1.0).rfid > peak) {
      peak = s.cell("diffusion", r, 1.0).rfid;
      peak_at = r;
    }
  }
  const bool c = peak > e0 && peak > e1;
  pass = pass && c;
  d << "diffusion rFID interior peak " << fmt("%.3g", peak) << " at ratio " << fmt("%.1f", peak_at) << " vs endpoints "
    << fmt("%.3g", e0) << " / " << fmt("%.3g", e1) << "; sweep " << fmt("%.1f", minutes) << " min (<= 20)";
  return {7, "spectrum shape", pass, d.str()};
}

// ---- 8 ----

Outcome temperature(const SweepResult& dif, const SweepResult& mar) {
  std::ostringstream d;
  bool pass = true;
  for (double r : {0.9, 1.0}) {
    const double lo = dif.cell("diffusion", r, 0.5).rfid, hi = dif.cell("diffusion", r, 1.5).rfid;
    pass = pass && lo <= hi;
    d << "diffusion ratio " << r << ": rFID tau0.5 " << fmt("%.3g", lo) << " vs tau1.5 " << fmt("%.3g", hi) << "; ";
  }
  for (double r : {0.1, 0.2}) {
    const double lo = mar.cell("masked", r, 0.25).psnr, hi = mar.cell("masked", r, 1.5).psnr;
    pass = pass && lo >= hi;
    d << "masked ratio " << r << ": PSNR tau0.25 " << fmt("%.2f", lo) << " vs tau1.5 " << fmt("%.2f", hi) << "; ";
  }
  std::string s = d.str();
  return {8, "temperature surface", pass, s.substr(0, s.size() - 2)};
}

// ---- 9 ----

Outcome determinism(const Workspace& ws, const std::vector<std::string>& base) {
  std::map<std::string, std::string> csv;
  for (const char* run : {"det_t1a", "det_t1b", "det_t4a", "det_t4b"}) {
    fs::remove(ws.at(std::string(run) + ".done"));
    std::vector<std::string> args = base;
    args.insert(args.end(), {"--ratios", "0,0.5,1", "--taus", "0.5,1", "--n", "20", "--diffusion-steps", "20",
                             "--threads", std::string(run).substr(4, 2) == "t4" ? "4" : "1", "--out",
                             ws.at(run).string()});
    ws.step(run, args);
    csv[run] = slurp(ws.at(run) / "sweep.csv");
  }
  auto same = [&](const char* a, const char* b) { return csv[a] == csv[b] ? "identical" : "DIFFERS"; };
  const bool pass = !csv["det_t1a"].empty() && csv["det_t1a"] == csv["det_t1b"] && csv["det_t4a"] == csv["det_t4b"] &&
                    csv["det_t1a"] == csv["det_t4a"];
  return {9, "sweep determinism", pass,
          std::string("threads=1 rerun ") + same("det_t1a", "det_t1b") + ", threads=4 rerun " +
              same("det_t4a", "det_t4b") + ", threads=1 vs 4 " + same("det_t1a", "det_t4a") + " (" +
              std::to_string(csv["det_t1a"].size()) + " bytes)"};
}

// ---- 10 ----

Outcome tps(const Workspace& ws) {
  const Tokenizer vae = Tokenizer::from_state(load_checkpoint(ws.at("vae.gmzw")));
  const Tokenizer vq = Tokenizer::from_state(load_checkpoint(ws.at("vq.gmzw")));
  const DiffusionModel dm = DiffusionModel::from_state(load_checkpoint(ws.at("diffusion.gmzw")));
  const SeqModel causal = SeqModel::from_state(load_checkpoint(ws.at("causal.gmzw")));
  const SeqModel masked = SeqModel::from_state(load_checkpoint(ws.at("masked.gmzw")));
  auto timed = [](const SpectrumModel& m) {
    return time_per_sample([&](std::size_t n) { generate_images(m, n, 1.0, 5); }, 20);
  };
  SpectrumModel full{"d", "", &vae, &dm, nullptr};
  full.diffusion_steps = dm.schedule.T;
  SpectrumModel half = full;
  half.diffusion_steps = dm.schedule.T / 2;
  const double t_full = timed(full), t_half = timed(half);
  const double speedup = t_full / t_half;
  const double t_mask = timed({"m", "", &vq, nullptr, &masked}), t_causal = timed({"c", "", &vq, nullptr, &causal});
  const bool same_arch = causal.config().d_model == masked.config().d_model &&
                         causal.config().blocks == masked.config().blocks && causal.config().heads == masked.config().heads;
  const bool pass = speedup >= 1.5 && speedup <= 2.5 && t_mask < t_causal && same_arch;
  return {10, "TPS bookkeeping", pass,
          "diffusion " + std::to_string(full.diffusion_steps) + " steps " + fmt("%.4f", t_full) + " s, " +
              std::to_string(half.diffusion_steps) + " steps " + fmt("%.4f", t_half) + " s, ratio " +
              fmt("%.2f", speedup) + " (2 +- 25%); MaskGIT 8 rounds " + fmt("%.4f", t_mask) + " s vs causal " +
              fmt("%.4f", t_causal) + " s per sample"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genspec acceptance run"};
  Workspace ws;
  std::string exe, dir;
  app.add_option("--genspec", exe, "path to the genspec binary")->required()->check(CLI::ExistingFile);
  app.add_option("--work", dir, "cache directory for datasets, checkpoints and sweeps")->required();
  CLI11_PARSE(app, argc, argv);
  ws.exe = fs::absolute(exe);
  ws.dir = fs::absolute(dir);
  fs::create_directories(ws.dir);

  std::vector<Outcome> results;
  auto report = [&](const Outcome& o) {
    results.push_back(o);
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << o.id << "] " << o.title << ": " << o.detail << std::endl;
  };
  try {
    const Zoo zoo = train_zoo(ws);
    const Dataset test = load_dataset(ws.at("data/test.gmzd"));
    const Dataset val = load_dataset(ws.at("data/val.gmzd"));

    const std::vector<std::string> models{"sweep",
                                          "--data", ws.at("data/test.gmzd").string(),
                                          "--features", ws.at("features.gmzw").string(),
                                          "--vae", ws.at("vae.gmzw").string(),
                                          "--vq", ws.at("vq.gmzw").string(),
                                          "--seed", std::to_string(kSeed)};
    auto with = [&](std::vector<std::string> extra) {
      std::vector<std::string> a = models;
      a.insert(a.end(), {"--n", std::to_string(kSweepN), "--diffusion-steps", std::to_string(kSweepDiffusionSteps)});
      a.insert(a.end(), extra.begin(), extra.end());
      return a;
    };
    const std::string dif = ws.at("diffusion.gmzw").string(), cau = ws.at("causal.gmzw").string(),
                      mas = ws.at("masked.gmzw").string();
    const double sweep_seconds = ws.step("sweep_spectrum", with({"--diffusion", dif, "--causal", cau, "--masked", mas,
                                                                 "--ratios", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1",
                                                                 "--taus", "1", "--unconditional-n",
                                                                 std::to_string(kSweepN), "--out",
                                                                 ws.at("sweep_spectrum").string()}));
    ws.step("sweep_tau_diffusion", with({"--diffusion", dif, "--ratios", "0.9,1", "--taus", "0.5,1.5", "--out",
                                         ws.at("sweep_tau_diffusion").string()}));
    ws.step("sweep_tau_masked", with({"--masked", mas, "--ratios", "0.1,0.2", "--taus", "0.25,1.5", "--out",
                                      ws.at("sweep_tau_masked").string()}));
    const SweepResult spec = parse_sweep_csv(slurp(ws.at("sweep_spectrum/sweep.csv")));

    report(autodiff());
    report(diffusion_algebra());
    report(injection(ws, test.images, spec));
    report(discrete_prior(ws));
    report(metric_oracles());
    report(tokenizers(ws, zoo, test.images, val.images));
    report(spectrum(ws, spec, read_unconditional(ws.at("sweep_spectrum/unconditional.csv")), test.images,
                    sweep_seconds / 60.0));
    report(temperature(parse_sweep_csv(slurp(ws.at("sweep_tau_diffusion/sweep.csv"))),
                       parse_sweep_csv(slurp(ws.at("sweep_tau_masked/sweep.csv")))));
    std::vector<std::string> det = models;
    det.insert(det.end(), {"--diffusion", dif, "--causal", cau, "--masked", mas});
    report(determinism(ws, det));
    report(tps(ws));
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }
  std::size_t failed = 0;
  for (const Outcome& o : results) failed += !o.pass;
  std::cout << results.size() - failed << " of " << results.size() << " criteria passed" << std::endl;
  return failed == 0 && results.size() == 10 ? 0 : 1;
}
