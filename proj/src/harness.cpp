#include "genspec/harness.hpp"

#include <algorithm>
#include <bit>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "genspec/error.hpp"
#include "genspec/parallel.hpp"

namespace genspec {

const char* geometry_name(MaskGeometry g) {
  switch (g) {
    case MaskGeometry::RandomRect: return "random-rect";
    case MaskGeometry::RandomToken: return "random-token";
    case MaskGeometry::RasterSuffix: return "raster-suffix";
  }
  return "?";
}

MaskGeometry parse_geometry(const std::string& name) {
  for (MaskGeometry g : {MaskGeometry::RandomRect, MaskGeometry::RandomToken, MaskGeometry::RasterSuffix}) {
    if (name == geometry_name(g)) return g;
  }
  throw UsageError("unknown mask geometry '" + name + "' (expected random-rect, random-token or raster-suffix)");
}

std::size_t MaskViews::masked_cells() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1)); }

double MaskViews::fraction() const { return static_cast<double>(masked_cells()) / static_cast<double>(cells.size()); }

Tensor MaskViews::latent() const {
  std::vector<double> v(cells.begin(), cells.end());
  return Tensor({1, 1, grid, grid}, std::move(v));
}

namespace {

constexpr std::size_t kMaxRects = 64;

void fill_rects(PositionMask& cells, std::size_t grid, std::size_t target, Rng& rng) {
  std::size_t covered = 0;
  for (std::size_t rect = 0; rect < kMaxRects && covered < target; ++rect) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!cells[i]) open.push_back(i);
    }
    const std::size_t anchor = open[rng.below(open.size())];
    const std::size_t remaining = target - covered;
    const std::size_t w = 1 + rng.below(std::min(grid, remaining));
    const std::size_t h = 1 + rng.below(std::min(grid, remaining / w));
    const std::size_t r0 = anchor / grid, c0 = anchor % grid;
    for (std::size_t r = r0; r < std::min(grid, r0 + h); ++r) {
      for (std::size_t c = c0; c < std::min(grid, c0 + w); ++c) {
        if (!cells[r * grid + c]) {
          cells[r * grid + c] = 1;
          ++covered;
        }
      }
    }
  }
}

}  // namespace

MaskViews make_mask(const MaskSpec& spec, std::size_t image_size, std::size_t downsample) {
  if (!(spec.ratio >= 0.0 && spec.ratio <= 1.0)) throw UsageError("mask ratio must lie in [0,1]");
  if (downsample == 0 || image_size % downsample != 0) throw ShapeError("image size not divisible by downsampling");
  MaskViews m;
  m.grid = image_size / downsample;
  m.block = downsample;
  const std::size_t total = m.grid * m.grid;
  const auto target = static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(total)));
  m.cells.assign(total, 0);
  Rng rng(spec.seed);
  switch (spec.geometry) {
    case MaskGeometry::RandomRect:
      fill_rects(m.cells, m.grid, target, rng);
      break;
    case MaskGeometry::RandomToken: {
      std::vector<std::size_t> order(total);
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = 0; i < target; ++i) {
        std::swap(order[i], order[i + rng.below(total - i)]);
        m.cells[order[i]] = 1;
      }
      break;
    }
    case MaskGeometry::RasterSuffix:
      std::fill(m.cells.end() - static_cast<std::ptrdiff_t>(target), m.cells.end(), 1);
      break;
  }
  m.pixel = Image(image_size, image_size);
  for (std::size_t r = 0; r < image_size; ++r) {
    for (std::size_t c = 0; c < image_size; ++c) m.pixel.at(r, c) = m.cells[(r / downsample) * m.grid + c / downsample];
  }
  return m;
}

Image composite(const Image& output, const Image& input, const Image& mask) {
  if (output.height != input.height || output.width != input.width || mask.height != input.height ||
      mask.width != input.width) {
    throw ShapeError("composite needs equally sized output, input and mask");
  }
  Image out = input;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask.pixels[i] != 0.0) out.pixels[i] = output.pixels[i];
  }
  return out;
}

ModelKind SpectrumModel::kind() const {
  if (diffusion) return ModelKind::Diffusion;
  if (prior) return prior->config().causal ? ModelKind::Causal : ModelKind::Masked;
  throw UsageError("model '" + name + "' has no inpainting path");
}

MaskGeometry SpectrumModel::geometry(MaskGeometry requested) const {
  return prior && prior->config().causal ? MaskGeometry::RasterSuffix : requested;
}

namespace {

void check_model(const SpectrumModel& m) {
  if (!m.tokenizer) throw UsageError("model '" + m.name + "' has no tokenizer");
  if (static_cast<bool>(m.diffusion) == static_cast<bool>(m.prior)) {
    throw UsageError("model '" + m.name + "' needs exactly one of a diffusion model or a token prior");
  }
}

Tensor stack_masks(const std::vector<MaskViews>& masks) {
  const std::size_t g = masks.front().grid;
  std::vector<double> v;
  v.reserve(masks.size() * g * g);
  for (const MaskViews& m : masks) v.insert(v.end(), m.cells.begin(), m.cells.end());
  return Tensor({masks.size(), 1, g, g}, std::move(v));
}

std::vector<TokenSeq> grids_to_seqs(std::vector<TokenGrid> grids) {
  std::vector<TokenSeq> out;
  out.reserve(grids.size());
  for (TokenGrid& g : grids) out.push_back(std::move(g.indices));
  return out;
}

std::vector<Image> decode_seqs(const Tokenizer& tok, const std::vector<TokenSeq>& seqs) {
  const std::size_t g = tok.latent_size();
  std::vector<TokenGrid> grids;
  for (const TokenSeq& s : seqs) grids.push_back({g, g, s});
  return tensor_to_images(tok.decode_tokens(grids));
}

std::vector<Image> decode_latents(const DiffusionModel& d, const Tokenizer& tok, const Tensor& z) {
  return tensor_to_images(tok.decode(scale(z, d.latent_scale)));
}

std::size_t suffix_start(const PositionMask& m) {
  std::size_t start = m.size();
  while (start > 0 && m[start - 1]) --start;
  if (std::find(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(start), 1) != m.begin() + start) {
    throw UsageError("causal inpainting needs a raster-suffix mask");
  }
  return start;
}

}  // namespace

std::vector<Image> inpaint_images(const SpectrumModel& model, const std::vector<Image>& images,
                                  const std::vector<MaskViews>& masks, double tau, std::uint64_t seed,
                                  std::size_t first_index) {
  check_model(model);
  if (images.size() != masks.size()) throw ShapeError("one mask per image required");
  if (images.empty()) return {};
  NoGradGuard guard;
  const Tokenizer& tok = *model.tokenizer;
  NoiseStreams streams(seed, images.size(), first_index);
  const Tensor x = images_to_tensor(images);
  if (model.diffusion) {
    const DiffusionModel& d = *model.diffusion;
    const Tensor z = scale(tok.encode_latent(x), 1.0 / d.latent_scale);
    const Tensor out = inpaint(d.predictor(), d.schedule, z, stack_masks(masks), {tau, model.diffusion_steps}, streams);
    return decode_latents(d, tok, out);
  }
  const std::vector<TokenSeq> known = grids_to_seqs(tok.encode_tokens(x));
  std::vector<PositionMask> cell_masks;
  for (const MaskViews& m : masks) cell_masks.push_back(m.cells);
  if (model.prior->config().causal) {
    std::vector<std::size_t> prefix;
    for (const PositionMask& m : cell_masks) prefix.push_back(suffix_start(m));
    return decode_seqs(tok, sample_causal(*model.prior, known, prefix, {tau, model.top_k}, streams));
  }
  return decode_seqs(tok, maskgit_decode(*model.prior, known, cell_masks, {model.maskgit_steps, tau, true}, streams));
}

std::vector<Image> generate_images(const SpectrumModel& model, std::size_t n, double tau, std::uint64_t seed,
                                   std::size_t first_index) {
  check_model(model);
  if (n == 0) return {};
  NoGradGuard guard;
  const Tokenizer& tok = *model.tokenizer;
  const std::size_t g = tok.latent_size();
  NoiseStreams streams(seed, n, first_index);
  if (model.diffusion) {
    const DiffusionModel& d = *model.diffusion;
    const Tensor z = sample(d.predictor(), d.schedule, {n, d.net.config().channels, g, g},
                            {tau, model.diffusion_steps}, streams);
    return decode_latents(d, tok, z);
  }
  const std::vector<TokenSeq> blank(n, TokenSeq(g * g, 0));
  if (model.prior->config().causal) {
    return decode_seqs(tok, sample_causal(*model.prior, blank, std::vector<std::size_t>(n, 0), {tau, model.top_k},
                                          streams));
  }
  const std::vector<PositionMask> full(n, PositionMask(g * g, 1));
  return decode_seqs(tok, maskgit_decode(*model.prior, blank, full, {model.maskgit_steps, tau, true}, streams));
}

const SweepCell& SweepResult::cell(const std::string& model, double ratio, double tau) const {
  for (const SweepCell& c : cells) {
    if (c.model == model && c.ratio == ratio && c.tau == tau) return c;
  }
  throw UsageError("no sweep cell for " + model + " at ratio " + std::to_string(ratio) + ", tau " +
                   std::to_string(tau));
}

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ull;
  return h;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

SweepResult run_spectrum(const std::vector<SpectrumModel>& models, const std::vector<Image>& held_out,
                         const FeatureExtractor& extractor, const SweepOptions& opt) {
  if (opt.n < 2 || held_out.size() < opt.n) {
    throw UsageError("sweep needs n >= 2 held-out images, have " + std::to_string(held_out.size()) + " for n = " +
                     std::to_string(opt.n));
  }
  if (opt.ratios.empty() || opt.taus.empty() || models.empty()) throw UsageError("sweep grid is empty");
  const std::vector<Image> gt(held_out.begin(), held_out.begin() + static_cast<std::ptrdiff_t>(opt.n));
  const FeatureStats gt_stats = feature_stats(gt, extractor);
  const std::size_t image_size = gt.front().height;

  SweepResult result;
  result.ratios = opt.ratios;
  result.taus = opt.taus;
  result.n = opt.n;
  result.seed = opt.seed;
  for (const SpectrumModel& m : models) {
    result.models.push_back(m.name);
    result.provenance.push_back(m.name + "=" + m.checkpoint);
    for (double r : opt.ratios) {
      for (double t : opt.taus) {
        SweepCell c;
        c.model = m.name;
        c.ratio = r;
        c.tau = t;
        c.n_samples = opt.n;
        result.cells.push_back(c);
      }
    }
  }

  const std::size_t per_model = opt.ratios.size() * opt.taus.size();
  parallel_for(result.cells.size(), opt.threads, [&](std::size_t ci) {
    SweepCell& cell = result.cells[ci];
    const SpectrumModel& model = models[ci / per_model];
    try {
      check_model(model);
      const MaskGeometry geom = model.geometry(opt.geometry);
      cell.geometry = geometry_name(geom);
      const std::size_t downsample = image_size / model.tokenizer->latent_size();
      const std::uint64_t ratio_key = std::bit_cast<std::uint64_t>(cell.ratio);
      const std::uint64_t stream = derive_seed(opt.seed, {name_hash(model.name), ratio_key,
                                                          std::bit_cast<std::uint64_t>(cell.tau)});
      std::vector<MaskViews> masks;
      for (std::size_t i = 0; i < opt.n; ++i) {
        masks.push_back(make_mask({cell.ratio, geom, derive_seed(opt.seed, {0x4d41534b, ratio_key, i})}, image_size,
                                  downsample));
      }
      std::vector<Image> outputs;
      double elapsed = 0.0;
      for (std::size_t b = 0; b < opt.n; b += opt.batch) {
        const std::size_t e = std::min(opt.n, b + opt.batch);
        const std::vector<Image> imgs(gt.begin() + b, gt.begin() + e);
        const std::vector<MaskViews> ms(masks.begin() + b, masks.begin() + e);
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Image> out = inpaint_images(model, imgs, ms, cell.tau, stream, b);
        elapsed += seconds_since(t0);
        for (Image& img : out) outputs.push_back(std::move(img));
      }
      cell.tps = elapsed / static_cast<double>(opt.n);
      const auto [p, s] = paired_fidelity(outputs, gt);
      cell.psnr = p;
      cell.ssim = s;
      cell.rfid = frechet_distance(feature_stats(outputs, extractor), gt_stats);
      cell.composite_exact = true;
      for (std::size_t i = 0; i < opt.n; ++i) {
        const Image c = composite(outputs[i], gt[i], masks[i].pixel);
        for (std::size_t k = 0; k < c.size(); ++k) {
          if (masks[i].pixel.pixels[k] == 0.0 && c.pixels[k] != gt[i].pixels[k]) cell.composite_exact = false;
        }
      }
    } catch (const Error&) {
      cell.failed = true;
    }
  });
  return result;
}

std::vector<MetricsReport> run_unconditional(const std::vector<SpectrumModel>& models,
                                             const std::vector<Image>& reference, const FeatureExtractor& extractor,
                                             std::size_t n, double tau, std::uint64_t seed, std::size_t threads) {
  if (n < 2 || reference.size() < 2) throw UsageError("unconditional evaluation needs at least 2 samples per side");
  const Tensor ref_features = extractor.features(reference);
  const FeatureStats ref_stats = feature_stats(ref_features);
  std::vector<MetricsReport> reports(models.size() + 1);
  parallel_for(models.size(), threads, [&](std::size_t mi) {
    const SpectrumModel& model = models[mi];
    const std::uint64_t stream = derive_seed(seed, {name_hash(model.name), 0x554e43});
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Image> samples;
    for (std::size_t b = 0; b < n; b += 50) {
      for (Image& img : generate_images(model, std::min<std::size_t>(50, n - b), tau, stream, b)) {
        samples.push_back(std::move(img));
      }
    }
    MetricsReport& r = reports[mi];
    r.tps_seconds = seconds_since(t0) / static_cast<double>(n);
    const Tensor f = extractor.features(samples);
    r.fid = frechet_distance(feature_stats(f), ref_stats);
    r.kid = kid(f, ref_features);
    r.n_real = reference.size();
    r.n_fake = n;
    r.provenance = model.name + "=" + model.checkpoint + " tau=" + std::to_string(tau) + " seed=" + std::to_string(seed);
  });
  MetricsReport& control = reports.back();
  control.fid = frechet_distance(ref_stats, ref_stats);
  control.kid = kid(ref_features, ref_features);
  control.n_real = control.n_fake = reference.size();
  control.provenance = "reference-vs-itself";
  return reports;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

constexpr const char* kSweepHeader = "model,ratio,tau,geometry,n,status,rfid,psnr,ssim,composite_exact";

}  // namespace

std::string sweep_csv(const SweepResult& s) {
  std::ostringstream out;
  out << "# seed=" << s.seed << " n=" << s.n << '\n';
  for (const std::string& p : s.provenance) out << "# model " << p << '\n';
  out << kSweepHeader << '\n';
  for (const SweepCell& c : s.cells) {
    out << c.model << ',' << fmt(c.ratio) << ',' << fmt(c.tau) << ',' << c.geometry << ',' << c.n_samples << ','
        << (c.failed ? "failed" : "ok") << ',' << fmt(c.rfid) << ',' << fmt(c.psnr) << ',' << fmt(c.ssim) << ','
        << (c.composite_exact ? 1 : 0) << '\n';
  }
  return out.str();
}

SweepResult parse_sweep_csv(const std::string& text) {
  SweepResult s;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  auto add_unique = [](auto& list, const auto& v) {
    if (std::find(list.begin(), list.end(), v) == list.end()) list.push_back(v);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::istringstream meta(line.substr(1));
      std::string word;
      while (meta >> word) {
        if (word.rfind("seed=", 0) == 0) s.seed = std::stoull(word.substr(5));
        if (word.rfind("n=", 0) == 0) s.n = std::stoull(word.substr(2));
        if (word == "model" && meta >> word) s.provenance.push_back(word);
      }
      continue;
    }
    if (!header) {
      if (line != kSweepHeader) throw DataError("unexpected sweep header at line " + std::to_string(lineno));
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 10) throw DataError("expected 10 fields at line " + std::to_string(lineno));
    SweepCell c;
    try {
      c.model = f[0];
      c.ratio = std::stod(f[1]);
      c.tau = std::stod(f[2]);
      c.geometry = f[3];
      c.n_samples = std::stoull(f[4]);
      c.failed = f[5] == "failed";
      c.rfid = std::stod(f[6]);
      c.psnr = std::stod(f[7]);
      c.ssim = std::stod(f[8]);
      c.composite_exact = f[9] == "1";
    } catch (const std::logic_error&) {
      throw DataError("malformed number at line " + std::to_string(lineno));
    }
    add_unique(s.models, c.model);
    add_unique(s.ratios, c.ratio);
    add_unique(s.taus, c.tau);
    s.cells.push_back(c);
  }
  if (!header) throw DataError("sweep table has no header");
  return s;
}

std::string timing_csv(const SweepResult& s) {
  std::ostringstream out;
  out << "model,ratio,tau,tps_seconds\n";
  for (const SweepCell& c : s.cells) out << c.model << ',' << fmt(c.ratio) << ',' << fmt(c.tau) << ',' << fmt(c.tps) << '\n';
  return out.str();
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"};

std::string color_ramp(double t) {
  // dark blue -> teal -> yellow
  t = std::clamp(t, 0.0, 1.0);
  const double r = t < 0.5 ? 0.1 + 0.2 * t : 0.2 + 1.5 * (t - 0.5);
  const double g = 0.1 + 0.8 * t;
  const double b = t < 0.5 ? 0.5 + 0.2 * t : 0.6 - 1.0 * (t - 0.5);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(255 * std::clamp(r, 0.0, 1.0)),
                static_cast<int>(255 * std::clamp(g, 0.0, 1.0)), static_cast<int>(255 * std::clamp(b, 0.0, 1.0)));
  return buf;
}

void panel(std::ostringstream& svg, const SweepResult& s, const std::string& model, double x0, const char* title,
           double SweepCell::*field) {
  const double w = 280, h = 200, top = 40;
  double lo = 1e300, hi = -1e300;
  for (const SweepCell& c : s.cells) {
    if (c.model == model && !c.failed) {
      lo = std::min(lo, c.*field);
      hi = std::max(hi, c.*field);
    }
  }
  if (lo > hi) lo = hi = 0.0;
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double rlo = *std::min_element(s.ratios.begin(), s.ratios.end());
  const double rhi = std::max(rlo + 1e-12, *std::max_element(s.ratios.begin(), s.ratios.end()));
  auto px = [&](double r) { return x0 + w * (r - rlo) / (rhi - rlo); };
  auto py = [&](double v) { return top + h - h * (v - lo) / (hi - lo); };
  svg << "<g>\n<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
      << "\" fill=\"none\" stroke=\"#000\"/>\n";
  svg << "<text x=\"" << x0 + w / 2 << "\" y=\"" << top - 8 << "\" text-anchor=\"middle\" font-size=\"12\">" << title
      << "</text>\n";
  svg << "<text x=\"" << x0 << "\" y=\"" << top + h + 14 << "\" font-size=\"10\">" << fmt(rlo) << "</text>\n";
  svg << "<text x=\"" << x0 + w << "\" y=\"" << top + h + 14 << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(rhi)
      << "</text>\n";
  svg << "<text x=\"" << x0 + w / 2 << "\" y=\"" << top + h + 28 << "\" font-size=\"10\" text-anchor=\"middle\">mask ratio</text>\n";
  char lbl[64];
  std::snprintf(lbl, sizeof lbl, "%.3g", hi);
  svg << "<text x=\"" << x0 - 4 << "\" y=\"" << top + 4 << "\" font-size=\"10\" text-anchor=\"end\">" << lbl << "</text>\n";
  std::snprintf(lbl, sizeof lbl, "%.3g", lo);
  svg << "<text x=\"" << x0 - 4 << "\" y=\"" << top + h << "\" font-size=\"10\" text-anchor=\"end\">" << lbl << "</text>\n";
  for (std::size_t ti = 0; ti < s.taus.size(); ++ti) {
    std::string pts;
    for (double r : s.ratios) {
      const SweepCell& c = s.cell(model, r, s.taus[ti]);
      if (c.failed) continue;
      char p[64];
      std::snprintf(p, sizeof p, "%.2f,%.2f ", px(r), py(c.*field));
      pts += p;
    }
    svg << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[ti % 8] << "\" points=\"" << pts
        << "\"/>\n";
  }
  svg << "</g>\n";
}

std::string curves_svg(const SweepResult& s, const std::string& model) {
  std::ostringstream svg;
  const double legend_y = 290;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"680\" height=\"" << legend_y + 20 * s.taus.size() / 4 + 30
      << "\" font-family=\"sans-serif\">\n";
  svg << "<text x=\"10\" y=\"16\" font-size=\"14\">" << xml_escape(model) << "</text>\n";
  panel(svg, s, model, 50, "rFID", &SweepCell::rfid);
  panel(svg, s, model, 380, "PSNR (dB)", &SweepCell::psnr);
  for (std::size_t ti = 0; ti < s.taus.size(); ++ti) {
    const double x = 50 + 150.0 * static_cast<double>(ti % 4), y = legend_y + 20.0 * static_cast<double>(ti / 4);
    svg << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x + 20 << "\" y2=\"" << y << "\" stroke=\""
        << kPalette[ti % 8] << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << x + 25 << "\" y=\"" << y + 4 << "\" font-size=\"11\">tau = " << fmt(s.taus[ti])
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string heatmap_svg(const SweepResult& s, const std::string& model) {
  const double cw = 48, ch = 28, x0 = 70, y0 = 40;
  double lo = 1e300, hi = -1e300;
  for (const SweepCell& c : s.cells) {
    if (c.model == model && !c.failed) {
      lo = std::min(lo, c.rfid);
      hi = std::max(hi, c.rfid);
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << x0 + cw * s.ratios.size() + 20 << "\" height=\""
      << y0 + ch * s.taus.size() + 50 << "\" font-family=\"sans-serif\">\n";
  svg << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(model) << ": rFID over mask ratio and tau</text>\n";
  for (std::size_t ti = 0; ti < s.taus.size(); ++ti) {
    const double y = y0 + ch * static_cast<double>(s.taus.size() - 1 - ti);
    svg << "<text x=\"" << x0 - 6 << "\" y=\"" << y + ch / 2 + 4 << "\" font-size=\"10\" text-anchor=\"end\">tau "
        << fmt(s.taus[ti]) << "</text>\n";
    for (std::size_t ri = 0; ri < s.ratios.size(); ++ri) {
      const SweepCell& c = s.cell(model, s.ratios[ri], s.taus[ti]);
      const double x = x0 + cw * static_cast<double>(ri);
      const std::string fill = c.failed ? "#cccccc" : color_ramp((c.rfid - lo) / (hi - lo));
      svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw << "\" height=\"" << ch << "\" fill=\"" << fill
          << "\"/>\n";
      char v[32];
      std::snprintf(v, sizeof v, "%.3g", c.rfid);
      svg << "<text x=\"" << x + cw / 2 << "\" y=\"" << y + ch / 2 + 4
          << "\" font-size=\"9\" text-anchor=\"middle\" fill=\"#fff\">" << (c.failed ? "failed" : v) << "</text>\n";
    }
  }
  const double by = y0 + ch * static_cast<double>(s.taus.size());
  for (std::size_t ri = 0; ri < s.ratios.size(); ++ri) {
    svg << "<text x=\"" << x0 + cw * (static_cast<double>(ri) + 0.5) << "\" y=\"" << by + 14
        << "\" font-size=\"10\" text-anchor=\"middle\">" << fmt(s.ratios[ri]) << "</text>\n";
  }
  svg << "<text x=\"" << x0 + cw * static_cast<double>(s.ratios.size()) / 2 << "\" y=\"" << by + 32
      << "\" font-size=\"11\" text-anchor=\"middle\">mask ratio</text>\n</svg>\n";
  return svg.str();
}

std::string file_token(const std::string& name) {
  std::string out;
  for (char ch : name) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_';
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw UsageError("cannot write " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> export_sweep(const SweepResult& s, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
  std::vector<std::filesystem::path> written{dir / "sweep.csv", dir / "timing.csv"};
  write_text(written[0], sweep_csv(s));
  write_text(written[1], timing_csv(s));
  for (const std::string& m : s.models) {
    written.push_back(dir / ("curves_" + file_token(m) + ".svg"));
    write_text(written.back(), curves_svg(s, m));
    written.push_back(dir / ("heatmap_" + file_token(m) + ".svg"));
    write_text(written.back(), heatmap_svg(s, m));
  }
  return written;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

Spearman spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw UsageError("spearman needs two equally long series of length >= 3");
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  Spearman s;
  if (sxx == 0.0 || syy == 0.0) return s;  // a constant series carries no rank information
  s.rho = sxy / std::sqrt(sxx * syy);
  if (std::abs(s.rho) >= 1.0) {
    s.p_value = 0.0;
    return s;
  }
  const double t = s.rho * std::sqrt((n - 2.0) / (1.0 - s.rho * s.rho));
  const boost::math::students_t dist(n - 2.0);
  s.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return s;
}

}  // namespace genspec
