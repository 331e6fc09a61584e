#include "genspec/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "genspec/checkpoint.hpp"
#include "genspec/config.hpp"
#include "genspec/error.hpp"
#include "genspec/harness.hpp"
#include "genspec/train.hpp"

namespace genspec {

namespace {

using Defaults = std::map<std::string, std::string>;

struct Command {
  std::string name;
  std::string help;
  Defaults defaults;
  std::function<void(const Config&, std::ostream&, std::ostream&)> run;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw UsageError("cannot write " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw UsageError("cannot create directory " + dir.string());
}

void ensure_parent(const std::filesystem::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

std::filesystem::path sidecar(const std::filesystem::path& file) { return file.string() + ".cfg"; }

Defaults merged(Defaults base, const Defaults& extra) {
  base.insert(extra.begin(), extra.end());
  return base;
}

const Defaults kOptimKeys{{"lr", "1e-4"}, {"beta1", ""}, {"beta2", ""}, {"weight_decay", ""}, {"warmup", ""},
                          {"epochs", "10"}, {"batch", "32"}, {"seed", "0"}};

TrainSchedule schedule_from(const Config& c, ModelKind kind, const std::filesystem::path& out, std::ostream& err) {
  TrainSchedule s;
  s.optim = optimizer_preset(kind);
  s.optim.lr = c.real("lr");
  if (!c.str("beta1").empty()) s.optim.beta1 = c.real("beta1");
  if (!c.str("beta2").empty()) s.optim.beta2 = c.real("beta2");
  if (!c.str("weight_decay").empty()) s.optim.weight_decay = c.real("weight_decay");
  if (!c.str("warmup").empty()) s.optim.warmup_steps = c.count("warmup");
  s.epochs = c.count("epochs");
  s.batch_size = c.count("batch");
  s.seed = static_cast<std::uint64_t>(c.integer("seed"));
  s.checkpoint = out;
  s.progress = &err;
  return s;
}

Dataset load_split(const std::filesystem::path& dir, Split split) {
  return load_dataset(dir / (std::string(split_name(split)) + ".gmzd"));
}

struct LoadedPrior {
  std::optional<DiffusionModel> diffusion;
  std::optional<SeqModel> seq;
};

LoadedPrior load_prior(const std::filesystem::path& path) {
  const auto state = load_checkpoint(path);
  if (!has_tensor(state, "meta.prior")) throw DataError(path.string() + " is not a prior checkpoint");
  LoadedPrior p;
  if (find_scalar(state, "meta.prior") == 0.0) {
    p.diffusion.emplace(DiffusionModel::from_state(state));
  } else {
    p.seq.emplace(SeqModel::from_state(state));
  }
  return p;
}

SpectrumModel spectrum_model(const std::string& name, const std::string& ckpt, const Tokenizer& tok,
                             const LoadedPrior& p, const Config& c, const std::string& steps_key) {
  SpectrumModel m;
  m.name = name;
  m.checkpoint = ckpt;
  m.tokenizer = &tok;
  if (p.diffusion) {
    m.diffusion = &*p.diffusion;
    if (!c.str(steps_key).empty()) m.diffusion_steps = c.count(steps_key);
  } else {
    m.prior = &*p.seq;
    if (!p.seq->config().causal && !c.str(steps_key).empty()) m.maskgit_steps = c.count(steps_key);
  }
  m.top_k = c.count("top_k");
  return m;
}

// ---- gen-data ----

void cmd_gen_data(const Config& c, std::ostream& out, std::ostream&) {
  const auto dir = c.path("out");
  if (dir.empty()) throw UsageError("missing required setting 'out'");
  ensure_dir(dir);
  const auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  for (auto [split, key] : {std::pair{Split::Train, "train"}, {Split::Val, "val"}, {Split::Test, "test"}}) {
    const Dataset ds = generate_dataset(seed, split, c.count(key), c.count("size"), c.count("threads"));
    save_dataset(ds, dir / (std::string(key) + ".gmzd"));
    out << "wrote " << ds.images.size() << " " << key << " images to " << (dir / (std::string(key) + ".gmzd")).string()
        << '\n';
  }
  write_text(dir / "gen-data.cfg", c.resolved());
}

// ---- train-tokenizer ----

void cmd_train_tokenizer(const Config& c, std::ostream& out, std::ostream& err) {
  const std::string kind = c.required("kind");
  const auto data = c.path("data");
  const auto ckpt = c.path("out");
  if (ckpt.empty()) throw UsageError("missing required setting 'out'");
  ensure_parent(ckpt);
  write_text(sidecar(ckpt), c.resolved());
  const Dataset train = load_split(data, Split::Train), val = load_split(data, Split::Val);
  TrainReport r;
  if (kind == "features") {
    FeatureExtractor fx(train.image_size(), c.count("features_dim"), static_cast<std::uint64_t>(c.integer("seed")));
    r = train_features(fx, train, val, c.real("noise_std"), schedule_from(c, ModelKind::Features, ckpt, err));
  } else if (kind == "vae" || kind == "vq") {
    TokenizerConfig tc;
    tc.kind = kind == "vae" ? TokenizerKind::Vae : TokenizerKind::Vq;
    tc.image_size = train.image_size();
    tc.width = c.count("width");
    tc.latent_channels = c.str("latent_channels").empty() ? (kind == "vae" ? 4 : 8) : c.count("latent_channels");
    tc.codebook_size = c.count("codebook_size");
    Tokenizer tok(tc, static_cast<std::uint64_t>(c.integer("seed")));
    TokenizerLoss loss;
    loss.kl_weight = c.real("kl_weight");
    loss.beta = c.real("vq_beta");
    loss.gan = c.boolean("gan");
    loss.gan_weight = c.real("gan_weight");
    r = train_tokenizer(tok, train, val, loss,
                        schedule_from(c, kind == "vae" ? ModelKind::Vae : ModelKind::Vq, ckpt, err));
  } else {
    throw UsageError("train-tokenizer kind must be vae, vq or features");
  }
  out << "best val loss " << r.best_val_loss << " (init " << r.initial_val_loss << ", epoch " << r.best_epoch
      << ") saved to " << ckpt.string() << '\n';
}

// ---- train-prior ----

void cmd_train_prior(const Config& c, std::ostream& out, std::ostream& err) {
  const ModelKind kind = parse_model_kind(c.required("kind"));
  const auto ckpt = c.path("out");
  if (ckpt.empty()) throw UsageError("missing required setting 'out'");
  const Tokenizer tok = Tokenizer::from_state(load_checkpoint(c.required("tokenizer")));
  const auto data = c.path("data");
  ensure_parent(ckpt);
  write_text(sidecar(ckpt), c.resolved());
  const Dataset train = load_split(data, Split::Train), val = load_split(data, Split::Val);
  const auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  const TrainSchedule sched = schedule_from(c, kind, ckpt, err);
  TrainReport r;
  if (kind == ModelKind::Diffusion) {
    DenoiserConfig dc;
    dc.channels = tok.config().latent_channels;
    dc.width = c.count("width");
    dc.time_dim = c.count("time_dim");
    DiffusionModel model{Denoiser(dc, seed), make_schedule(c.count("T"), c.real("beta_start"), c.real("beta_end"),
                                                           c.real("eta")),
                         1.0};
    r = train_diffusion(model, tok, train, val, sched);
  } else if (kind == ModelKind::Causal || kind == ModelKind::Masked) {
    SeqModelConfig sc;
    sc.vocab = tok.config().codebook_size;
    sc.seq_len = tok.latent_size() * tok.latent_size();
    sc.d_model = c.count("d_model");
    sc.heads = c.count("heads");
    sc.blocks = c.count("blocks");
    sc.causal = kind == ModelKind::Causal;
    SeqModel model(sc, seed);
    const MaskRatioDist dist{c.real("mask_mean"), c.real("mask_std"), c.real("mask_lo"), c.real("mask_hi")};
    r = train_seq_model(model, tok, train, val, dist, sched);
  } else {
    throw UsageError("train-prior kind must be diffusion, causal or masked");
  }
  out << "best val loss " << r.best_val_loss << " (init " << r.initial_val_loss << ", epoch " << r.best_epoch
      << ") saved to " << ckpt.string() << '\n';
}

// ---- sample ----

void check_kind(const Config& c, const LoadedPrior& p) {
  const std::string want = c.str("kind");
  if (want.empty()) return;
  const std::string have = p.diffusion ? "diffusion" : p.seq->config().causal ? "causal" : "masked";
  if (want != have) throw UsageError("checkpoint holds a " + have + " model, not " + want);
}

void cmd_sample(const Config& c, std::ostream& out, std::ostream&) {
  const auto dest = c.path("out");
  if (dest.empty()) throw UsageError("missing required setting 'out'");
  const Tokenizer tok = Tokenizer::from_state(load_checkpoint(c.required("tokenizer")));
  LoadedPrior p = load_prior(c.required("model"));
  check_kind(c, p);
  if (p.diffusion && !c.str("eta").empty()) {
    const NoiseSchedule& s = p.diffusion->schedule;
    p.diffusion->schedule = make_schedule(s.T, s.beta_start, s.beta_end, c.real("eta"));
  }
  const SpectrumModel m = spectrum_model("model", c.str("model"), tok, p, c, "steps");
  const std::size_t n = c.count("n");
  Dataset ds;
  ds.split = Split::Test;
  const auto t0 = std::chrono::steady_clock::now();
  ds.images = generate_images(m, n, c.real("tau"), static_cast<std::uint64_t>(c.integer("seed")));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (Image& img : ds.images)
    for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  ensure_parent(dest);
  save_dataset(ds, dest);
  write_text(sidecar(dest), c.resolved());
  out << "wrote " << n << " samples to " << dest.string() << " (" << secs / static_cast<double>(n)
      << " s per sample)\n";
}

// ---- inpaint ----

void cmd_inpaint(const Config& c, std::ostream& out, std::ostream&) {
  const auto dir = c.path("out");
  if (dir.empty()) throw UsageError("missing required setting 'out'");
  const Tokenizer tok = Tokenizer::from_state(load_checkpoint(c.required("tokenizer")));
  const LoadedPrior p = load_prior(c.required("model"));
  check_kind(c, p);
  const SpectrumModel m = spectrum_model("model", c.str("model"), tok, p, c, "steps");
  const Dataset input = load_dataset(c.required("data"));
  const std::size_t n = c.count("n") == 0 ? input.images.size() : std::min(c.count("n"), input.images.size());
  const std::vector<Image> images(input.images.begin(), input.images.begin() + static_cast<std::ptrdiff_t>(n));
  const auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  const MaskGeometry geom = m.geometry(parse_geometry(c.required("geometry")));
  const std::size_t downsample = input.image_size() / tok.latent_size();
  std::vector<MaskViews> masks;
  for (std::size_t i = 0; i < n; ++i) {
    masks.push_back(make_mask({c.real("ratio"), geom, derive_seed(seed, {0x4d41534b, i})}, input.image_size(),
                              downsample));
  }
  const std::vector<Image> raw = inpaint_images(m, images, masks, c.real("tau"), seed);
  Dataset comp, raw_ds, mask_ds;
  for (std::size_t i = 0; i < n; ++i) {
    Image r = raw[i];
    for (double& v : r.pixels) v = std::clamp(v, 0.0, 1.0);
    comp.images.push_back(composite(r, images[i], masks[i].pixel));
    raw_ds.images.push_back(std::move(r));
    mask_ds.images.push_back(masks[i].pixel);
  }
  ensure_dir(dir);
  save_dataset(comp, dir / "inpainted.gmzd");
  save_dataset(raw_ds, dir / "raw.gmzd");
  save_dataset(mask_ds, dir / "masks.gmzd");
  MetricsReport rep;
  std::tie(rep.psnr_mean, rep.ssim_mean) = paired_fidelity(raw, images);
  rep.n_real = rep.n_fake = n;
  rep.provenance = c.str("model") + " ratio=" + c.str("ratio") + " geometry=" + geometry_name(geom);
  write_text(dir / "metrics.csv", rep.csv());
  write_text(dir / "inpaint.cfg", c.resolved());
  out << rep.text();
}

// ---- eval ----

void cmd_eval(const Config& c, std::ostream& out, std::ostream&) {
  const Dataset real = load_dataset(c.required("real"));
  const Dataset fake = load_dataset(c.required("fake"));
  const FeatureExtractor fx = FeatureExtractor::from_state(load_checkpoint(c.required("features")));
  const Tensor fr = fx.features(real.images), ff = fx.features(fake.images);
  MetricsReport rep;
  rep.fid = frechet_distance(feature_stats(fr), feature_stats(ff));
  rep.kid = kid(fr, ff);
  if (real.images.size() == fake.images.size()) {
    std::tie(rep.psnr_mean, rep.ssim_mean) = paired_fidelity(fake.images, real.images);
  }
  rep.n_real = real.images.size();
  rep.n_fake = fake.images.size();
  rep.provenance = "real=" + c.str("real") + " fake=" + c.str("fake");
  if (!c.str("out").empty()) {
    ensure_dir(c.path("out"));
    write_text(c.path("out") / "metrics.csv", rep.csv());
    write_text(c.path("out") / "eval.cfg", c.resolved());
  }
  out << rep.text();
}

// ---- sweep ----

void cmd_sweep(const Config& c, std::ostream& out, std::ostream& err) {
  const auto dir = c.path("out");
  if (dir.empty()) throw UsageError("missing required setting 'out'");
  const Dataset test = load_dataset(c.required("data"));
  const FeatureExtractor fx = FeatureExtractor::from_state(load_checkpoint(c.required("features")));
  std::optional<Tokenizer> vae, vq;
  if (!c.str("vae").empty()) vae.emplace(Tokenizer::from_state(load_checkpoint(c.str("vae"))));
  if (!c.str("vq").empty()) vq.emplace(Tokenizer::from_state(load_checkpoint(c.str("vq"))));
  std::vector<std::unique_ptr<LoadedPrior>> priors;
  std::vector<SpectrumModel> models;
  for (const char* name : {"diffusion", "causal", "masked"}) {
    if (c.str(name).empty()) continue;
    priors.push_back(std::make_unique<LoadedPrior>(load_prior(c.str(name))));
    const LoadedPrior& p = *priors.back();
    const std::optional<Tokenizer>& tok = p.diffusion ? vae : vq;
    if (!tok) throw UsageError(std::string(name) + " needs the " + (p.diffusion ? "vae" : "vq") + " tokenizer");
    models.push_back(spectrum_model(name, c.str(name), *tok, p, c, p.diffusion ? "diffusion_steps" : "maskgit_steps"));
  }
  if (models.empty()) throw UsageError("sweep needs at least one of diffusion, causal, masked");

  SweepOptions opt;
  opt.ratios = c.reals("ratios");
  opt.taus = c.reals("taus");
  opt.n = c.count("n");
  opt.seed = static_cast<std::uint64_t>(c.integer("seed"));
  opt.threads = c.count("threads");
  opt.geometry = parse_geometry(c.required("geometry"));
  err << "sweep: " << models.size() << " models x " << opt.ratios.size() << " ratios x " << opt.taus.size()
      << " taus, n = " << opt.n << std::endl;
  const auto t0 = std::chrono::steady_clock::now();
  const SweepResult result = run_spectrum(models, test.images, fx, opt);
  err << "sweep: done in " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s"
      << std::endl;
  const auto files = export_sweep(result, dir);
  write_text(dir / "sweep.cfg", c.resolved());

  if (const std::size_t un = c.count("unconditional_n"); un > 0) {
    const std::vector<Image> ref(test.images.begin(),
                                 test.images.begin() + static_cast<std::ptrdiff_t>(std::min(un, test.images.size())));
    const auto reports = run_unconditional(models, ref, fx, un, c.real("unconditional_tau"), opt.seed, opt.threads);
    std::string table, timing = "model,tps_seconds\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      MetricsReport r = reports[i];
      const std::string name = i < models.size() ? models[i].name : "reference";
      timing += name + "," + std::to_string(r.tps_seconds) + "\n";
      r.tps_seconds = 0.0;
      const std::string csv = r.csv();
      if (i == 0) table += "model," + csv.substr(0, csv.find('\n') + 1);
      table += name + "," + csv.substr(csv.find('\n') + 1);
    }
    write_text(dir / "unconditional.csv", table);
    write_text(dir / "unconditional_timing.csv", timing);
  }
  std::size_t failed = 0;
  for (const SweepCell& cell : result.cells) failed += cell.failed;
  out << "wrote " << files.size() << " files to " << dir.string() << " (" << result.cells.size() << " cells, " << failed
      << " failed)\n";
}

// ---- selftest ----

void cmd_selftest(const Config&, std::ostream& out, std::ostream&) {
  std::size_t failed = 0;
  for (const SelfCheck& c : run_selftest()) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) out << " (" << c.detail << ")";
    out << '\n';
    failed += !c.passed;
  }
  if (failed) throw DataError(std::to_string(failed) + " selftest checks failed");
}

std::vector<Command> commands() {
  return {
      {"gen-data", "Generate train/val/test phantom datasets",
       {{"seed", "0"}, {"train", "2000"}, {"val", "500"}, {"test", "500"}, {"size", "32"}, {"threads", "1"},
        {"out", ""}},
       cmd_gen_data},
      {"train-tokenizer", "Train a VAE or VQ tokenizer, or the feature extractor (kind = features)",
       merged(kOptimKeys, {{"kind", "vae"}, {"data", ""}, {"out", ""}, {"width", "16"}, {"latent_channels", ""},
                           {"codebook_size", "64"}, {"kl_weight", "1e-6"}, {"vq_beta", "0.25"}, {"gan", "false"},
                           {"gan_weight", "0.1"}, {"features_dim", "64"}, {"noise_std", "0.1"}}),
       cmd_train_tokenizer},
      {"train-prior", "Train a diffusion, causal or masked prior on tokenizer latents",
       merged(kOptimKeys, {{"kind", "diffusion"}, {"data", ""}, {"tokenizer", ""}, {"out", ""}, {"T", "200"},
                           {"beta_start", "5e-4"}, {"beta_end", "0.1"}, {"eta", "1"}, {"width", "24"},
                           {"time_dim", "32"}, {"d_model", "32"}, {"heads", "2"}, {"blocks", "2"},
                           {"mask_mean", "0.5"}, {"mask_std", "0.25"}, {"mask_lo", "0.05"}, {"mask_hi", "0.95"}}),
       cmd_train_prior},
      {"sample", "Draw unconditional samples from a prior",
       {{"model", ""}, {"tokenizer", ""}, {"kind", ""}, {"n", "16"}, {"tau", "1"}, {"steps", ""}, {"eta", ""},
        {"top_k", "0"}, {"seed", "0"}, {"out", ""}},
       cmd_sample},
      {"inpaint", "Mask held-out images and inpaint them with a prior",
       {{"model", ""}, {"tokenizer", ""}, {"kind", ""}, {"data", ""}, {"n", "0"}, {"ratio", "0.5"},
        {"geometry", "random-rect"}, {"tau", "1"}, {"steps", ""}, {"top_k", "0"}, {"seed", "0"}, {"out", ""}},
       cmd_inpaint},
      {"eval", "FID, KID and paired PSNR/SSIM between two datasets",
       {{"real", ""}, {"fake", ""}, {"features", ""}, {"out", ""}}, cmd_eval},
      {"sweep", "Mask-ratio x temperature spectrum sweep",
       {{"data", ""}, {"features", ""}, {"vae", ""}, {"vq", ""}, {"diffusion", ""}, {"causal", ""}, {"masked", ""},
        {"ratios", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"}, {"taus", "0.25,0.5,0.75,1,1.25,1.5"}, {"n", "200"},
        {"seed", "0"}, {"threads", "1"}, {"geometry", "random-rect"}, {"diffusion_steps", ""},
        {"maskgit_steps", "8"}, {"top_k", "0"}, {"unconditional_n", "0"}, {"unconditional_tau", "1"}, {"out", ""}},
       cmd_sweep},
      {"selftest", "Run the built-in invariant checks", {}, cmd_selftest},
  };
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"genspec: reconstruction-generation spectrum laboratory", "genspec"};
  app.require_subcommand(0, 1);
  const std::vector<Command> cmds = commands();
  std::vector<std::string> config_files(cmds.size());
  std::vector<std::vector<std::string>> sets(cmds.size());
  std::vector<std::map<std::string, std::string>> flags(cmds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    CLI::App* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    if (!cmds[i].defaults.empty()) {
      sub->add_option("--config", config_files[i], "key = value config file")->check(CLI::ExistingFile);
      sub->add_option("--set", sets[i], "override, key=value (repeatable)");
      for (const auto& [key, value] : cmds[i].defaults) {
        sub->add_option(flag_name(key), flags[i][key], "default: " + (value.empty() ? "(unset)" : value));
      }
    }
    subs.push_back(sub);
  }

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  std::size_t chosen = cmds.size();
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i]->parsed()) chosen = i;
  }
  if (chosen == cmds.size()) {
    err << app.help();
    return kExitUsage;
  }

  try {
    Config config(cmds[chosen].defaults);
    if (!config_files[chosen].empty()) config.merge_file(config_files[chosen]);
    for (const auto& [key, value] : flags[chosen]) {
      if (subs[chosen]->count(flag_name(key)) > 0) config.set(key, value);
    }
    for (const std::string& kv : sets[chosen]) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cmds[chosen].run(config, out, err);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace genspec
