#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "genspec/cli.hpp"
#include "genspec/config.hpp"
#include "genspec/error.hpp"
#include "genspec/harness.hpp"

using namespace genspec;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "genspec");
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Tiny end-to-end pipeline shared by the cases below.
struct Pipeline {
  fs::path dir = fs::temp_directory_path() / "genspec_cli_pipeline";

  Pipeline() {
    fs::remove_all(dir);
    must({"gen-data", "--out", p("data"), "--train", "64", "--val", "32", "--test", "32", "--seed", "4"});
    const std::vector<std::string> fast{"--epochs", "1", "--batch", "16", "--lr", "2e-3", "--data", p("data")};
    must(with({"train-tokenizer", "--kind", "vae", "--width", "8", "--out", p("vae.gmzw")}, fast));
    must(with({"train-tokenizer", "--kind", "vq", "--width", "8", "--out", p("vq.gmzw")}, fast));
    must(with({"train-tokenizer", "--kind", "features", "--features-dim", "16", "--out", p("fx.gmzw")}, fast));
    must(with({"train-prior", "--kind", "diffusion", "--tokenizer", p("vae.gmzw"), "--T", "20", "--width", "8",
               "--warmup", "2", "--out", p("diffusion.gmzw")},
              fast));
    for (const char* kind : {"causal", "masked"}) {
      must(with({"train-prior", "--kind", kind, "--tokenizer", p("vq.gmzw"), "--d-model", "16", "--blocks", "1",
                 "--warmup", "2", "--out", p(std::string(kind) + ".gmzw")},
                fast));
    }
  }
  ~Pipeline() { fs::remove_all(dir); }

  std::string p(const std::string& name) const { return (dir / name).string(); }
  static std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }
  static void must(const std::vector<std::string>& args) {
    const Run r = run(args);
    INFO(args.front() << ": " << r.err);
    REQUIRE(r.code == kExitOk);
  }
  std::vector<std::string> sweep_args(const std::string& out, const std::string& threads) const {
    return {"sweep", "--data", p("data/test.gmzd"), "--features", p("fx.gmzw"), "--vae", p("vae.gmzw"), "--vq",
            p("vq.gmzw"), "--diffusion", p("diffusion.gmzw"), "--causal", p("causal.gmzw"), "--masked",
            p("masked.gmzw"), "--ratios", "0,0.5,1", "--taus", "0.5,1", "--n", "6", "--diffusion-steps", "5",
            "--threads", threads, "--seed", "3", "--unconditional-n", "4", "--out", p(out)};
  }
};

}  // namespace

TEST_CASE("config parsing") {
  Config c({{"lr", "1e-4"}, {"n", "3"}, {"name", ""}, {"ratios", "0,0.5"}, {"flag", "false"}});
  c.merge_text("# comment\n lr = 0.01  # trailing\n\nname = abc\n");
  CHECK(c.real("lr") == 0.01);
  CHECK(c.str("name") == "abc");
  CHECK(c.count("n") == 3);
  CHECK(c.reals("ratios") == std::vector<double>{0.0, 0.5});
  CHECK_FALSE(c.boolean("flag"));
  CHECK_THROWS_AS(c.merge_text("lrr = 1\n"), UsageError);
  CHECK_THROWS_AS(c.merge_text("just words\n"), UsageError);
  CHECK_THROWS_AS(c.set("typo", "1"), UsageError);
  c.set("n", "x");
  CHECK_THROWS_AS(c.count("n"), UsageError);
  c.set("n", "-2");
  CHECK_THROWS_AS(c.count("n"), UsageError);
  c.set("n", "5");
  Config back({{"lr", ""}, {"n", ""}, {"name", ""}, {"ratios", ""}, {"flag", ""}});
  back.merge_text(c.resolved());
  CHECK(back.values() == c.values());
}

TEST_CASE("dispatch exit codes") {
  const Run none = run({});
  CHECK(none.code == kExitUsage);
  CHECK(none.err.find("Subcommands") != std::string::npos);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"gen-data", "--no-such-flag", "1"}).code == kExitUsage);
  CHECK(run({"gen-data"}).code == kExitUsage);
  CHECK(run({"gen-data", "--set", "bogus=1", "--out", "/tmp/x"}).code == kExitUsage);
  CHECK(run({"eval", "--real", "/nonexistent.gmzd", "--fake", "/nonexistent.gmzd", "--features", "x"}).code ==
        kExitData);
  const Run self = run({"selftest"});
  CHECK(self.code == kExitOk);
  CHECK(self.out.find("FAIL") == std::string::npos);
}

TEST_CASE("config file and resolved echo") {
  const fs::path dir = fs::temp_directory_path() / "genspec_cli_cfg";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "gen.cfg") << "# small\ntrain = 8\nval = 4\ntest = 4\nseed = 7\nout = " << (dir / "a").string()
                                 << "\n";
  REQUIRE(run({"gen-data", "--config", (dir / "gen.cfg").string()}).code == kExitOk);
  // re-running from the echoed config reproduces the outputs bitwise
  REQUIRE(run({"gen-data", "--config", (dir / "a" / "gen-data.cfg").string(), "--out", (dir / "b").string()}).code ==
          kExitOk);
  for (const char* f : {"train.gmzd", "val.gmzd", "test.gmzd"}) CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  std::ofstream(dir / "bad.cfg") << "trian = 8\n";
  CHECK(run({"gen-data", "--config", (dir / "bad.cfg").string()}).code == kExitUsage);
  fs::remove_all(dir);
}

TEST_CASE("full pipeline") {
  const Pipeline pl;
  SUBCASE("sweep output is populated and reproducible") {
    const Run a = run(pl.sweep_args("s1", "1"));
    REQUIRE(a.code == kExitOk);
    REQUIRE(run(pl.sweep_args("s2", "1")).code == kExitOk);
    REQUIRE(run(pl.sweep_args("s4", "4")).code == kExitOk);
    const std::string csv = slurp(pl.dir / "s1" / "sweep.csv");
    CHECK(csv == slurp(pl.dir / "s2" / "sweep.csv"));
    CHECK(csv == slurp(pl.dir / "s4" / "sweep.csv"));
    CHECK(slurp(pl.dir / "s1" / "unconditional.csv") == slurp(pl.dir / "s4" / "unconditional.csv"));
    const SweepResult r = parse_sweep_csv(csv);
    CHECK(r.cells.size() == 3 * 3 * 2);
    for (const SweepCell& c : r.cells) CHECK_FALSE(c.failed);
    CHECK(fs::exists(pl.dir / "s1" / "heatmap_diffusion.svg"));
    CHECK(fs::exists(pl.dir / "s1" / "sweep.cfg"));
  }
  SUBCASE("sample, inpaint and eval") {
    REQUIRE(run({"sample", "--model", pl.p("masked.gmzw"), "--tokenizer", pl.p("vq.gmzw"), "--kind", "masked", "--n",
                 "5", "--steps", "4", "--out", pl.p("samples.gmzd")})
                .code == kExitOk);
    CHECK(run({"sample", "--model", pl.p("masked.gmzw"), "--tokenizer", pl.p("vq.gmzw"), "--kind", "causal", "--out",
               pl.p("x.gmzd")})
              .code == kExitUsage);
    REQUIRE(run({"sample", "--model", pl.p("diffusion.gmzw"), "--tokenizer", pl.p("vae.gmzw"), "--n", "3", "--eta",
                 "0", "--steps", "5", "--out", pl.p("dsamples.gmzd")})
                .code == kExitOk);
    REQUIRE(run({"inpaint", "--model", pl.p("diffusion.gmzw"), "--tokenizer", pl.p("vae.gmzw"), "--data",
                 pl.p("data/test.gmzd"), "--n", "4", "--ratio", "0.5", "--out", pl.p("inp")})
                .code == kExitOk);
    const Dataset in = load_dataset(pl.p("data/test.gmzd"));
    const Dataset out = load_dataset(pl.p("inp/inpainted.gmzd"));
    const Dataset masks = load_dataset(pl.p("inp/masks.gmzd"));
    REQUIRE(out.images.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < out.images[i].size(); ++k)
        if (masks.images[i].pixels[k] == 0.0) CHECK(out.images[i].pixels[k] == in.images[i].pixels[k]);
    const Run e = run({"eval", "--real", pl.p("data/test.gmzd"), "--fake", pl.p("samples.gmzd"), "--features",
                       pl.p("fx.gmzw"), "--out", pl.p("ev")});
    CHECK(e.code == kExitOk);
    CHECK(e.out.find("FID") != std::string::npos);
    CHECK(fs::exists(pl.dir / "ev" / "metrics.csv"));
  }
  SUBCASE("identical training config gives identical checkpoints") {
    const std::vector<std::string> args{"train-prior", "--kind", "masked", "--tokenizer", pl.p("vq.gmzw"),
                                        "--d-model", "16", "--blocks", "1", "--epochs", "1", "--batch", "16",
                                        "--data", pl.p("data")};
    REQUIRE(run(Pipeline::with(args, {"--out", pl.p("m1.gmzw")})).code == kExitOk);
    REQUIRE(run({"train-prior", "--config", pl.p("m1.gmzw.cfg"), "--out", pl.p("m2.gmzw")}).code == kExitOk);
    CHECK(slurp(pl.dir / "m1.gmzw") == slurp(pl.dir / "m2.gmzw"));
  }
}
