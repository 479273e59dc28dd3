#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "scratch.hpp"

namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args, const fs::path& dir) {
  const auto log = dir / "cli.log";
  const std::string cmd = std::string(VLABEL_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& workdir() {
  // Built once: a small dataset and a one-epoch model shared by the cases below.
  static const fs::path dir = [] {
    auto d = scratch::dir("cli");
    std::ofstream(d / "cfg.json") << R"({"model": {"num_classes": 3, "image_height": 32, "image_width": 48}, "train": {"epochs": 1}})";
    const std::string synth = "synth --seed 3 --patients 3 --min-samples 2 --max-samples 3 --classes 3 --height 32 --width 48 -o ";
    REQUIRE(cli(synth + (d / "ds").string(), d).code == 0);
    REQUIRE(cli(synth + (d / "ds2").string(), d).code == 0);
    const std::string train = "train -c " + (d / "cfg.json").string() + " --data " + (d / "ds/manifest.json").string();
    REQUIRE(cli(train + " -o " + (d / "tr").string(), d).code == 0);
    REQUIRE(cli(train + " -o " + (d / "tr2").string(), d).code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit nonzero with a diagnostic") {
  auto d = scratch::dir("cli_errors");
  auto none = cli("", d);
  CHECK(none.code != 0);
  auto bogus = cli("frobnicate", d);
  CHECK(bogus.code != 0);
  CHECK(bogus.out.find("frobnicate") != std::string::npos);
  auto missing = cli("metrics " + (d / "nope.txt").string(), d);
  CHECK(missing.code == 1);
  CHECK(missing.out.find("error:") != std::string::npos);
  std::ofstream(d / "bad.json") << R"({"trian": {}})";
  auto bad = cli("train -c " + (d / "bad.json").string(), d);
  CHECK(bad.code == 1);
  CHECK(bad.out.find("trian") != std::string::npos);
  CHECK(cli("--version", d).code == 0);
}

TEST_CASE("synth and train are byte-for-byte reproducible") {
  const auto& d = workdir();
  CHECK(slurp(d / "ds/manifest.json") == slurp(d / "ds2/manifest.json"));
  for (const auto& e : fs::directory_iterator(d / "ds/frames"))
    CHECK(slurp(e.path()) == slurp(d / "ds2/frames" / e.path().filename()));
  CHECK(!slurp(d / "tr/model.ckpt").empty());
  CHECK(slurp(d / "tr/model.ckpt") == slurp(d / "tr2/model.ckpt"));
  CHECK(slurp(d / "tr/loss.log") == slurp(d / "tr2/loss.log"));
  CHECK(slurp(d / "tr/run.json").find("\"train\"") != std::string::npos);
}

TEST_CASE("variant runs record their tag") {
  const auto& d = workdir();
  const auto out = d / "rp";
  auto r = cli("train -c " + (d / "cfg.json").string() + " --data " + (d / "ds/manifest.json").string() +
                   " --variant random_pairs -o " + out.string(),
               d);
  REQUIRE(r.code == 0);
  CHECK(slurp(out / "run.json").find("\"variant\": \"random_pairs\"") != std::string::npos);
  CHECK(!slurp(out / "loss.log").empty());
}

TEST_CASE("predict, gradcam, evaluate, metrics and bootstrap") {
  const auto& d = workdir();
  const auto manifest = (d / "ds/manifest.json").string();
  const auto ckpt = (d / "tr/model.ckpt").string();

  auto pred = cli("predict --checkpoint " + ckpt + " --data " + manifest + " --sample p01_s01", d);
  CHECK(pred.code == 0);
  CHECK(pred.out.find("\"predicted\"") != std::string::npos);

  auto cam = cli("gradcam --checkpoint " + ckpt + " --data " + manifest + " --sample p01_s01 -o " + (d / "cams").string(), d);
  CHECK(cam.code == 0);
  CHECK(std::distance(fs::directory_iterator(d / "cams"), fs::directory_iterator{}) == 1);
  auto grid = cli("gradcam --wrong-pairs --checkpoint " + ckpt + " --data " + manifest + " -o " + (d / "grid").string(), d);
  CHECK(grid.code == 0);
  CHECK(std::distance(fs::directory_iterator(d / "grid"), fs::directory_iterator{}) == 9);
  auto bad_layer = cli("gradcam --layer image.conv99 --checkpoint " + ckpt + " --data " + manifest, d);
  CHECK(bad_layer.code == 1);

  const auto ev = d / "ev";
  auto evaluate = cli("evaluate -c " + (d / "cfg.json").string() + " --data " + manifest + " -j 2 -o " + ev.string(), d);
  REQUIRE(evaluate.code == 0);
  auto m = cli("metrics " + (ev / "predictions.txt").string() + " --data " + manifest + " -o " + (d / "m.json").string(), d);
  CHECK(m.code == 0);
  CHECK(slurp(d / "m.json") == slurp(ev / "metrics.json"));
  auto b = cli("bootstrap " + (ev / "predictions.txt").string() + " --subsets 5 --size 2 -o " + (d / "b.json").string(), d);
  CHECK(b.code == 0);
  CHECK(slurp(d / "b.json").find("\"accuracies\"") != std::string::npos);
}
