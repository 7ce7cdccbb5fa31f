#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "morphdet/imaging.hpp"
#include "test_util.hpp"

using morphdet::testing::TempDir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + MORPHDET_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_ext(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST_CASE("help on every subcommand", "[cli]") {
  CHECK(run("--help") == 0);
  for (const char* sub : {"synth", "decompose", "rank-bands", "train", "evaluate", "reconstruct"})
    CHECK(run(std::string(sub) + " --help") == 0);
}

TEST_CASE("flag and runtime errors", "[cli]") {
  TempDir dir;
  CHECK(run("") == 2);
  CHECK(run("decompose --family haar") == 2);
  CHECK(run("decompose --in x.png --out o --bogus") == 2);
  CHECK(run("synth --out " + dir.path().string() + " --subjects abc") == 2);
  CHECK(run("decompose --in " + (dir / "missing.png").string() + " --out " + (dir / "o").string()) == 1);
  CHECK(run("decompose --in x.png --out o --family db7") != 0);
}

TEST_CASE("decompose writes 48 or 144 bands", "[cli]") {
  TempDir dir;
  morphdet::Rng rng(1);
  std::vector<morphdet::Grid> ch;
  for (int c = 0; c < 3; ++c) ch.push_back(morphdet::testing::random_grid(rng, 20, 24));
  morphdet::save_image(morphdet::MultiChannelImage(ch), dir / "face.png");
  REQUIRE(run("decompose --in " + (dir / "face.png").string() + " --family haar --out " + (dir / "gray").string()) == 0);
  CHECK(count_ext(dir / "gray", ".pgm") == 48);
  CHECK(fs::exists(dir / "gray" / "bands.json"));
  REQUIRE(run("decompose --in " + (dir / "face.png").string() + " --mode rgb --family db2 --out " +
              (dir / "rgb").string()) == 0);
  CHECK(count_ext(dir / "rgb", ".pgm") == 144);
}

TEST_CASE("reconstruct", "[cli]") {
  TempDir dir;
  morphdet::save_image(morphdet::Grid(16, 16, 0.6), dir / "flat.pgm");
  REQUIRE(run("reconstruct --in " + (dir / "flat.pgm").string() + " --drop-ll --out " + (dir / "r.pgm").string()) == 0);
  const auto side = nlohmann::json::parse(std::ifstream(dir / "r.pgm.json"));
  CHECK(std::abs(side["min"].get<double>()) < 1e-12);
  CHECK(std::abs(side["max"].get<double>()) < 1e-12);
  CHECK(morphdet::load_image(dir / "r.pgm").channel(0).max_value() == 0.0);

  morphdet::Rng rng(2);
  morphdet::save_image(morphdet::testing::random_grid(rng, 16, 16), dir / "n.pgm");
  REQUIRE(run("reconstruct --in " + (dir / "n.pgm").string() + " --family db4 --out " + (dir / "n2.pgm").string()) == 0);
  const auto side2 = nlohmann::json::parse(std::ifstream(dir / "n2.pgm.json"));
  CHECK(side2["max_abs_reconstruction_error"].get<double>() < 1e-9);
}

TEST_CASE("small end-to-end run", "[cli][slow]") {
  TempDir dir;
  const std::string d = dir.path().string();
  REQUIRE(run("synth --out " + d + "/data --subjects 8 --per-subject 3 --size 32 --seed 3") == 0);
  REQUIRE(run("rank-bands --manifest " + d + "/data/manifest.csv --size 32 --k 6 --out " + d + "/rank") == 0);
  std::ifstream csv(dir / "rank" / "band_ranking.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  CHECK(lines == 49);
  const auto mask = nlohmann::json::parse(std::ifstream(dir / "rank" / "selection_mask.json"));
  CHECK(mask["bands"].size() == 6);
  CHECK(mask["run_config"]["k"] == 6);

  REQUIRE(run("train --manifest " + d + "/data/manifest.csv --mask " + d + "/rank/selection_mask.json --size 32" +
              " --arch 4:3:1 --embedding-dim 8 --batch 8 --max-epochs 2 --out " + d + "/model/m.ckpt") == 0);
  CHECK(fs::exists(dir / "model" / "training_log.csv"));
  REQUIRE(run("evaluate --ckpt " + d + "/model/m.ckpt --manifest " + d + "/data/manifest.csv --split all --out-dir " +
              d + "/eval") == 0);
  for (const char* f : {"scores.csv", "metrics.json", "det.csv", "det.svg"}) CHECK(fs::exists(dir / "eval" / f));
  const auto metrics = nlohmann::json::parse(std::ifstream(dir / "eval" / "metrics.json"));
  CHECK(metrics["d_eer"].get<double>() >= 0.0);
  CHECK(metrics.contains("run_config"));

  // Wrong mode: the checkpoint expects gray channels.
  CHECK(run("evaluate --ckpt " + d + "/model/m.ckpt --manifest " + d + "/data/manifest.csv --mode rgb --out-dir " + d +
            "/eval2") == 1);

  // Config file supplies values; flags override it.
  std::ofstream(dir / "cfg.ini") << "[synth]\nsubjects=5\nper-subject=2\nsize=16\n";
  REQUIRE(run("--config " + d + "/cfg.ini synth --out " + d + "/data2 --per-subject 3") == 0);
  const auto manifest = morphdet::parse_manifest(dir / "data2" / "manifest.csv");
  CHECK(manifest.entries.size() == 5 * 3 + 5);
}
