#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "morphdet/imaging.hpp"
#include "morphdet/synth.hpp"
#include "test_util.hpp"

using namespace morphdet;
using morphdet::testing::TempDir;

namespace {

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("load_image scales 8-bit values by 1/255", "[imaging]") {
  TempDir dir;
  std::string pgm = "P5\n# comment\n3 2\n255\n";
  pgm += std::string(6, static_cast<char>(255));
  write_bytes(dir / "white.pgm", pgm);
  const auto img = load_image(dir / "white.pgm");
  REQUIRE(img.channel_count() == 1);
  REQUIRE(img.height() == 2);
  REQUIRE(img.width() == 3);
  for (double v : img.channel(0).raw()) CHECK(v == 1.0);

  std::string mid = "P5\n1 1\n255\n";
  mid += static_cast<char>(128);
  write_bytes(dir / "mid.pgm", mid);
  CHECK(load_image(dir / "mid.pgm").channel(0)(0, 0) == Catch::Approx(0.50196).margin(1e-5));
  CHECK(load_image(dir / "mid.pgm").channel(0)(0, 0) == 128.0 / 255.0);
}

TEST_CASE("load_image error paths", "[imaging]") {
  TempDir dir;
  Rng rng(3);
  const auto img = morphdet::testing::random_grid(rng, 8, 8);
  save_image(img, dir / "ok.png");
  const std::string bytes = read_all(dir / "ok.png");
  write_bytes(dir / "truncated.png", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_WITH(load_image(dir / "truncated.png"), Catch::Matchers::StartsWith("unreadable file"));
  CHECK_THROWS_WITH(load_image(dir / "missing.png"), Catch::Matchers::StartsWith("unreadable file"));
  write_bytes(dir / "text.png", "hello world");
  CHECK_THROWS_WITH(load_image(dir / "text.png"), Catch::Matchers::StartsWith("unsupported format"));
  write_bytes(dir / "zero.pgm", "P5\n0 4\n255\n");
  CHECK_THROWS_WITH(load_image(dir / "zero.pgm"), Catch::Matchers::StartsWith("zero-dimension"));
  write_bytes(dir / "short.ppm", "P6\n4 4\n255\nabc");
  CHECK_THROWS_WITH(load_image(dir / "short.ppm"), Catch::Matchers::StartsWith("unreadable file"));
}

TEST_CASE("save/load round trips within one 8-bit step", "[imaging][property]") {
  TempDir dir;
  Rng rng(11);
  for (const char* ext : {".png", ".pgm", ".ppm"}) {
    const bool color = std::string(ext) != ".pgm";
    std::vector<Grid> ch;
    for (int c = 0; c < (color ? 3 : 1); ++c) ch.push_back(morphdet::testing::random_grid(rng, 13, 17));
    const MultiChannelImage img(ch);
    const auto path = dir / (std::string("rt") + ext);
    save_image(img, path);
    const auto back = load_image(path);
    REQUIRE(back.channel_count() == img.channel_count());
    for (std::size_t c = 0; c < img.channel_count(); ++c)
      CHECK(max_abs_diff(back.channel(c), img.channel(c)) <= 1.0 / 255.0);
  }
}

TEST_CASE("to_grayscale uses BT.601 luma", "[imaging]") {
  const Grid v(4, 4, 0.4);
  CHECK(max_abs_diff(to_grayscale(MultiChannelImage({v, v, v})), v) < 1e-15);
  const Grid one(2, 2, 1.0), zero(2, 2, 0.0);
  CHECK(to_grayscale(MultiChannelImage({one, zero, zero}))(1, 1) == Catch::Approx(0.299));
  Rng rng(2);
  const auto g = morphdet::testing::random_grid(rng, 5, 6);
  CHECK(to_grayscale(MultiChannelImage({g})) == g);

  for (int trial = 0; trial < 50; ++trial) {
    const auto r = morphdet::testing::random_grid(rng, 6, 6), gg = morphdet::testing::random_grid(rng, 6, 6),
               b = morphdet::testing::random_grid(rng, 6, 6);
    const auto y = to_grayscale(MultiChannelImage({r, gg, b}));
    CHECK(y.min_value() >= 0.0);
    CHECK(y.max_value() <= 1.0);
  }
}

TEST_CASE("resize_bilinear", "[imaging]") {
  Rng rng(5);
  const auto big = morphdet::testing::random_grid(rng, 320, 320);
  const auto small = resize_bilinear(big, 160, 160);
  CHECK(small.height() == 160);
  CHECK(small.width() == 160);
  // Corner alignment keeps the corners.
  CHECK(small(0, 0) == big(0, 0));
  CHECK(small(159, 159) == big(319, 319));

  const auto same = resize_bilinear(small, 160, 160);
  CHECK(same == small);

  const Grid c(7, 9, 0.3);
  const auto r = resize_bilinear(c, 23, 4);
  for (double v : r.raw()) CHECK(v == 0.3);

  CHECK_THROWS(resize_bilinear(c, 0, 3));

  for (int trial = 0; trial < 20; ++trial) {
    const auto g = morphdet::testing::random_grid(rng, 3 + rng.below(20), 3 + rng.below(20), 0.2, 0.7);
    const auto out = resize_bilinear(g, 1 + rng.below(40), 1 + rng.below(40));
    CHECK(out.min_value() >= g.min_value());
    CHECK(out.max_value() <= g.max_value());
  }
}

TEST_CASE("hflip", "[imaging]") {
  const Grid g(2, 2, std::vector<double>{1, 2, 3, 4});
  CHECK(hflip(g) == Grid(2, 2, std::vector<double>{2, 1, 4, 3}));
  CHECK(hflip(hflip(g)) == g);
  const Grid col(3, 1, std::vector<double>{1, 2, 3});
  CHECK(hflip(col) == col);
}

TEST_CASE("parse_manifest", "[imaging][manifest]") {
  const auto entries = parse_manifest_text(
      "path,subject_id,label,contributors\n"
      "m1.png,M001,morph,S01;S02\n"
      "b1.png,S01,bona_fide,\n");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].label == Label::morph);
  CHECK(entries[0].contributors == std::vector<std::string>{"S01", "S02"});
  CHECK(entries[1].label == Label::bona_fide);
  CHECK(entries[1].contributors.empty());
  CHECK(entries[1].path == "b1.png");

  CHECK_THROWS_WITH(parse_manifest_text("path,subject_id,label,contributors\n"
                                        "b1.png,S01,bona_fide,\n"
                                        "m1.png,M001,morph,S01\n"),
                    Catch::Matchers::ContainsSubstring("line 3") &&
                        Catch::Matchers::ContainsSubstring("contributor-count"));
  CHECK_THROWS_WITH(parse_manifest_text("path,subject_id,label,contributors\nx.png,S1,other,\n"),
                    Catch::Matchers::ContainsSubstring("line 2"));
  CHECK_THROWS_WITH(parse_manifest_text("path,subject_id,label,contributors\nx.png,S1\n"),
                    Catch::Matchers::ContainsSubstring("line 2"));
  CHECK_THROWS(parse_manifest_text("file,id\n"));
  CHECK_THROWS(parse_manifest_text("path,subject_id,label,contributors\nb.png,S1,bona_fide,S2\n"));
}

TEST_CASE("manifest serialize/parse round trip", "[imaging][manifest][property]") {
  Rng rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<ManifestEntry> entries;
    const bool hints = trial % 2 == 0;
    for (std::size_t i = 0, n = 1 + rng.below(12); i < n; ++i) {
      ManifestEntry e;
      e.path = "img/" + std::to_string(rng.below(1000)) + ".png";
      if (rng.below(3) == 0) {
        e.label = Label::morph;
        e.subject_id = "M" + std::to_string(i);
        e.contributors = {"S" + std::to_string(rng.below(5)), "T" + std::to_string(rng.below(5))};
      } else {
        e.subject_id = "S" + std::to_string(rng.below(5));
      }
      if (hints && rng.below(2)) e.split_hint = rng.below(2) ? SplitHint::train : SplitHint::test;
      entries.push_back(e);
    }
    CHECK(parse_manifest_text(serialize_manifest(entries)) == entries);
  }
}

TEST_CASE("synth_dataset", "[imaging][synth]") {
  TempDir a, b;
  SynthOptions opt;
  opt.seed = 42;
  opt.n_subjects = 4;
  opt.imgs_per_subject = 2;
  opt.size = 32;
  const auto ma = synth_dataset(opt, a.path());
  const auto mb = synth_dataset(opt, b.path());
  CHECK(read_all(ma) == read_all(mb));
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    CHECK(read_all(entry.path()) == read_all(b.path() / rel));
  }

  const auto m = parse_manifest(ma);
  std::size_t bona = 0, morphs = 0;
  for (const auto& e : m.entries) {
    if (e.label == Label::bona_fide) {
      ++bona;
    } else {
      ++morphs;
      REQUIRE(e.contributors.size() == 2);
      CHECK(e.contributors[0] != e.contributors[1]);
    }
    const auto img = load_image(m.resolve(e));
    CHECK(img.channel_count() == 3);
    CHECK(img.height() == 32);
  }
  CHECK(bona == 8);
  CHECK(morphs == 4);

  opt.n_subjects = 3;
  CHECK_THROWS(synth_dataset(opt, a.path()));
}
