#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include <nlohmann/json.hpp>

#include "morphdet/wavelet.hpp"
#include "test_util.hpp"

using namespace morphdet;
using morphdet::testing::random_grid;
using morphdet::testing::TempDir;

namespace {

const std::vector<WaveletFamily> kFamilies = {WaveletFamily::haar, WaveletFamily::db2, WaveletFamily::db4};

// Independent reference: direct 2D periodic convolution with the dilated
// separable kernel row_taps (x) col_taps, evaluated one output at a time.
Grid naive_band(const Grid& x, const std::vector<double>& row_taps, const std::vector<double>& col_taps, int level) {
  const long d = 1L << (level - 1);
  const long h = static_cast<long>(x.height()), w = static_cast<long>(x.width());
  Grid y(x.height(), x.width());
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < col_taps.size(); ++i)
        for (std::size_t j = 0; j < row_taps.size(); ++j) {
          const long rr = (((r - static_cast<long>(i) * d) % h) + h) % h;
          const long cc = (((c - static_cast<long>(j) * d) % w) + w) % w;
          s += col_taps[i] * row_taps[j] * x(rr, cc);
        }
      y(r, c) = s;
    }
  return y;
}

Grid shifted(const Grid& g, std::size_t dy, std::size_t dx) {
  Grid out(g.height(), g.width());
  for (std::size_t r = 0; r < g.height(); ++r)
    for (std::size_t c = 0; c < g.width(); ++c) out((r + dy) % g.height(), (c + dx) % g.width()) = g(r, c);
  return out;
}

}  // namespace

TEST_CASE("filter banks are orthonormal QMF pairs", "[wavelet]") {
  for (auto fam : kFamilies) {
    const auto fb = make_filter_bank(fam);
    double sum_sq = 0, sum = 0, hi_sum = 0;
    for (double v : fb.low) sum_sq += v * v, sum += v;
    for (double v : fb.high) hi_sum += v;
    CHECK(sum_sq == Catch::Approx(1.0).margin(1e-12));
    CHECK(sum == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
    CHECK(hi_sum == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("swt_level on a constant grid has zero detail bands", "[wavelet]") {
  for (auto fam : kFamilies) {
    const auto fb = make_filter_bank(fam);
    for (int level = 1; level <= 3; ++level) {
      const auto q = swt_level(Grid(9, 12, 0.37), fb, level);
      for (Band b : {Band::LH, Band::HL, Band::HH}) CHECK(q[b].max_value() == Catch::Approx(0.0).margin(1e-14));
      CHECK(q[Band::LL](4, 4) == Catch::Approx(0.74).margin(1e-12));
    }
  }
}

TEST_CASE("swt_level Haar 2x2 hand convolution", "[wavelet][oracle]") {
  // Periodic 2x2, level 1: each output sums a 2x2 neighbourhood with
  // weights (1/sqrt2)^2 = 1/2 and signs from the high-pass taps.
  const double a = 0.1, b = 0.7, c = 0.4, d = 0.9;
  const Grid x(2, 2, std::vector<double>{a, b, c, d});
  const auto q = swt_level(x, make_filter_bank(WaveletFamily::haar), 1);
  CHECK(q[Band::LL](0, 0) == Catch::Approx((a + b + c + d) / 2).epsilon(1e-15));
  CHECK(q[Band::LL](1, 1) == Catch::Approx((a + b + c + d) / 2).epsilon(1e-15));
  // Row high-pass taps are [h0, h1] = [1/sqrt2, -1/sqrt2] applied as
  // y[i] = h0 x[i] + h1 x[i-1]: at column 0, x[i-1] wraps to column 1.
  CHECK(q[Band::HL](0, 0) == Catch::Approx(((a - b) + (c - d)) / 2).epsilon(1e-15));
  CHECK(q[Band::LH](0, 0) == Catch::Approx(((a + b) - (c + d)) / 2).epsilon(1e-15));
  CHECK(q[Band::HH](0, 0) == Catch::Approx(((a - b) - (c - d)) / 2).epsilon(1e-15));
}

TEST_CASE("swt_level matches direct 2D convolution oracle", "[wavelet][oracle]") {
  Rng rng(17);
  for (auto fam : kFamilies) {
    const auto fb = make_filter_bank(fam);
    for (int level = 1; level <= 3; ++level) {
      const auto x = random_grid(rng, 11, 14, -1, 1);
      const auto q = swt_level(x, fb, level);
      CHECK(max_abs_diff(q[Band::LL], naive_band(x, fb.low, fb.low, level)) < 1e-12);
      CHECK(max_abs_diff(q[Band::LH], naive_band(x, fb.low, fb.high, level)) < 1e-12);
      CHECK(max_abs_diff(q[Band::HL], naive_band(x, fb.high, fb.low, level)) < 1e-12);
      CHECK(max_abs_diff(q[Band::HH], naive_band(x, fb.high, fb.high, level)) < 1e-12);
    }
  }
}

TEST_CASE("swt_level is linear", "[wavelet][property]") {
  Rng rng(4);
  for (auto fam : kFamilies) {
    const auto fb = make_filter_bank(fam);
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = random_grid(rng, 16, 16), y = random_grid(rng, 16, 16);
      const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
      const int level = 1 + static_cast<int>(rng.below(3));
      const auto lhs = swt_level(alpha * x + beta * y, fb, level);
      const auto qx = swt_level(x, fb, level), qy = swt_level(y, fb, level);
      for (Band b : kAllBands) CHECK(max_abs_diff(lhs[b], alpha * qx[b] + beta * qy[b]) < 1e-12);
    }
  }
}

TEST_CASE("swt_level rejects an empty grid", "[wavelet]") {
  CHECK_THROWS_WITH(swt_level(Grid(), make_filter_bank(WaveletFamily::haar), 1),
                    Catch::Matchers::ContainsSubstring("empty grid"));
}

TEST_CASE("decompose_48 band structure", "[wavelet]") {
  Rng rng(8);
  const auto img = random_grid(rng, 160, 160);
  const auto stack = decompose_48(img, make_filter_bank(WaveletFamily::haar));
  REQUIRE(stack.band_count() == 48);
  for (const auto& [id, g] : stack.channels[0]) {
    CHECK(g.height() == 160);
    CHECK(g.width() == 160);
    CHECK(id.depth() == 3);
    CHECK(id.path().labels.front() != Band::LL);
  }
  CHECK(stack.channels[0].count(SubbandId::parse("LH_LL_LL")) == 1);
  CHECK(stack.channels[0].count(SubbandId::parse("HH_HH_HH")) == 1);
  CHECK_THROWS(SubbandId::parse("LL_LH_HH"));

  const auto rgb = decompose_48(MultiChannelImage({img, img, img}), make_filter_bank(WaveletFamily::db2));
  CHECK(rgb.band_count() == 144);
}

TEST_CASE("decompose_48 of a constant image is identically zero", "[wavelet]") {
  for (auto fam : kFamilies) {
    const auto stack = decompose_48(Grid(24, 24, 0.61), make_filter_bank(fam));
    double energy = 0.0;
    for (const auto& [id, g] : stack.channels[0])
      for (double v : g.raw()) energy += v * v;
    if (fam == WaveletFamily::haar) {
      CHECK(energy == 0.0);
    } else {
      CHECK(energy < 1e-24);
    }
  }
}

TEST_CASE("decompose_48 is shift covariant", "[wavelet][property]") {
  Rng rng(21);
  for (auto fam : kFamilies) {
    const auto fb = make_filter_bank(fam);
    const auto img = random_grid(rng, 16, 16);
    const std::size_t dy = rng.below(16), dx = rng.below(16);
    const auto a = decompose_48(shifted(img, dy, dx), fb);
    const auto b = decompose_48(img, fb);
    for (const auto& id : leaf_ids_48()) CHECK(max_abs_diff(a.band(0, id), shifted(b.band(0, id), dy, dx)) < 1e-12);
  }
}

TEST_CASE("swt_inverse perfectly reconstructs", "[wavelet][property]") {
  Rng rng(99);
  for (auto fam : kFamilies) {
    const auto fb = make_filter_bank(fam);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = random_grid(rng, 32, 32);
      worst = std::max(worst, max_abs_diff(swt_inverse(swt_pyramid(x, fb, 3), fb), x));
      worst = std::max(worst, max_abs_diff(swt_inverse(swt_packet(x, fb, 2), fb), x));
    }
    CHECK(worst < 1e-9);
  }

  // The 48-band tree plus the level-1 LL it drops reconstructs as well.
  const auto fb = make_filter_bank(WaveletFamily::haar);
  const auto x = random_grid(rng, 20, 20);
  BandTree tree;
  const auto stack = decompose_48(x, fb);
  for (const auto& [id, g] : stack.channels[0]) tree[id.path()] = g;
  tree[BandPath{{Band::LL}}] = swt_level(x, fb, 1)[Band::LL];
  CHECK(max_abs_diff(swt_inverse(tree, fb), x) < 1e-9);
}

TEST_CASE("swt_inverse edge cases", "[wavelet]") {
  const auto fb = make_filter_bank(WaveletFamily::haar);
  BandTree zero;
  for (Band b : kAllBands) zero[BandPath{{b}}] = Grid(8, 8);
  const auto z = swt_inverse(zero, fb);
  CHECK(z.max_value() == 0.0);
  CHECK(z.min_value() == 0.0);

  Rng rng(1);
  auto tree = swt_pyramid(random_grid(rng, 8, 8), fb, 2);
  auto missing = tree;
  missing.erase(BandPath{{Band::HH}});
  CHECK_THROWS_WITH(swt_inverse(missing, fb), Catch::Matchers::StartsWith("missing band"));
  auto mismatch = tree;
  mismatch[BandPath{{Band::HH}}] = Grid(4, 8);
  CHECK_THROWS_WITH(swt_inverse(mismatch, fb), Catch::Matchers::StartsWith("dimension mismatch"));
}

TEST_CASE("ll_removed_image", "[wavelet]") {
  Rng rng(6);
  for (auto fam : kFamilies) {
    const auto fb = make_filter_bank(fam);
    CHECK(ll_removed_image(Grid(16, 16, 0.8), fb).max_value() == Catch::Approx(0.0).margin(1e-14));
    CHECK(ll_removed_image(Grid(16, 16, 0.8), fb).min_value() == Catch::Approx(0.0).margin(1e-14));
    CHECK(ll_removed_image(Grid(16, 16), fb).max_value() == 0.0);
    const auto x = random_grid(rng, 32, 32);
    CHECK(max_abs_diff(ll_removed_image(x, fb) + ll_only_image(x, fb), x) < 1e-9);
  }
}

TEST_CASE("dump_bands writes one file per band and a sidecar", "[wavelet]") {
  TempDir dir;
  Rng rng(3);
  const auto img = random_grid(rng, 16, 16);
  dump_bands(decompose_48(img, make_filter_bank(WaveletFamily::haar)), dir.path(), {{"family", "haar"}});
  std::size_t pgm = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) pgm += e.path().extension() == ".pgm";
  CHECK(pgm == 48);
  std::ifstream in(dir / "bands.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j["bands"].size() == 48);
  CHECK(j["bands"]["HH_HH_HH"]["min"].get<double>() <= j["bands"]["HH_HH_HH"]["max"].get<double>());
  CHECK(j["run_config"]["family"] == "haar");
}
