#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "morphdet/error.hpp"
#include "morphdet/imaging.hpp"
#include "morphdet/random.hpp"

namespace morphdet {

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t n_subjects = 40;
  std::size_t imgs_per_subject = 4;
  /// Number of morphs; 0 means one per subject.
  std::size_t n_morphs = 0;
  std::size_t size = 160;
  double noise_sigma = 0.025;
  /// Apply a [1 2 1]/4 blur to every morph after blending.
  bool smooth_morphs = false;
};

namespace detail {

inline std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  return buf;
}

struct SyntheticSubject {
  std::vector<Grid> base;  // per channel, noise free
};

inline SyntheticSubject make_subject(Rng& rng, std::size_t size) {
  const double s = static_cast<double>(size);
  const double cx = s / 2 + rng.uniform(-0.05, 0.05) * s, cy = s / 2 + rng.uniform(-0.05, 0.05) * s;
  const double rx = rng.uniform(0.28, 0.36) * s, ry = rng.uniform(0.36, 0.44) * s;
  const double skin = rng.uniform(0.45, 0.65), background = rng.uniform(0.15, 0.30);
  const double eye_dy = rng.uniform(0.06, 0.10) * s, eye_dx = rng.uniform(0.12, 0.17) * s;
  const double eye_sigma = 0.04 * s;
  const double tint[3] = {rng.uniform(1.0, 1.15), rng.uniform(0.9, 1.0), rng.uniform(0.8, 0.95)};

  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves(8);
  for (auto& w : waves) {
    const double f = rng.uniform(0.12, 0.42), angle = rng.uniform(0.0, std::numbers::pi);
    w = {2 * std::numbers::pi * f * std::cos(angle), 2 * std::numbers::pi * f * std::sin(angle),
         rng.uniform(0.0, 2 * std::numbers::pi), rng.uniform(0.015, 0.04)};
  }

  Grid luminance(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double x = static_cast<double>(c), y = static_cast<double>(r);
      const double ex = (x - cx) / rx, ey = (y - cy) / ry;
      const double face = std::exp(-0.5 * std::pow(ex * ex + ey * ey, 2.0));
      double v = background + (skin - background) * face;
      for (double side : {-1.0, 1.0}) {
        const double dx = x - (cx + side * eye_dx), dy = y - (cy - eye_dy);
        v -= 0.15 * face * std::exp(-(dx * dx + dy * dy) / (2 * eye_sigma * eye_sigma));
      }
      for (const auto& w : waves) v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
      luminance(r, c) = v;
    }
  }
  SyntheticSubject subject;
  for (double t : tint) subject.base.push_back(luminance * t);
  return subject;
}

inline MultiChannelImage quantize(std::vector<Grid> channels) {
  for (auto& ch : channels)
    for (double& v : ch.raw()) v = to_byte(v) / 255.0;
  return MultiChannelImage(std::move(channels));
}

// [1 2 1]/4 separable smoothing with clamped edges.
inline Grid smooth3(const Grid& g) {
  const std::size_t h = g.height(), w = g.width();
  Grid tmp(h, w), out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      tmp(r, c) = 0.25 * g(r, c == 0 ? 0 : c - 1) + 0.5 * g(r, c) + 0.25 * g(r, c + 1 == w ? c : c + 1);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out(r, c) = 0.25 * tmp(r == 0 ? 0 : r - 1, c) + 0.5 * tmp(r, c) + 0.25 * tmp(r + 1 == h ? r : r + 1, c);
  return out;
}

}  // namespace detail

/// Writes a deterministic synthetic corpus (RGB PNGs plus manifest.csv) to
/// out_dir and returns the manifest path. Bona fide images are a smooth face
/// shape plus subject-specific band-limited texture plus per-image noise;
/// morphs average one image of each of two distinct subjects (optionally
/// blurred afterwards).
inline std::filesystem::path synth_dataset(const SynthOptions& opt, const std::filesystem::path& out_dir) {
  require(opt.n_subjects >= 4, "synth: need at least 4 subjects");
  require(opt.imgs_per_subject >= 1, "synth: need at least 1 image per subject");
  require(opt.size >= 8, "synth: image size must be at least 8");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "bona_fide", ec);
  std::filesystem::create_directories(out_dir / "morph", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "morph"))
    throw Error("unwritable output directory: " + out_dir.string());

  Rng rng(opt.seed);
  std::vector<ManifestEntry> entries;
  std::vector<std::vector<MultiChannelImage>> images(opt.n_subjects);
  for (std::size_t s = 0; s < opt.n_subjects; ++s) {
    const auto subject = detail::make_subject(rng, opt.size);
    const std::string sid = detail::numbered("S", s);
    for (std::size_t k = 0; k < opt.imgs_per_subject; ++k) {
      const double offset = 0.02 * rng.normal();
      std::vector<Grid> channels = subject.base;
      for (auto& ch : channels)
        for (double& v : ch.raw()) v += offset + opt.noise_sigma * rng.normal();
      images[s].push_back(detail::quantize(std::move(channels)));
      const std::string rel = "bona_fide/" + sid + "_" + std::to_string(k) + ".png";
      save_image(images[s].back(), out_dir / rel);
      entries.push_back({rel, sid, Label::bona_fide, {}, std::nullopt});
    }
  }

  const std::size_t n_morphs = opt.n_morphs == 0 ? opt.n_subjects : opt.n_morphs;
  for (std::size_t m = 0; m < n_morphs; ++m) {
    const std::size_t a = rng.below(opt.n_subjects);
    std::size_t b = rng.below(opt.n_subjects - 1);
    if (b >= a) ++b;
    const auto& ia = images[a][rng.below(opt.imgs_per_subject)];
    const auto& ib = images[b][rng.below(opt.imgs_per_subject)];
    std::vector<Grid> channels;
    for (std::size_t c = 0; c < 3; ++c)
      channels.push_back(opt.smooth_morphs ? detail::smooth3(0.5 * ia.channel(c) + 0.5 * ib.channel(c))
                                           : 0.5 * ia.channel(c) + 0.5 * ib.channel(c));
    const std::string mid = detail::numbered("M", m);
    const std::string rel = "morph/" + mid + ".png";
    save_image(detail::quantize(std::move(channels)), out_dir / rel);
    entries.push_back({rel, mid, Label::morph, {detail::numbered("S", a), detail::numbered("S", b)}, std::nullopt});
  }

  const auto manifest = out_dir / "manifest.csv";
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw Error("unwritable output directory: " + out_dir.string());
  out << serialize_manifest(entries);
  if (!out) throw Error("unwritable output directory: " + out_dir.string());
  return manifest;
}

}  // namespace morphdet
