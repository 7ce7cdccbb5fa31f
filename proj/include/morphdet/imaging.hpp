#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "morphdet/error.hpp"
#include "morphdet/grid.hpp"

namespace morphdet {

/// Single-channel image with intensities in [0,1].
using GrayImage = Grid;

/// One or three channels (R,G,B order) sharing the same dimensions.
class MultiChannelImage {
 public:
  MultiChannelImage() = default;
  explicit MultiChannelImage(std::vector<GrayImage> channels) : channels_(std::move(channels)) {
    require(channels_.size() == 1 || channels_.size() == 3, "image: channel count must be 1 or 3");
    for (const auto& c : channels_)
      require(c.same_shape(channels_.front()), "image: channels differ in size");
  }

  std::size_t channel_count() const { return channels_.size(); }
  std::size_t height() const { return channels_.empty() ? 0 : channels_[0].height(); }
  std::size_t width() const { return channels_.empty() ? 0 : channels_[0].width(); }
  const GrayImage& channel(std::size_t i) const { return channels_.at(i); }
  const std::vector<GrayImage>& channels() const { return channels_; }

 private:
  std::vector<GrayImage> channels_;
};

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline MultiChannelImage from_interleaved(const std::vector<std::uint8_t>& px, std::size_t h, std::size_t w,
                                          std::size_t nc, double maxval) {
  std::vector<GrayImage> ch(nc, GrayImage(h, w));
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < nc; ++c) ch[c].raw()[i] = px[i * nc + c] / maxval;
  return MultiChannelImage(std::move(ch));
}

inline std::vector<std::uint8_t> to_interleaved(const MultiChannelImage& img) {
  const std::size_t n = img.height() * img.width(), nc = img.channel_count();
  std::vector<std::uint8_t> px(n * nc);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < nc; ++c) px[i * nc + c] = to_byte(img.channel(c).raw()[i]);
  return px;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("unreadable file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline MultiChannelImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw Error("unreadable file: " + name + " (" + image.message + ")");
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw Error("unsupported format: " + name + " (16-bit PNG)");
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (image.width == 0 || image.height == 0) {
    png_image_free(&image);
    throw Error("zero-dimension image: " + name);
  }
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr))
    throw Error("unreadable file: " + name + " (" + image.message + ")");
  return from_interleaved(px, image.height, image.width, color ? 3 : 1, 255.0);
}

inline MultiChannelImage decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  const std::size_t nc = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  auto next_int = [&]() -> long {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw Error("unreadable file: " + name + " (bad header)");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w == 0 || h == 0) throw Error("zero-dimension image: " + name);
  if (maxval <= 0 || maxval > 255) throw Error("unsupported format: " + name + " (only 8-bit PNM)");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * nc;
  if (bytes.size() < pos + need) throw Error("unreadable file: " + name + " (truncated)");
  std::vector<std::uint8_t> px(bytes.begin() + pos, bytes.begin() + pos + need);
  return from_interleaved(px, h, w, nc, static_cast<double>(maxval));
}

}  // namespace detail

/// Reads PNG or binary PGM/PPM. 8-bit value v maps to v/255.
inline MultiChannelImage load_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string name = path.string();
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, bytes.begin())) return detail::decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) return detail::decode_pnm(bytes, name);
  if (bytes.empty()) throw Error("unreadable file: " + name + " (empty)");
  throw Error("unsupported format: " + name);
}

/// Writes 8-bit PNG (".png") or binary PGM/PPM (anything else); values are
/// clamped to [0,1] and rounded to the nearest 8-bit level.
inline void save_image(const MultiChannelImage& img, const std::filesystem::path& path) {
  require(img.height() > 0 && img.width() > 0, "zero-dimension image");
  const auto px = detail::to_interleaved(img);
  const std::size_t nc = img.channel_count();
  if (path.extension() == ".png") {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = nc == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, px.data(), 0, nullptr))
      throw Error("unwritable output: " + path.string() + " (" + image.message + ")");
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("unwritable output: " + path.string());
  out << (nc == 3 ? "P6" : "P5") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw Error("unwritable output: " + path.string());
}

inline void save_image(const GrayImage& img, const std::filesystem::path& path) {
  save_image(MultiChannelImage({img}), path);
}

/// BT.601 luma for RGB; single-channel input passes through.
inline GrayImage to_grayscale(const MultiChannelImage& img) {
  if (img.channel_count() == 1) return img.channel(0);
  const auto& r = img.channel(0).raw();
  const auto& g = img.channel(1).raw();
  const auto& b = img.channel(2).raw();
  GrayImage out(img.height(), img.width());
  for (std::size_t i = 0; i < r.size(); ++i)
    out.raw()[i] = std::clamp(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i], 0.0, 1.0);
  return out;
}

/// Bilinear resize with corner-aligned sampling (output corners coincide
/// with input corners). Output is clamped to the input's [min, max].
inline GrayImage resize_bilinear(const GrayImage& img, std::size_t out_h, std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, "resize: zero target dimension");
  require(!img.empty(), "resize: empty image");
  if (out_h == img.height() && out_w == img.width()) return img;

  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    for (std::size_t i = 0; i < out; ++i) {
      if (in == 1 || out == 1) {
        t[i] = {0, 0, 0.0};
        continue;
      }
      const double src = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
      std::size_t i0 = std::min(static_cast<std::size_t>(src), in - 2);
      t[i] = {i0, i0 + 1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(img.height(), out_h);
  const auto tx = taps(img.width(), out_w);
  const double lo = img.min_value(), hi = img.max_value();
  GrayImage out(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      const double a = img(ty[r].i0, tx[c].i0), b = img(ty[r].i0, tx[c].i1);
      const double d = img(ty[r].i1, tx[c].i0), e = img(ty[r].i1, tx[c].i1);
      const double top = a + tx[c].f * (b - a);
      const double bottom = d + tx[c].f * (e - d);
      out(r, c) = std::clamp(top + ty[r].f * (bottom - top), lo, hi);
    }
  }
  return out;
}

inline MultiChannelImage resize_bilinear(const MultiChannelImage& img, std::size_t out_h, std::size_t out_w) {
  std::vector<GrayImage> ch;
  for (const auto& c : img.channels()) ch.push_back(resize_bilinear(c, out_h, out_w));
  return MultiChannelImage(std::move(ch));
}

inline GrayImage hflip(const GrayImage& img) {
  GrayImage out(img.height(), img.width());
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < img.width(); ++c) out(r, c) = img(r, img.width() - 1 - c);
  return out;
}

inline MultiChannelImage hflip(const MultiChannelImage& img) {
  std::vector<GrayImage> ch;
  for (const auto& c : img.channels()) ch.push_back(hflip(c));
  return MultiChannelImage(std::move(ch));
}

// ---------------------------------------------------------------------------
// Dataset manifest

enum class Label { bona_fide, morph };
enum class SplitHint { train, test };

inline std::string_view to_string(Label l) { return l == Label::morph ? "morph" : "bona_fide"; }

struct ManifestEntry {
  std::string path;
  std::string subject_id;
  Label label = Label::bona_fide;
  std::vector<std::string> contributors;
  std::optional<SplitHint> split_hint;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Parsed manifest plus the directory relative paths resolve against.
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& e) const {
    const std::filesystem::path p(e.path);
    return p.is_absolute() ? p : base_dir / p;
  }
};

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t at = s.find(sep, start);
    out.emplace_back(s.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (at == std::string_view::npos) return out;
    start = at + 1;
  }
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Parses manifest CSV text: header `path,subject_id,label,contributors`
/// with an optional fifth `split_hint` column. Errors carry line numbers.
inline std::vector<ManifestEntry> parse_manifest_text(std::string_view text, const std::string& source = "manifest") {
  std::vector<ManifestEntry> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool has_hint = false;
  bool header_seen = false;
  auto fail = [&](const std::string& msg) {
    throw Error("malformed manifest: " + source + " line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cols = detail::split(line, ',');
    for (auto& c : cols) c = detail::trim(c);
    if (!header_seen) {
      if (cols.size() < 4 || cols[0] != "path" || cols[1] != "subject_id" || cols[2] != "label" ||
          cols[3] != "contributors" || (cols.size() == 5 && cols[4] != "split_hint") || cols.size() > 5)
        fail("expected header 'path,subject_id,label,contributors[,split_hint]'");
      has_hint = cols.size() == 5;
      header_seen = true;
      continue;
    }
    const std::size_t want = has_hint ? 5 : 4;
    if (cols.size() != want) fail("expected " + std::to_string(want) + " columns, got " + std::to_string(cols.size()));
    ManifestEntry e;
    e.path = cols[0];
    e.subject_id = cols[1];
    if (e.path.empty()) fail("empty path");
    if (e.subject_id.empty()) fail("empty subject_id");
    if (cols[2] == "bona_fide") {
      e.label = Label::bona_fide;
    } else if (cols[2] == "morph") {
      e.label = Label::morph;
    } else {
      fail("unknown label '" + cols[2] + "'");
    }
    if (!cols[3].empty()) {
      for (auto& c : detail::split(cols[3], ';')) {
        c = detail::trim(c);
        if (c.empty()) fail("empty contributor id");
        e.contributors.push_back(c);
      }
    }
    if (e.label == Label::morph && e.contributors.size() != 2)
      fail("contributor-count violation: morph needs exactly 2 contributors, got " +
           std::to_string(e.contributors.size()));
    if (e.label == Label::morph && e.contributors[0] == e.contributors[1])
      fail("contributor-count violation: morph contributors must be distinct");
    if (e.label == Label::bona_fide && !e.contributors.empty())
      fail("contributor-count violation: bona fide entries take no contributors");
    if (has_hint && !cols[4].empty()) {
      if (cols[4] == "train") {
        e.split_hint = SplitHint::train;
      } else if (cols[4] == "test") {
        e.split_hint = SplitHint::test;
      } else {
        fail("unknown split_hint '" + cols[4] + "'");
      }
    }
    entries.push_back(std::move(e));
  }
  if (!header_seen) throw Error("malformed manifest: " + source + ": missing header");
  return entries;
}

inline Manifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("unreadable file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Manifest m;
  m.base_dir = path.parent_path();
  m.entries = parse_manifest_text(ss.str(), path.string());
  return m;
}

inline std::string serialize_manifest(const std::vector<ManifestEntry>& entries) {
  const bool hints = std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.split_hint.has_value(); });
  std::string out = hints ? "path,subject_id,label,contributors,split_hint\n" : "path,subject_id,label,contributors\n";
  for (const auto& e : entries) {
    out += e.path + ',' + e.subject_id + ',' + std::string(to_string(e.label)) + ',';
    for (std::size_t i = 0; i < e.contributors.size(); ++i) out += (i ? ";" : "") + e.contributors[i];
    if (hints) {
      out += ',';
      if (e.split_hint) out += *e.split_hint == SplitHint::train ? "train" : "test";
    }
    out += '\n';
  }
  return out;
}

}  // namespace morphdet
