#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphdet/error.hpp"
#include "morphdet/grid.hpp"
#include "morphdet/imaging.hpp"

namespace morphdet {

// ---------------------------------------------------------------------------
// Filter banks

enum class WaveletFamily { haar, db2, db4 };

inline std::string_view to_string(WaveletFamily f) {
  switch (f) {
    case WaveletFamily::haar: return "haar";
    case WaveletFamily::db2: return "db2";
    case WaveletFamily::db4: return "db4";
  }
  return "?";
}

inline WaveletFamily parse_family(std::string_view s) {
  if (s == "haar") return WaveletFamily::haar;
  if (s == "db2") return WaveletFamily::db2;
  if (s == "db4") return WaveletFamily::db4;
  throw Error("unknown wavelet family '" + std::string(s) + "'");
}

/// Orthonormal analysis pair plus synthesis taps. Analysis taps are applied
/// as circular convolution; synthesis taps as circular correlation (the
/// adjoint), and already carry the 1/2 redundancy factor of one undecimated
/// level along one axis.
struct FilterBank {
  WaveletFamily family = WaveletFamily::haar;
  std::vector<double> low, high, synth_low, synth_high;
};

inline FilterBank make_filter_bank(WaveletFamily family) {
  std::vector<double> lo;
  switch (family) {
    case WaveletFamily::haar: {
      const double a = 1.0 / std::sqrt(2.0);
      lo = {a, a};
      break;
    }
    case WaveletFamily::db2: {
      const double s3 = std::sqrt(3.0), d = 4.0 * std::sqrt(2.0);
      lo = {(1 + s3) / d, (3 + s3) / d, (3 - s3) / d, (1 - s3) / d};
      break;
    }
    case WaveletFamily::db4:
      lo = {0.23037781330885523,  0.7148465705525415,   0.6308807679295904, -0.02798376941698385,
            -0.18703481171888114, 0.030841381835986965, 0.032883011666982945, -0.010597401784997278};
      break;
  }
  FilterBank fb;
  fb.family = family;
  fb.low = lo;
  const std::size_t n = lo.size();
  fb.high.resize(n);
  for (std::size_t k = 0; k < n; ++k) fb.high[k] = ((k % 2) ? -1.0 : 1.0) * lo[n - 1 - k];
  for (std::size_t k = 0; k < n; ++k) {
    fb.synth_low.push_back(0.5 * fb.low[k]);
    fb.synth_high.push_back(0.5 * fb.high[k]);
  }
  return fb;
}

// ---------------------------------------------------------------------------
// Band naming

/// Two-letter filter label. First letter: filter along rows (horizontal),
/// second letter: filter along columns (vertical).
enum class Band : unsigned char { LL, LH, HL, HH };
inline constexpr std::array<Band, 4> kAllBands = {Band::LL, Band::LH, Band::HL, Band::HH};

inline std::string_view to_string(Band b) {
  static constexpr std::string_view names[] = {"LL", "LH", "HL", "HH"};
  return names[static_cast<int>(b)];
}

inline Band parse_band(std::string_view s) {
  for (Band b : kAllBands)
    if (to_string(b) == s) return b;
  throw Error("unknown band label '" + std::string(s) + "'");
}

/// Any node of a decomposition tree: the filter history from the root.
/// The empty path is the image itself.
struct BandPath {
  std::vector<Band> labels;

  std::size_t depth() const { return labels.size(); }
  BandPath child(Band b) const {
    BandPath p = *this;
    p.labels.push_back(b);
    return p;
  }
  bool is_prefix_of(const BandPath& o) const {
    return labels.size() <= o.labels.size() && std::equal(labels.begin(), labels.end(), o.labels.begin());
  }
  std::string str() const {
    std::string s;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (i) s += '_';
      s += to_string(labels[i]);
    }
    return s.empty() ? "root" : s;
  }
  friend auto operator<=>(const BandPath&, const BandPath&) = default;
};

/// Identifier of one sub-band in the 48-band tree, e.g. "LH_HL_HH".
/// 1 to 3 labels, never starting with LL. Ordered lexicographically by
/// its string form.
class SubbandId {
 public:
  SubbandId() = default;
  explicit SubbandId(std::vector<Band> labels) : path_{std::move(labels)} {
    require(!path_.labels.empty() && path_.labels.size() <= 3, "subband id: need 1 to 3 labels");
    require(path_.labels.front() != Band::LL, "subband id: path may not start with LL");
    name_ = path_.str();
  }

  static SubbandId parse(std::string_view s) {
    std::vector<Band> labels;
    for (const auto& part : detail::split(s, '_')) labels.push_back(parse_band(part));
    return SubbandId(std::move(labels));
  }

  const std::string& str() const { return name_; }
  const BandPath& path() const { return path_; }
  std::size_t depth() const { return path_.labels.size(); }

  /// Number of labels containing a high-pass stage (anything but LL).
  std::size_t high_pass_label_count() const {
    return static_cast<std::size_t>(
        std::count_if(path_.labels.begin(), path_.labels.end(), [](Band b) { return b != Band::LL; }));
  }

  friend bool operator==(const SubbandId& a, const SubbandId& b) { return a.name_ == b.name_; }
  friend std::strong_ordering operator<=>(const SubbandId& a, const SubbandId& b) { return a.name_ <=> b.name_; }

 private:
  BandPath path_;
  std::string name_;
};

/// The 48 leaf ids in tree order: level-1 {LH,HL,HH} x level-2 {LL..HH} x
/// level-3 {LL..HH}.
inline const std::vector<SubbandId>& leaf_ids_48() {
  static const std::vector<SubbandId> ids = [] {
    std::vector<SubbandId> v;
    for (Band a : {Band::LH, Band::HL, Band::HH})
      for (Band b : kAllBands)
        for (Band c : kAllBands) v.emplace_back(std::vector<Band>{a, b, c});
    return v;
  }();
  return ids;
}

// ---------------------------------------------------------------------------
// Single level

namespace detail {

inline std::size_t wrap(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  long r = i % m;
  return static_cast<std::size_t>(r < 0 ? r + m : r);
}

// sign = -1: y[i] = sum_k taps[k] x[i - k*dilation]  (convolution)
// sign = +1: y[i] = sum_k taps[k] x[i + k*dilation]  (correlation)
inline Grid filter_rows(const Grid& x, const std::vector<double>& taps, std::size_t dilation, int sign) {
  const std::size_t h = x.height(), w = x.width();
  std::vector<std::vector<std::size_t>> idx(taps.size(), std::vector<std::size_t>(w));
  for (std::size_t k = 0; k < taps.size(); ++k)
    for (std::size_t c = 0; c < w; ++c)
      idx[k][c] = wrap(static_cast<long>(c) + sign * static_cast<long>(k * dilation), w);
  Grid y(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    const double* in = &x.raw()[r * w];
    double* out = &y.raw()[r * w];
    for (std::size_t k = 0; k < taps.size(); ++k) {
      const double t = taps[k];
      const std::size_t* ix = idx[k].data();
      for (std::size_t c = 0; c < w; ++c) out[c] += t * in[ix[c]];
    }
  }
  return y;
}

inline Grid filter_cols(const Grid& x, const std::vector<double>& taps, std::size_t dilation, int sign) {
  const std::size_t h = x.height(), w = x.width();
  Grid y(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    double* out = &y.raw()[r * w];
    for (std::size_t k = 0; k < taps.size(); ++k) {
      const double t = taps[k];
      const double* in = &x.raw()[wrap(static_cast<long>(r) + sign * static_cast<long>(k * dilation), h) * w];
      for (std::size_t c = 0; c < w; ++c) out[c] += t * in[c];
    }
  }
  return y;
}

inline std::size_t dilation_for(int level) {
  require(level >= 1 && level <= 30, "wavelet: level must be >= 1");
  return std::size_t{1} << (level - 1);
}

}  // namespace detail

/// The four outputs of one undecimated level, indexed by Band.
struct QuadBands {
  std::array<Grid, 4> bands;
  Grid& operator[](Band b) { return bands[static_cast<int>(b)]; }
  const Grid& operator[](Band b) const { return bands[static_cast<int>(b)]; }
};

/// One à trous analysis level: separable filtering with taps dilated by
/// 2^(level-1), periodic boundaries, no downsampling.
inline QuadBands swt_level(const Grid& x, const FilterBank& fb, int level) {
  require(!x.empty(), "wavelet: empty grid");
  const std::size_t d = detail::dilation_for(level);
  const Grid row_lo = detail::filter_rows(x, fb.low, d, -1);
  const Grid row_hi = detail::filter_rows(x, fb.high, d, -1);
  QuadBands q;
  q[Band::LL] = detail::filter_cols(row_lo, fb.low, d, -1);
  q[Band::LH] = detail::filter_cols(row_lo, fb.high, d, -1);
  q[Band::HL] = detail::filter_cols(row_hi, fb.low, d, -1);
  q[Band::HH] = detail::filter_cols(row_hi, fb.high, d, -1);
  return q;
}

/// Inverse of swt_level.
inline Grid swt_level_inverse(const QuadBands& q, const FilterBank& fb, int level) {
  const std::size_t d = detail::dilation_for(level);
  for (Band b : kAllBands)
    require(q[b].same_shape(q[Band::LL]) && !q[b].empty(), "dimension mismatch");
  Grid row_lo = detail::filter_cols(q[Band::LL], fb.synth_low, d, +1);
  row_lo += detail::filter_cols(q[Band::LH], fb.synth_high, d, +1);
  Grid row_hi = detail::filter_cols(q[Band::HL], fb.synth_low, d, +1);
  row_hi += detail::filter_cols(q[Band::HH], fb.synth_high, d, +1);
  Grid x = detail::filter_rows(row_lo, fb.synth_low, d, +1);
  x += detail::filter_rows(row_hi, fb.synth_high, d, +1);
  return x;
}

// ---------------------------------------------------------------------------
// Trees

/// Sparse decomposition tree: the stored nodes, keyed by path. A node at
/// depth n was produced by level n of the transform.
using BandTree = std::map<BandPath, Grid>;

/// Classic stationary pyramid: only the LL branch is split further.
inline BandTree swt_pyramid(const Grid& img, const FilterBank& fb, int levels) {
  BandTree tree;
  Grid current = img;
  BandPath at;
  for (int level = 1; level <= levels; ++level) {
    auto q = swt_level(current, fb, level);
    for (Band b : {Band::LH, Band::HL, Band::HH}) tree[at.child(b)] = std::move(q[b]);
    at = at.child(Band::LL);
    current = std::move(q[Band::LL]);
  }
  tree[at] = std::move(current);
  return tree;
}

/// Full packet tree: every node split down to `levels`.
inline BandTree swt_packet(const Grid& img, const FilterBank& fb, int levels) {
  BandTree tree;
  std::vector<std::pair<BandPath, Grid>> frontier{{BandPath{}, img}};
  for (int level = 1; level <= levels; ++level) {
    std::vector<std::pair<BandPath, Grid>> next;
    for (auto& [path, grid] : frontier) {
      auto q = swt_level(grid, fb, level);
      for (Band b : kAllBands) next.emplace_back(path.child(b), std::move(q[b]));
    }
    frontier = std::move(next);
  }
  for (auto& [path, grid] : frontier) tree[path] = std::move(grid);
  return tree;
}

namespace detail {

inline bool has_descendant_or_self(const BandTree& tree, const BandPath& p) {
  auto it = tree.lower_bound(p);
  return it != tree.end() && p.is_prefix_of(it->first);
}

inline Grid reconstruct_node(const BandTree& tree, const BandPath& p, const FilterBank& fb) {
  bool any_child = false;
  for (Band b : kAllBands) any_child = any_child || has_descendant_or_self(tree, p.child(b));
  if (any_child) {
    QuadBands q;
    for (Band b : kAllBands) {
      const BandPath c = p.child(b);
      if (!has_descendant_or_self(tree, c)) throw Error("missing band: " + c.str());
      q[b] = reconstruct_node(tree, c, fb);
    }
    return swt_level_inverse(q, fb, static_cast<int>(p.depth()) + 1);
  }
  auto it = tree.find(p);
  if (it == tree.end()) throw Error("missing band: " + p.str());
  return it->second;
}

}  // namespace detail

/// Rebuilds the image from any tree in which every split node has all four
/// children present.
inline Grid swt_inverse(const BandTree& tree, const FilterBank& fb) {
  require(!tree.empty(), "missing band: empty tree");
  const Grid& first = tree.begin()->second;
  for (const auto& [path, grid] : tree)
    if (!grid.same_shape(first)) throw Error("dimension mismatch: band " + path.str());
  return detail::reconstruct_node(tree, BandPath{}, fb);
}

// ---------------------------------------------------------------------------
// The 48-band decomposition

/// Leaf sub-bands of one or more channels, each at full input resolution.
struct SubbandStack {
  std::size_t height = 0, width = 0;
  std::vector<std::map<SubbandId, Grid>> channels;

  std::size_t band_count() const {
    std::size_t n = 0;
    for (const auto& c : channels) n += c.size();
    return n;
  }
  const Grid& band(std::size_t channel, const SubbandId& id) const {
    const auto& m = channels.at(channel);
    auto it = m.find(id);
    if (it == m.end()) throw Error("missing band: " + id.str());
    return it->second;
  }
};

/// Computes only the leaves listed in `wanted` (and the parents they need).
/// Level 1 LL is never split.
inline std::map<SubbandId, Grid> decompose_leaves(const Grid& img, const FilterBank& fb,
                                                  const std::vector<SubbandId>& wanted) {
  std::map<SubbandId, Grid> out;
  std::set<BandPath> need1, need2;
  for (const auto& id : wanted) {
    require(id.depth() == 3, "subband id: leaf ids need 3 labels");
    need1.insert(BandPath{{id.path().labels[0]}});
    need2.insert(BandPath{{id.path().labels[0], id.path().labels[1]}});
  }
  const std::set<SubbandId> wanted_set(wanted.begin(), wanted.end());
  const auto level1 = swt_level(img, fb, 1);
  for (Band a : {Band::LH, Band::HL, Band::HH}) {
    if (!need1.count(BandPath{{a}})) continue;
    const auto level2 = swt_level(level1[a], fb, 2);
    for (Band b : kAllBands) {
      if (!need2.count(BandPath{{a, b}})) continue;
      auto level3 = swt_level(level2[b], fb, 3);
      for (Band c : kAllBands) {
        SubbandId id({a, b, c});
        if (wanted_set.count(id)) out.emplace(std::move(id), std::move(level3[c]));
      }
    }
  }
  return out;
}

inline SubbandStack decompose_48(const GrayImage& img, const FilterBank& fb) {
  SubbandStack s{img.height(), img.width(), {decompose_leaves(img, fb, leaf_ids_48())}};
  return s;
}

/// Per-channel decomposition: 48 bands per channel (144 for RGB).
inline SubbandStack decompose_48(const MultiChannelImage& img, const FilterBank& fb) {
  SubbandStack s{img.height(), img.width(), {}};
  for (const auto& ch : img.channels()) s.channels.push_back(decompose_leaves(ch, fb, leaf_ids_48()));
  return s;
}

// ---------------------------------------------------------------------------
// LL-removed baseline

/// One level forward, LL zeroed, inverse.
inline GrayImage ll_removed_image(const GrayImage& img, const FilterBank& fb) {
  auto q = swt_level(img, fb, 1);
  q[Band::LL] = Grid(img.height(), img.width());
  return swt_level_inverse(q, fb, 1);
}

/// Complement of ll_removed_image: only the level-1 LL contribution.
inline GrayImage ll_only_image(const GrayImage& img, const FilterBank& fb) {
  auto q = swt_level(img, fb, 1);
  for (Band b : {Band::LH, Band::HL, Band::HH}) q[b] = Grid(img.height(), img.width());
  return swt_level_inverse(q, fb, 1);
}

// ---------------------------------------------------------------------------
// Band dump

/// Writes one affinely normalized PGM per band plus bands.json with the raw
/// min/max of each band. Multi-channel stacks prefix names with R-/G-/B-.
inline void dump_bands(const SubbandStack& stack, const std::filesystem::path& out_dir,
                       const nlohmann::ordered_json& run_config) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir)) throw Error("unwritable output: " + out_dir.string());
  static constexpr const char* kChannelPrefix[] = {"R-", "G-", "B-"};
  nlohmann::ordered_json bands = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < stack.channels.size(); ++c) {
    const std::string prefix = stack.channels.size() == 3 ? kChannelPrefix[c] : "";
    for (const auto& id : leaf_ids_48()) {
      const Grid& g = stack.band(c, id);
      const double lo = g.min_value(), hi = g.max_value();
      Grid view(g.height(), g.width());
      if (hi > lo)
        for (std::size_t i = 0; i < g.size(); ++i) view.raw()[i] = (g.raw()[i] - lo) / (hi - lo);
      const std::string name = prefix + id.str();
      save_image(view, out_dir / (name + ".pgm"));
      bands[name] = {{"min", lo}, {"max", hi}};
    }
  }
  nlohmann::ordered_json sidecar;
  sidecar["height"] = stack.height;
  sidecar["width"] = stack.width;
  sidecar["band_count"] = stack.band_count();
  sidecar["bands"] = std::move(bands);
  sidecar["run_config"] = run_config;
  std::ofstream out(out_dir / "bands.json", std::ios::binary);
  out << sidecar.dump(2) << '\n';
  if (!out) throw Error("unwritable output: " + (out_dir / "bands.json").string());
}

}  // namespace morphdet
