#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "morphdet/error.hpp"
#include "morphdet/grid.hpp"
#include "morphdet/wavelet.hpp"

namespace morphdet {

inline constexpr double kSigmaFloor = 1e-8;

/// Shannon entropy (bits) of a band's coefficient histogram: `bins`
/// equal-width bins spanning [min, max] of the band.
inline double band_entropy(std::span<const double> band, std::size_t bins) {
  require(bins >= 2, "entropy: need at least 2 bins");
  require(!band.empty(), "entropy: empty grid");
  const auto [lo_it, hi_it] = std::minmax_element(band.begin(), band.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return 0.0;
  std::vector<std::size_t> counts(bins, 0);
  const double scale = static_cast<double>(bins) / (hi - lo);
  for (double v : band) {
    auto k = static_cast<std::size_t>((v - lo) * scale);
    ++counts[std::min(k, bins - 1)];
  }
  const double n = static_cast<double>(band.size());
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return std::max(h, 0.0);
}

inline double band_entropy(const Grid& band, std::size_t bins) { return band_entropy(band.values(), bins); }

struct GaussianFit {
  double mu = 0.0;
  double sigma = kSigmaFloor;
};

/// Maximum-likelihood fit: sample mean and population standard deviation,
/// with sigma floored at 1e-8.
inline GaussianFit fit_gaussian(std::span<const double> samples) {
  require(samples.size() >= 2, "fit: need at least 2 samples");
  const double n = static_cast<double>(samples.size());
  const double mu = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : samples) ss += (s - mu) * (s - mu);
  return {mu, std::max(std::sqrt(ss / n), kSigmaFloor)};
}

enum class KldDirection { bona_fide_to_morph, morph_to_bona_fide, symmetric };

inline std::string_view to_string(KldDirection d) {
  switch (d) {
    case KldDirection::bona_fide_to_morph: return "bona_fide_to_morph";
    case KldDirection::morph_to_bona_fide: return "morph_to_bona_fide";
    case KldDirection::symmetric: return "symmetric";
  }
  return "?";
}

inline KldDirection parse_kld_direction(std::string_view s) {
  if (s == "bona_fide_to_morph" || s == "forward") return KldDirection::bona_fide_to_morph;
  if (s == "morph_to_bona_fide" || s == "reverse") return KldDirection::morph_to_bona_fide;
  if (s == "symmetric") return KldDirection::symmetric;
  throw Error("unknown kld direction '" + std::string(s) + "'");
}

/// KL(p || q) in nats between two normals.
inline double gaussian_kld(const GaussianFit& p, const GaussianFit& q) {
  const double sp = std::max(p.sigma, kSigmaFloor), sq = std::max(q.sigma, kSigmaFloor);
  const double dm = p.mu - q.mu;
  const double kld = std::log(sq / sp) + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5;
  return std::max(kld, 0.0);
}

inline double band_divergence(const GaussianFit& bona_fide, const GaussianFit& morph, KldDirection dir) {
  switch (dir) {
    case KldDirection::bona_fide_to_morph: return gaussian_kld(bona_fide, morph);
    case KldDirection::morph_to_bona_fide: return gaussian_kld(morph, bona_fide);
    case KldDirection::symmetric: return 0.5 * (gaussian_kld(bona_fide, morph) + gaussian_kld(morph, bona_fide));
  }
  return 0.0;
}

/// Mean-centers each per-dataset vector, then averages element-wise.
inline std::vector<double> normalize_and_average(const std::vector<std::vector<double>>& per_dataset) {
  require(!per_dataset.empty(), "normalize: need at least one dataset");
  const std::size_t n = per_dataset.front().size();
  require(n > 0, "normalize: empty vector");
  std::vector<double> avg(n, 0.0);
  for (const auto& v : per_dataset) {
    require(v.size() == n, "normalize: length mismatch");
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) avg[i] += v[i] - mean;
  }
  for (double& a : avg) a /= static_cast<double>(per_dataset.size());
  return avg;
}

/// Ordered list of selected band ids, best first.
struct SelectionMask {
  std::vector<SubbandId> bands;
  std::size_t size() const { return bands.size(); }
  friend bool operator==(const SelectionMask&, const SelectionMask&) = default;
};

/// Full ranking (best first) of `ids` by descending value; equal values are
/// ordered by ascending id string.
inline std::vector<std::size_t> rank_order(const std::vector<double>& values, const std::vector<SubbandId>& ids) {
  require(values.size() == ids.size(), "rank: length mismatch");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return ids[a] < ids[b];
  });
  return order;
}

inline SelectionMask select_top_k(const std::vector<double>& values, const std::vector<SubbandId>& ids, std::size_t k) {
  require(k >= 1 && k <= values.size(), "select: k out of range");
  const auto order = rank_order(values, ids);
  SelectionMask mask;
  for (std::size_t i = 0; i < k; ++i) mask.bands.push_back(ids[order[i]]);
  return mask;
}

/// Values are indexed like leaf_ids_48().
inline SelectionMask select_top_k(const std::vector<double>& avg48, std::size_t k) {
  require(avg48.size() == 48, "select: expected 48 values");
  return select_top_k(avg48, leaf_ids_48(), k);
}

// ---------------------------------------------------------------------------
// Per-dataset statistics

struct BandClassStats {
  GaussianFit bona_fide;
  GaussianFit morph;
  double kld = 0.0;
};

struct DatasetStatistics {
  std::string name;
  std::vector<BandClassStats> bands;  // indexed like leaf_ids_48()
};

struct BandStatistics {
  std::vector<DatasetStatistics> datasets;
  std::vector<double> normalized_avg;  // indexed like leaf_ids_48()
};

/// Entropy per band for one image, indexed like leaf_ids_48().
inline std::vector<double> band_entropies(const GrayImage& img, const FilterBank& fb, std::size_t bins) {
  const auto stack = decompose_48(img, fb);
  std::vector<double> e;
  e.reserve(48);
  for (const auto& id : leaf_ids_48()) e.push_back(band_entropy(stack.band(0, id), bins));
  return e;
}

/// Fits the two per-class normals of every band and scores each band.
/// `entropies[i]` is the 48-vector of image i; `is_morph[i]` its class.
inline DatasetStatistics fit_dataset(std::string name, const std::vector<std::vector<double>>& entropies,
                                     const std::vector<bool>& is_morph, KldDirection dir) {
  require(entropies.size() == is_morph.size(), "bandstats: label count mismatch");
  DatasetStatistics ds{std::move(name), std::vector<BandClassStats>(48)};
  for (std::size_t b = 0; b < 48; ++b) {
    std::vector<double> bf, mo;
    for (std::size_t i = 0; i < entropies.size(); ++i) {
      require(entropies[i].size() == 48, "bandstats: expected 48 entropies per image");
      (is_morph[i] ? mo : bf).push_back(entropies[i][b]);
    }
    if (bf.size() < 2 || mo.size() < 2)
      throw Error("bandstats: dataset '" + ds.name + "' needs at least 2 images per class");
    auto& s = ds.bands[b];
    s.bona_fide = fit_gaussian(bf);
    s.morph = fit_gaussian(mo);
    s.kld = band_divergence(s.bona_fide, s.morph, dir);
  }
  return ds;
}

inline BandStatistics combine_datasets(std::vector<DatasetStatistics> datasets) {
  BandStatistics st;
  std::vector<std::vector<double>> klds;
  for (const auto& d : datasets) {
    std::vector<double> v;
    for (const auto& b : d.bands) v.push_back(b.kld);
    klds.push_back(std::move(v));
  }
  st.normalized_avg = normalize_and_average(klds);
  st.datasets = std::move(datasets);
  return st;
}

/// Mean 1-based position, within a full best-first ranking, of bands with
/// at least two high-pass labels versus bands with at most one.
struct HighFrequencyRankSummary {
  double mean_rank_high = 0.0;  // bands with >= 2 high-pass labels
  double mean_rank_low = 0.0;   // bands with <= 1
  bool high_ranks_better() const { return mean_rank_high < mean_rank_low; }
};

inline HighFrequencyRankSummary high_frequency_rank_summary(const std::vector<SubbandId>& ranking) {
  double sh = 0, sl = 0;
  std::size_t nh = 0, nl = 0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    if (ranking[r].high_pass_label_count() >= 2) {
      sh += static_cast<double>(r + 1);
      ++nh;
    } else {
      sl += static_cast<double>(r + 1);
      ++nl;
    }
  }
  return {nh ? sh / nh : 0.0, nl ? sl / nl : 0.0};
}

}  // namespace morphdet
