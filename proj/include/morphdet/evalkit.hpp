#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "morphdet/error.hpp"

namespace morphdet {

/// Distances of genuine (bona fide vs bona fide) and imposter (bona fide vs
/// morph) pairs. Small distance means "same identity, accept".
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> imposter;
};

struct OperatingPoint {
  double threshold = 0.0;
  double apcer = 0.0;
  double bpcer = 0.0;
  friend bool operator==(const OperatingPoint&, const OperatingPoint&) = default;
};

namespace detail {

inline void check_scores(const ScoreSet& s) {
  require(!s.genuine.empty() && !s.imposter.empty(), "metrics: empty class list");
}

/// Sorted copies for O(log n) rate queries.
struct SortedScores {
  std::vector<double> genuine, imposter;
  explicit SortedScores(const ScoreSet& s) : genuine(s.genuine), imposter(s.imposter) {
    std::sort(genuine.begin(), genuine.end());
    std::sort(imposter.begin(), imposter.end());
  }
  OperatingPoint at(double t) const {
    const auto accepted_imposters = std::lower_bound(imposter.begin(), imposter.end(), t) - imposter.begin();
    const auto accepted_genuine = std::lower_bound(genuine.begin(), genuine.end(), t) - genuine.begin();
    return {t, static_cast<double>(accepted_imposters) / static_cast<double>(imposter.size()),
            static_cast<double>(genuine.size() - static_cast<std::size_t>(accepted_genuine)) /
                static_cast<double>(genuine.size())};
  }
};

}  // namespace detail

/// Decision rule: distance < threshold accepts the pair as bona fide.
/// APCER = imposter distances accepted; BPCER = genuine distances rejected.
inline OperatingPoint apcer_bpcer(const ScoreSet& scores, double threshold) {
  detail::check_scores(scores);
  require(std::isfinite(threshold), "metrics: threshold must be finite");
  return detail::SortedScores(scores).at(threshold);
}

/// Ascending candidate thresholds: one below every score, the midpoints of
/// consecutive distinct pooled scores, one above every score.
inline std::vector<double> candidate_thresholds(const ScoreSet& scores) {
  detail::check_scores(scores);
  std::vector<double> pooled = scores.genuine;
  pooled.insert(pooled.end(), scores.imposter.begin(), scores.imposter.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());
  std::vector<double> t;
  t.reserve(pooled.size() + 1);
  t.push_back(pooled.front() - 1.0);
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) t.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  t.push_back(pooled.back() + 1.0);
  return t;
}

struct EqualErrorRate {
  double eer = 0.0;
  double threshold = 0.0;
  OperatingPoint point;
};

/// Threshold minimizing |APCER - BPCER| (lowest such threshold on ties);
/// EER is the mean of the two rates there.
inline EqualErrorRate d_eer(const ScoreSet& scores) {
  const detail::SortedScores sorted(scores);
  EqualErrorRate best;
  double best_gap = 2.0;
  for (double t : candidate_thresholds(scores)) {
    const auto p = sorted.at(t);
    const double gap = std::abs(p.apcer - p.bpcer);
    if (gap < best_gap) {
      best_gap = gap;
      best = {0.5 * (p.apcer + p.bpcer), t, p};
    }
  }
  return best;
}

enum class FixedRate { apcer, bpcer };

struct RateAt {
  OperatingPoint point;
  /// The complementary rate (APCER when BPCER is fixed and vice versa).
  double rate = 1.0;
  bool reachable = true;
};

/// Operating point where the fixed rate is at most `level` and the other
/// rate is as small as possible on the empirical curve. With BPCER fixed
/// that is the smallest admissible threshold; with APCER fixed, the
/// largest.
inline RateAt rate_at(const ScoreSet& scores, FixedRate fix, double level) {
  require(level > 0.0 && level < 1.0, "metrics: level must lie in (0,1)");
  const detail::SortedScores sorted(scores);
  const auto thresholds = candidate_thresholds(scores);
  RateAt out;
  out.reachable = false;
  if (fix == FixedRate::bpcer) {
    for (double t : thresholds) {
      const auto p = sorted.at(t);
      if (p.bpcer <= level) {
        out = {p, p.apcer, true};
        break;
      }
    }
  } else {
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
      const auto p = sorted.at(*it);
      if (p.apcer <= level) {
        out = {p, p.bpcer, true};
        break;
      }
    }
  }
  if (!out.reachable) out.rate = 1.0;
  return out;
}

using DetCurve = std::vector<OperatingPoint>;

inline DetCurve det_points(const ScoreSet& scores) {
  const detail::SortedScores sorted(scores);
  DetCurve curve;
  for (double t : candidate_thresholds(scores)) curve.push_back(sorted.at(t));
  return curve;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string det_csv(const DetCurve& curve) {
  std::string out = "threshold,apcer,bpcer\n";
  for (const auto& p : curve)
    out += format_double(p.threshold) + ',' + format_double(p.apcer) + ',' + format_double(p.bpcer) + '\n';
  return out;
}

inline DetCurve parse_det_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  DetCurve curve;
  std::getline(in, line);
  require(line == "threshold,apcer,bpcer", "det csv: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    OperatingPoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p.threshold, &p.apcer, &p.bpcer) != 3)
      throw Error("det csv: malformed row '" + line + "'");
    curve.push_back(p);
  }
  return curve;
}

/// DET plot with both axes log-scaled over [1e-4, 1]; rates below 1e-4 are
/// drawn at 1e-4.
inline std::string det_svg(const DetCurve& curve, const std::string& title = "DET") {
  constexpr double kFloor = 1e-4;
  constexpr double kLeft = 70, kTop = 30, kSize = 400;
  auto axis = [&](double rate) { return (std::log10(std::max(rate, kFloor)) - std::log10(kFloor)) / 4.0; };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" viewBox=\"0 0 500 500\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"500\" height=\"500\" fill=\"white\"/>\n";
  svg += "<text x=\"250\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + title +
         "</text>\n";
  svg += "<rect x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kTop) + "\" width=\"" + fmt(kSize) + "\" height=\"" +
         fmt(kSize) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int e = -4; e <= 0; ++e) {
    const double f = (e + 4) / 4.0;
    const std::string x = fmt(kLeft + f * kSize), y = fmt(kTop + kSize - f * kSize);
    const std::string label = "1e" + std::to_string(e);
    svg += "<line x1=\"" + x + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + x + "\" y2=\"" + fmt(kTop + kSize) +
           "\" stroke=\"#ddd\"/>\n";
    svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + y + "\" x2=\"" + fmt(kLeft + kSize) + "\" y2=\"" + y +
           "\" stroke=\"#ddd\"/>\n";
    svg += "<text x=\"" + x + "\" y=\"" + fmt(kTop + kSize + 15) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + label + "</text>\n";
    svg += "<text x=\"" + fmt(kLeft - 5) + "\" y=\"" + y +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + label + "</text>\n";
  }
  svg += "<text x=\"" + fmt(kLeft + kSize / 2) + "\" y=\"" + fmt(kTop + kSize + 35) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">APCER</text>\n";
  svg += "<text x=\"15\" y=\"" + fmt(kTop + kSize / 2) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 15 " + fmt(kTop + kSize / 2) + ")\">BPCER</text>\n";
  svg += "<polyline fill=\"none\" stroke=\"#c00\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (i) svg += ' ';
    svg += fmt(kLeft + axis(curve[i].apcer) * kSize) + ',' + fmt(kTop + kSize - axis(curve[i].bpcer) * kSize);
  }
  svg += "\"/>\n</svg>\n";
  return svg;
}

/// Computes the curve and writes CSV (threshold,apcer,bpcer) and SVG.
inline DetCurve det_curve(const ScoreSet& scores, const std::filesystem::path& out_csv,
                          const std::filesystem::path& out_svg) {
  auto curve = det_points(scores);
  {
    std::ofstream out(out_csv, std::ios::binary);
    if (!out) throw Error("unwritable output: " + out_csv.string());
    out << det_csv(curve);
    if (!out) throw Error("unwritable output: " + out_csv.string());
  }
  std::ofstream out(out_svg, std::ios::binary);
  if (!out) throw Error("unwritable output: " + out_svg.string());
  out << det_svg(curve);
  if (!out) throw Error("unwritable output: " + out_svg.string());
  return curve;
}

}  // namespace morphdet
