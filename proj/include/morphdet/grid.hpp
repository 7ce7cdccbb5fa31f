#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "morphdet/error.hpp"

namespace morphdet {

/// Row-major 2D grid of doubles. Used both for images (values in [0,1])
/// and for wavelet coefficients (unbounded).
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), data_(height * width, fill) {}
  Grid(std::size_t height, std::size_t width, std::vector<double> data)
      : height_(height), width_(width), data_(std::move(data)) {
    require(data_.size() == height_ * width_, "grid: data length does not match dimensions");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * width_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * width_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool same_shape(const Grid& o) const { return height_ == o.height_ && width_ == o.width_; }

  double min_value() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }
  double max_value() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

  Grid& operator+=(const Grid& o) {
    require(same_shape(o), "grid: dimension mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Grid& operator-=(const Grid& o) {
    require(same_shape(o), "grid: dimension mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Grid& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Grid operator+(Grid a, const Grid& b) { return a += b; }
  friend Grid operator-(Grid a, const Grid& b) { return a -= b; }
  friend Grid operator*(Grid a, double s) { return a *= s; }
  friend Grid operator*(double s, Grid a) { return a *= s; }
  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

inline double max_abs_diff(const Grid& a, const Grid& b) {
  require(a.same_shape(b), "grid: dimension mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.raw()[i] - b.raw()[i]));
  return m;
}

}  // namespace morphdet
