#pragma once

// Dense rank-4 feature maps (batch, channel, y, x) and the spatial
// primitives every layer builds on: padding, integer shifts, stride
// sampling and pooling reductions.
//
// Index convention used across the project: row-major (b, c, y, x).
// A shift s moves content the opposite way of the index offset, i.e.
// translate(m, s)(x) = m(x + s).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaussnet {

struct Shape {
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;

  std::int64_t volume() const {
    if (batch < 0 || channels < 0 || height < 0 || width < 0)
      throw std::invalid_argument("Shape: negative dimension");
    const std::int64_t v = std::int64_t(batch) * channels * height * width;
    if (batch > 0 && channels > 0 && height > 0 &&
        v / (std::int64_t(batch) * channels * height) != width)
      throw std::invalid_argument("Shape: volume overflows index range");
    return v;
  }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(batch) + "x" + std::to_string(channels) + "x" +
           std::to_string(height) + "x" + std::to_string(width);
  }
};

/// Dense rank-4 real tensor. Values are stored row-major in single
/// precision by default; reductions accumulate in double.
template <class Real = float>
class FeatureMap {
 public:
  FeatureMap() = default;

  FeatureMap(int batch, int channels, int height, int width)
      : shape_{batch, channels, height, width},
        values_(static_cast<std::size_t>(shape_.volume()), Real(0)) {}

  explicit FeatureMap(Shape s) : FeatureMap(s.batch, s.channels, s.height, s.width) {}

  FeatureMap(Shape s, std::vector<Real> values)
      : shape_(s), values_(std::move(values)) {
    if (static_cast<std::int64_t>(values_.size()) != shape_.volume())
      throw std::invalid_argument("FeatureMap: value count does not match shape");
  }

  const Shape& shape() const { return shape_; }
  int batch() const { return shape_.batch; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return values_.size(); }

  Real& operator()(int b, int c, int y, int x) {
    return values_[index(b, c, y, x)];
  }
  Real operator()(int b, int c, int y, int x) const {
    return values_[index(b, c, y, x)];
  }

  /// Zero-extended read: out-of-range spatial coordinates yield 0.
  Real at_or_zero(int b, int c, int y, int x) const {
    if (y < 0 || y >= shape_.height || x < 0 || x >= shape_.width) return Real(0);
    return values_[index(b, c, y, x)];
  }

  Real* data() { return values_.data(); }
  const Real* data() const { return values_.data(); }
  std::vector<Real>& values() { return values_; }
  const std::vector<Real>& values() const { return values_; }

  Real* plane(int b, int c) { return values_.data() + index(b, c, 0, 0); }
  const Real* plane(int b, int c) const { return values_.data() + index(b, c, 0, 0); }

  bool all_finite() const {
    for (Real v : values_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <class Other>
  FeatureMap<Other> cast() const {
    FeatureMap<Other> out(shape_);
    for (std::size_t i = 0; i < values_.size(); ++i)
      out.values()[i] = static_cast<Other>(values_[i]);
    return out;
  }

 private:
  std::size_t index(int b, int c, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_.channels + c) * shape_.height + y) *
               shape_.width + x;
  }

  Shape shape_;
  std::vector<Real> values_;
};

enum class Fill { Zero, ReplicateNearest };

/// Grows both spatial dims by 2*margin, content centered, border zero.
template <class Real>
FeatureMap<Real> zero_pad(const FeatureMap<Real>& m, int margin) {
  if (margin < 0) throw std::invalid_argument("zero_pad: margin must be >= 0");
  if (margin == 0) return m;
  FeatureMap<Real> out(m.batch(), m.channels(), m.height() + 2 * margin,
                       m.width() + 2 * margin);
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c)
      for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
          out(b, c, y + margin, x + margin) = m(b, c, y, x);
  return out;
}

/// translate(m, s)(x) = m(x + s); vacated positions are filled with zero
/// or with the nearest in-range pixel.
template <class Real>
FeatureMap<Real> translate(const FeatureMap<Real>& m, int sx, int sy,
                           Fill fill = Fill::Zero) {
  if (std::abs(sx) >= m.width() || std::abs(sy) >= m.height())
    throw std::invalid_argument("translate: shift magnitude must be < spatial dims");
  FeatureMap<Real> out(m.shape());
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c)
      for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
          const int sy2 = y + sy, sx2 = x + sx;
          if (fill == Fill::Zero) {
            out(b, c, y, x) = m.at_or_zero(b, c, sy2, sx2);
          } else {
            const int cy = std::clamp(sy2, 0, m.height() - 1);
            const int cx = std::clamp(sx2, 0, m.width() - 1);
            out(b, c, y, x) = m(b, c, cy, cx);
          }
        }
  return out;
}

/// Stride-d point sampling: out(x) = in(x*d). Output dims are ceil(dim/d).
template <class Real>
FeatureMap<Real> subsample(const FeatureMap<Real>& m, int d) {
  if (d < 1) throw std::invalid_argument("subsample: factor must be >= 1");
  if (d == 1) return m;
  const int oh = (m.height() + d - 1) / d;
  const int ow = (m.width() + d - 1) / d;
  FeatureMap<Real> out(m.batch(), m.channels(), oh, ow);
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          out(b, c, y, x) = m(b, c, y * d, x * d);
  return out;
}

/// 2x2 average pooling with stride 2 (alternative sub-sampling mode).
/// Tail rows/columns that do not fill a 2x2 cell average what is there.
template <class Real>
FeatureMap<Real> avg_pool2(const FeatureMap<Real>& m) {
  const int oh = (m.height() + 1) / 2;
  const int ow = (m.width() + 1) / 2;
  FeatureMap<Real> out(m.batch(), m.channels(), oh, ow);
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double sum = 0;
          int n = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int yy = 2 * y + dy, xx = 2 * x + dx;
              if (yy < m.height() && xx < m.width()) {
                sum += m(b, c, yy, xx);
                ++n;
              }
            }
          out(b, c, y, x) = Real(sum / n);
        }
  return out;
}

/// Per-(batch, channel) spatial mean, double accumulation.
/// Result is laid out row-major (b, c).
template <class Real>
std::vector<Real> global_average(const FeatureMap<Real>& m) {
  if (m.height() <= 0 || m.width() <= 0)
    throw std::invalid_argument("global_average: empty spatial dims");
  std::vector<Real> out(static_cast<std::size_t>(m.batch()) * m.channels());
  const std::int64_t n = std::int64_t(m.height()) * m.width();
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c) {
      const Real* p = m.plane(b, c);
      double sum = 0;
      for (std::int64_t i = 0; i < n; ++i) sum += p[i];
      out[static_cast<std::size_t>(b) * m.channels() + c] = Real(sum / double(n));
    }
  return out;
}

/// Max absolute entry; 0 for empty maps.
template <class Real>
Real sup_norm(const FeatureMap<Real>& m) {
  Real best = 0;
  for (Real v : m.values()) best = std::max(best, std::abs(v));
  return best;
}

template <class Real>
Real sup_diff(const FeatureMap<Real>& a, const FeatureMap<Real>& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("sup_diff: shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  Real best = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    best = std::max(best, std::abs(a.values()[i] - b.values()[i]));
  return best;
}

using FeatureMapF = FeatureMap<float>;
using FeatureMapD = FeatureMap<double>;

}  // namespace gaussnet
