#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>

namespace aoglab {

using Vec2 = Eigen::Vector2d;

/// Axis-aligned box in image pixels: [x, x+w) x [y, y+h).
template <typename Scalar>
struct BasicRect {
  Scalar x{0};
  Scalar y{0};
  Scalar w{0};
  Scalar h{0};

  Scalar right() const { return x + w; }
  Scalar bottom() const { return y + h; }
  Eigen::Matrix<Scalar, 2, 1> center() const { return {x + w / Scalar(2), y + h / Scalar(2)}; }
  Scalar diagonal() const { return std::sqrt(w * w + h * h); }

  /// Half-open point containment.
  bool contains(const Eigen::Matrix<Scalar, 2, 1>& p) const {
    return p.x() >= x && p.x() < x + w && p.y() >= y && p.y() < y + h;
  }
  /// Closed containment of another box.
  bool contains(const BasicRect& o) const {
    return o.x >= x && o.y >= y && o.right() <= right() && o.bottom() <= bottom();
  }

  static BasicRect centered(const Eigen::Matrix<Scalar, 2, 1>& c, Scalar w, Scalar h) {
    return {c.x() - w / Scalar(2), c.y() - h / Scalar(2), w, h};
  }

  BasicRect clipped(Scalar width, Scalar height) const {
    const Scalar x0 = std::clamp(x, Scalar(0), width);
    const Scalar y0 = std::clamp(y, Scalar(0), height);
    const Scalar x1 = std::clamp(x + w, Scalar(0), width);
    const Scalar y1 = std::clamp(y + h, Scalar(0), height);
    return {x0, y0, x1 - x0, y1 - y0};
  }

  template <typename Other>
  BasicRect<Other> cast() const {
    return {Other(x), Other(y), Other(w), Other(h)};
  }

  bool operator==(const BasicRect&) const = default;
};

using Rect = BasicRect<double>;

/// Integer pixel span [begin, end) covered by an interval under the pixel-center rule:
/// pixel i is covered when lo <= i + 0.5 < hi.
struct PixelSpan {
  int begin{0};
  int end{0};
  bool empty() const { return end <= begin; }
};

inline PixelSpan covered_pixels(double lo, double hi, int limit) {
  const int b = std::max(0, static_cast<int>(std::ceil(lo - 0.5)));
  const int e = std::min(limit, static_cast<int>(std::ceil(hi - 0.5)));
  return {b, std::max(b, e)};
}

/// Calls f(row, col) for every pixel of a width x height image whose center lies in r.
template <typename F>
void for_each_pixel(const Rect& r, int width, int height, F&& f) {
  const PixelSpan cols = covered_pixels(r.x, r.right(), width);
  const PixelSpan rows = covered_pixels(r.y, r.bottom(), height);
  for (int i = rows.begin; i < rows.end; ++i)
    for (int j = cols.begin; j < cols.end; ++j) f(i, j);
}

/// Boolean raster of the union of rectangles (rows = height).
using RegionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline RegionMask rasterize_union(std::span<const Rect> rects, int width, int height) {
  RegionMask mask = RegionMask::Constant(height, width, false);
  for (const Rect& r : rects) for_each_pixel(r, width, height, [&](int i, int j) { mask(i, j) = true; });
  return mask;
}

inline bool any_contains(std::span<const Rect> rects, const Vec2& p) {
  return std::any_of(rects.begin(), rects.end(), [&](const Rect& r) { return r.contains(p); });
}

}  // namespace aoglab
