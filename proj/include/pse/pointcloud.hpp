#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pse/error.hpp"

namespace pse {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(const Vec3& a, double s) {
  return {a[0] * s, a[1] * s, a[2] * s};
}
inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double sqnorm(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(sqnorm(a)); }
inline double sqdist(const Vec3& a, const Vec3& b) { return sqnorm(a - b); }
inline double dist(const Vec3& a, const Vec3& b) { return std::sqrt(sqdist(a, b)); }

/// Ordered list of 3D points. Carrier for the dense input, the sparse
/// self-embedded set, and everything in between.
struct PointCloud {
  std::vector<Vec3> pts;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> p) : pts(std::move(p)) {}

  std::size_t count() const { return pts.size(); }
  bool empty() const { return pts.empty(); }
  Vec3& operator[](std::size_t i) { return pts[i]; }
  const Vec3& operator[](std::size_t i) const { return pts[i]; }
};

inline bool all_finite(const PointCloud& c) {
  for (const Vec3& p : c.pts)
    for (double v : p)
      if (!std::isfinite(v)) return false;
  return true;
}

inline void require_valid(const PointCloud& c, const char* what) {
  if (c.empty())
    throw invalid_argument_error(std::string(what) + ": empty point cloud");
  if (!all_finite(c))
    throw invalid_argument_error(std::string(what) + ": non-finite coordinate");
}

/// Similarity transform mapping a cloud into the unit sphere and back.
/// apply(p) = (p - center) / scale;  invert(apply(p)) == p to ~1e-12.
struct NormalizationTransform {
  Vec3 center{0.0, 0.0, 0.0};
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - center) * (1.0 / scale); }
  Vec3 invert(const Vec3& p) const { return p * scale + center; }

  PointCloud apply(const PointCloud& c) const {
    PointCloud out;
    out.pts.reserve(c.count());
    for (const Vec3& p : c.pts) out.pts.push_back(apply(p));
    return out;
  }
  PointCloud invert(const PointCloud& c) const {
    PointCloud out;
    out.pts.reserve(c.count());
    for (const Vec3& p : c.pts) out.pts.push_back(invert(p));
    return out;
  }
};

}  // namespace pse
