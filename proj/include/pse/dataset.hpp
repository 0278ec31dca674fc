#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "pse/config.hpp"
#include "pse/error.hpp"
#include "pse/geometry.hpp"
#include "pse/pointcloud.hpp"
#include "pse/rng.hpp"

namespace pse {

inline constexpr std::array<double, 3> kBoxHalfExtents{1.0, 0.75, 0.5};
inline constexpr double kTorusMajorRadius = 1.0;
inline constexpr double kTorusMinorRadius = 0.35;
inline constexpr double kCylinderRadius = 0.5;
inline constexpr double kCylinderHeight = 1.6;

struct BoxSpec {
  Vec3 center;
  Vec3 half;
};

inline constexpr std::array<BoxSpec, 2> kTwoBoxParts{
    BoxSpec{{0.0, 0.0, -0.45}, {0.9, 0.55, 0.35}},
    BoxSpec{{0.15, 0.10, 0.50}, {0.45, 0.40, 0.50}}};

namespace detail {

/// Axis-aligned rectangle: the face of `box` whose normal is +/- axis `dim`.
struct BoxFace {
  BoxSpec box;
  std::size_t dim;
  double sign;

  double area() const {
    const std::size_t a = (dim + 1) % 3, b = (dim + 2) % 3;
    return 4.0 * box.half[a] * box.half[b];
  }

  Vec3 sample(Rng& rng) const {
    const std::size_t a = (dim + 1) % 3, b = (dim + 2) % 3;
    Vec3 p = box.center;
    p[dim] += sign * box.half[dim];
    p[a] += rng.uniform(-box.half[a], box.half[a]);
    p[b] += rng.uniform(-box.half[b], box.half[b]);
    return p;
  }
};

inline std::vector<BoxFace> box_faces(const BoxSpec& box) {
  std::vector<BoxFace> faces;
  for (std::size_t d = 0; d < 3; ++d)
    for (double s : {+1.0, -1.0}) faces.push_back({box, d, s});
  return faces;
}

/// One point from a face chosen with probability proportional to its area.
inline Vec3 sample_faces(const std::vector<BoxFace>& faces, Rng& rng) {
  double total = 0;
  for (const auto& f : faces) total += f.area();
  double u = rng.uniform(0.0, total);
  for (const auto& f : faces) {
    u -= f.area();
    if (u < 0) return f.sample(rng);
  }
  return faces.back().sample(rng);  // u == total after rounding
}

}  // namespace detail

inline PointCloud sample_sphere(Rng& rng, std::size_t count) {
  PointCloud c;
  c.pts.reserve(count);
  while (c.count() < count) {
    // Marsaglia-style: normalize a Gaussian triple; reject near-zero norms.
    Vec3 g{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    const double len = norm(g);
    if (len < 1e-9) continue;
    c.pts.push_back(g * (1.0 / len));
  }
  return c;
}

inline PointCloud sample_box(Rng& rng, std::size_t count) {
  const BoxSpec box{{0, 0, 0},
                    {kBoxHalfExtents[0], kBoxHalfExtents[1], kBoxHalfExtents[2]}};
  auto faces = detail::box_faces(box);
  PointCloud c;
  c.pts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) c.pts.push_back(detail::sample_faces(faces, rng));
  return c;
}

inline PointCloud sample_torus(Rng& rng, std::size_t count) {
  const double R = kTorusMajorRadius, r = kTorusMinorRadius;
  PointCloud c;
  c.pts.reserve(count);
  while (c.count() < count) {
    const double u = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double v = rng.uniform(0.0, 2.0 * std::numbers::pi);
    // Surface density is proportional to R + r cos v; thin the oversampled
    // outer band by rejection.
    if (rng.uniform() * (R + r) > R + r * std::cos(v)) continue;
    const double ring = R + r * std::cos(v);
    c.pts.push_back({ring * std::cos(u), ring * std::sin(u), r * std::sin(v)});
  }
  return c;
}

inline PointCloud sample_cylinder(Rng& rng, std::size_t count) {
  const double rad = kCylinderRadius, h = kCylinderHeight;
  const double side = 2.0 * std::numbers::pi * rad * h;
  const double cap = std::numbers::pi * rad * rad;
  PointCloud c;
  c.pts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double pick = rng.uniform(0.0, side + 2.0 * cap);
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (pick < side) {
      const double z = rng.uniform(-h / 2.0, h / 2.0);
      c.pts.push_back({rad * std::cos(theta), rad * std::sin(theta), z});
    } else {
      const double rho = rad * std::sqrt(rng.uniform());
      const double z = pick < side + cap ? h / 2.0 : -h / 2.0;
      c.pts.push_back({rho * std::cos(theta), rho * std::sin(theta), z});
    }
  }
  return c;
}

inline PointCloud sample_two_box(Rng& rng, std::size_t count) {
  std::vector<detail::BoxFace> faces;
  for (const BoxSpec& b : kTwoBoxParts)
    for (const auto& f : detail::box_faces(b)) faces.push_back(f);
  PointCloud c;
  c.pts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) c.pts.push_back(detail::sample_faces(faces, rng));
  return c;
}

inline std::string canonical_family(std::string name) {
  std::replace(name.begin(), name.end(), '-', '_');
  return name;
}

inline PointCloud sample_family(const std::string& family, Rng& rng, std::size_t count) {
  const std::string f = canonical_family(family);
  if (f == "sphere") return sample_sphere(rng, count);
  if (f == "box") return sample_box(rng, count);
  if (f == "torus") return sample_torus(rng, count);
  if (f == "cylinder") return sample_cylinder(rng, count);
  if (f == "two_box") return sample_two_box(rng, count);
  throw config_error("unknown shape family: " + family);
}

/// Deterministic procedural dataset: per_family clouds for each family, in
/// family order, each sampled area-uniformly, jittered by noise_sigma, and
/// normalized into the unit sphere. Shape i always sees its own RNG stream.
inline std::vector<PointCloud> make_toy_dataset(const ToyDatasetSpec& spec) {
  if (spec.points == 0) throw config_error("dataset: points must be positive");
  if (spec.families.empty() || spec.per_family == 0)
    throw config_error("dataset: no shapes requested");
  for (const auto& f : spec.families) {
    Rng probe(0);
    sample_family(f, probe, 1);  // rejects unknown names before any work
  }

  std::vector<PointCloud> out;
  out.reserve(spec.families.size() * spec.per_family);
  std::uint64_t index = 0;
  for (const auto& family : spec.families)
    for (std::size_t i = 0; i < spec.per_family; ++i, ++index) {
      Rng rng = derived_rng(spec.seed, index);
      PointCloud c = sample_family(family, rng, spec.points);
      if (spec.noise_sigma > 0)
        for (Vec3& p : c.pts)
          for (std::size_t d = 0; d < 3; ++d) p[d] += spec.noise_sigma * rng.gaussian();
      out.push_back(normalize_unit_sphere(c).first);
    }
  return out;
}

/// Random scale, rotation about the vertical (z) axis, then clipped Gaussian
/// per-point jitter, in that order.
inline PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.scale_min > cfg.scale_max || cfg.scale_min <= 0)
    throw config_error("augment: bad scale range");
  if (cfg.jitter_sigma < 0 || cfg.jitter_clip < 0)
    throw config_error("augment: negative jitter");

  const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double ang = cfg.rotate ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;
  const double ca = std::cos(ang), sa = std::sin(ang);

  PointCloud out;
  out.pts.reserve(cloud.count());
  for (const Vec3& p : cloud.pts) {
    Vec3 q{s * (ca * p[0] - sa * p[1]), s * (sa * p[0] + ca * p[1]), s * p[2]};
    if (cfg.jitter_sigma > 0)
      for (std::size_t d = 0; d < 3; ++d)
        q[d] += std::clamp(cfg.jitter_sigma * rng.gaussian(), -cfg.jitter_clip,
                           cfg.jitter_clip);
    out.pts.push_back(q);
  }
  return out;
}

}  // namespace pse
