#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "pse/error.hpp"
#include "pse/pointcloud.hpp"

namespace pse {

/// Center a cloud on its centroid and scale the farthest point onto the unit
/// sphere. Degenerate clouds (all points coincident) keep scale = 1.
inline std::pair<PointCloud, NormalizationTransform> normalize_unit_sphere(
    const PointCloud& cloud) {
  require_valid(cloud, "normalize_unit_sphere");
  Vec3 c{0.0, 0.0, 0.0};
  for (const Vec3& p : cloud.pts) c = c + p;
  c = c * (1.0 / static_cast<double>(cloud.count()));
  double max_r = 0.0;
  for (const Vec3& p : cloud.pts) max_r = std::max(max_r, norm(p - c));
  NormalizationTransform t;
  t.center = c;
  t.scale = max_r > 0.0 ? max_r : 1.0;
  return {t.apply(cloud), t};
}

/// Greedy farthest point sampling. The first pick is start_index; every
/// subsequent pick maximizes the minimum distance to the already-picked set,
/// ties going to the lowest index.
inline std::vector<std::uint32_t> farthest_point_sample(const PointCloud& cloud,
                                                        std::size_t n,
                                                        std::size_t start_index = 0) {
  require_valid(cloud, "farthest_point_sample");
  const std::size_t count = cloud.count();
  if (n < 1 || n > count)
    throw invalid_argument_error("farthest_point_sample: n out of range");
  if (start_index >= count)
    throw invalid_argument_error("farthest_point_sample: start_index out of range");

  std::vector<std::uint32_t> picked;
  picked.reserve(n);
  picked.push_back(static_cast<std::uint32_t>(start_index));

  std::vector<double> min_sq(count, std::numeric_limits<double>::infinity());
  std::size_t last = start_index;
  for (std::size_t k = 1; k < n; ++k) {
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const double d = sqdist(cloud[i], cloud[last]);
      if (d < min_sq[i]) min_sq[i] = d;
      if (min_sq[i] > best) {  // strict: ties keep the lowest index
        best = min_sq[i];
        best_i = i;
      }
    }
    picked.push_back(static_cast<std::uint32_t>(best_i));
    last = best_i;
  }
  return picked;
}

inline PointCloud gather_points(const PointCloud& cloud,
                                const std::vector<std::uint32_t>& idx) {
  PointCloud out;
  out.pts.reserve(idx.size());
  for (std::uint32_t i : idx) {
    if (i >= cloud.count())
      throw index_error("gather_points: index " + std::to_string(i) +
                        " out of range " + std::to_string(cloud.count()));
    out.pts.push_back(cloud[i]);
  }
  return out;
}

/// Exact K-nearest-neighbor search, row-major (queries.count() x K).
/// Rows are sorted by ascending distance, ties by lowest reference index, so
/// a query point that also sits in the reference lists itself first.
inline std::vector<std::uint32_t> knn(const PointCloud& queries,
                                      const PointCloud& reference,
                                      std::size_t K) {
  require_valid(queries, "knn");
  require_valid(reference, "knn");
  const std::size_t m = reference.count();
  if (K < 1 || K > m) throw invalid_argument_error("knn: K out of range");

  std::vector<std::uint32_t> out(queries.count() * K);
  std::vector<std::pair<double, std::uint32_t>> cand(m);
  for (std::size_t q = 0; q < queries.count(); ++q) {
    const Vec3& p = queries[q];
    for (std::size_t j = 0; j < m; ++j)
      cand[j] = {sqdist(p, reference[j]), static_cast<std::uint32_t>(j)};
    std::partial_sort(cand.begin(), cand.begin() + K, cand.end());
    for (std::size_t k = 0; k < K; ++k) out[q * K + k] = cand[k].second;
  }
  return out;
}

/// Everything needed to undo split_patches: which source indices each patch
/// holds and the per-patch normalization that was applied.
struct PatchLayout {
  std::vector<std::uint32_t> seed_indices;
  std::vector<std::vector<std::uint32_t>> patch_member_indices;
  std::vector<NormalizationTransform> transforms;

  std::size_t patch_count() const { return patch_member_indices.size(); }
};

/// Split a cloud into unit-sphere-normalized patches of patch_size points.
/// Seeds come from FPS; each patch is the KNN neighborhood of its seed. Extra
/// patches are appended if the seed formula leaves source points uncovered,
/// so the layout always covers every index.
inline std::pair<std::vector<PointCloud>, PatchLayout> split_patches(
    const PointCloud& cloud, std::size_t patch_size, double overlap_factor = 2.0) {
  require_valid(cloud, "split_patches");
  const std::size_t count = cloud.count();
  if (patch_size < 1 || patch_size > count)
    throw invalid_argument_error("split_patches: patch_size out of range");
  if (overlap_factor <= 0.0)
    throw invalid_argument_error("split_patches: overlap_factor must be > 0");

  std::size_t n_seeds = static_cast<std::size_t>(
      std::ceil(overlap_factor * static_cast<double>(count) /
                static_cast<double>(patch_size)));
  n_seeds = std::clamp<std::size_t>(n_seeds, 1, count);

  PatchLayout layout;
  layout.seed_indices = farthest_point_sample(cloud, n_seeds, 0);

  std::vector<char> covered(count, 0);
  auto add_patch = [&](std::uint32_t seed) {
    PointCloud seed_cloud;
    seed_cloud.pts.push_back(cloud[seed]);
    std::vector<std::uint32_t> members = knn(seed_cloud, cloud, patch_size);
    for (std::uint32_t i : members) covered[i] = 1;
    layout.patch_member_indices.push_back(std::move(members));
  };
  for (std::uint32_t seed : layout.seed_indices) add_patch(seed);

  // Coverage guarantee: seed a patch at the lowest uncovered index until none
  // remain. Each added patch covers at least its own seed, so this terminates.
  for (std::size_t i = 0; i < count; ++i) {
    if (!covered[i]) {
      layout.seed_indices.push_back(static_cast<std::uint32_t>(i));
      add_patch(static_cast<std::uint32_t>(i));
    }
  }

  std::vector<PointCloud> patches;
  patches.reserve(layout.patch_count());
  for (const auto& members : layout.patch_member_indices) {
    auto [normalized, t] = normalize_unit_sphere(gather_points(cloud, members));
    patches.push_back(std::move(normalized));
    layout.transforms.push_back(t);
  }
  return {std::move(patches), std::move(layout)};
}

/// De-normalize per-patch outputs, concatenate, and collapse near-duplicate
/// points (closer than dedup_radius) to their cluster centroid.
inline PointCloud merge_patches(const std::vector<PointCloud>& patches,
                                const PatchLayout& layout,
                                double dedup_radius = 1e-6) {
  if (patches.size() != layout.patch_count())
    throw invalid_argument_error("merge_patches: patch count mismatch with layout");
  PointCloud all;
  for (std::size_t p = 0; p < patches.size(); ++p) {
    PointCloud world = layout.transforms[p].invert(patches[p]);
    all.pts.insert(all.pts.end(), world.pts.begin(), world.pts.end());
  }

  // Greedy clustering in index order: a point joins the first cluster whose
  // representative lies within the radius.
  const double r2 = dedup_radius * dedup_radius;
  std::vector<Vec3> reps;
  std::vector<Vec3> sums;
  std::vector<std::size_t> counts;
  for (const Vec3& p : all.pts) {
    bool placed = false;
    for (std::size_t c = 0; c < reps.size(); ++c) {
      if (sqdist(p, reps[c]) <= r2) {
        sums[c] = sums[c] + p;
        counts[c] += 1;
        placed = true;
        break;
      }
    }
    if (!placed) {
      reps.push_back(p);
      sums.push_back(p);
      counts.push_back(1);
    }
  }
  PointCloud out;
  out.pts.reserve(reps.size());
  for (std::size_t c = 0; c < reps.size(); ++c)
    out.pts.push_back(sums[c] * (1.0 / static_cast<double>(counts[c])));
  return out;
}

}  // namespace pse
