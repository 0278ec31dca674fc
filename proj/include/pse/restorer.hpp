#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pse/config.hpp"
#include "pse/embedder.hpp"
#include "pse/netblocks.hpp"
#include "pse/params.hpp"
#include "pse/pointcloud.hpp"
#include "pse/tensor.hpp"

namespace pse {

inline MlpSpec restore_offset_spec(const TrainConfig& cfg) {
  return MlpSpec{{cfg.C + 3, cfg.C, 3}};
}

template <class T>
void init_restorer_params(ParamStore<T>& store, const TrainConfig& cfg, Rng& rng) {
  init_extractor(store, "R.feat", extractor_spec(cfg), rng);
  init_edgeconv(store, "R.exp", cfg.C, EdgeConvSpec{cfg.k_conv, cfg.r * cfg.C}, rng);
  init_mlp(store, "R.off", restore_offset_spec(cfg), rng, /*zero_final_layer=*/true);
}

/// Rearranges an n x (r*C) feature map into (n*r) x C: row i scatters its r
/// channel slices of width C onto output rows i*r .. i*r+r-1. With row-major
/// storage this is exactly a reshape.
template <class T>
Tensor<T> periodic_shuffle(Tensor<T> x, std::size_t r) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw shape_error("periodic_shuffle: rank-2 input required");
  if (r == 0 || s[1] % r != 0)
    throw shape_error("periodic_shuffle: channel count not a multiple of r");
  return reshape(x, {s[0] * r, s[1] / r});
}

template <class T>
Tensor<T> periodic_shuffle_inverse(Tensor<T> x, std::size_t r) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw shape_error("periodic_shuffle_inverse: rank-2 input required");
  if (r == 0 || s[0] % r != 0)
    throw shape_error("periodic_shuffle_inverse: row count not a multiple of r");
  return reshape(x, {s[0] / r, s[1] * r});
}

/// Row indices that replicate each of n source rows r times, interleaved:
/// output row i*r + s reads source row i.
inline std::vector<std::uint32_t> replica_indices(std::size_t n, std::size_t r) {
  std::vector<std::uint32_t> idx(n * r);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < r; ++s) idx[i * r + s] = static_cast<std::uint32_t>(i);
  return idx;
}

template <class T>
struct UpShuffleResult {
  Tensor<T> features;  // (n*r) x (C+3)
  Tensor<T> R_prime;   // (n*r) x 3, r interleaved copies of the input points
};

/// Expands each of the n point descriptors to r channel groups (EdgeConv in
/// feature space), spreads the groups onto r replica rows, and concatenates
/// each row's replicated source coordinates.
template <class T>
UpShuffleResult<T> up_shuffle(ParamBinding<T>& params, const std::string& prefix,
                              Tensor<T> point_features, Tensor<T> points, std::size_t r,
                              std::size_t k_conv) {
  const Shape& fs = point_features.shape();
  const Shape& ps = points.shape();
  if (fs.size() != 2 || ps.size() != 2 || ps[1] != 3 || fs[0] != ps[0])
    throw shape_error("up_shuffle: expected n x C features and n x 3 points");
  if (r == 0) throw invalid_argument_error("up_shuffle: r must be >= 1");

  const std::size_t rows = fs[0];  // copied: node creation invalidates shape refs
  const std::size_t C = fs[1];
  Tensor<T> expanded =
      edgeconv_forward(params, prefix, point_features, EdgeConvSpec{k_conv, r * C});
  UpShuffleResult<T> out;
  out.R_prime = gather(points, 0, replica_indices(rows, r));
  out.features = concat<T>({periodic_shuffle(expanded, r), out.R_prime}, 1);
  return out;
}

template <class T>
struct RestoreGraph {
  Tensor<T> R;        // (n*r) x 3, the restored cloud
  Tensor<T> R_prime;  // (n*r) x 3, duplication baseline (R = R' + delta_R)
  Tensor<T> delta_R;  // (n*r) x 3
};

/// Builds the restoration network on the graph that owns `Q`: per-point
/// features over the embedded cloud, up-shuffle to n*r rows, then a per-point
/// offset head displacing the replicated baseline.
template <class T>
RestoreGraph<T> restore_graph(ParamBinding<T>& params, Tensor<T> Q,
                              const TrainConfig& cfg) {
  const Shape& s = Q.shape();
  if (s.size() != 2 || s[1] != 3) throw shape_error("restore: expected n x 3 input");
  if (s[0] < cfg.k_conv)
    throw invalid_argument_error("restore: point count below k_conv");

  Tensor<T> point_features =
      feature_extractor_forward(params, "R.feat", Q, extractor_spec(cfg));
  UpShuffleResult<T> up =
      up_shuffle(params, "R.exp", point_features, Q, cfg.r, cfg.k_conv);

  RestoreGraph<T> out;
  out.R_prime = up.R_prime;
  out.delta_R = mlp_forward(params, "R.off", restore_offset_spec(cfg), up.features);
  out.R = add(out.R_prime, out.delta_R);
  return out;
}

struct RestoreResult {
  PointCloud R;
  PointCloud R_prime;
  std::vector<Vec3> delta_R;
};

/// Inference-only restoration from an embedded cloud.
template <class T>
RestoreResult restore(const ParamStore<T>& store, const PointCloud& Q,
                      const TrainConfig& cfg) {
  require_valid(Q, "restore");
  Graph<T> g;
  ParamStore<T> local = store;
  ParamBinding<T> params(local, g);

  const std::size_t n = Q.count();
  std::vector<T> xyz(n * 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 3; ++d) xyz[i * 3 + d] = static_cast<T>(Q[i][d]);
  RestoreGraph<T> rg = restore_graph(params, g.constant(Shape{n, 3}, std::move(xyz)), cfg);

  RestoreResult out;
  const std::size_t N = rg.R.shape()[0];
  auto rv = rg.R.val();
  auto rp = rg.R_prime.val();
  auto dr = rg.delta_R.val();
  out.R.pts.resize(N);
  out.R_prime.pts.resize(N);
  out.delta_R.resize(N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      out.R.pts[i][d] = static_cast<double>(rv[i * 3 + d]);
      out.R_prime.pts[i][d] = static_cast<double>(rp[i * 3 + d]);
      out.delta_R[i][d] = static_cast<double>(dr[i * 3 + d]);
    }
  return out;
}

}  // namespace pse
