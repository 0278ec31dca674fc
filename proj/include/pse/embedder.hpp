#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pse/config.hpp"
#include "pse/geometry.hpp"
#include "pse/netblocks.hpp"
#include "pse/params.hpp"
#include "pse/pointcloud.hpp"
#include "pse/tensor.hpp"

namespace pse {

inline ExtractorSpec extractor_spec(const TrainConfig& cfg) {
  ExtractorSpec spec;
  spec.blocks.assign(cfg.extractor_blocks, EdgeConvSpec{cfg.k_conv, cfg.C});
  spec.dense_skips = true;
  spec.out_channels = cfg.C;
  return spec;
}

inline MlpSpec embed_offset_spec(const TrainConfig& cfg) {
  if (cfg.C_prime < 2) throw config_error("embedder: C_prime must be >= 2");
  return MlpSpec{{cfg.C_prime, cfg.C_prime / 2, 3}};
}

template <class T>
void init_embedder_params(ParamStore<T>& store, const TrainConfig& cfg, Rng& rng) {
  init_extractor(store, "E.feat", extractor_spec(cfg), rng);
  init_attention(store, "E.att", cfg.C, cfg.C_prime, rng);
  init_mlp(store, "E.off", embed_offset_spec(cfg), rng, /*zero_final_layer=*/true);
}

template <class T>
struct DownShuffleResult {
  Tensor<T> features;   // n x C', one aggregated descriptor per sampled point
  Tensor<T> attention;  // n x K x K
  std::vector<std::uint32_t> fps_indices;    // n, into the input cloud
  std::vector<std::uint32_t> group_indices;  // n*K, into the input cloud
};

/// Subsamples the cloud to n seed points (farthest point sampling), groups the
/// K nearest input points around each seed, and fuses each group's per-point
/// features into one descriptor with scaled dot-product self-attention.
template <class T>
DownShuffleResult<T> down_shuffle(ParamBinding<T>& params, const std::string& prefix,
                                  const PointCloud& cloud, Tensor<T> point_features,
                                  std::size_t n, std::size_t K) {
  const std::size_t N = cloud.count();
  const Shape& fs = point_features.shape();
  if (fs.size() != 2 || fs[0] != N)
    throw shape_error("down_shuffle: features must be N x C");
  if (n == 0 || n > N) throw invalid_argument_error("down_shuffle: n out of range");
  if (K == 0 || K > N) throw invalid_argument_error("down_shuffle: K out of range");
  if (K * n < N)
    throw config_error("down_shuffle: K*n < N leaves input points uncoverable");

  DownShuffleResult<T> out;
  out.fps_indices = farthest_point_sample(cloud, n);
  PointCloud seeds = gather_points(cloud, out.fps_indices);
  out.group_indices = knn(seeds, cloud, K);

  const std::size_t C = fs[1];
  Tensor<T> grouped = gather(point_features, 0, out.group_indices);
  AttentionResult<T> att =
      neighborhood_self_attention(params, prefix, reshape(grouped, {n, K, C}));
  out.features = att.output;
  out.attention = att.attention;
  return out;
}

template <class T>
struct EmbedGraph {
  Tensor<T> Q;          // n x 3, the embedded cloud
  Tensor<T> Q_prime;    // n x 3 constant, farthest-point baseline
  Tensor<T> delta_Q;    // n x 3, learned offsets (Q = Q' + delta_Q)
  Tensor<T> features;   // n x C'
  Tensor<T> attention;  // n x K x K
  std::vector<std::uint32_t> fps_indices;
  std::vector<std::uint32_t> group_indices;
};

/// Builds the embedding network on `g`: per-point feature extraction over the
/// full cloud, down-shuffle to n = N/r descriptors, then a per-point offset
/// head displacing the sampled baseline.
template <class T>
EmbedGraph<T> embed_graph(Graph<T>& g, ParamBinding<T>& params, const PointCloud& cloud,
                          const TrainConfig& cfg) {
  require_valid(cloud, "embed");
  const std::size_t N = cloud.count();
  if (cfg.r == 0 || N % cfg.r != 0)
    throw invalid_argument_error("embed: point count " + std::to_string(N) +
                                 " is not a multiple of r=" + std::to_string(cfg.r));
  const std::size_t n = N / cfg.r;
  if (N < cfg.k_conv)
    throw invalid_argument_error("embed: point count below k_conv");

  std::vector<T> xyz(N * 3);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < 3; ++d) xyz[i * 3 + d] = static_cast<T>(cloud[i][d]);
  Tensor<T> x = g.constant(Shape{N, 3}, std::move(xyz));

  Tensor<T> point_features =
      feature_extractor_forward(params, "E.feat", x, extractor_spec(cfg));
  DownShuffleResult<T> ds =
      down_shuffle(params, "E.att", cloud, point_features, n, cfg.K);

  EmbedGraph<T> out;
  out.features = ds.features;
  out.attention = ds.attention;
  out.fps_indices = std::move(ds.fps_indices);
  out.group_indices = std::move(ds.group_indices);

  out.delta_Q = mlp_forward(params, "E.off", embed_offset_spec(cfg), ds.features);
  std::vector<T> base(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = cloud[out.fps_indices[i]];
    for (std::size_t d = 0; d < 3; ++d) base[i * 3 + d] = static_cast<T>(p[d]);
  }
  out.Q_prime = g.constant(Shape{n, 3}, std::move(base));
  out.Q = add(out.Q_prime, out.delta_Q);
  return out;
}

struct EmbedResult {
  PointCloud Q;
  PointCloud Q_prime;
  std::vector<Vec3> delta_Q;
  std::vector<std::uint32_t> fps_indices;
};

/// Inference-only embedding: runs the graph once and materializes the results.
template <class T>
EmbedResult embed(const ParamStore<T>& store, const PointCloud& cloud,
                  const TrainConfig& cfg) {
  Graph<T> g;
  ParamStore<T> local = store;
  ParamBinding<T> params(local, g);
  EmbedGraph<T> eg = embed_graph(g, params, cloud, cfg);

  EmbedResult out;
  out.fps_indices = eg.fps_indices;
  const std::size_t n = eg.Q.shape()[0];
  auto q = eg.Q.val();
  auto qp = eg.Q_prime.val();
  auto dq = eg.delta_Q.val();
  out.Q.pts.resize(n);
  out.Q_prime.pts.resize(n);
  out.delta_Q.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      out.Q.pts[i][d] = static_cast<double>(q[i * 3 + d]);
      out.Q_prime.pts[i][d] = static_cast<double>(qp[i * 3 + d]);
      out.delta_Q[i][d] = static_cast<double>(dq[i * 3 + d]);
    }
  return out;
}

}  // namespace pse
