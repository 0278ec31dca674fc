#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pse/params.hpp"
#include "pse/pointcloud.hpp"
#include "pse/tensor.hpp"

namespace pse {

/// Layer width chain including the input width: [Cin, h1, ..., Cout].
/// Hidden layers ReLU, final layer linear.
struct MlpSpec {
  std::vector<std::size_t> widths;

  std::size_t layer_count() const {
    if (widths.size() < 2) throw config_error("mlp: need at least [in, out] widths");
    return widths.size() - 1;
  }
};

struct EdgeConvSpec {
  std::size_t k_conv = 8;
  std::size_t out_channels = 32;
};

struct ExtractorSpec {
  std::vector<EdgeConvSpec> blocks;
  bool dense_skips = true;
  std::size_t out_channels = 32;  // channels after the final projection
};

// ---------------------------------------------------------------------------
// Parameter registration
// ---------------------------------------------------------------------------

template <class T>
void init_mlp(ParamStore<T>& store, const std::string& prefix, const MlpSpec& spec,
              Rng& rng, bool zero_final_layer = false) {
  const std::size_t L = spec.layer_count();
  for (std::size_t l = 0; l < L; ++l) {
    if (spec.widths[l] == 0 || spec.widths[l + 1] == 0)
      throw config_error("mlp: zero width in " + prefix);
    init_dense(store, prefix + ".l" + std::to_string(l), spec.widths[l],
               spec.widths[l + 1], rng, zero_final_layer && l + 1 == L);
  }
}

template <class T>
void init_edgeconv(ParamStore<T>& store, const std::string& prefix, std::size_t in_channels,
                   const EdgeConvSpec& spec, Rng& rng) {
  init_dense(store, prefix, 2 * in_channels, spec.out_channels, rng);
}

/// Width of the input to extractor block b (or to the final projection when
/// b == blocks.size()) under the dense-skip wiring.
inline std::size_t extractor_block_in(const ExtractorSpec& spec, std::size_t b) {
  std::size_t w = 3;
  if (!spec.dense_skips)
    return b == 0 ? w : spec.blocks[b - 1].out_channels;
  for (std::size_t i = 0; i < b; ++i) w += spec.blocks[i].out_channels;
  return w;
}

template <class T>
void init_extractor(ParamStore<T>& store, const std::string& prefix,
                    const ExtractorSpec& spec, Rng& rng) {
  if (spec.blocks.empty()) throw config_error("extractor: needs at least one block");
  for (std::size_t b = 0; b < spec.blocks.size(); ++b)
    init_edgeconv(store, prefix + ".ec" + std::to_string(b), extractor_block_in(spec, b),
                  spec.blocks[b], rng);
  init_mlp(store, prefix + ".proj",
           MlpSpec{{extractor_block_in(spec, spec.blocks.size()), spec.out_channels}},
           rng);
}

template <class T>
void init_attention(ParamStore<T>& store, const std::string& prefix, std::size_t C,
                    std::size_t Cp, Rng& rng) {
  auto mat = [&](const std::string& name) {
    std::vector<T> w(C * Cp);
    const double stddev = std::sqrt(2.0 / static_cast<double>(C));
    for (T& x : w) x = static_cast<T>(rng.gaussian() * stddev);
    store.add(prefix + "." + name, Shape{C, Cp}, std::move(w));
  };
  mat("theta");
  mat("phi");
  mat("gamma");
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> dense_forward(ParamBinding<T>& params, const std::string& prefix, Tensor<T> x) {
  Tensor<T> w = params.use(prefix + ".w");
  Tensor<T> b = params.use(prefix + ".b");
  Tensor<T> y = matmul(x, w);
  return add(y, tile_rows(b, y.shape()[0]));
}

template <class T>
Tensor<T> mlp_forward(ParamBinding<T>& params, const std::string& prefix,
                      const MlpSpec& spec, Tensor<T> x) {
  if (x.shape().size() != 2 || x.shape()[1] != spec.widths.front())
    throw shape_error("mlp_forward: input " + shape_str(x.shape()) +
                      " does not match first width " +
                      std::to_string(spec.widths.front()));
  const std::size_t L = spec.layer_count();
  for (std::size_t l = 0; l < L; ++l) {
    x = dense_forward(params, prefix + ".l" + std::to_string(l), x);
    if (l + 1 < L) x = relu(x);
  }
  return x;
}

/// K nearest rows of `reference` for each row of `queries`, both row-major
/// M×C value arrays. Ascending distance, ties by lowest index. This is the
/// host-side neighbor selection used by EdgeConv's dynamic feature graph.
template <class T>
std::vector<std::uint32_t> knn_rows(std::span<const T> queries, std::size_t nq,
                                    std::span<const T> reference, std::size_t nr,
                                    std::size_t C, std::size_t K) {
  if (K < 1 || K > nr) throw invalid_argument_error("knn_rows: K out of range");
  std::vector<std::uint32_t> out(nq * K);
  std::vector<std::pair<T, std::uint32_t>> d(nr);
  for (std::size_t q = 0; q < nq; ++q) {
    const T* qp = queries.data() + q * C;
    for (std::size_t i = 0; i < nr; ++i) {
      const T* rp = reference.data() + i * C;
      T s = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const T dv = qp[c] - rp[c];
        s += dv * dv;
      }
      d[i] = {s, static_cast<std::uint32_t>(i)};
    }
    std::partial_sort(d.begin(), d.begin() + K, d.end());
    for (std::size_t k = 0; k < K; ++k) out[q * K + k] = d[k].second;
  }
  return out;
}

/// EdgeConv with a dynamic graph: KNN over the current feature rows (self
/// included at distance zero), edge feature [f_i ; f_j - f_i], one ReLU dense
/// layer, channelwise max over the k neighbors.
template <class T>
Tensor<T> edgeconv_forward(ParamBinding<T>& params, const std::string& prefix,
                           Tensor<T> features, const EdgeConvSpec& spec) {
  const Shape& s = features.shape();
  if (s.size() != 2) throw shape_error("edgeconv_forward: features must be M x C");
  const std::size_t M = s[0], C = s[1], k = spec.k_conv;
  if (k > M) throw invalid_argument_error("edgeconv_forward: k_conv exceeds row count");

  auto vals = features.val();
  std::vector<std::uint32_t> nbr = knn_rows<T>(vals, M, vals, M, C, k);
  std::vector<std::uint32_t> ctr(M * k);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < k; ++j) ctr[i * k + j] = static_cast<std::uint32_t>(i);

  Tensor<T> centers = gather(features, 0, std::move(ctr));
  Tensor<T> neighbors = gather(features, 0, std::move(nbr));
  Tensor<T> edge = concat<T>({centers, sub(neighbors, centers)}, 1);
  Tensor<T> h = relu(dense_forward(params, prefix, edge));
  return reduce_max(reshape(h, {M, k, spec.out_channels}), 1);
}

/// EdgeConv stack with dense skip wiring: block b consumes the concatenation
/// of raw xyz and every prior block output; a final linear layer projects to
/// spec.out_channels.
template <class T>
Tensor<T> feature_extractor_forward(ParamBinding<T>& params, const std::string& prefix,
                                    Tensor<T> xyz, const ExtractorSpec& spec) {
  if (xyz.shape().size() != 2 || xyz.shape()[1] != 3)
    throw shape_error("feature_extractor_forward: expected M x 3 input");
  if (spec.blocks.empty()) throw config_error("extractor: needs at least one block");
  std::vector<Tensor<T>> feats{xyz};
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    Tensor<T> input;
    if (spec.dense_skips)
      input = feats.size() == 1 ? feats[0] : concat<T>(feats, 1);
    else
      input = feats.back();
    feats.push_back(
        edgeconv_forward(params, prefix + ".ec" + std::to_string(b), input, spec.blocks[b]));
  }
  Tensor<T> final_in = spec.dense_skips ? concat<T>(feats, 1) : feats.back();
  return mlp_forward(params, prefix + ".proj",
                     MlpSpec{{extractor_block_in(spec, spec.blocks.size()),
                              spec.out_channels}},
                     final_in);
}

template <class T>
struct AttentionResult {
  Tensor<T> output;     // n x C'
  Tensor<T> attention;  // n x K x K, rows (last axis) sum to 1
};

/// Scaled dot-product self-attention inside each K-neighborhood, then a mean
/// over the K updated features: one C' vector per group.
template <class T>
AttentionResult<T> neighborhood_self_attention(ParamBinding<T>& params,
                                               const std::string& prefix,
                                               Tensor<T> group_features) {
  const Shape& s = group_features.shape();
  if (s.size() != 3)
    throw shape_error("neighborhood_self_attention: expected n x K x C input");
  const std::size_t n = s[0], K = s[1], C = s[2];
  Tensor<T> theta = params.use(prefix + ".theta");
  Tensor<T> phi = params.use(prefix + ".phi");
  Tensor<T> gamma = params.use(prefix + ".gamma");
  if (theta.shape()[0] != C)
    throw shape_error("neighborhood_self_attention: projection expects C=" +
                      std::to_string(theta.shape()[0]) + ", got " + std::to_string(C));
  const std::size_t Cp = theta.shape()[1];

  Tensor<T> flat = reshape(group_features, {n * K, C});
  Tensor<T> q = reshape(matmul(flat, theta), {n, K, Cp});
  Tensor<T> k = reshape(matmul(flat, phi), {n, K, Cp});
  Tensor<T> v = reshape(matmul(flat, gamma), {n, K, Cp});

  Tensor<T> scores =
      scalar_mul(bmm(q, transpose_b(k)), T(1) / static_cast<T>(std::sqrt(double(Cp))));
  Tensor<T> A = softmax(scores, 2);
  Tensor<T> updated = bmm(A, v);              // u_j = sum_k A[j,k] * v_k
  Tensor<T> out = reduce_mean(updated, 1);    // mean over the K queries
  return {out, A};
}

}  // namespace pse
