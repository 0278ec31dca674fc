#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "pse/geometry.hpp"
#include "pse/netblocks.hpp"
#include "pse/pointcloud.hpp"
#include "pse/tensor.hpp"

namespace pse {

struct LossWeights {
  double alpha = 5.0;
  double beta = 2.0;
  double lambda = 100.0;
  double tau = 1e-6;
  std::size_t m = 8;
};

struct MetricsReport {
  double emd = 0;
  double hd = 0;
  double cd = 0;
};

enum class Reduction { sum, mean };

// ---------------------------------------------------------------------------
// Exact evaluation metrics (host-side, double)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::uint32_t> nearest_indices(const PointCloud& from,
                                                  const PointCloud& to) {
  std::vector<std::uint32_t> out(from.count());
  for (std::size_t i = 0; i < from.count(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t j = 0; j < to.count(); ++j) {
      const double d = sqdist(from[i], to[j]);
      if (d < best) {
        best = d;
        arg = static_cast<std::uint32_t>(j);
      }
    }
    out[i] = arg;
  }
  return out;
}

}  // namespace detail

inline double chamfer(const PointCloud& A, const PointCloud& B,
                      Reduction reduction = Reduction::mean) {
  require_valid(A, "chamfer");
  require_valid(B, "chamfer");
  auto ab = detail::nearest_indices(A, B);
  auto ba = detail::nearest_indices(B, A);
  double sab = 0, sba = 0;
  for (std::size_t i = 0; i < A.count(); ++i) sab += dist(A[i], B[ab[i]]);
  for (std::size_t j = 0; j < B.count(); ++j) sba += dist(B[j], A[ba[j]]);
  if (reduction == Reduction::mean)
    return sab / static_cast<double>(A.count()) + sba / static_cast<double>(B.count());
  return sab + sba;
}

inline double hausdorff(const PointCloud& A, const PointCloud& B) {
  require_valid(A, "hausdorff");
  require_valid(B, "hausdorff");
  auto ab = detail::nearest_indices(A, B);
  auto ba = detail::nearest_indices(B, A);
  double h = 0;
  for (std::size_t i = 0; i < A.count(); ++i) h = std::max(h, dist(A[i], B[ab[i]]));
  for (std::size_t j = 0; j < B.count(); ++j) h = std::max(h, dist(B[j], A[ba[j]]));
  return h;
}

/// Exact minimum-cost perfect assignment on an n x n row-major cost matrix
/// (Hungarian method with row/column potentials, O(n^3)). Optionally reports
/// the column matched to each row.
inline double assignment_min_cost(const std::vector<double>& cost, std::size_t n,
                                  std::vector<std::size_t>* row_to_col = nullptr) {
  if (n == 0 || cost.size() != n * n)
    throw invalid_argument_error("assignment_min_cost: bad matrix");
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, INF);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = INF;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  // Total in row order so equal matchings always produce identical sums.
  std::vector<std::size_t> match(n, 0);
  for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += cost[i * n + match[i]];
  if (row_to_col) *row_to_col = match;
  return total;
}

/// epsilon-scaled auction assignment. Returns a total cost within
/// n * eps_final of the optimum (prices persist across scaling rounds).
inline double assignment_auction_cost(const std::vector<double>& cost, std::size_t n,
                                      double eps_final,
                                      std::vector<std::size_t>* row_to_col = nullptr) {
  if (n == 0 || cost.size() != n * n)
    throw invalid_argument_error("assignment_auction_cost: bad matrix");
  if (eps_final <= 0) throw invalid_argument_error("assignment_auction_cost: eps_final <= 0");
  double cmax = 0;
  for (double c : cost) cmax = std::max(cmax, std::fabs(c));
  double eps = std::max(cmax / 2.0, eps_final);
  std::vector<double> price(n, 0.0);
  std::vector<std::ptrdiff_t> owner(n, -1), object_of(n, -1);
  while (true) {
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(object_of.begin(), object_of.end(), -1);
    std::vector<std::size_t> queue(n);
    std::iota(queue.begin(), queue.end(), 0);
    while (!queue.empty()) {
      const std::size_t i = queue.back();
      queue.pop_back();
      double best = -std::numeric_limits<double>::infinity();
      double second = -std::numeric_limits<double>::infinity();
      std::size_t bj = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double value = -cost[i * n + j] - price[j];
        if (value > best) {
          second = best;
          best = value;
          bj = j;
        } else if (value > second) {
          second = value;
        }
      }
      if (second == -std::numeric_limits<double>::infinity()) second = best;
      price[bj] += best - second + eps;
      if (owner[bj] >= 0) {
        object_of[owner[bj]] = -1;
        queue.push_back(static_cast<std::size_t>(owner[bj]));
      }
      owner[bj] = static_cast<std::ptrdiff_t>(i);
      object_of[i] = static_cast<std::ptrdiff_t>(bj);
    }
    if (eps <= eps_final) break;
    eps = std::max(eps / 4.0, eps_final);
  }
  double total = 0;
  if (row_to_col) row_to_col->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    total += cost[i * n + static_cast<std::size_t>(object_of[i])];
    if (row_to_col) (*row_to_col)[i] = static_cast<std::size_t>(object_of[i]);
  }
  return total;
}

struct EmdResult {
  double value = 0;
  bool exact = true;
  double approx_bound = 0;  // |value - optimum| <= approx_bound when !exact
};

/// Size threshold below which the exact Hungarian assignment is used.
inline constexpr std::size_t kEmdExactLimit = 1024;

inline EmdResult emd_detail(const PointCloud& A, const PointCloud& B) {
  require_valid(A, "emd");
  require_valid(B, "emd");
  if (A.count() != B.count())
    throw invalid_argument_error("emd: cloud sizes differ (" +
                                 std::to_string(A.count()) + " vs " +
                                 std::to_string(B.count()) + ")");
  const std::size_t n = A.count();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = dist(A[i], B[j]);
  EmdResult res;
  if (n <= kEmdExactLimit) {
    res.value = assignment_min_cost(cost, n) / static_cast<double>(n);
    res.exact = true;
  } else {
    const double eps_final = 1e-9;
    res.value = assignment_auction_cost(cost, n, eps_final) / static_cast<double>(n);
    res.exact = false;
    res.approx_bound = eps_final;
  }
  return res;
}

inline double emd(const PointCloud& A, const PointCloud& B) {
  return emd_detail(A, B).value;
}

inline MetricsReport compute_metrics(const PointCloud& original,
                                     const PointCloud& restored) {
  MetricsReport r;
  r.emd = emd(original, restored);
  r.hd = hausdorff(original, restored);
  r.cd = chamfer(original, restored, Reduction::mean);
  return r;
}

// ---------------------------------------------------------------------------
// Differentiable losses (graph-building; selections fixed on current values)
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
std::vector<T> cloud_rows(const PointCloud& c) {
  std::vector<T> out(c.count() * 3);
  for (std::size_t i = 0; i < c.count(); ++i)
    for (std::size_t k = 0; k < 3; ++k) out[i * 3 + k] = static_cast<T>(c[i][k]);
  return out;
}

// max(x, eps) for non-negative x, written with graph ops: relu(x - eps) + eps.
template <class T>
Tensor<T> clamp_below(Tensor<T> x, T eps) {
  return scalar_add(relu(scalar_add(x, -eps)), eps);
}

}  // namespace detail

/// Chamfer distance between a differentiable cloud R (rows x 3 tensor) and a
/// fixed cloud P. Closest-pair selection happens on current values (lowest
/// index on ties); gradients flow through the selected pairs.
template <class T>
Tensor<T> chamfer_loss(Tensor<T> R, const PointCloud& P,
                       Reduction reduction = Reduction::mean) {
  const Shape& s = R.shape();
  if (s.size() != 2 || s[1] != 3) throw shape_error("chamfer_loss: R must be M x 3");
  require_valid(P, "chamfer_loss");
  const std::size_t M = s[0], Np = P.count();
  Graph<T>& g = *R.g;

  std::vector<T> pdata = detail::cloud_rows<T>(P);
  auto rv = R.val();
  std::vector<std::uint32_t> nn_rp =
      knn_rows<T>(rv, M, {pdata.data(), pdata.size()}, Np, 3, 1);
  std::vector<std::uint32_t> nn_pr =
      knn_rows<T>({pdata.data(), pdata.size()}, Np, rv, M, 3, 1);

  Tensor<T> Pc = g.constant({Np, 3}, pdata);
  Tensor<T> d_rp = l2norm(sub(R, gather(Pc, 0, std::move(nn_rp))), 1);
  Tensor<T> d_pr = l2norm(sub(gather(R, 0, std::move(nn_pr)), Pc), 1);
  if (reduction == Reduction::mean)
    return add(reduce_mean_all(d_rp), reduce_mean_all(d_pr));
  return add(reduce_sum_all(d_rp), reduce_sum_all(d_pr));
}

/// Point-distribution loss: compares each p_i's m-nearest-neighbor offset
/// vectors in P against those in R, pairing them in ascending-magnitude
/// order. On both sides p_i's own representative is excluded: index i in P,
/// and the single nearest row (lowest index on ties) in R. Without the R-side
/// exclusion the pairing is shifted by one slot whenever a restored point
/// sits on p_i, and the loss ranks a perfect restoration worse than the
/// duplicated baseline.
template <class T>
Tensor<T> distribution_loss(const PointCloud& P, Tensor<T> R, std::size_t m, T beta) {
  const Shape& s = R.shape();
  if (s.size() != 2 || s[1] != 3)
    throw shape_error("distribution_loss: R must be M x 3");
  require_valid(P, "distribution_loss");
  const std::size_t N = P.count(), M = s[0];
  if (m < 1 || m >= N)
    throw invalid_argument_error("distribution_loss: need 1 <= m < |P|");
  if (m > M - 1)
    throw invalid_argument_error("distribution_loss: m exceeds |R| - 1");
  Graph<T>& g = *R.g;
  auto rv = R.val();

  // Neighbor vectors in P (self excluded), ascending by magnitude.
  std::vector<T> vp_data(N * m * 3);
  std::vector<T> center_data(N * m * 3);
  std::vector<std::pair<double, std::uint32_t>> dp;
  dp.reserve(N);
  for (std::size_t i = 0; i < N; ++i) {
    dp.clear();
    for (std::size_t j = 0; j < N; ++j) {
      if (j == i) continue;
      dp.emplace_back(sqdist(P[i], P[j]), static_cast<std::uint32_t>(j));
    }
    std::partial_sort(dp.begin(), dp.begin() + m, dp.end());
    for (std::size_t k = 0; k < m; ++k) {
      const Vec3 v = P[dp[k].second] - P[i];
      for (std::size_t c = 0; c < 3; ++c) {
        vp_data[(i * m + k) * 3 + c] = static_cast<T>(v[c]);
        center_data[(i * m + k) * 3 + c] = static_cast<T>(P[i][c]);
      }
    }
  }

  // Neighbor indices in R per p_i, ascending by distance (== magnitude),
  // skipping the nearest row: it stands in for p_i itself.
  std::vector<std::uint32_t> idx_r(N * m);
  std::vector<std::pair<T, std::uint32_t>> dr;
  dr.reserve(M);
  for (std::size_t i = 0; i < N; ++i) {
    dr.clear();
    for (std::size_t j = 0; j < M; ++j) {
      T sdist = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const T dv = rv[j * 3 + c] - static_cast<T>(P[i][c]);
        sdist += dv * dv;
      }
      dr.emplace_back(sdist, static_cast<std::uint32_t>(j));
    }
    std::partial_sort(dr.begin(), dr.begin() + m + 1, dr.end());
    for (std::size_t k = 0; k < m; ++k) idx_r[i * m + k] = dr[k + 1].second;
  }

  // Angle terms are gated per pair: a vector with no usable direction (norm
  // under the cutoff on current values) contributes a constant 1 - cos = 1
  // and no gradient. Without the gate, a restored point sitting exactly on
  // p_i (the duplicated start state) sends ~1/eps through the cosine's
  // denominator and swamps the optimizer state for the rest of the run.
  const T eps = T(1e-12);
  const T direction_cutoff = T(1e-6);
  std::vector<T> angle_mask(N * m);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t t = i * m + k;
      T np2 = 0, nr2 = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const T vp = vp_data[t * 3 + c];
        const T vr = rv[idx_r[t] * 3 + c] - static_cast<T>(P[i][c]);
        np2 += vp * vp;
        nr2 += vr * vr;
      }
      angle_mask[t] = (std::sqrt(np2) >= direction_cutoff &&
                       std::sqrt(nr2) >= direction_cutoff)
                          ? T(1)
                          : T(0);
    }

  Tensor<T> VP = g.constant({N * m, 3}, std::move(vp_data));
  Tensor<T> centers = g.constant({N * m, 3}, std::move(center_data));
  Tensor<T> VR = sub(gather(R, 0, std::move(idx_r)), centers);

  Tensor<T> l_norm = reduce_mean_all(l2norm(sub(VP, VR), 1, eps));

  Tensor<T> dots = reduce_sum(mul(VP, VR), 1);
  Tensor<T> denom = mul(detail::clamp_below(l2norm(VP, 1, eps), eps),
                        detail::clamp_below(l2norm(VR, 1, eps), eps));
  Tensor<T> cosines = mul(div(dots, denom), g.constant({N * m}, std::move(angle_mask)));
  Tensor<T> l_angle = reduce_mean_all(scalar_add(scalar_mul(cosines, T(-1)), T(1)));

  return add(l_norm, scalar_mul(l_angle, beta));
}

/// Mean truncated offset magnitude: (1/n) * sum max(0, |dq_i| - tau).
template <class T>
Tensor<T> conformity_loss(Tensor<T> delta_Q, T tau) {
  const Shape& s = delta_Q.shape();
  if (s.size() != 2 || s[1] != 3)
    throw shape_error("conformity_loss: delta_Q must be n x 3");
  if (tau <= T(0)) throw invalid_argument_error("conformity_loss: tau must be > 0");
  return reduce_mean_all(relu(scalar_add(l2norm(delta_Q, 1), -tau)));
}

template <class T>
struct TotalLoss {
  Tensor<T> total;
  Tensor<T> shape;    // chamfer(R, P, mean)
  Tensor<T> dist;     // distribution term (unweighted)
  Tensor<T> conform;  // conformity term (unweighted)
};

template <class T>
TotalLoss<T> total_loss(const PointCloud& P, Tensor<T> Q, Tensor<T> R,
                        Tensor<T> delta_Q, const LossWeights& w) {
  if (Q.shape() != delta_Q.shape())
    throw shape_error("total_loss: Q and delta_Q shapes differ");
  TotalLoss<T> out{};
  out.shape = chamfer_loss(R, P, Reduction::mean);
  out.dist = distribution_loss(P, R, w.m, static_cast<T>(w.beta));
  out.conform = conformity_loss(delta_Q, static_cast<T>(w.tau));
  out.total = add(add(out.shape, scalar_mul(out.dist, static_cast<T>(w.alpha))),
                  scalar_mul(out.conform, static_cast<T>(w.lambda)));
  return out;
}

}  // namespace pse
