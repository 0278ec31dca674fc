#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "pse/embedder.hpp"
#include "pse/geometry.hpp"
#include "pse/losses.hpp"
#include "pse/restorer.hpp"
#include "oracles.hpp"

using namespace pse;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.N = 16;
  cfg.n = 8;
  cfg.r = 2;
  cfg.K = 4;
  cfg.m = 3;
  cfg.C = 4;
  cfg.C_prime = 4;
  cfg.k_conv = 2;
  cfg.extractor_blocks = 1;
  cfg.batch_size = 1;
  cfg.dataset.points = cfg.N;
  return cfg;
}

ParamStore<double> tiny_params(const TrainConfig& cfg, std::uint64_t seed,
                               bool randomize_offset_heads) {
  ParamStore<double> store;
  Rng rng(seed);
  init_embedder_params(store, cfg, rng);
  init_restorer_params(store, cfg, rng);
  if (randomize_offset_heads) {
    // Nonzero weights *and* biases: keeps every offset row away from exact
    // zero, so no restored point coincides with a source point and the
    // objective is smooth around the test point.
    for (const char* name : {"E.off.l1.w", "R.off.l1.w", "E.off.l1.b", "R.off.l1.b"}) {
      auto& e = store.at(name);
      for (double& v : e.value) v = 0.3 * rng.gaussian();
    }
  }
  return store;
}

double elem(const Tensor<double>& t, std::initializer_list<std::size_t> idx) {
  const Shape& s = t.shape();
  REQUIRE(idx.size() == s.size());
  std::size_t flat = 0, a = 0;
  for (std::size_t i : idx) flat = flat * s[a++] + i;
  return t.val()[flat];
}

std::vector<double> flat_cloud(const PointCloud& c) {
  std::vector<double> out(c.count() * 3);
  for (std::size_t i = 0; i < c.count(); ++i)
    for (std::size_t d = 0; d < 3; ++d) out[i * 3 + d] = c[i][d];
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Periodic shuffle
// ---------------------------------------------------------------------------

TEST_CASE("periodic shuffle spreads channel slices onto replica rows") {
  Graph<double> g;
  auto x = g.constant({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto y = periodic_shuffle(x, 2);
  REQUIRE(y.shape() == Shape{4, 2});
  const std::vector<double> want{1, 2, 3, 4, 5, 6, 7, 8};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(y.val()[i] == want[i]);
  // row layout: [1,2] and [3,4] came from source row 0; [5,6],[7,8] from row 1
  CHECK(elem(y, {0, 0}) == 1.0);
  CHECK(elem(y, {1, 0}) == 3.0);
  CHECK(elem(y, {2, 0}) == 5.0);
  CHECK(elem(y, {3, 1}) == 8.0);
}

TEST_CASE("periodic shuffle with r=1 is the identity") {
  Graph<double> g;
  auto x = g.constant({3, 5}, [&] {
    std::vector<double> v(15);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i);
    return v;
  }());
  auto y = periodic_shuffle(x, 1);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < 15; ++i) CHECK(y.val()[i] == x.val()[i]);
}

TEST_CASE("periodic shuffle and its inverse are bijections") {
  Rng rng(31);
  Graph<double> g;
  std::vector<double> data(6 * 12);
  for (double& v : data) v = rng.gaussian();
  auto x = g.constant({6, 12}, data);

  auto fwd = periodic_shuffle(x, 3);
  REQUIRE(fwd.shape() == Shape{18, 4});
  auto back = periodic_shuffle_inverse(fwd, 3);
  REQUIRE(back.shape() == Shape{6, 12});
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(back.val()[i] == data[i]);

  auto inv_first = periodic_shuffle_inverse(x, 2);
  REQUIRE(inv_first.shape() == Shape{3, 24});
  auto there = periodic_shuffle(inv_first, 2);
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(there.val()[i] == data[i]);
}

TEST_CASE("periodic shuffle validates its input") {
  Graph<double> g;
  auto x = g.constant({2, 5}, std::vector<double>(10, 0.0));
  CHECK_THROWS_AS(periodic_shuffle(x, 2), shape_error);
  CHECK_THROWS_AS(periodic_shuffle_inverse(g.constant({3, 2}, {1, 2, 3, 4, 5, 6}), 2),
                  shape_error);
  auto r3 = g.constant({2, 2, 2}, std::vector<double>(8, 0.0));
  CHECK_THROWS_AS(periodic_shuffle(r3, 2), shape_error);
}

TEST_CASE("gradients pass through the shuffle unchanged") {
  oracle::BuildFn build = [](Graph<double>& g,
                             const std::vector<std::vector<double>>& d) {
    Tensor<double> x = g.leaf({2, 6}, d[0], true);
    Tensor<double> y = periodic_shuffle(x, 3);
    Tensor<double> w = g.constant({6, 2}, {0.3, -1, 2, 0.7, -0.2, 1.1, 0.5, -0.9, 1.4,
                                           0.2, -0.6, 0.8});
    return std::make_pair(reduce_sum_all(mul(y, w)), std::vector<Tensor<double>>{x});
  };
  std::vector<std::vector<double>> data{{1, -2, 3, 0.5, -1.5, 2.5, 0.1, 0.2, 0.3, 0.4,
                                         0.5, 0.6}};
  CHECK(oracle::fd_check(build, data).max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// Down-shuffle
// ---------------------------------------------------------------------------

TEST_CASE("down-shuffle matches the composed sampling/grouping/attention oracle") {
  Rng rng(71);
  const std::size_t N = 24, n = 8, K = 4, C = 5, Cp = 6;
  PointCloud P = oracle::random_cloud(rng, N);

  ParamStore<double> store;
  init_attention(store, "att", C, Cp, rng);

  std::vector<double> feats(N * C);
  for (double& v : feats) v = rng.gaussian();

  Graph<double> g;
  ParamBinding<double> binding(store, g);
  Tensor<double> F = g.constant({N, C}, feats);
  DownShuffleResult<double> ds = down_shuffle(binding, "att", P, F, n, K);

  auto fps_o = oracle::fps(P, n, 0);
  REQUIRE(ds.fps_indices == fps_o);
  auto groups_o = oracle::knn(gather_points(P, fps_o), P, K);
  REQUIRE(ds.group_indices == groups_o);

  std::vector<oracle::Mat> groups(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const std::uint32_t j = groups_o[i * K + k];
      groups[i].push_back(std::vector<double>(feats.begin() + j * C,
                                              feats.begin() + (j + 1) * C));
    }
  oracle::Mat want = oracle::attention_ref(store, "att", groups);

  REQUIRE(ds.features.shape() == Shape{n, Cp});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < Cp; ++c)
      CHECK(elem(ds.features, {i, c}) == Catch::Approx(want[i][c]).margin(1e-9));
}

TEST_CASE("attention weights of each group row sum to one") {
  Rng rng(72);
  const std::size_t N = 20, n = 10, K = 3, C = 4;
  PointCloud P = oracle::random_cloud(rng, N);
  ParamStore<double> store;
  init_attention(store, "att", C, 5, rng);
  std::vector<double> feats(N * C);
  for (double& v : feats) v = rng.gaussian();

  Graph<double> g;
  ParamBinding<double> binding(store, g);
  DownShuffleResult<double> ds =
      down_shuffle(binding, "att", P, g.constant({N, C}, feats), n, K);
  REQUIRE(ds.attention.shape() == Shape{n, K, K});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < K; ++q) {
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) s += elem(ds.attention, {i, q, k});
      CHECK(s == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("down-shuffle with n=N and K=1 reduces to a per-point projection") {
  Rng rng(73);
  const std::size_t N = 12, C = 4, Cp = 3;
  PointCloud P = oracle::random_cloud(rng, N);
  ParamStore<double> store;
  init_attention(store, "att", C, Cp, rng);
  std::vector<double> feats(N * C);
  for (double& v : feats) v = rng.gaussian();

  Graph<double> g;
  ParamBinding<double> binding(store, g);
  DownShuffleResult<double> ds =
      down_shuffle(binding, "att", P, g.constant({N, C}, feats), N, 1);

  // Each group is the sampled point itself, so the output is gamma applied to
  // its feature row, in farthest-point order.
  const auto& gamma = store.at("att.gamma");
  for (std::size_t i = 0; i < N; ++i) {
    const std::uint32_t src = ds.fps_indices[i];
    REQUIRE(ds.group_indices[i] == src);
    for (std::size_t c = 0; c < Cp; ++c) {
      double want = 0;
      for (std::size_t a = 0; a < C; ++a)
        want += feats[src * C + a] * gamma.value[a * Cp + c];
      CHECK(elem(ds.features, {i, c}) == Catch::Approx(want).margin(1e-12));
    }
    CHECK(elem(ds.attention, {i, 0, 0}) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("down-shuffle rejects neighborhoods that cannot cover the input") {
  Rng rng(74);
  PointCloud P = oracle::random_cloud(rng, 24);
  ParamStore<double> store;
  init_attention(store, "att", 4, 4, rng);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  Tensor<double> F = g.constant({24, 4}, std::vector<double>(24 * 4, 0.1));
  CHECK_THROWS_AS(down_shuffle(binding, "att", P, F, 4, 4), config_error);
  CHECK_THROWS_AS(down_shuffle(binding, "att", P, F, 0, 4), invalid_argument_error);
  CHECK_THROWS_AS(down_shuffle(binding, "att", P, F, 4, 25), invalid_argument_error);
}

// ---------------------------------------------------------------------------
// Embed / restore structural contracts
// ---------------------------------------------------------------------------

TEST_CASE("freshly initialized embedder reproduces farthest point sampling") {
  TrainConfig cfg = tiny_config();
  ParamStore<double> store = tiny_params(cfg, 11, false);
  Rng rng(75);
  PointCloud P = oracle::random_cloud(rng, cfg.N);

  EmbedResult er = embed(store, P, cfg);
  auto fps_o = oracle::fps(P, cfg.n, 0);
  REQUIRE(er.fps_indices == fps_o);
  REQUIRE(er.Q.count() == cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(er.delta_Q[i][d] == 0.0);
      CHECK(er.Q[i][d] == P[fps_o[i]][d]);
      CHECK(er.Q_prime[i][d] == P[fps_o[i]][d]);
    }
}

TEST_CASE("freshly initialized restorer replicates its input r times") {
  TrainConfig cfg = tiny_config();
  ParamStore<double> store = tiny_params(cfg, 12, false);
  Rng rng(76);
  PointCloud Q = oracle::random_cloud(rng, cfg.n);

  RestoreResult rr = restore(store, Q, cfg);
  REQUIRE(rr.R.count() == cfg.n * cfg.r);
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t s = 0; s < cfg.r; ++s)
      for (std::size_t d = 0; d < 3; ++d) {
        CHECK(rr.delta_R[i * cfg.r + s][d] == 0.0);
        CHECK(rr.R[i * cfg.r + s][d] == Q[i][d]);
        CHECK(rr.R_prime[i * cfg.r + s][d] == Q[i][d]);
      }
}

TEST_CASE("embedded and restored points satisfy their residual identities exactly") {
  TrainConfig cfg = tiny_config();
  ParamStore<double> store = tiny_params(cfg, 13, true);
  Rng rng(77);
  PointCloud P = oracle::random_cloud(rng, cfg.N);

  EmbedResult er = embed(store, P, cfg);
  bool moved = false;
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(er.Q[i][d] == er.Q_prime[i][d] + er.delta_Q[i][d]);
      if (er.delta_Q[i][d] != 0.0) moved = true;
    }
  CHECK(moved);

  RestoreResult rr = restore(store, er.Q, cfg);
  moved = false;
  for (std::size_t i = 0; i < rr.R.count(); ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(rr.R[i][d] == rr.R_prime[i][d] + rr.delta_R[i][d]);
      if (rr.delta_R[i][d] != 0.0) moved = true;
      CHECK(rr.R_prime[i][d] == er.Q[i / cfg.r][d]);
    }
  CHECK(moved);
}

TEST_CASE("embedding twice gives bitwise identical results") {
  TrainConfig cfg = tiny_config();
  ParamStore<double> store = tiny_params(cfg, 14, true);
  Rng rng(78);
  PointCloud P = oracle::random_cloud(rng, cfg.N);

  EmbedResult a = embed(store, P, cfg);
  EmbedResult b = embed(store, P, cfg);
  REQUIRE(a.fps_indices == b.fps_indices);
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t d = 0; d < 3; ++d) CHECK(a.Q[i][d] == b.Q[i][d]);

  RestoreResult ra = restore(store, a.Q, cfg);
  RestoreResult rb = restore(store, b.Q, cfg);
  for (std::size_t i = 0; i < ra.R.count(); ++i)
    for (std::size_t d = 0; d < 3; ++d) CHECK(ra.R[i][d] == rb.R[i][d]);
}

TEST_CASE("embed rejects point counts that r does not divide") {
  TrainConfig cfg = tiny_config();
  ParamStore<double> store = tiny_params(cfg, 15, false);
  Rng rng(79);
  PointCloud P = oracle::random_cloud(rng, cfg.N + 1);
  CHECK_THROWS_AS(embed(store, P, cfg), invalid_argument_error);
}

TEST_CASE("up-shuffle output carries replicated coordinates in its last columns") {
  TrainConfig cfg = tiny_config();
  ParamStore<double> store = tiny_params(cfg, 16, false);
  Rng rng(80);
  PointCloud Q = oracle::random_cloud(rng, cfg.n);

  Graph<double> g;
  ParamBinding<double> binding(store, g);
  std::vector<double> xyz = flat_cloud(Q);
  std::vector<double> feats(cfg.n * cfg.C);
  for (double& v : feats) v = rng.gaussian();

  UpShuffleResult<double> up =
      up_shuffle(binding, "R.exp", g.constant({cfg.n, cfg.C}, feats),
                 g.constant({cfg.n, 3}, xyz), cfg.r, cfg.k_conv);
  REQUIRE(up.features.shape() == Shape{cfg.n * cfg.r, cfg.C + 3});
  for (std::size_t i = 0; i < cfg.n * cfg.r; ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(elem(up.features, {i, cfg.C + d}) == Q[i / cfg.r][d]);
      CHECK(elem(up.R_prime, {i, d}) == Q[i / cfg.r][d]);
    }
}

TEST_CASE("up-shuffle expansion matches the reference EdgeConv slice by slice") {
  TrainConfig cfg = tiny_config();
  ParamStore<double> store = tiny_params(cfg, 17, false);
  Rng rng(81);
  PointCloud Q = oracle::random_cloud(rng, cfg.n);

  oracle::Mat feats(cfg.n, std::vector<double>(cfg.C));
  std::vector<double> flat;
  for (auto& row : feats) {
    for (double& v : row) {
      v = rng.gaussian();
      flat.push_back(v);
    }
  }

  Graph<double> g;
  ParamBinding<double> binding(store, g);
  UpShuffleResult<double> up =
      up_shuffle(binding, "R.exp", g.constant({cfg.n, cfg.C}, flat),
                 g.constant({cfg.n, 3}, flat_cloud(Q)), cfg.r, cfg.k_conv);

  oracle::Mat expanded = oracle::edgeconv_ref(store, "R.exp", feats, cfg.k_conv);
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t s = 0; s < cfg.r; ++s)
      for (std::size_t c = 0; c < cfg.C; ++c)
        CHECK(elem(up.features, {i * cfg.r + s, c}) ==
              Catch::Approx(expanded[i][s * cfg.C + c]).margin(1e-9));
}

// ---------------------------------------------------------------------------
// End-to-end gradients
// ---------------------------------------------------------------------------

TEST_CASE("finite differences verify the full embed-restore objective") {
  TrainConfig cfg = tiny_config();
  ParamStore<double> base = tiny_params(cfg, 18, true);
  Rng rng(82);
  PointCloud P = oracle::random_cloud(rng, cfg.N);

  std::vector<std::vector<double>> data;
  for (std::size_t i = 0; i < base.size(); ++i) data.push_back(base.entry(i).value);

  oracle::BuildFn build = [&](Graph<double>& g,
                              const std::vector<std::vector<double>>& d) {
    ParamStore<double> store = base;
    for (std::size_t i = 0; i < store.size(); ++i) store.entry(i).value = d[i];
    ParamBinding<double> binding(store, g);
    EmbedGraph<double> eg = embed_graph(g, binding, P, cfg);
    RestoreGraph<double> rg = restore_graph(binding, eg.Q, cfg);
    TotalLoss<double> L = total_loss(P, eg.Q, rg.R, eg.delta_Q, cfg.weights());
    std::vector<Tensor<double>> leaves;
    for (std::size_t i = 0; i < store.size(); ++i)
      leaves.push_back(binding.use(store.entry(i).name));
    return std::make_pair(L.total, leaves);
  };
  oracle::FdReport rep = oracle::fd_check(build, data, 1e-5);
  CHECK(rep.coords_checked == base.total_scalars());
  CAPTURE(rep.worst_leaf, rep.worst_coord, rep.worst_an, rep.worst_fd,
          base.entry(rep.worst_leaf).name);
  CHECK(rep.max_rel_err < 1e-6);
}
