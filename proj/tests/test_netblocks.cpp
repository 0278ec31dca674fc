#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "pse/netblocks.hpp"

using namespace pse;

namespace {

std::vector<double> flatten(const oracle::Mat& m) {
  std::vector<double> out;
  for (const auto& row : m) out.insert(out.end(), row.begin(), row.end());
  return out;
}

oracle::Mat random_mat(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0,
                       double hi = 1.0) {
  oracle::Mat m(r, std::vector<double>(c));
  for (auto& row : m)
    for (double& x : row) x = rng.uniform(lo, hi);
  return m;
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

// Finite-difference check over an input leaf plus every parameter entry.
// data layout: [0] = input, [1..] = store entries in registration order.
template <class ForwardFn>
double fd_through_params(const ParamStore<double>& base, Shape in_shape,
                         std::vector<double> in_data, ForwardFn forward) {
  std::vector<std::vector<double>> data{std::move(in_data)};
  for (std::size_t i = 0; i < base.size(); ++i) data.push_back(base.entry(i).value);
  oracle::BuildFn build = [&base, in_shape, forward](
                              Graph<double>& g,
                              const std::vector<std::vector<double>>& d) {
    ParamStore<double> store = base;
    for (std::size_t i = 0; i < store.size(); ++i) store.entry(i).value = d[i + 1];
    ParamBinding<double> binding(store, g);
    Tensor<double> x = g.leaf(in_shape, d[0], true);
    Tensor<double> y = forward(binding, x);
    Rng wrng(99);
    std::vector<double> w(y.numel());
    for (double& v : w) v = wrng.uniform(-1.0, 1.0);
    Tensor<double> loss = reduce_sum_all(mul(y, g.constant(y.shape(), w)));
    std::vector<Tensor<double>> leaves{x};
    for (std::size_t i = 0; i < store.size(); ++i)
      leaves.push_back(binding.use(store.entry(i).name));
    return std::make_pair(loss, leaves);
  };
  return oracle::fd_check(build, std::move(data)).max_rel_err;
}

}  // namespace

TEST_CASE("mlp_forward with zeroed parameters gives zero output") {
  Rng rng(200);
  ParamStore<double> store;
  MlpSpec spec{{4, 8, 3}};
  init_mlp(store, "m", spec, rng);
  for (std::size_t i = 0; i < store.size(); ++i)
    std::fill(store.entry(i).value.begin(), store.entry(i).value.end(), 0.0);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto x = g.constant({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto y = mlp_forward(binding, "m", spec, x);
  for (double v : y.val()) CHECK(v == 0.0);
}

TEST_CASE("single linear layer equals matmul plus bias") {
  Rng rng(201);
  ParamStore<double> store;
  MlpSpec spec{{3, 2}};
  init_mlp(store, "m", spec, rng);
  auto xm = random_mat(rng, 4, 3);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto x = g.constant({4, 3}, flatten(xm));
  auto y = mlp_forward(binding, "m", spec, x);

  const auto& w = store.at("m.l0.w");
  const auto& b = store.at("m.l0.b");
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t o = 0; o < 2; ++o) {
      double s = b.value[o];
      for (std::size_t c = 0; c < 3; ++c) s += xm[i][c] * w.value[c * 2 + o];
      CHECK(y.val()[i * 2 + o] == Catch::Approx(s).margin(1e-15));
    }
}

TEST_CASE("mlp_forward matches the straight-line reference") {
  Rng rng(202);
  ParamStore<double> store;
  MlpSpec spec{{4, 8, 3}};
  init_mlp(store, "m", spec, rng);
  auto xm = random_mat(rng, 8, 4);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto y = mlp_forward(binding, "m", spec, g.constant({8, 4}, flatten(xm)));
  CHECK(max_abs_diff(y.val(), flatten(oracle::mlp_ref(store, "m", spec.widths, xm))) <
        1e-12);
}

TEST_CASE("edgeconv with identical features reduces to MLP of [f; 0]") {
  Rng rng(203);
  ParamStore<double> store;
  EdgeConvSpec spec{3, 5};
  init_edgeconv(store, "ec", 2, spec, rng);
  oracle::Mat feats(6, {0.4, -0.2});
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto y = edgeconv_forward(binding, "ec", g.constant({6, 2}, flatten(feats)), spec);

  std::vector<double> edge{0.4, -0.2, 0.0, 0.0};
  oracle::Mat h = oracle::dense_ref(store, "ec", {edge}, true);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t o = 0; o < 5; ++o)
      CHECK(y.val()[i * 5 + o] == Catch::Approx(h[0][o]).margin(1e-14));
}

TEST_CASE("edgeconv with k_conv=1 uses only the self edge") {
  Rng rng(204);
  ParamStore<double> store;
  EdgeConvSpec spec{1, 4};
  init_edgeconv(store, "ec", 3, spec, rng);
  auto feats = random_mat(rng, 5, 3);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto y = edgeconv_forward(binding, "ec", g.constant({5, 3}, flatten(feats)), spec);
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> edge = feats[i];
    edge.insert(edge.end(), {0.0, 0.0, 0.0});
    oracle::Mat h = oracle::dense_ref(store, "ec", {edge}, true);
    for (std::size_t o = 0; o < 4; ++o)
      CHECK(y.val()[i * 4 + o] == Catch::Approx(h[0][o]).margin(1e-14));
  }
}

TEST_CASE("edgeconv matches the exhaustive per-pair reference") {
  Rng rng(205);
  ParamStore<double> store;
  EdgeConvSpec spec{3, 4};
  init_edgeconv(store, "ec", 3, spec, rng);
  auto feats = random_mat(rng, 6, 3);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto y = edgeconv_forward(binding, "ec", g.constant({6, 3}, flatten(feats)), spec);
  CHECK(max_abs_diff(y.val(), flatten(oracle::edgeconv_ref(store, "ec", feats, 3))) <
        1e-12);
  CHECK_THROWS_AS(
      edgeconv_forward(binding, "ec", g.constant({2, 3}, {1, 2, 3, 4, 5, 6}),
                       EdgeConvSpec{3, 4}),
      invalid_argument_error);
}

TEST_CASE("extractor with one block and no skips composes edgeconv + projection") {
  Rng rng(206);
  ParamStore<double> store;
  ExtractorSpec spec{{EdgeConvSpec{2, 6}}, false, 4};
  init_extractor(store, "fx", spec, rng);
  auto pts = random_mat(rng, 8, 3);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto y = feature_extractor_forward(binding, "fx", g.constant({8, 3}, flatten(pts)), spec);

  oracle::Mat ec = oracle::edgeconv_ref(store, "fx.ec0", pts, 2);
  oracle::Mat ref = oracle::mlp_ref(store, "fx.proj", {6, 4}, ec);
  CHECK(max_abs_diff(y.val(), flatten(ref)) < 1e-12);
}

TEST_CASE("extractor with dense skips matches the composed reference") {
  Rng rng(207);
  ParamStore<double> store;
  ExtractorSpec spec{{EdgeConvSpec{3, 5}, EdgeConvSpec{3, 6}}, true, 4};
  init_extractor(store, "fx", spec, rng);
  auto pts = random_mat(rng, 32, 3);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto y = feature_extractor_forward(binding, "fx", g.constant({32, 3}, flatten(pts)), spec);

  oracle::Mat b0 = oracle::edgeconv_ref(store, "fx.ec0", pts, 3);
  oracle::Mat in1(32);
  for (std::size_t i = 0; i < 32; ++i) {
    in1[i] = pts[i];
    in1[i].insert(in1[i].end(), b0[i].begin(), b0[i].end());
  }
  oracle::Mat b1 = oracle::edgeconv_ref(store, "fx.ec1", in1, 3);
  oracle::Mat in2(32);
  for (std::size_t i = 0; i < 32; ++i) {
    in2[i] = in1[i];
    in2[i].insert(in2[i].end(), b1[i].begin(), b1[i].end());
  }
  oracle::Mat ref = oracle::mlp_ref(store, "fx.proj", {3 + 5 + 6, 4}, in2);
  CHECK(max_abs_diff(y.val(), flatten(ref)) < 1e-12);
}

TEST_CASE("extractor output rows permute with the input points") {
  Rng rng(208);
  ParamStore<double> store;
  ExtractorSpec spec{{EdgeConvSpec{3, 5}, EdgeConvSpec{3, 5}}, true, 4};
  init_extractor(store, "fx", spec, rng);
  auto pts = random_mat(rng, 16, 3);

  Graph<double> g1;
  ParamBinding<double> b1(store, g1);
  auto y1 = feature_extractor_forward(b1, "fx", g1.constant({16, 3}, flatten(pts)), spec);

  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 15; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  oracle::Mat shuffled(16);
  for (std::size_t i = 0; i < 16; ++i) shuffled[i] = pts[perm[i]];

  Graph<double> g2;
  ParamBinding<double> b2(store, g2);
  auto y2 =
      feature_extractor_forward(b2, "fx", g2.constant({16, 3}, flatten(shuffled)), spec);

  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(y2.val()[i * 4 + c] ==
            Catch::Approx(y1.val()[perm[i] * 4 + c]).margin(1e-9));
}

TEST_CASE("attention with K=1 returns gamma of the single neighbor") {
  Rng rng(209);
  ParamStore<double> store;
  init_attention(store, "at", 3, 5, rng);
  auto gf = random_mat(rng, 2, 3);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto res = neighborhood_self_attention(binding, "at", g.constant({2, 1, 3}, flatten(gf)));
  CHECK(res.attention.val()[0] == 1.0);
  CHECK(res.attention.val()[1] == 1.0);
  const auto& gm = store.at("at.gamma");
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t o = 0; o < 5; ++o) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += gf[i][c] * gm.value[c * 5 + o];
      CHECK(res.output.val()[i * 5 + o] == Catch::Approx(s).margin(1e-14));
    }
}

TEST_CASE("attention with identical neighbors is uniform") {
  Rng rng(210);
  ParamStore<double> store;
  init_attention(store, "at", 2, 4, rng);
  oracle::Mat group(3, {0.7, -0.3});
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto res = neighborhood_self_attention(binding, "at", g.constant({1, 3, 2}, flatten(group)));
  for (double a : res.attention.val()) CHECK(a == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("attention matches the explicit-loop reference and rows sum to 1") {
  Rng rng(211);
  ParamStore<double> store;
  init_attention(store, "at", 2, 4, rng);
  std::vector<oracle::Mat> groups{random_mat(rng, 3, 2), random_mat(rng, 3, 2)};
  std::vector<double> flat;
  for (const auto& gm : groups) {
    auto f = flatten(gm);
    flat.insert(flat.end(), f.begin(), f.end());
  }
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto res = neighborhood_self_attention(binding, "at", g.constant({2, 3, 2}, flat));
  CHECK(max_abs_diff(res.output.val(), flatten(oracle::attention_ref(store, "at", groups))) <
        1e-12);

  auto av = res.attention.val();
  for (std::size_t row = 0; row < 2 * 3; ++row) {
    double s = av[row * 3] + av[row * 3 + 1] + av[row * 3 + 2];
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("attention output is invariant to neighbor order within a group") {
  Rng rng(212);
  ParamStore<double> store;
  init_attention(store, "at", 3, 6, rng);
  auto group = random_mat(rng, 4, 3);
  oracle::Mat rotated{group[2], group[0], group[3], group[1]};

  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto r1 = neighborhood_self_attention(binding, "at", g.constant({1, 4, 3}, flatten(group)));
  auto r2 =
      neighborhood_self_attention(binding, "at", g.constant({1, 4, 3}, flatten(rotated)));
  for (std::size_t c = 0; c < 6; ++c)
    CHECK(r1.output.val()[c] == Catch::Approx(r2.output.val()[c]).margin(1e-6));
}

TEST_CASE("gradient: edgeconv block") {
  Rng rng(213);
  ParamStore<double> store;
  EdgeConvSpec spec{2, 3};
  init_edgeconv(store, "ec", 3, spec, rng);
  std::vector<double> feats = flatten(random_mat(rng, 5, 3));
  double err = fd_through_params(store, {5, 3}, feats,
                                 [spec](ParamBinding<double>& b, Tensor<double> x) {
                                   return edgeconv_forward(b, "ec", x, spec);
                                 });
  CHECK(err < 1e-6);
}

TEST_CASE("gradient: feature extractor") {
  Rng rng(214);
  ParamStore<double> store;
  ExtractorSpec spec{{EdgeConvSpec{2, 3}, EdgeConvSpec{2, 3}}, true, 2};
  init_extractor(store, "fx", spec, rng);
  std::vector<double> pts = flatten(random_mat(rng, 6, 3));
  double err = fd_through_params(store, {6, 3}, pts,
                                 [spec](ParamBinding<double>& b, Tensor<double> x) {
                                   return feature_extractor_forward(b, "fx", x, spec);
                                 });
  CHECK(err < 1e-6);
}

TEST_CASE("gradient: neighborhood self-attention") {
  Rng rng(215);
  ParamStore<double> store;
  init_attention(store, "at", 2, 3, rng);
  std::vector<double> gf = flatten(random_mat(rng, 2 * 3, 2));
  double err = fd_through_params(store, {2, 3, 2}, gf,
                                 [](ParamBinding<double>& b, Tensor<double> x) {
                                   return neighborhood_self_attention(b, "at", x).output;
                                 });
  CHECK(err < 1e-6);
}

TEST_CASE("mlp parameter initialization is reproducible and shaped") {
  Rng rng1(7), rng2(7);
  ParamStore<double> s1, s2;
  init_mlp(s1, "m", MlpSpec{{4, 8, 3}}, rng1);
  init_mlp(s2, "m", MlpSpec{{4, 8, 3}}, rng2);
  REQUIRE(s1.size() == 4);
  CHECK(s1.at("m.l0.w").shape == Shape{4, 8});
  CHECK(s1.at("m.l1.w").shape == Shape{8, 3});
  CHECK(s1.at("m.l1.b").shape == Shape{1, 3});
  for (std::size_t i = 0; i < s1.size(); ++i)
    CHECK(s1.entry(i).value == s2.entry(i).value);
  CHECK_THROWS_AS(init_mlp(s1, "m", MlpSpec{{4, 3}}, rng1), invalid_argument_error);
}

TEST_CASE("zero-initialized final mlp layer yields zero output rows") {
  Rng rng(216);
  ParamStore<double> store;
  MlpSpec spec{{3, 6, 3}};
  init_mlp(store, "off", spec, rng, true);
  Graph<double> g;
  ParamBinding<double> binding(store, g);
  auto y = mlp_forward(binding, "off", spec, g.constant({4, 3}, flatten(random_mat(rng, 4, 3))));
  for (double v : y.val()) CHECK(v == 0.0);
}
