#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "testing_util.hpp"

#include "prgcn/layers.hpp"

#include <cmath>

using namespace prgcn;
using prgcn::testing::T64;
using prgcn::testing::check_close;
using prgcn::testing::finite_diff_check;

namespace {

// Neighbor-sum form of the spatial convolution: loops over vertices and
// groups with per-pair symmetric degree normalization, no matrix products.
// Independent oracle for GraphConv::aggregate.
T64 neighbor_sum_oracle(const T64& x, const T64& weight, const Skeleton& s, double alpha) {
  Index B = x.size(0), C = x.size(1), T = x.size(2), N = x.size(3);
  Index K = weight.size(0), c_out = weight.size(1);

  auto is_edge = [&](Index a, Index b) {
    for (auto [i, j] : s.edges)
      if ((i == a && j == b) || (i == b && j == a)) return true;
    return false;
  };
  auto in_group = [&](Index k, Index target, Index source) {
    if (target != source && !is_edge(target, source)) return false;
    return partition_group(s, target, source) == k;
  };
  auto degree = [&](Index k, Index v) {
    Index d = 0;
    for (Index j = 0; j < N; ++j) d += in_group(k, v, j) ? 1 : 0;
    return static_cast<double>(d);
  };

  ArrayX<double> out = ArrayX<double>::Zero(B * c_out * T * N);
  for (Index k = 0; k < K; ++k)
    for (Index b = 0; b < B; ++b)
      for (Index t = 0; t < T; ++t)
        for (Index i = 0; i < N; ++i) {
          double zi = degree(k, i) + alpha;
          for (Index j = 0; j < N; ++j) {
            if (!in_group(k, i, j)) continue;
            double zij = std::sqrt(zi * (degree(k, j) + alpha));
            for (Index co = 0; co < c_out; ++co) {
              double acc = 0;
              for (Index ci = 0; ci < C; ++ci)
                acc += weight.at({k, co, ci}) * x.at({b, ci, t, j});
              out[((b * c_out + co) * T + t) * N + i] += acc / zij;
            }
          }
        }
  return T64({B, c_out, T, N}, std::move(out));
}

}  // namespace

TEST_CASE("channel_map identity, zero and rotation weights") {
  std::mt19937_64 rng(2);
  auto x = T64::randn({2, 2, 3, 4}, rng);

  auto eye = T64::from({2, 2}, {1, 0, 0, 1});
  auto same = channel_map(x, eye);
  for (Index i = 0; i < x.numel(); ++i) CHECK(same.value()[i] == x.value()[i]);

  auto zero = channel_map(x, T64::zeros({2, 2}));
  for (Index i = 0; i < zero.numel(); ++i) CHECK(zero.value()[i] == 0.0);

  // Quarter-turn rotation in channel space: (c0, c1) -> (-c1, c0).
  auto rot = channel_map(x, T64::from({2, 2}, {0, -1, 1, 0}));
  for (Index b = 0; b < 2; ++b)
    for (Index t = 0; t < 3; ++t)
      for (Index n = 0; n < 4; ++n) {
        CHECK(rot.at({b, 0, t, n}) == doctest::Approx(-x.at({b, 1, t, n})));
        CHECK(rot.at({b, 1, t, n}) == doctest::Approx(x.at({b, 0, t, n})));
      }

  CHECK_THROWS_AS(channel_map(x, T64::ones({2, 3})), std::invalid_argument);
  CHECK_THROWS_AS(channel_map(T64::ones({2, 2, 3}), eye), std::invalid_argument);
}

TEST_CASE("vertex_map mixes joints through the adjacency") {
  auto x = T64::from({1, 1, 1, 2}, {3, 7});
  auto swap = T64::from({2, 2}, {0, 1, 1, 0});
  check_close<double>(vertex_map(x, swap).value(), {7, 3});
  CHECK_THROWS_AS(vertex_map(x, T64::ones({3, 3})), std::invalid_argument);
}

TEST_CASE("temporal averaging kernel scales borders by two thirds") {
  auto x = T64::ones({1, 1, 5, 1});
  auto kernel = T64::full({1, 1, 3}, 1.0 / 3.0);
  auto y = temporal_map(x, kernel, 1);
  CHECK(y.shape() == Shape{1, 1, 5, 1});
  check_close<double>(y.value(), {2.0 / 3.0, 1, 1, 1, 2.0 / 3.0}, 1e-15);
}

TEST_CASE("identity kernel at stride 1 is the identity map") {
  std::mt19937_64 rng(4);
  auto x = T64::randn({2, 3, 6, 4}, rng);
  ArrayX<double> kv = ArrayX<double>::Zero(3 * 3 * 3);
  for (Index c = 0; c < 3; ++c) kv[(c * 3 + c) * 3 + 1] = 1.0;  // center tap
  auto y = temporal_map(x, T64({3, 3, 3}, std::move(kv)), 1);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("strided temporal convolution keeps every stride-th frame") {
  auto x = T64::from({1, 1, 4, 1}, {10, 20, 30, 40});
  auto kernel = T64::from({1, 1, 3}, {0, 1, 0});
  auto y = temporal_map(x, kernel, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 1});
  check_close<double>(y.value(), {10, 30});
}

TEST_CASE("temporal output lengths follow ceil(T/stride)") {
  std::mt19937_64 rng(6);
  auto k = T64::randn({1, 1, 3}, rng);
  CHECK(temporal_map(T64::ones({1, 1, 6, 2}), k, 2).size(2) == 3);
  auto half = temporal_map(T64::ones({1, 1, 300, 1}), k, 2);
  CHECK(half.size(2) == 150);
  CHECK(temporal_map(half, k, 3).size(2) == 50);
  CHECK(temporal_map(T64::ones({1, 1, 7, 1}), k, 2).size(2) == 4);
  CHECK_THROWS_AS(temporal_map(T64::ones({1, 1, 4, 1}), k, 0), std::invalid_argument);
  CHECK_THROWS_AS(temporal_map(T64::ones({1, 2, 4, 1}), k, 1), std::invalid_argument);
}

TEST_CASE("max_pool_time") {
  auto x = T64::from({1, 1, 6, 1}, {1, 5, 2, 2, 0, 3});
  CHECK(max_pool_time(x, 1).node() == x.node());
  check_close<double>(max_pool_time(x, 2).value(), {5, 2, 3});
  check_close<double>(max_pool_time(x, 3).value(), {5, 3});
  CHECK_THROWS_AS(max_pool_time(x, 4), std::invalid_argument);

  std::mt19937_64 rng(8);
  auto r = T64::randn({2, 3, 8, 4}, rng);
  auto pooled = max_pool_time(r, 4);
  for (Index b = 0; b < 2; ++b)
    for (Index c = 0; c < 3; ++c)
      for (Index t = 0; t < 8; ++t)
        for (Index n = 0; n < 4; ++n)
          CHECK(pooled.at({b, c, t / 4, n}) >= r.at({b, c, t, n}));
}

TEST_CASE("batch norm training output matches beta and gamma squared") {
  std::mt19937_64 rng(10);
  BatchNorm<double> bn(2);
  bn.gamma.value.mutable_value() << 2.0, 0.5;
  bn.beta.value.mutable_value() << 1.0, -1.0;
  auto x = T64::randn({4, 2, 3, 5}, rng);
  auto y = bn.forward(x, /*training=*/true);

  Index count = 4 * 3 * 5;
  for (Index c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (Index b = 0; b < 4; ++b)
      for (Index t = 0; t < 3; ++t)
        for (Index n = 0; n < 5; ++n) m += y.at({b, c, t, n});
    m /= count;
    for (Index b = 0; b < 4; ++b)
      for (Index t = 0; t < 3; ++t)
        for (Index n = 0; n < 5; ++n) v += std::pow(y.at({b, c, t, n}) - m, 2);
    v /= count;
    double g = bn.gamma.value.value()[c];
    CHECK(m == doctest::Approx(bn.beta.value.value()[c]).epsilon(1e-9).scale(1.0));
    CHECK(v == doctest::Approx(g * g).epsilon(1e-3));
  }
}

TEST_CASE("batch norm eval path uses running statistics") {
  std::mt19937_64 rng(12);
  BatchNorm<double> bn(3);
  auto x = T64::randn({2, 3, 2, 2}, rng);

  // Fresh statistics (mean 0, var 1) make eval a near-identity.
  auto y = bn.forward(x, /*training=*/false);
  double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == doctest::Approx(x.value()[i] * scale).epsilon(1e-12));

  // One training pass blends batch statistics in with momentum 0.1.
  bn.forward(x, /*training=*/true);
  Index count = 2 * 2 * 2;
  for (Index c = 0; c < 3; ++c) {
    double mu = 0;
    for (Index b = 0; b < 2; ++b)
      for (Index t = 0; t < 2; ++t)
        for (Index n = 0; n < 2; ++n) mu += x.at({b, c, t, n});
    mu /= count;
    double var = 0;
    for (Index b = 0; b < 2; ++b)
      for (Index t = 0; t < 2; ++t)
        for (Index n = 0; n < 2; ++n) var += std::pow(x.at({b, c, t, n}) - mu, 2);
    var /= (count - 1);  // running stats store the unbiased estimate
    CHECK(bn.running_mean.value()[c] == doctest::Approx(0.1 * mu).epsilon(1e-12).scale(1.0));
    CHECK(bn.running_var.value()[c] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
  }

  CHECK_THROWS_AS(bn.forward(T64::ones({1, 2, 2, 2}), true), std::invalid_argument);
}

TEST_CASE("graph conv on a single vertex reduces to a scaled scalar map") {
  std::mt19937_64 rng(14);
  auto s = build_skeleton(1, 0, {});
  auto adj = adjacency_tensor<double>(normalized_adjacency(s));
  GraphConv<double> layer(1, 1, 3, 1, rng);
  layer.weight.value.mutable_value() << 2.5, -7.0, 4.0;  // only the self group can act

  auto x = T64::from({1, 1, 3, 1}, {1.0, -2.0, 0.5});
  auto y = layer.aggregate(x, adj);
  for (Index t = 0; t < 3; ++t)
    CHECK(y.at({0, 0, t, 0}) == doctest::Approx(2.5 * x.at({0, 0, t, 0}) / 1.001).epsilon(1e-12));
}

TEST_CASE("graph conv on a two-joint chain matches the hand-evaluated sum") {
  std::mt19937_64 rng(16);
  auto s = build_skeleton(2, 0, {{0, 1}});
  auto adj = adjacency_tensor<double>(normalized_adjacency(s));
  GraphConv<double> layer(1, 1, 3, 2, rng);
  double w0 = 0.8, w1 = -1.1, w2 = 0.35;
  layer.weight.value.mutable_value() << w0, w1, w2;

  double x0 = 0.7, x1 = -0.3;
  auto y = layer.aggregate(T64::from({1, 1, 1, 2}, {x0, x1}), adj);
  double cross = 1.0 / std::sqrt(0.001 * 1.001);
  CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(w0 * x0 / 1.001 + w2 * x1 * cross).epsilon(1e-12));
  CHECK(y.at({0, 0, 0, 1}) == doctest::Approx(w0 * x1 / 1.001 + w1 * x0 * cross).epsilon(1e-12));
}

TEST_CASE("all-ones mask leaves the aggregation untouched") {
  std::mt19937_64 rng(18);
  auto s = skeleton_preset("kinetics18");
  auto pa = normalized_adjacency(s);
  auto adj = adjacency_tensor<double>(pa);
  GraphConv<double> layer(3, 4, 3, 18, rng);

  auto x = T64::randn({2, 3, 2, 18}, rng);
  auto with_mask = layer.aggregate(x, adj);

  // Mask-free reference: same weights, adjacency applied directly.
  T64 ref;
  for (Index k = 0; k < 3; ++k) {
    auto a_k = reshape(slice(adj, 0, k, 1, 1), {18, 18});
    auto w_k = reshape(slice(layer.weight.value, 0, k, 1, 1), {4, 3});
    auto term = channel_map(vertex_map(x, a_k), w_k);
    ref = ref.defined() ? ref + term : term;
  }
  for (Index i = 0; i < ref.numel(); ++i) CHECK(with_mask.value()[i] == ref.value()[i]);
}

TEST_CASE("matrix-form aggregation equals the neighbor-sum oracle") {
  std::mt19937_64 rng(20);
  for (int rep = 0; rep < 10; ++rep) {
    Index n = 2 + static_cast<Index>(rng() % 5);
    auto s = prgcn::testing::random_skeleton(n, rng);
    auto adj = adjacency_tensor<double>(normalized_adjacency(s));
    GraphConv<double> layer(3, 2, 3, n, rng);
    auto x = T64::randn({2, 3, 2, n}, rng);
    auto fast = layer.aggregate(x, adj);
    auto slow = neighbor_sum_oracle(x, layer.weight.value, s, 1e-3);
    for (Index i = 0; i < fast.numel(); ++i)
      CHECK(fast.value()[i] == doctest::Approx(slow.value()[i]).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("graph conv residual wiring") {
  std::mt19937_64 rng(22);
  auto s = build_skeleton(3, 0, {{0, 1}, {1, 2}});
  auto adj = adjacency_tensor<double>(normalized_adjacency(s));
  auto x = T64::randn({2, 2, 4, 3}, rng);

  // Zero weights silence the conv branch; BN of zeros is zero, so the output
  // is exactly relu(skip).
  GraphConv<double> same(2, 2, 3, 3, rng);
  same.weight.value.mutable_value().setZero();
  CHECK_FALSE(same.proj.has_value());
  auto y = same.forward(x, adj, /*training=*/true);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == std::max(x.value()[i], 0.0));

  GraphConv<double> widen(2, 5, 3, 3, rng);
  CHECK(widen.proj.has_value());
  widen.weight.value.mutable_value().setZero();
  auto yp = widen.forward(x, adj, true);
  auto want = relu(channel_map(x, widen.proj->value));
  for (Index i = 0; i < yp.numel(); ++i) CHECK(yp.value()[i] == want.value()[i]);

  GraphConv<double> bare(2, 5, 3, 3, rng, /*with_residual=*/false);
  CHECK_FALSE(bare.proj.has_value());
  bare.weight.value.mutable_value().setZero();
  auto yb = bare.forward(x, adj, true);
  for (Index i = 0; i < yb.numel(); ++i) CHECK(yb.value()[i] == 0.0);

  CHECK_THROWS_AS(same.aggregate(x, T64::ones({3, 2, 2})), std::invalid_argument);
}

TEST_CASE("temporal conv residual wiring and strides") {
  std::mt19937_64 rng(24);
  auto x = T64::randn({2, 3, 6, 2}, rng);

  TemporalConv<double> same(3, 3, 3, 2, rng);
  CHECK_FALSE(same.proj.has_value());
  same.kernel.value.mutable_value().setZero();
  auto y = same.forward(x, /*training=*/true);
  CHECK(y.shape() == Shape{2, 3, 3, 2});
  // Channel-preserving stride-2 skip subsamples frames 0, 2, 4.
  for (Index b = 0; b < 2; ++b)
    for (Index c = 0; c < 3; ++c)
      for (Index t = 0; t < 3; ++t)
        for (Index n = 0; n < 2; ++n)
          CHECK(y.at({b, c, t, n}) == std::max(x.at({b, c, 2 * t, n}), 0.0));

  TemporalConv<double> widen(3, 5, 3, 3, rng);
  CHECK(widen.proj.has_value());
  CHECK(widen.forward(x, true).shape() == Shape{2, 5, 2, 2});

  CHECK_THROWS_AS(TemporalConv<double>(3, 3, 3, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(TemporalConv<double>(3, 3, 3, 4, rng), std::invalid_argument);
}

TEST_CASE("layer primitives pass finite-difference checks") {
  std::mt19937_64 rng(26);

  auto x = T64::randn({2, 3, 4, 3}, rng, 1.0, true);
  auto w = T64::randn({2, 3}, rng, 1.0, true);
  CHECK(finite_diff_check({x, w}, [&] { return mean_all(channel_map(x, w) * channel_map(x, w)); }) < 1e-4);

  auto a = T64::randn({3, 3}, rng, 1.0, true);
  CHECK(finite_diff_check({x, a}, [&] { return mean_all(sigmoid(vertex_map(x, a))); }) < 1e-4);

  auto k = T64::randn({2, 3, 3}, rng, 1.0, true);
  CHECK(finite_diff_check({x, k}, [&] { return mean_all(relu(temporal_map(x, k, 2))); }) < 1e-4);

  CHECK(finite_diff_check({x}, [&] { return mean_all(max_pool_time(x, 2)); }) < 1e-4);
}

TEST_CASE("batch norm gradients agree with finite differences") {
  std::mt19937_64 rng(28);
  BatchNorm<double> bn(2);
  auto x = T64::randn({3, 2, 2, 2}, rng, 1.0, true);
  auto loss_fn = [&] { return mean_all(bn.forward(x, true) * bn.forward(x, true)); };
  CHECK(finite_diff_check({x, bn.gamma.value, bn.beta.value}, loss_fn) < 1e-4);
}

TEST_CASE("full layer forwards pass finite-difference checks") {
  std::mt19937_64 rng(30);
  auto s = build_skeleton(3, 0, {{0, 1}, {1, 2}});
  auto adj = adjacency_tensor<double>(normalized_adjacency(s));

  GraphConv<double> gc(2, 3, 3, 3, rng);
  auto x = T64::randn({2, 2, 3, 3}, rng, 1.0, true);
  auto gc_loss = [&] { return mean_all(gc.forward(x, adj, true)); };
  CHECK(finite_diff_check({x, gc.weight.value, gc.mask.value, gc.proj->value, gc.bn.gamma.value, gc.bn.beta.value},
                          gc_loss) < 1e-4);

  TemporalConv<double> tc(2, 4, 3, 2, rng);
  auto tc_loss = [&] { return mean_all(tc.forward(x, true)); };
  CHECK(finite_diff_check({x, tc.kernel.value, tc.proj->value, tc.bn.gamma.value, tc.bn.beta.value}, tc_loss) < 1e-4);
}
