#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "testing_util.hpp"

#include "prgcn/blocks.hpp"
#include "prgcn/data.hpp"

#include <cmath>

using namespace prgcn;
using prgcn::testing::T64;
using prgcn::testing::check_close;
using prgcn::testing::finite_diff_check;

namespace {

T64 chain_adjacency(Index n) {
  return adjacency_tensor<double>(normalized_adjacency(build_skeleton(n, 0, chain_edges(n))));
}

}  // namespace

TEST_CASE("motion of a static pose is zero") {
  auto p = T64::full({1, 2, 5, 3}, 0.37);
  auto m = compute_motion(p);
  CHECK(m.shape() == p.shape());
  for (Index i = 0; i < m.numel(); ++i) CHECK(m.value()[i] == 0.0);
  auto single = compute_motion(T64::full({1, 2, 1, 3}, 4.0));
  for (Index i = 0; i < single.numel(); ++i) CHECK(single.value()[i] == 0.0);
}

TEST_CASE("motion of linear motion is the constant velocity") {
  Index T = 5;
  ArrayX<double> v(T * 2);
  for (Index t = 0; t < T; ++t) {
    v[t * 2 + 0] = 0.25 * t;
    v[t * 2 + 1] = -1.5 * t;
  }
  auto m = compute_motion(T64({1, 1, T, 2}, std::move(v)));
  CHECK(m.at({0, 0, 0, 0}) == 0.0);
  CHECK(m.at({0, 0, 0, 1}) == 0.0);
  for (Index t = 1; t < T; ++t) {
    CHECK(m.at({0, 0, t, 0}) == doctest::Approx(0.25));
    CHECK(m.at({0, 0, t, 1}) == doctest::Approx(-1.5));
  }
}

TEST_CASE("cumulative motion reconstructs the trajectory") {
  std::mt19937_64 rng(7);
  auto p = T64::randn({2, 3, 6, 4}, rng);
  auto m = compute_motion(p);
  for (Index b = 0; b < 2; ++b)
    for (Index c = 0; c < 3; ++c)
      for (Index n = 0; n < 4; ++n) {
        double acc = p.at({b, c, 0, n});
        for (Index t = 1; t < 6; ++t) {
          acc += m.at({b, c, t, n});
          CHECK(acc == doctest::Approx(p.at({b, c, t, n})).epsilon(1e-12));
        }
      }

  // Values on a 2^-10 grid difference and re-sum without rounding, so the
  // telescoping identity holds bit for bit.
  ArrayX<double> grid(1 * 1 * 6 * 1);
  for (Index t = 0; t < 6; ++t) grid[t] = static_cast<double>((t * 37 % 101) - 50) / 1024.0;
  auto pd = T64({1, 1, 6, 1}, std::move(grid));
  auto md = compute_motion(pd);
  double acc = pd.at({0, 0, 0, 0});
  for (Index t = 1; t < 6; ++t) {
    acc += md.at({0, 0, t, 0});
    CHECK(acc == pd.at({0, 0, t, 0}));
  }
}

TEST_CASE("scale_concat pools the position flow to the motion rate") {
  auto pos = T64::from({1, 1, 4, 1}, {1, 3, 2, 0});
  auto mot = T64::from({1, 1, 2, 1}, {5, 6});
  auto out = scale_concat(pos, mot);
  CHECK(out.shape() == Shape{1, 2, 2, 1});
  check_close<double>(out.value(), {3, 2, 5, 6});

  // Equal rates: plain channel concat.
  auto same = scale_concat(mot, mot);
  check_close<double>(same.value(), {5, 6, 5, 6});

  std::mt19937_64 rng(9);
  auto a = T64::randn({2, 3, 12, 4}, rng);
  auto b = T64::randn({2, 5, 4, 4}, rng);
  CHECK(scale_concat(a, b).shape() == Shape{2, 8, 4, 4});

  CHECK_THROWS_AS(scale_concat(T64::ones({1, 1, 4, 1}), T64::ones({1, 1, 3, 1})), std::invalid_argument);
}

TEST_CASE("fresh pose refinement is the identity map") {
  std::mt19937_64 rng(11);
  auto adj = chain_adjacency(4);
  PoseRefine<double> prm(3, 2, 8, 3, 4, rng);
  auto x = T64::randn({2, 3, 6, 4}, rng);
  auto y = prm.forward(x, adj, /*training=*/true);
  CHECK(y.shape() == x.shape());
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("confidence channel passes through for any head") {
  std::mt19937_64 rng(13);
  auto adj = chain_adjacency(3);
  PoseRefine<double> prm(3, 2, 8, 3, 3, rng);
  prm.head.value = T64::randn({2, 8}, rng).set_requires_grad(true);
  auto x = T64::randn({2, 3, 4, 3}, rng);
  auto y = prm.forward(x, adj, true);

  bool offsets_active = false;
  for (Index b = 0; b < 2; ++b)
    for (Index t = 0; t < 4; ++t)
      for (Index n = 0; n < 3; ++n) {
        CHECK(y.at({b, 2, t, n}) == x.at({b, 2, t, n}));
        offsets_active = offsets_active || y.at({b, 0, t, n}) != x.at({b, 0, t, n});
      }
  CHECK(offsets_active);
}

TEST_CASE("three-channel refinement covers every channel") {
  std::mt19937_64 rng(15);
  auto adj = chain_adjacency(3);
  PoseRefine<double> prm(3, 3, 8, 3, 3, rng);
  auto x = T64::randn({1, 3, 4, 3}, rng);
  CHECK(prm.forward(x, adj, true).shape() == x.shape());
  CHECK_THROWS_AS(prm.forward(T64::ones({1, 2, 4, 3}), adj, true), std::invalid_argument);
  CHECK_THROWS_AS(PoseRefine<double>(2, 3, 8, 3, 3, rng), std::invalid_argument);
}

TEST_CASE("classification gradient reaches refinement parameters") {
  std::mt19937_64 rng(17);
  auto adj = chain_adjacency(3);
  PoseRefine<double> prm(3, 2, 4, 3, 3, rng);
  auto x = T64::randn({1, 3, 4, 3}, rng);

  // At init the zero head blocks gradient into the trunk; the head itself
  // still learns, which is what unfreezes the rest.
  backward(mean_all(prm.forward(x, adj, true) * prm.forward(x, adj, true)));
  CHECK(prm.head.value.grad().abs().maxCoeff() > 0.0);
  CHECK(prm.lift.value.grad().abs().maxCoeff() == 0.0);

  prm.head.value = T64::randn({2, 4}, rng).set_requires_grad(true);
  prm.lift.value.zero_grad();
  backward(mean_all(prm.forward(x, adj, true) * prm.forward(x, adj, true)));
  CHECK(prm.lift.value.grad().abs().maxCoeff() > 0.0);
  CHECK(prm.gconv1.weight.value.grad().abs().maxCoeff() > 0.0);
  CHECK(prm.tconv.kernel.value.grad().abs().maxCoeff() > 0.0);
}

TEST_CASE("gradual fusion produces 4w channels at a sixth of the rate") {
  std::mt19937_64 rng(19);
  auto adj = chain_adjacency(3);
  for (auto mode : {FusionMode::parallel_pm, FusionMode::parallel_pp, FusionMode::sequential_p,
                    FusionMode::sequential_pm}) {
    GradualFusion<double> gfm(3, 4, 3, 3, mode, rng);
    CHECK(gfm.out_channels() == 16);
    auto x = T64::randn({2, 3, 12, 3}, rng);
    auto y = gfm.forward(x, adj, true);
    CHECK(y.shape() == Shape{2, 16, 2, 3});

    auto tiny = gfm.forward(T64::randn({1, 3, 6, 3}, rng), adj, true);
    CHECK(tiny.shape() == Shape{1, 16, 1, 3});

    CHECK_THROWS_AS(gfm.forward(T64::randn({1, 3, 8, 3}, rng), adj, true), std::invalid_argument);
  }
}

TEST_CASE("full-length sequence fuses down to fifty frames") {
  std::mt19937_64 rng(21);
  auto adj = chain_adjacency(2);
  GradualFusion<double> gfm(3, 2, 3, 2, FusionMode::parallel_pm, rng);
  auto y = gfm.forward(T64::randn({1, 3, 300, 2}, rng), adj, false);
  CHECK(y.shape() == Shape{1, 8, 50, 2});
}

TEST_CASE("parallel fusion gradients agree with finite differences") {
  std::mt19937_64 rng(23);
  auto adj = chain_adjacency(3);
  GradualFusion<double> gfm(3, 2, 3, 3, FusionMode::parallel_pm, rng);
  auto x = T64::randn({1, 3, 6, 3}, rng, 1.0, true);
  auto loss_fn = [&] { return mean_all(gfm.forward(x, adj, true)); };
  CHECK(finite_diff_check({x, gfm.pos1->weight.value, gfm.mot->weight.value, gfm.tconv1->kernel.value,
                           gfm.tconv2->kernel.value},
                          loss_fn) < 1e-4);
}

TEST_CASE("sequential fusion gradients agree with finite differences") {
  std::mt19937_64 rng(25);
  auto adj = chain_adjacency(3);
  GradualFusion<double> gfm(3, 2, 3, 3, FusionMode::sequential_pm, rng);
  auto x = T64::randn({1, 3, 6, 3}, rng, 1.0, true);
  auto loss_fn = [&] { return mean_all(gfm.forward(x, adj, true)); };
  CHECK(finite_diff_check({x, gfm.seq_g1->weight.value, gfm.seq_t1->kernel.value, gfm.seq_g3->weight.value},
                          loss_fn) < 1e-4);
}

TEST_CASE("zero excitation weights gate every channel by exactly one half") {
  std::mt19937_64 rng(27);
  TemporalAggregation<double> tam(4, 3, 2, /*recalibrate=*/true, 3, 3, rng);
  tam.se_reduce->value.mutable_value().setZero();
  tam.se_expand->value.mutable_value().setZero();
  auto h = T64::randn({2, 4, 1, 3}, rng);
  auto s = tam.recalibration(h);
  CHECK(s.shape() == Shape{2, 4, 1, 1});
  for (Index i = 0; i < s.numel(); ++i) CHECK(s.value()[i] == 0.5);
}

TEST_CASE("recalibration scales stay strictly inside the unit interval") {
  std::mt19937_64 rng(29);
  TemporalAggregation<double> tam(8, 5, 4, true, 3, 4, rng);
  for (int rep = 0; rep < 5; ++rep) {
    auto s = tam.recalibration(T64::randn({3, 8, 1, 4}, rng, 5.0));
    for (Index i = 0; i < s.numel(); ++i) {
      CHECK(s.value()[i] > 0.0);
      CHECK(s.value()[i] < 1.0);
    }
  }
}

TEST_CASE("two-channel recalibration matches a scalar hand evaluation") {
  std::mt19937_64 rng(31);
  TemporalAggregation<double> tam(2, 3, 2, true, 3, 2, rng);
  tam.se_reduce->value = T64::from({1, 2}, {0.7, -0.4}).set_requires_grad(true);
  tam.se_expand->value = T64::from({2, 1}, {1.3, -2.0}).set_requires_grad(true);

  auto h = T64::from({1, 2, 1, 2}, {0.2, 0.6, -0.1, 0.5});
  double a0 = (0.2 + 0.6) / 2.0, a1 = (-0.1 + 0.5) / 2.0;
  double z = std::max(0.0, 0.7 * a0 - 0.4 * a1);
  auto gate = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };

  auto s = tam.recalibration(h);
  CHECK(s.at({0, 0, 0, 0}) == doctest::Approx(gate(1.3 * z)).epsilon(1e-12));
  CHECK(s.at({0, 1, 0, 0}) == doctest::Approx(gate(-2.0 * z)).epsilon(1e-12));
}

TEST_CASE("aggregation head emits a probability vector") {
  std::mt19937_64 rng(33);
  auto adj = chain_adjacency(3);
  for (bool recal : {true, false}) {
    TemporalAggregation<double> tam(4, 5, 2, recal, 3, 3, rng);
    auto p = tam.forward(T64::randn({2, 4, 6, 3}, rng), adj, false);
    CHECK(p.shape() == Shape{2, 5});
    for (Index b = 0; b < 2; ++b) {
      double sum = 0;
      for (Index k = 0; k < 5; ++k) {
        CHECK(p.at({b, k}) >= 0.0);
        sum += p.at({b, k});
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("classifier-only head is pooling plus a linear map") {
  std::mt19937_64 rng(35);
  auto adj = chain_adjacency(3);
  TemporalAggregation<double> tam(4, 3, 2, /*recalibrate=*/false, 3, 3, rng);
  CHECK_FALSE(tam.se_reduce.has_value());
  CHECK_FALSE(tam.gconv.has_value());

  auto f = T64::randn({2, 4, 6, 3}, rng);
  auto logits = tam.forward_logits(f, adj, false);
  auto pooled = mean_axes(f, {2, 3});
  for (Index b = 0; b < 2; ++b)
    for (Index k = 0; k < 3; ++k) {
      double want = 0;
      for (Index c = 0; c < 4; ++c) want += tam.classifier.value.at({k, c}) * pooled.at({b, c, 0, 0});
      CHECK(logits.at({b, k}) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("aggregation validates channel arithmetic") {
  std::mt19937_64 rng(37);
  CHECK_THROWS_AS(TemporalAggregation<double>(5, 3, 2, true, 3, 3, rng), std::invalid_argument);
  TemporalAggregation<double> tam(4, 3, 2, true, 3, 3, rng);
  auto adj = chain_adjacency(3);
  CHECK_THROWS_AS(tam.forward(T64::ones({1, 6, 2, 3}), adj, false), std::invalid_argument);
}

TEST_CASE("aggregation gradients agree with finite differences") {
  std::mt19937_64 rng(39);
  auto adj = chain_adjacency(3);
  TemporalAggregation<double> tam(4, 3, 2, true, 3, 3, rng);
  auto f = T64::randn({2, 4, 4, 3}, rng, 1.0, true);
  auto loss_fn = [&] {
    auto p = tam.forward(f, adj, true);
    return mean_all(p * p);
  };
  CHECK(finite_diff_check({f, tam.se_reduce->value, tam.se_expand->value, tam.classifier.value}, loss_fn) < 1e-4);
}
