#pragma once

#include "prgcn/config.hpp"
#include "prgcn/layers.hpp"

// The three architecture blocks: pose refinement (additive per-joint
// coordinate offsets), gradual fusion of position and motion flows, and the
// recalibrating temporal aggregation head.

namespace prgcn {

// m[:, :, t, :] = p[:, :, t, :] - p[:, :, t-1, :], zero at t = 0.
template <typename Scalar>
Tensor<Scalar> compute_motion(const Tensor<Scalar>& p) {
  expect_rank4(p, "compute_motion");
  Index T = p.size(2);
  if (T == 1) return mul(p, Scalar(0));
  auto diff = slice(p, 2, 1, 1, T - 1) - slice(p, 2, 0, 1, T - 1);
  return pad(diff, 2, 1, 0);
}

// Pools the position features down to the motion branch rate, then joins on
// the channel axis. pos: (B,C1,T,N), mot: (B,C2,T',N) with T' dividing T.
template <typename Scalar>
Tensor<Scalar> scale_concat(const Tensor<Scalar>& pos, const Tensor<Scalar>& mot) {
  expect_rank4(pos, "scale_concat");
  expect_rank4(mot, "scale_concat");
  Index T = pos.size(2), Tm = mot.size(2);
  if (T % Tm != 0)
    throw std::invalid_argument("scale_concat: position extent " + std::to_string(T) +
                                " not divisible by motion extent " + std::to_string(Tm));
  return concat<Scalar>({max_pool_time(pos, T / Tm), mot}, 1);
}

// Predicts additive coordinate offsets. The offset head starts at zero, so a
// fresh block is the identity map; for xy_conf input the confidence channel
// always passes through untouched.
template <typename Scalar>
struct PoseRefine {
  Parameter<Scalar> lift;  // (H, C_in)
  GraphConv<Scalar> gconv1, gconv2;
  TemporalConv<Scalar> tconv;
  Parameter<Scalar> head;  // (D_off, H), zero init
  Index c_in, d_off, hidden;

  PoseRefine(Index c_in_, Index d_off_, Index hidden_, Index groups, Index joints, std::mt19937_64& rng)
      : lift(init::he_normal<Scalar>({hidden_, c_in_}, c_in_, rng)),
        gconv1(hidden_, hidden_, groups, joints, rng),
        gconv2(hidden_, hidden_, groups, joints, rng),
        tconv(hidden_, hidden_, 3, 1, rng),
        head(Tensor<Scalar>::zeros({d_off_, hidden_})),
        c_in(c_in_),
        d_off(d_off_),
        hidden(hidden_) {
    if (d_off_ > c_in_) throw std::invalid_argument("pose_refine: more offset channels than input channels");
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>& adj, bool training) {
    if (x.size(1) != c_in)
      throw std::invalid_argument("pose_refine: input channels " + std::to_string(x.size(1)) + " != " +
                                  std::to_string(c_in));
    auto h = channel_map(x, lift.value);
    h = gconv1.forward(h, adj, training);
    h = gconv2.forward(h, adj, training);
    h = tconv.forward(h, training);
    auto offsets = channel_map(h, head.value);
    auto refined = slice(x, 1, 0, 1, d_off) + offsets;
    if (d_off == x.size(1)) return refined;
    auto rest = slice(x, 1, d_off, 1, x.size(1) - d_off);
    return concat<Scalar>({refined, rest}, 1);
  }
};

// Two-rate fusion trunk. Parallel modes run a full-rate position flow and a
// strided motion flow joined at three scale_concat sites; sequential modes
// stack the same layer budget in a single flow. Output: (B, 4*width, T/6, N).
template <typename Scalar>
struct GradualFusion {
  FusionMode mode;
  Index width, joints;

  // parallel: position flow at full rate
  std::optional<GraphConv<Scalar>> pos1, pos2, pos3;
  std::optional<GraphConv<Scalar>> mot;
  std::optional<TemporalConv<Scalar>> tconv1, tconv2;

  // sequential: one flow, strides inline
  std::optional<GraphConv<Scalar>> seq_g1, seq_g2, seq_g3;
  std::optional<TemporalConv<Scalar>> seq_t1, seq_t2;

  GradualFusion(Index c_in, Index width_, Index groups, Index joints_, FusionMode mode_, std::mt19937_64& rng)
      : mode(mode_), width(width_), joints(joints_) {
    Index w = width;
    if (is_parallel(mode)) {
      pos1.emplace(c_in, w, groups, joints_, rng);
      pos2.emplace(w, w, groups, joints_, rng);
      pos3.emplace(w, w, groups, joints_, rng);
      mot.emplace(c_in, w, groups, joints_, rng);
      tconv1.emplace(2 * w, 2 * w, 3, 2, rng);
      tconv2.emplace(3 * w, 3 * w, 3, 3, rng);
    } else {
      Index c0 = mode == FusionMode::sequential_pm ? 2 * c_in : c_in;
      seq_g1.emplace(c0, w, groups, joints_, rng);
      seq_t1.emplace(w, 2 * w, 3, 2, rng);
      seq_g2.emplace(2 * w, 2 * w, groups, joints_, rng);
      seq_t2.emplace(2 * w, 3 * w, 3, 3, rng);
      seq_g3.emplace(3 * w, 4 * w, groups, joints_, rng);
    }
  }

  Index out_channels() const { return 4 * width; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>& adj, bool training) {
    expect_rank4(x, "gradual_fusion");
    if (x.size(2) % 6 != 0)
      throw std::invalid_argument("gradual_fusion: time extent " + std::to_string(x.size(2)) +
                                  " not divisible by 6");
    switch (mode) {
      case FusionMode::parallel_pm:
      case FusionMode::parallel_pp: {
        auto m_in = mode == FusionMode::parallel_pm ? compute_motion(x) : x;
        auto p1 = pos1->forward(x, adj, training);
        auto p2 = pos2->forward(p1, adj, training);
        auto p3 = pos3->forward(p2, adj, training);
        auto m0 = mot->forward(m_in, adj, training);
        auto f1 = scale_concat(p1, m0);
        auto m1 = tconv1->forward(f1, training);
        auto f2 = scale_concat(p2, m1);
        auto m2 = tconv2->forward(f2, training);
        return scale_concat(p3, m2);
      }
      case FusionMode::sequential_p:
      case FusionMode::sequential_pm: {
        auto in = mode == FusionMode::sequential_pm ? concat<Scalar>({x, compute_motion(x)}, 1) : x;
        auto h = seq_g1->forward(in, adj, training);
        h = seq_t1->forward(h, training);
        h = seq_g2->forward(h, adj, training);
        h = seq_t2->forward(h, training);
        return seq_g3->forward(h, adj, training);
      }
    }
    throw std::logic_error("gradual_fusion: unhandled fusion mode");
  }
};

// Classification head. Recalibration path: average over time, gate channels
// with sigmoid(expand(relu(reduce(avg over joints)))), one graph conv, then
// average over joints and a pointwise classifier. With recalibration off only
// the pooling, classifier, and softmax remain.
template <typename Scalar>
struct TemporalAggregation {
  bool recalibrate;
  std::optional<Parameter<Scalar>> se_reduce;  // (C/r, C)
  std::optional<Parameter<Scalar>> se_expand;  // (C, C/r)
  std::optional<GraphConv<Scalar>> gconv;
  Parameter<Scalar> classifier;  // (K, C)
  Index channels, classes, reduction;

  TemporalAggregation(Index channels_, Index classes_, Index reduction_, bool recalibrate_, Index groups,
                      Index joints, std::mt19937_64& rng)
      : recalibrate(recalibrate_),
        classifier(init::he_normal<Scalar>({classes_, channels_}, channels_, rng)),
        channels(channels_),
        classes(classes_),
        reduction(reduction_) {
    if (recalibrate) {
      if (channels_ % reduction_ != 0)
        throw std::invalid_argument("temporal_aggregation: channels " + std::to_string(channels_) +
                                    " not divisible by reduction " + std::to_string(reduction_));
      se_reduce.emplace(init::he_normal<Scalar>({channels_ / reduction_, channels_}, channels_, rng));
      se_expand.emplace(init::he_normal<Scalar>({channels_, channels_ / reduction_}, channels_ / reduction_, rng));
      gconv.emplace(channels_, channels_, groups, joints, rng);
    }
  }

  // Channel gate in (0,1), shape (B, C, 1, 1). Requires the recalibration path.
  Tensor<Scalar> recalibration(const Tensor<Scalar>& h) const {
    auto s = mean(h, 3, /*keepdim=*/true);  // (B, C, 1, 1)
    return sigmoid(channel_map(relu(channel_map(s, se_reduce->value)), se_expand->value));
  }

  Tensor<Scalar> forward_logits(const Tensor<Scalar>& f, const Tensor<Scalar>& adj, bool training) {
    expect_rank4(f, "temporal_aggregation");
    if (f.size(1) != channels)
      throw std::invalid_argument("temporal_aggregation: input channels " + std::to_string(f.size(1)) + " != " +
                                  std::to_string(channels));
    auto h = mean(f, 2, /*keepdim=*/true);  // (B, C, 1, N)
    if (recalibrate) {
      h = h * recalibration(h);
      h = gconv->forward(h, adj, training);
    }
    auto pooled = mean(h, 3, /*keepdim=*/true);  // (B, C, 1, 1)
    auto scores = channel_map(pooled, classifier.value);
    return reshape(scores, {f.size(0), classes});
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& f, const Tensor<Scalar>& adj, bool training) {
    return softmax(forward_logits(f, adj, training), 1);
  }
};

}  // namespace prgcn
