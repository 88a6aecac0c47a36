#pragma once

#include "prgcn/ops.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

// Reusable layers over (B, C, T, N) feature maps: pointwise channel maps,
// graph convolution with a learnable adjacency mask, strided temporal
// convolution, batch normalization, and temporal max pooling.

namespace prgcn {

template <typename Scalar>
inline void expect_rank4(const Tensor<Scalar>& x, const char* op) {
  if (x.rank() != 4)
    throw std::invalid_argument(std::string(op) + ": expects (batch, channels, time, joints), got " +
                                shape_str(x.shape()));
}

// x: (B, C_in, T, N), w: (C_out, C_in) -> (B, C_out, T, N)
template <typename Scalar>
Tensor<Scalar> channel_map(const Tensor<Scalar>& x, const Tensor<Scalar>& w) {
  expect_rank4(x, "channel_map");
  Index B = x.size(0), C = x.size(1), T = x.size(2), N = x.size(3);
  if (w.rank() != 2 || w.size(1) != C)
    throw std::invalid_argument("channel_map: weight " + shape_str(w.shape()) + " does not match input channels " +
                                std::to_string(C));
  auto flat = reshape(permute(x, {0, 2, 3, 1}), {B * T * N, C});
  auto out = matmul(flat, transpose(w));
  return permute(reshape(out, {B, T, N, w.size(0)}), {0, 3, 1, 2});
}

// out[b,c,t,i] = sum_j a[i,j] * x[b,c,t,j]
template <typename Scalar>
Tensor<Scalar> vertex_map(const Tensor<Scalar>& x, const Tensor<Scalar>& a) {
  expect_rank4(x, "vertex_map");
  Index B = x.size(0), C = x.size(1), T = x.size(2), N = x.size(3);
  if (a.rank() != 2 || a.size(0) != N || a.size(1) != N)
    throw std::invalid_argument("vertex_map: adjacency " + shape_str(a.shape()) + " does not match joint count " +
                                std::to_string(N));
  auto out = matmul(reshape(x, {B * C * T, N}), transpose(a));
  return reshape(out, {B, C, T, N});
}

// Per-joint 1-D convolution along time. kernel: (C_out, C_in, K), symmetric
// zero padding (K-1)/2, so T_out = ceil(T / stride).
template <typename Scalar>
Tensor<Scalar> temporal_map(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, Index stride) {
  expect_rank4(x, "temporal_map");
  if (kernel.rank() != 3 || kernel.size(1) != x.size(1))
    throw std::invalid_argument("temporal_map: kernel " + shape_str(kernel.shape()) +
                                " does not match input channels " + std::to_string(x.size(1)));
  if (stride < 1) throw std::invalid_argument("temporal_map: stride must be >= 1");
  Index c_out = kernel.size(0), c_in = kernel.size(1), k = kernel.size(2);
  Index T = x.size(2);
  Index t_out = (T - 1) / stride + 1;
  auto xp = pad(x, 2, (k - 1) / 2, (k - 1) / 2);
  Tensor<Scalar> acc;
  for (Index tap = 0; tap < k; ++tap) {
    auto wk = reshape(slice(kernel, 2, tap, 1, 1), {c_out, c_in});
    auto xs = slice(xp, 2, tap, stride, t_out);
    auto term = channel_map(xs, wk);
    acc = acc.defined() ? acc + term : term;
  }
  return acc;
}

// x: (B, C, T, N), T divisible by window -> (B, C, T/window, N)
template <typename Scalar>
Tensor<Scalar> max_pool_time(const Tensor<Scalar>& x, Index window) {
  expect_rank4(x, "max_pool_time");
  if (window < 1) throw std::invalid_argument("max_pool_time: window must be >= 1");
  if (window == 1) return x;
  Index B = x.size(0), C = x.size(1), T = x.size(2), N = x.size(3);
  if (T % window != 0)
    throw std::invalid_argument("max_pool_time: time extent " + std::to_string(T) +
                                " not divisible by window " + std::to_string(window));
  auto grouped = reshape(x, {B, C, T / window, window, N});
  return max(grouped, 3);
}

template <typename Scalar>
struct BatchNorm {
  Parameter<Scalar> gamma, beta;
  Tensor<Scalar> running_mean, running_var;
  Scalar eps = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);
  Index channels = 0;

  explicit BatchNorm(Index c)
      : gamma(Tensor<Scalar>::ones({c})),
        beta(Tensor<Scalar>::zeros({c})),
        running_mean(Tensor<Scalar>::zeros({c})),
        running_var(Tensor<Scalar>::ones({c})),
        channels(c) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) {
    expect_rank4(x, "batch_norm");
    if (x.size(1) != channels)
      throw std::invalid_argument("batch_norm: input channels " + std::to_string(x.size(1)) + " != " +
                                  std::to_string(channels));
    Index C = channels;
    Tensor<Scalar> xhat;
    if (training) {
      auto mu = mean_axes(x, {0, 2, 3});
      auto xc = x - mu;
      auto var = mean_axes(xc * xc, {0, 2, 3});
      xhat = xc / sqrt(add(var, eps));
      Scalar count = static_cast<Scalar>(x.size(0) * x.size(2) * x.size(3));
      Scalar bessel = count > 1 ? count / (count - 1) : Scalar(1);
      auto& rm = running_mean.mutable_value();
      auto& rv = running_var.mutable_value();
      rm = (Scalar(1) - momentum) * rm + momentum * mu.value();
      rv = (Scalar(1) - momentum) * rv + momentum * (var.value() * bessel);
    } else {
      auto rm = reshape(running_mean, {1, C, 1, 1});
      auto rv = reshape(running_var, {1, C, 1, 1});
      xhat = (x - rm) / sqrt(add(rv, eps));
    }
    return xhat * reshape(gamma.value, {1, C, 1, 1}) + reshape(beta.value, {1, C, 1, 1});
  }
};

namespace init {

// Fan-in scaled normal init for weights feeding ReLU units.
template <typename Scalar>
Tensor<Scalar> he_normal(Shape shape, Index fan_in, std::mt19937_64& rng) {
  Scalar stddev = std::sqrt(Scalar(2) / static_cast<Scalar>(fan_in));
  return Tensor<Scalar>::randn(std::move(shape), rng, stddev);
}

}  // namespace init

// Spatial graph convolution: out = sum_k W_k vertex_map(x, A_k * M_k), then
// batch norm, skip connection, ReLU. Mask starts at all-ones so the fresh
// layer matches the mask-free form.
template <typename Scalar>
struct GraphConv {
  Parameter<Scalar> weight;  // (K, C_out, C_in)
  Parameter<Scalar> mask;    // (K, N, N)
  std::optional<Parameter<Scalar>> proj;
  BatchNorm<Scalar> bn;
  Index c_in, c_out, groups, joints;
  bool with_residual = true;

  GraphConv(Index c_in_, Index c_out_, Index groups_, Index joints_, std::mt19937_64& rng, bool with_residual_ = true)
      : weight(init::he_normal<Scalar>({groups_, c_out_, c_in_}, c_in_, rng)),
        mask(Tensor<Scalar>::ones({groups_, joints_, joints_})),
        bn(c_out_),
        c_in(c_in_),
        c_out(c_out_),
        groups(groups_),
        joints(joints_),
        with_residual(with_residual_) {
    if (with_residual && c_in != c_out)
      proj.emplace(init::he_normal<Scalar>({c_out_, c_in_}, c_in_, rng));
  }

  // Pre-normalization sum of the partition groups.
  Tensor<Scalar> aggregate(const Tensor<Scalar>& x, const Tensor<Scalar>& adj) const {
    if (adj.rank() != 3 || adj.size(0) != groups || adj.size(1) != joints || adj.size(2) != joints)
      throw std::invalid_argument("graph_conv: adjacency " + shape_str(adj.shape()) + " does not match (" +
                                  std::to_string(groups) + "," + std::to_string(joints) + "," +
                                  std::to_string(joints) + ")");
    Tensor<Scalar> acc;
    for (Index k = 0; k < groups; ++k) {
      auto a_k = reshape(slice(adj, 0, k, 1, 1), {joints, joints});
      auto m_k = reshape(slice(mask.value, 0, k, 1, 1), {joints, joints});
      auto w_k = reshape(slice(weight.value, 0, k, 1, 1), {c_out, c_in});
      auto term = channel_map(vertex_map(x, a_k * m_k), w_k);
      acc = acc.defined() ? acc + term : term;
    }
    return acc;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>& adj, bool training) {
    auto y = bn.forward(aggregate(x, adj), training);
    if (!with_residual) return relu(y);
    auto res = proj ? channel_map(x, proj->value) : x;
    return relu(y + res);
  }
};

// Temporal convolution with batch norm, skip connection, ReLU. The skip is a
// pointwise projection when channels change, otherwise a strided identity.
template <typename Scalar>
struct TemporalConv {
  Parameter<Scalar> kernel;  // (C_out, C_in, K)
  std::optional<Parameter<Scalar>> proj;
  BatchNorm<Scalar> bn;
  Index c_in, c_out, k_t, stride;
  bool with_residual = true;

  TemporalConv(Index c_in_, Index c_out_, Index k_t_, Index stride_, std::mt19937_64& rng, bool with_residual_ = true)
      : kernel(init::he_normal<Scalar>({c_out_, c_in_, k_t_}, c_in_ * k_t_, rng)),
        bn(c_out_),
        c_in(c_in_),
        c_out(c_out_),
        k_t(k_t_),
        stride(stride_),
        with_residual(with_residual_) {
    if (stride < 1 || stride > 3)
      throw std::invalid_argument("temporal_conv: unsupported stride " + std::to_string(stride));
    if (with_residual && c_in != c_out)
      proj.emplace(init::he_normal<Scalar>({c_out_, c_in_}, c_in_, rng));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) {
    auto y = bn.forward(temporal_map(x, kernel.value, stride), training);
    if (!with_residual) return relu(y);
    Index t_out = (x.size(2) - 1) / stride + 1;
    auto xs = stride == 1 ? x : slice(x, 2, 0, stride, t_out);
    auto res = proj ? channel_map(xs, proj->value) : xs;
    return relu(y + res);
  }
};

}  // namespace prgcn
