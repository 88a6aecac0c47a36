#pragma once

#include "prgcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

// Differentiable free functions over Tensor. Elementwise binaries follow
// standard trailing-dimension broadcasting; every op records its backward
// closure only when an operand requires a gradient.

namespace prgcn {

namespace detail {

inline void check_axis(const Shape& shape, Index axis, const char* op) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size()))
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(shape));
}

struct AxisDecomp {
  Index outer = 1, n = 1, inner = 1;
};

inline AxisDecomp axis_decomp(const Shape& shape, Index axis) {
  AxisDecomp d;
  for (Index i = 0; i < axis; ++i) d.outer *= shape[static_cast<std::size_t>(i)];
  d.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) d.inner *= shape[i];
  return d;
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    Index da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    Index db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db || db == 1)
      out[i] = da;
    else if (da == 1)
      out[i] = db;
    else
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible at trailing axis " +
                                  std::to_string(r - 1 - i));
  }
  return out;
}

// Effective strides of `from` aligned to rank of `to`, 0 on broadcast axes.
inline std::vector<Index> effective_strides(const Shape& from, const Shape& to) {
  std::size_t r = to.size();
  Shape padded(r, 1);
  std::copy(from.begin(), from.end(), padded.begin() + static_cast<std::ptrdiff_t>(r - from.size()));
  auto st = strides_of(padded);
  for (std::size_t i = 0; i < r; ++i)
    if (padded[i] == 1 && to[i] != 1) st[i] = 0;
  return st;
}

template <typename Scalar>
ArrayX<Scalar> broadcast_to(const ArrayX<Scalar>& v, const Shape& from, const Shape& to) {
  if (from == to) return v;
  auto eff = effective_strides(from, to);
  Index total = numel_of(to);
  ArrayX<Scalar> out(total);
  std::vector<Index> ctr(to.size(), 0);
  Index off = 0;
  for (Index i = 0;;) {
    out[i] = v[off];
    if (++i == total) break;
    for (std::size_t k = to.size(); k-- > 0;) {
      off += eff[k];
      if (++ctr[k] < to[k]) break;
      off -= eff[k] * to[k];
      ctr[k] = 0;
    }
  }
  return out;
}

// Sums `g` (shaped `gshape`) down onto `target` (broadcasting inverse).
template <typename Scalar>
ArrayX<Scalar> reduce_to_shape(const ArrayX<Scalar>& g, const Shape& gshape, const Shape& target) {
  if (gshape == target) return g;
  auto eff = effective_strides(target, gshape);
  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(numel_of(target));
  Index total = g.size();
  std::vector<Index> ctr(gshape.size(), 0);
  Index off = 0;
  for (Index i = 0;;) {
    out[off] += g[i];
    if (++i == total) break;
    for (std::size_t k = gshape.size(); k-- > 0;) {
      off += eff[k];
      if (++ctr[k] < gshape[k]) break;
      off -= eff[k] * gshape[k];
      ctr[k] = 0;
    }
  }
  return out;
}

template <typename Scalar>
ArrayX<Scalar> permute_values(const ArrayX<Scalar>& v, const Shape& shape, const std::vector<Index>& axes) {
  std::size_t r = shape.size();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = shape[static_cast<std::size_t>(axes[i])];
  auto in_strides = strides_of(shape);
  std::vector<Index> gather(r);
  for (std::size_t i = 0; i < r; ++i) gather[i] = in_strides[static_cast<std::size_t>(axes[i])];
  Index total = v.size();
  ArrayX<Scalar> out(total);
  std::vector<Index> ctr(r, 0);
  Index off = 0;
  for (Index i = 0;;) {
    out[i] = v[off];
    if (++i == total) break;
    for (std::size_t k = r; k-- > 0;) {
      off += gather[k];
      if (++ctr[k] < out_shape[k]) break;
      off -= gather[k] * out_shape[k];
      ctr[k] = 0;
    }
  }
  return out;
}

}  // namespace detail

// ---- elementwise binaries -------------------------------------------------

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Shape rs = detail::broadcast_shapes(a.shape(), b.shape(), "add");
  ArrayX<Scalar> v = detail::broadcast_to(a.value(), a.shape(), rs) +
                     detail::broadcast_to(b.value(), b.shape(), rs);
  auto an = a.node(), bn = b.node();
  return detail::make_result<Scalar>(rs, std::move(v), {a, b}, [an, bn, rs](const ArrayX<Scalar>& g) {
    if (an->requires_grad) an->accumulate_grad(detail::reduce_to_shape(g, rs, an->shape));
    if (bn->requires_grad) bn->accumulate_grad(detail::reduce_to_shape(g, rs, bn->shape));
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Shape rs = detail::broadcast_shapes(a.shape(), b.shape(), "sub");
  ArrayX<Scalar> v = detail::broadcast_to(a.value(), a.shape(), rs) -
                     detail::broadcast_to(b.value(), b.shape(), rs);
  auto an = a.node(), bn = b.node();
  return detail::make_result<Scalar>(rs, std::move(v), {a, b}, [an, bn, rs](const ArrayX<Scalar>& g) {
    if (an->requires_grad) an->accumulate_grad(detail::reduce_to_shape(g, rs, an->shape));
    if (bn->requires_grad) bn->accumulate_grad(detail::reduce_to_shape<Scalar>(-g, rs, bn->shape));
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Shape rs = detail::broadcast_shapes(a.shape(), b.shape(), "mul");
  ArrayX<Scalar> v = detail::broadcast_to(a.value(), a.shape(), rs) *
                     detail::broadcast_to(b.value(), b.shape(), rs);
  auto an = a.node(), bn = b.node();
  return detail::make_result<Scalar>(rs, std::move(v), {a, b}, [an, bn, rs](const ArrayX<Scalar>& g) {
    if (an->requires_grad) {
      ArrayX<Scalar> gb = g * detail::broadcast_to(bn->value, bn->shape, rs);
      an->accumulate_grad(detail::reduce_to_shape(gb, rs, an->shape));
    }
    if (bn->requires_grad) {
      ArrayX<Scalar> ga = g * detail::broadcast_to(an->value, an->shape, rs);
      bn->accumulate_grad(detail::reduce_to_shape(ga, rs, bn->shape));
    }
  });
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Shape rs = detail::broadcast_shapes(a.shape(), b.shape(), "div");
  ArrayX<Scalar> v = detail::broadcast_to(a.value(), a.shape(), rs) /
                     detail::broadcast_to(b.value(), b.shape(), rs);
  auto an = a.node(), bn = b.node();
  return detail::make_result<Scalar>(rs, std::move(v), {a, b}, [an, bn, rs](const ArrayX<Scalar>& g) {
    ArrayX<Scalar> B = detail::broadcast_to(bn->value, bn->shape, rs);
    if (an->requires_grad) an->accumulate_grad(detail::reduce_to_shape<Scalar>(g / B, rs, an->shape));
    if (bn->requires_grad) {
      ArrayX<Scalar> A = detail::broadcast_to(an->value, an->shape, rs);
      bn->accumulate_grad(detail::reduce_to_shape<Scalar>(-g * A / (B * B), rs, bn->shape));
    }
  });
}

// ---- scalar variants ------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, Scalar c) {
  ArrayX<Scalar> v = a.value() + c;
  auto an = a.node();
  return detail::make_result<Scalar>(a.shape(), std::move(v), {a},
                                     [an](const ArrayX<Scalar>& g) { an->accumulate_grad(g); });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, Scalar c) {
  ArrayX<Scalar> v = a.value() * c;
  auto an = a.node();
  return detail::make_result<Scalar>(a.shape(), std::move(v), {a},
                                     [an, c](const ArrayX<Scalar>& g) { an->accumulate_grad((g * c).eval()); });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, Scalar c) {
  return add(a, static_cast<Scalar>(-c));
}

template <typename Scalar>
Tensor<Scalar> sub(Scalar c, const Tensor<Scalar>& a) {
  return add(mul(a, Scalar(-1)), c);
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, Scalar c) {
  return mul(a, Scalar(1) / c);
}

// ---- unary ----------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  ArrayX<Scalar> v = x.value().max(Scalar(0));
  auto xn = x.node();
  return detail::make_result<Scalar>(x.shape(), std::move(v), {x}, [xn](const ArrayX<Scalar>& g) {
    ArrayX<Scalar> gx = g * (xn->value > Scalar(0)).template cast<Scalar>();
    xn->accumulate_grad(gx);
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  ArrayX<Scalar> y = (Scalar(1) / (Scalar(1) + (-x.value()).exp()));
  auto xn = x.node();
  ArrayX<Scalar> y_saved = y;
  return detail::make_result<Scalar>(x.shape(), std::move(y), {x},
                                     [xn, y_saved](const ArrayX<Scalar>& g) {
                                       ArrayX<Scalar> gx = g * y_saved * (Scalar(1) - y_saved);
                                       xn->accumulate_grad(gx);
                                     });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) {
  ArrayX<Scalar> y = x.value().exp();
  auto xn = x.node();
  ArrayX<Scalar> y_saved = y;
  return detail::make_result<Scalar>(x.shape(), std::move(y), {x},
                                     [xn, y_saved](const ArrayX<Scalar>& g) {
                                       xn->accumulate_grad((g * y_saved).eval());
                                     });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) {
  ArrayX<Scalar> y = x.value().log();
  auto xn = x.node();
  return detail::make_result<Scalar>(x.shape(), std::move(y), {x}, [xn](const ArrayX<Scalar>& g) {
    xn->accumulate_grad((g / xn->value).eval());
  });
}

template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& x) {
  ArrayX<Scalar> y = x.value().sqrt();
  auto xn = x.node();
  ArrayX<Scalar> y_saved = y;
  return detail::make_result<Scalar>(x.shape(), std::move(y), {x},
                                     [xn, y_saved](const ArrayX<Scalar>& g) {
                                       xn->accumulate_grad((g / (Scalar(2) * y_saved)).eval());
                                     });
}

template <typename Scalar>
Tensor<Scalar> clamp_min(const Tensor<Scalar>& x, Scalar lo) {
  ArrayX<Scalar> y = x.value().max(lo);
  auto xn = x.node();
  return detail::make_result<Scalar>(x.shape(), std::move(y), {x}, [xn, lo](const ArrayX<Scalar>& g) {
    ArrayX<Scalar> gx = g * (xn->value >= lo).template cast<Scalar>();
    xn->accumulate_grad(gx);
  });
}

// ---- matmul ---------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  Index m = a.size(0), k = a.size(1), k2 = b.size(0), n = b.size(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  using Map = Eigen::Map<const MatrixRM<Scalar>>;
  ArrayX<Scalar> v(m * n);
  Eigen::Map<MatrixRM<Scalar>>(v.data(), m, n).noalias() = Map(a.value().data(), m, k) * Map(b.value().data(), k, n);
  auto an = a.node(), bn = b.node();
  return detail::make_result<Scalar>({m, n}, std::move(v), {a, b},
                                     [an, bn, m, k, n](const ArrayX<Scalar>& g) {
                                       Map G(g.data(), m, n);
                                       if (an->requires_grad) {
                                         ArrayX<Scalar> ga(m * k);
                                         Eigen::Map<MatrixRM<Scalar>>(ga.data(), m, k).noalias() =
                                             G * Map(bn->value.data(), k, n).transpose();
                                         an->accumulate_grad(ga);
                                       }
                                       if (bn->requires_grad) {
                                         ArrayX<Scalar> gb(k * n);
                                         Eigen::Map<MatrixRM<Scalar>>(gb.data(), k, n).noalias() =
                                             Map(an->value.data(), m, k).transpose() * G;
                                         bn->accumulate_grad(gb);
                                       }
                                     });
}

// ---- softmax --------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  detail::check_axis(x.shape(), axis, "softmax");
  auto d = detail::axis_decomp(x.shape(), axis);
  if (d.n == 0) throw std::invalid_argument("softmax over empty axis");
  ArrayX<Scalar> y(x.numel());
  const auto& v = x.value();
  for (Index o = 0; o < d.outer; ++o)
    for (Index in = 0; in < d.inner; ++in) {
      Index base = o * d.n * d.inner + in;
      Scalar mx = v[base];
      for (Index i = 1; i < d.n; ++i) mx = std::max(mx, v[base + i * d.inner]);
      Scalar sum = 0;
      for (Index i = 0; i < d.n; ++i) {
        Scalar e = std::exp(v[base + i * d.inner] - mx);
        y[base + i * d.inner] = e;
        sum += e;
      }
      for (Index i = 0; i < d.n; ++i) y[base + i * d.inner] /= sum;
    }
  auto xn = x.node();
  ArrayX<Scalar> y_saved = y;
  return detail::make_result<Scalar>(x.shape(), std::move(y), {x},
                                     [xn, y_saved, d](const ArrayX<Scalar>& g) {
                                       ArrayX<Scalar> gx(g.size());
                                       for (Index o = 0; o < d.outer; ++o)
                                         for (Index in = 0; in < d.inner; ++in) {
                                           Index base = o * d.n * d.inner + in;
                                           Scalar dot = 0;
                                           for (Index i = 0; i < d.n; ++i)
                                             dot += g[base + i * d.inner] * y_saved[base + i * d.inner];
                                           for (Index i = 0; i < d.n; ++i) {
                                             Index p = base + i * d.inner;
                                             gx[p] = y_saved[p] * (g[p] - dot);
                                           }
                                         }
                                       xn->accumulate_grad(gx);
                                     });
}

// ---- reductions -----------------------------------------------------------

namespace detail {
inline Shape reduced_shape(const Shape& s, Index axis, bool keepdim) {
  Shape out = s;
  if (keepdim)
    out[static_cast<std::size_t>(axis)] = 1;
  else
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out.empty()) out = {1};
  return out;
}
}  // namespace detail

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x, Index axis, bool keepdim = false) {
  detail::check_axis(x.shape(), axis, "sum");
  auto d = detail::axis_decomp(x.shape(), axis);
  ArrayX<Scalar> v = ArrayX<Scalar>::Zero(d.outer * d.inner);
  const auto& xv = x.value();
  for (Index o = 0; o < d.outer; ++o)
    for (Index i = 0; i < d.n; ++i)
      for (Index in = 0; in < d.inner; ++in)
        v[o * d.inner + in] += xv[(o * d.n + i) * d.inner + in];
  auto xn = x.node();
  return detail::make_result<Scalar>(detail::reduced_shape(x.shape(), axis, keepdim), std::move(v), {x},
                                     [xn, d](const ArrayX<Scalar>& g) {
                                       ArrayX<Scalar> gx(d.outer * d.n * d.inner);
                                       for (Index o = 0; o < d.outer; ++o)
                                         for (Index i = 0; i < d.n; ++i)
                                           for (Index in = 0; in < d.inner; ++in)
                                             gx[(o * d.n + i) * d.inner + in] = g[o * d.inner + in];
                                       xn->accumulate_grad(gx);
                                     });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x, Index axis, bool keepdim = false) {
  detail::check_axis(x.shape(), axis, "mean");
  Scalar inv = Scalar(1) / static_cast<Scalar>(x.size(axis));
  return mul(sum(x, axis, keepdim), inv);
}

template <typename Scalar>
Tensor<Scalar> max(const Tensor<Scalar>& x, Index axis, bool keepdim = false) {
  detail::check_axis(x.shape(), axis, "max");
  auto d = detail::axis_decomp(x.shape(), axis);
  ArrayX<Scalar> v(d.outer * d.inner);
  std::vector<Index> arg(static_cast<std::size_t>(d.outer * d.inner));
  const auto& xv = x.value();
  for (Index o = 0; o < d.outer; ++o)
    for (Index in = 0; in < d.inner; ++in) {
      Index best = 0;
      Scalar bv = xv[o * d.n * d.inner + in];
      for (Index i = 1; i < d.n; ++i) {
        Scalar c = xv[(o * d.n + i) * d.inner + in];
        if (c > bv) {
          bv = c;
          best = i;
        }
      }
      v[o * d.inner + in] = bv;
      arg[static_cast<std::size_t>(o * d.inner + in)] = best;
    }
  auto xn = x.node();
  return detail::make_result<Scalar>(detail::reduced_shape(x.shape(), axis, keepdim), std::move(v), {x},
                                     [xn, d, arg](const ArrayX<Scalar>& g) {
                                       ArrayX<Scalar> gx = ArrayX<Scalar>::Zero(d.outer * d.n * d.inner);
                                       for (Index o = 0; o < d.outer; ++o)
                                         for (Index in = 0; in < d.inner; ++in) {
                                           Index lane = o * d.inner + in;
                                           gx[(o * d.n + arg[static_cast<std::size_t>(lane)]) * d.inner + in] = g[lane];
                                         }
                                       xn->accumulate_grad(gx);
                                     });
}

template <typename Scalar>
Tensor<Scalar> sum_all(const Tensor<Scalar>& x) {
  ArrayX<Scalar> v(1);
  v[0] = x.value().sum();
  auto xn = x.node();
  Index n = x.numel();
  return detail::make_result<Scalar>({1}, std::move(v), {x}, [xn, n](const ArrayX<Scalar>& g) {
    xn->accumulate_grad(ArrayX<Scalar>::Constant(n, g[0]).eval());
  });
}

template <typename Scalar>
Tensor<Scalar> mean_all(const Tensor<Scalar>& x) {
  return mul(sum_all(x), Scalar(1) / static_cast<Scalar>(x.numel()));
}

// Chained keepdim means over several axes (axes given in any order).
template <typename Scalar>
Tensor<Scalar> mean_axes(const Tensor<Scalar>& x, std::vector<Index> axes) {
  Tensor<Scalar> out = x;
  for (Index a : axes) out = mean(out, a, /*keepdim=*/true);
  return out;
}

// ---- shape ops ------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape new_shape) {
  Index known = 1;
  Index infer = -1;
  for (std::size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      if (infer >= 0) throw std::invalid_argument("reshape: at most one -1 extent");
      infer = static_cast<Index>(i);
    } else {
      known *= new_shape[i];
    }
  }
  if (infer >= 0) new_shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (numel_of(new_shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  auto xn = x.node();
  return detail::make_result<Scalar>(std::move(new_shape), ArrayX<Scalar>(x.value()), {x},
                                     [xn](const ArrayX<Scalar>& g) { xn->accumulate_grad(g); });
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, std::vector<Index> axes) {
  if (static_cast<Index>(axes.size()) != x.rank())
    throw std::invalid_argument("permute: axes rank mismatch for shape " + shape_str(x.shape()));
  std::vector<bool> used(axes.size(), false);
  for (Index a : axes) {
    if (a < 0 || a >= x.rank() || used[static_cast<std::size_t>(a)])
      throw std::invalid_argument("permute: axes must be a permutation");
    used[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = x.size(axes[i]);
  ArrayX<Scalar> v = detail::permute_values(x.value(), x.shape(), axes);
  std::vector<Index> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[static_cast<std::size_t>(axes[i])] = static_cast<Index>(i);
  auto xn = x.node();
  Shape oshape = out_shape;
  return detail::make_result<Scalar>(std::move(out_shape), std::move(v), {x},
                                     [xn, oshape, inv](const ArrayX<Scalar>& g) {
                                       xn->accumulate_grad(detail::permute_values(g, oshape, inv));
                                     });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose: expects rank-2, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  detail::check_axis(parts[0].shape(), axis, "concat");
  Shape out_shape = parts[0].shape();
  Index total_axis = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank())
      throw std::invalid_argument("concat: rank mismatch");
    for (Index i = 0; i < p.rank(); ++i)
      if (i != axis && p.size(i) != parts[0].size(i))
        throw std::invalid_argument("concat: extent mismatch at axis " + std::to_string(i) + ": " +
                                    shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    total_axis += p.size(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total_axis;
  auto dout = detail::axis_decomp(out_shape, axis);
  ArrayX<Scalar> v(numel_of(out_shape));
  std::vector<Index> part_n(parts.size());
  Index cursor = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    auto dp = detail::axis_decomp(parts[pi].shape(), axis);
    part_n[pi] = dp.n;
    const auto& pv = parts[pi].value();
    for (Index o = 0; o < dp.outer; ++o)
      for (Index i = 0; i < dp.n; ++i)
        for (Index in = 0; in < dp.inner; ++in)
          v[(o * dout.n + cursor + i) * dout.inner + in] = pv[(o * dp.n + i) * dp.inner + in];
    cursor += dp.n;
  }
  std::vector<std::shared_ptr<TensorNode<Scalar>>> pnodes;
  for (const auto& p : parts) pnodes.push_back(p.node());
  return detail::make_result<Scalar>(std::move(out_shape), std::move(v), parts,
                                     [pnodes, part_n, dout](const ArrayX<Scalar>& g) {
                                       Index cur = 0;
                                       for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
                                         Index n = part_n[pi];
                                         if (pnodes[pi]->requires_grad) {
                                           ArrayX<Scalar> gp(dout.outer * n * dout.inner);
                                           for (Index o = 0; o < dout.outer; ++o)
                                             for (Index i = 0; i < n; ++i)
                                               for (Index in = 0; in < dout.inner; ++in)
                                                 gp[(o * n + i) * dout.inner + in] =
                                                     g[(o * dout.n + cur + i) * dout.inner + in];
                                           pnodes[pi]->accumulate_grad(gp);
                                         }
                                         cur += n;
                                       }
                                     });
}

template <typename Scalar>
Tensor<Scalar> pad(const Tensor<Scalar>& x, Index axis, Index before, Index after) {
  detail::check_axis(x.shape(), axis, "pad");
  if (before < 0 || after < 0) throw std::invalid_argument("pad: negative padding");
  auto d = detail::axis_decomp(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] += before + after;
  Index n_out = d.n + before + after;
  ArrayX<Scalar> v = ArrayX<Scalar>::Zero(numel_of(out_shape));
  const auto& xv = x.value();
  for (Index o = 0; o < d.outer; ++o)
    for (Index i = 0; i < d.n; ++i)
      for (Index in = 0; in < d.inner; ++in)
        v[(o * n_out + before + i) * d.inner + in] = xv[(o * d.n + i) * d.inner + in];
  auto xn = x.node();
  return detail::make_result<Scalar>(std::move(out_shape), std::move(v), {x},
                                     [xn, d, before, n_out](const ArrayX<Scalar>& g) {
                                       ArrayX<Scalar> gx(d.outer * d.n * d.inner);
                                       for (Index o = 0; o < d.outer; ++o)
                                         for (Index i = 0; i < d.n; ++i)
                                           for (Index in = 0; in < d.inner; ++in)
                                             gx[(o * d.n + i) * d.inner + in] =
                                                 g[(o * n_out + before + i) * d.inner + in];
                                       xn->accumulate_grad(gx);
                                     });
}

// Strided gather along one axis: picks indices start, start+step, ...
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index start, Index step, Index count) {
  detail::check_axis(x.shape(), axis, "slice");
  auto d = detail::axis_decomp(x.shape(), axis);
  if (step < 1 || count < 1 || start < 0 || start + step * (count - 1) >= d.n)
    throw std::invalid_argument("slice: window [start=" + std::to_string(start) + ", step=" + std::to_string(step) +
                                ", count=" + std::to_string(count) + "] out of range for axis extent " +
                                std::to_string(d.n));
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = count;
  ArrayX<Scalar> v(d.outer * count * d.inner);
  const auto& xv = x.value();
  for (Index o = 0; o < d.outer; ++o)
    for (Index i = 0; i < count; ++i)
      for (Index in = 0; in < d.inner; ++in)
        v[(o * count + i) * d.inner + in] = xv[(o * d.n + start + i * step) * d.inner + in];
  auto xn = x.node();
  return detail::make_result<Scalar>(std::move(out_shape), std::move(v), {x},
                                     [xn, d, start, step, count](const ArrayX<Scalar>& g) {
                                       ArrayX<Scalar> gx = ArrayX<Scalar>::Zero(d.outer * d.n * d.inner);
                                       for (Index o = 0; o < d.outer; ++o)
                                         for (Index i = 0; i < count; ++i)
                                           for (Index in = 0; in < d.inner; ++in)
                                             gx[(o * d.n + start + i * step) * d.inner + in] +=
                                                 g[(o * count + i) * d.inner + in];
                                       xn->accumulate_grad(gx);
                                     });
}

// probs: (B, K); labels: one class index per row -> (B) picked entries.
template <typename Scalar>
Tensor<Scalar> take_per_row(const Tensor<Scalar>& probs, const std::vector<Index>& labels) {
  if (probs.rank() != 2)
    throw std::invalid_argument("take_per_row: expects rank-2 input, got " + shape_str(probs.shape()));
  Index B = probs.size(0), K = probs.size(1);
  if (static_cast<Index>(labels.size()) != B)
    throw std::invalid_argument("take_per_row: batch size mismatch");
  for (Index b = 0; b < B; ++b)
    if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= K)
      throw std::invalid_argument("take_per_row: label " + std::to_string(labels[static_cast<std::size_t>(b)]) +
                                  " out of range [0," + std::to_string(K) + ") at row " + std::to_string(b));
  ArrayX<Scalar> v(B);
  for (Index b = 0; b < B; ++b) v[b] = probs.value()[b * K + labels[static_cast<std::size_t>(b)]];
  auto pn = probs.node();
  return detail::make_result<Scalar>({B}, std::move(v), {probs},
                                     [pn, labels, B, K](const ArrayX<Scalar>& g) {
                                       ArrayX<Scalar> gp = ArrayX<Scalar>::Zero(B * K);
                                       for (Index b = 0; b < B; ++b)
                                         gp[b * K + labels[static_cast<std::size_t>(b)]] = g[b];
                                       pn->accumulate_grad(gp);
                                     });
}

template <typename Scalar>
Tensor<Scalar> unsqueeze(const Tensor<Scalar>& x, Index axis) {
  Shape s = x.shape();
  s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
  return reshape(x, std::move(s));
}

template <typename Scalar>
Tensor<Scalar> squeeze(const Tensor<Scalar>& x, Index axis) {
  if (x.size(axis) != 1)
    throw std::invalid_argument("squeeze: axis " + std::to_string(axis) + " has extent " +
                                std::to_string(x.size(axis)));
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  if (s.empty()) s = {1};
  return reshape(x, std::move(s));
}

// ---- operators ------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return div(a, b); }
template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, Scalar c) { return add(a, c); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, Scalar c) { return sub(a, c); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar c) { return mul(a, c); }
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, Scalar c) { return div(a, c); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a) { return mul(a, Scalar(-1)); }

}  // namespace prgcn
