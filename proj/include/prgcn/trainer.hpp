#pragma once

#include "prgcn/data.hpp"
#include "prgcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

// Training loop (cross entropy, SGD with momentum, step decay after a warm
// period) and top-1 / top-5 evaluation. Single threaded and fully seeded:
// identical seeds give identical metrics logs.

namespace prgcn {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// base_lr * decay^floor(epoch / period), with no decay during the warm period.
inline double lr_at(Index epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  Index exponent = epoch < cfg.warm_period ? 0 : epoch / cfg.decay_period;
  return cfg.base_lr * std::pow(cfg.decay_factor, static_cast<double>(exponent));
}

// probs: (B, K) rows summing to 1 -> mean of -log p[label], p clamped at 1e-12.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& probs, const std::vector<Index>& labels) {
  return -mean_all(log(clamp_min(take_per_row(probs, labels), Scalar(1e-12))));
}

struct EpochStats {
  Index epoch = 0;
  double lr = 0, loss = 0, top1 = 0, top5 = 0;
};

struct Metrics {
  double loss = 0, top1 = 0, top5 = 0;
  std::vector<EpochStats> history;
};

// True when the label ranks among the k best scores, ties resolved toward the
// smaller class index.
template <typename Scalar>
bool topk_hit(const Scalar* row, Index num_classes, Index label, Index k) {
  Index rank = 0;
  for (Index c = 0; c < num_classes; ++c)
    if (row[c] > row[label] || (row[c] == row[label] && c < label)) ++rank;
  return rank < k;
}

namespace detail {

// Samples -> (B, persons, C, T, N) float batch. Train mode draws the window
// and augmentation from rng in sample order.
template <typename Scalar>
Tensor<Scalar> assemble_batch(const std::vector<const SkeletonSequence*>& samples, const ModelConfig& cfg,
                              Index joints, bool train_mode, const AugmentParams* augment, std::mt19937_64& rng) {
  Index b = static_cast<Index>(samples.size());
  Index m = cfg.persons, c = cfg.channels(), t = cfg.frames, n = joints;
  ArrayX<Scalar> v = ArrayX<Scalar>::Zero(b * m * c * t * n);
  for (Index bi = 0; bi < b; ++bi) {
    const SkeletonSequence& seq = *samples[static_cast<std::size_t>(bi)];
    if (seq.joints != joints)
      throw std::invalid_argument("batch: clip '" + seq.id + "' has " + std::to_string(seq.joints) +
                                  " joints, model expects " + std::to_string(joints));
    auto fitted = fit_length(seq, t, train_mode, rng);
    if (augment) augment_coords(fitted, seq.persons, seq.channels, t, seq.joints, seq.semantics, *augment, rng);
    Index copy_m = std::min(m, seq.persons);
    for (Index mi = 0; mi < copy_m; ++mi)
      for (Index ci = 0; ci < c; ++ci)
        for (Index ti = 0; ti < t; ++ti) {
          const double* src = &fitted[static_cast<std::size_t>(((mi * c + ci) * t + ti) * n)];
          Scalar* dst = &v[(((bi * m + mi) * c + ci) * t + ti) * n];
          for (Index ni = 0; ni < n; ++ni) dst[ni] = static_cast<Scalar>(src[ni]);
        }
  }
  return Tensor<Scalar>({b, m, c, t, n}, std::move(v));
}

inline void check_labels(const std::vector<SkeletonSequence>& dataset, Index num_classes) {
  for (const auto& seq : dataset)
    if (seq.label < 0 || seq.label >= num_classes)
      throw std::invalid_argument("dataset: clip '" + seq.id + "' has label " + std::to_string(seq.label) +
                                  ", expected [0," + std::to_string(num_classes) + ")");
}

}  // namespace detail

// Shuffled mini-batch epochs with augmentation; accuracy is accumulated from
// the training-pass outputs. Aborts with NumericalError on a non-finite loss.
template <typename Scalar>
Metrics train_model(PrGcnModel<Scalar>& model, const std::vector<SkeletonSequence>& dataset,
                    const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  const ModelConfig& mc = model.config();
  detail::check_labels(dataset, mc.num_classes);
  Index joints = model.skeleton().num_joints;
  Index k_top = std::min<Index>(5, mc.num_classes);

  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order(dataset.size());
  std::iota(order.begin(), order.end(), Index(0));

  Metrics metrics;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    Index hits1 = 0, hitsk = 0, seen = 0;
    Index total = static_cast<Index>(order.size());
    for (Index start = 0; start < total; start += cfg.batch_size) {
      Index bsz = std::min<Index>(cfg.batch_size, total - start);
      std::vector<const SkeletonSequence*> samples;
      std::vector<Index> labels;
      for (Index i = 0; i < bsz; ++i) {
        const auto& seq = dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
        samples.push_back(&seq);
        labels.push_back(seq.label);
      }
      auto x = detail::assemble_batch<Scalar>(samples, mc, joints, /*train_mode=*/true, &cfg.augment, rng);
      model.zero_grads();
      auto probs = model.forward(x, /*training=*/true);
      auto loss = cross_entropy(probs, labels);
      double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / cfg.batch_size) + ", lr " + std::to_string(lr));
      backward(loss);
      sgd_step(model.registry().params, static_cast<Scalar>(lr), static_cast<Scalar>(cfg.momentum));

      const auto& p = probs.value();
      for (Index i = 0; i < bsz; ++i) {
        const Scalar* row = p.data() + i * mc.num_classes;
        if (topk_hit(row, mc.num_classes, labels[static_cast<std::size_t>(i)], Index(1))) ++hits1;
        if (topk_hit(row, mc.num_classes, labels[static_cast<std::size_t>(i)], k_top)) ++hitsk;
      }
      loss_sum += lv * static_cast<double>(bsz);
      seen += bsz;
    }
    EpochStats es{epoch, lr, loss_sum / static_cast<double>(seen), static_cast<double>(hits1) / static_cast<double>(seen),
                  static_cast<double>(hitsk) / static_cast<double>(seen)};
    metrics.history.push_back(es);
    metrics.loss = es.loss;
    metrics.top1 = es.top1;
    metrics.top5 = es.top5;
    if (log)
      (*log) << es.epoch << ' ' << std::setprecision(12) << es.lr << ' ' << es.loss << ' ' << es.top1 << ' '
             << es.top5 << '\n';
  }
  return metrics;
}

// Inference-mode pass in dataset order: center windows, no augmentation,
// batch statistics frozen.
template <typename Scalar>
Metrics evaluate_model(PrGcnModel<Scalar>& model, const std::vector<SkeletonSequence>& dataset,
                       Index batch_size = 16) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  const ModelConfig& mc = model.config();
  detail::check_labels(dataset, mc.num_classes);
  Index joints = model.skeleton().num_joints;
  Index k_top = std::min<Index>(5, mc.num_classes);
  std::mt19937_64 rng(0);  // eval path never draws from it

  Metrics metrics;
  double loss_sum = 0;
  Index hits1 = 0, hitsk = 0, seen = 0;
  Index total = static_cast<Index>(dataset.size());
  for (Index start = 0; start < total; start += batch_size) {
    Index bsz = std::min<Index>(batch_size, total - start);
    std::vector<const SkeletonSequence*> samples;
    std::vector<Index> labels;
    for (Index i = 0; i < bsz; ++i) {
      samples.push_back(&dataset[static_cast<std::size_t>(start + i)]);
      labels.push_back(dataset[static_cast<std::size_t>(start + i)].label);
    }
    auto x = detail::assemble_batch<Scalar>(samples, mc, joints, /*train_mode=*/false, nullptr, rng);
    auto probs = model.forward(x, /*training=*/false);
    auto loss = cross_entropy(probs, labels);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(bsz);
    const auto& p = probs.value();
    for (Index i = 0; i < bsz; ++i) {
      const Scalar* row = p.data() + i * mc.num_classes;
      if (topk_hit(row, mc.num_classes, labels[static_cast<std::size_t>(i)], Index(1))) ++hits1;
      if (topk_hit(row, mc.num_classes, labels[static_cast<std::size_t>(i)], k_top)) ++hitsk;
    }
    seen += bsz;
  }
  metrics.loss = loss_sum / static_cast<double>(seen);
  metrics.top1 = static_cast<double>(hits1) / static_cast<double>(seen);
  metrics.top5 = static_cast<double>(hitsk) / static_cast<double>(seen);
  return metrics;
}

}  // namespace prgcn
