#pragma once

#include "prgcn/blocks.hpp"
#include "prgcn/graph.hpp"

#include <functional>

// Full network: pose refinement -> gradual fusion -> temporal aggregation,
// with person streams sharing weights and fused by elementwise max over class
// scores. Also the analytic parameter / multiply-accumulate accounting used
// for budget checks.

namespace prgcn {

template <typename Scalar>
struct ParamRegistry {
  std::vector<Parameter<Scalar>*> params;
  std::vector<std::pair<std::string, Tensor<Scalar>*>> buffers;

  void add(Parameter<Scalar>& p, std::string name) {
    p.name = std::move(name);
    params.push_back(&p);
  }
  void add_buffer(std::string name, Tensor<Scalar>& t) { buffers.emplace_back(std::move(name), &t); }

  long long total_params() const {
    long long n = 0;
    for (auto* p : params) n += p->numel();
    return n;
  }
};

namespace detail {

template <typename Scalar>
void collect(BatchNorm<Scalar>& bn, const std::string& prefix, ParamRegistry<Scalar>& r) {
  r.add(bn.gamma, prefix + ".gamma");
  r.add(bn.beta, prefix + ".beta");
  r.add_buffer(prefix + ".running_mean", bn.running_mean);
  r.add_buffer(prefix + ".running_var", bn.running_var);
}

template <typename Scalar>
void collect(GraphConv<Scalar>& g, const std::string& prefix, ParamRegistry<Scalar>& r) {
  r.add(g.weight, prefix + ".weight");
  r.add(g.mask, prefix + ".mask");
  if (g.proj) r.add(*g.proj, prefix + ".proj");
  collect(g.bn, prefix + ".bn", r);
}

template <typename Scalar>
void collect(TemporalConv<Scalar>& t, const std::string& prefix, ParamRegistry<Scalar>& r) {
  r.add(t.kernel, prefix + ".kernel");
  if (t.proj) r.add(*t.proj, prefix + ".proj");
  collect(t.bn, prefix + ".bn", r);
}

}  // namespace detail

template <typename Scalar>
class PrGcnModel {
 public:
  explicit PrGcnModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    skeleton_ = resolve_topology(cfg_.topology);
    auto adj = normalized_adjacency(skeleton_);
    adjacency_ = adjacency_tensor<Scalar>(adj);
    Index n = skeleton_.num_joints;
    Index k = PartitionedAdjacency::num_groups;
    std::mt19937_64 rng(cfg_.init_seed);
    if (cfg_.enable_prm)
      prm_.emplace(cfg_.channels(), cfg_.offset_channels(), cfg_.prm_hidden, k, n, rng);
    gfm_.emplace(cfg_.channels(), cfg_.gfm_width, k, n, cfg_.fusion_mode, rng);
    tam_.emplace(gfm_->out_channels(), cfg_.num_classes, cfg_.tam_reduction, cfg_.enable_tam, k, n, rng);
    build_registry();
  }

  const ModelConfig& config() const { return cfg_; }
  const Skeleton& skeleton() const { return skeleton_; }
  const Tensor<Scalar>& adjacency() const { return adjacency_; }
  ParamRegistry<Scalar>& registry() { return registry_; }
  const std::vector<Parameter<Scalar>*>& parameters() const { return registry_.params; }

  // batch: (B, M, C, T, N) -> class probabilities (B, num_classes)
  Tensor<Scalar> forward(const Tensor<Scalar>& batch, bool training) {
    auto logits = person_logits(batch, training);  // (B, M, K)
    Index B = logits.size(0), M = logits.size(1), K = logits.size(2);
    auto fused = M == 1 ? reshape(logits, {B, K}) : reshape(max(logits, 1), {B, K});
    return softmax(fused, 1);
  }

  // Refined poses with the same shape as the input batch; any clip length is
  // accepted. Identity when the refinement block is disabled or fresh.
  Tensor<Scalar> refine(const Tensor<Scalar>& batch, bool training = false) {
    auto x = merge_persons(batch, /*require_frames=*/false);
    if (!prm_) return batch;
    auto refined = prm_->forward(x, adjacency_, training);
    return reshape(refined, batch.shape());
  }

  void zero_grads() { prgcn::zero_grads(registry_.params); }

 private:
  Tensor<Scalar> person_logits(const Tensor<Scalar>& batch, bool training) {
    auto x = merge_persons(batch);
    if (prm_) x = prm_->forward(x, adjacency_, training);
    auto f = gfm_->forward(x, adjacency_, training);
    auto logits = tam_->forward_logits(f, adjacency_, training);
    return reshape(logits, {batch.size(0), batch.size(1), cfg_.num_classes});
  }

  Tensor<Scalar> merge_persons(const Tensor<Scalar>& batch, bool require_frames = true) {
    if (batch.rank() != 5)
      throw std::invalid_argument("model: expects (batch, persons, channels, time, joints), got " +
                                  shape_str(batch.shape()));
    if (batch.size(2) != cfg_.channels() || (require_frames && batch.size(3) != cfg_.frames) ||
        batch.size(4) != skeleton_.num_joints)
      throw std::invalid_argument("model: batch " + shape_str(batch.shape()) + " does not match config (C=" +
                                  std::to_string(cfg_.channels()) + ", T=" + std::to_string(cfg_.frames) +
                                  ", N=" + std::to_string(skeleton_.num_joints) + ")");
    return reshape(batch, {batch.size(0) * batch.size(1), batch.size(2), batch.size(3), batch.size(4)});
  }

  void build_registry() {
    if (prm_) {
      registry_.add(prm_->lift, "prm.lift");
      detail::collect(prm_->gconv1, "prm.gconv1", registry_);
      detail::collect(prm_->gconv2, "prm.gconv2", registry_);
      detail::collect(prm_->tconv, "prm.tconv", registry_);
      registry_.add(prm_->head, "prm.head");
    }
    auto add_opt_g = [&](std::optional<GraphConv<Scalar>>& g, const char* name) {
      if (g) detail::collect(*g, std::string("gfm.") + name, registry_);
    };
    auto add_opt_t = [&](std::optional<TemporalConv<Scalar>>& t, const char* name) {
      if (t) detail::collect(*t, std::string("gfm.") + name, registry_);
    };
    add_opt_g(gfm_->pos1, "pos1");
    add_opt_g(gfm_->pos2, "pos2");
    add_opt_g(gfm_->pos3, "pos3");
    add_opt_g(gfm_->mot, "mot");
    add_opt_t(gfm_->tconv1, "tconv1");
    add_opt_t(gfm_->tconv2, "tconv2");
    add_opt_g(gfm_->seq_g1, "seq_g1");
    add_opt_t(gfm_->seq_t1, "seq_t1");
    add_opt_g(gfm_->seq_g2, "seq_g2");
    add_opt_t(gfm_->seq_t2, "seq_t2");
    add_opt_g(gfm_->seq_g3, "seq_g3");
    if (tam_->se_reduce) registry_.add(*tam_->se_reduce, "tam.se_reduce");
    if (tam_->se_expand) registry_.add(*tam_->se_expand, "tam.se_expand");
    if (tam_->gconv) detail::collect(*tam_->gconv, "tam.gconv", registry_);
    registry_.add(tam_->classifier, "head.classifier");
  }

  ModelConfig cfg_;
  Skeleton skeleton_;
  Tensor<Scalar> adjacency_;
  std::optional<PoseRefine<Scalar>> prm_;
  std::optional<GradualFusion<Scalar>> gfm_;
  std::optional<TemporalAggregation<Scalar>> tam_;
  ParamRegistry<Scalar> registry_;
};

// ---- accounting -------------------------------------------------------------

// Multiply-accumulate counts cover convolutions and adjacency products only;
// normalization, activations, pooling, and elementwise work are excluded.
// Counts are per person stream. flops = 2 * macs.
struct BlockCost {
  long long params = 0;
  long long macs = 0;
  BlockCost& operator+=(const BlockCost& o) {
    params += o.params;
    macs += o.macs;
    return *this;
  }
};

struct ModelCost {
  BlockCost prm, gfm, tam, head;
  BlockCost total() const {
    BlockCost t;
    t += prm;
    t += gfm;
    t += tam;
    t += head;
    return t;
  }
};

namespace cost {

inline BlockCost pointwise(Index c_in, Index c_out, Index t, Index n) {
  return {c_in * c_out, c_in * c_out * t * n};
}

inline BlockCost batch_norm(Index c) { return {2 * c, 0}; }

inline BlockCost graph_conv(Index k, Index c_in, Index c_out, Index t, Index n) {
  BlockCost c;
  c.params = k * c_out * c_in + k * n * n;              // weights + mask
  c.macs = k * (c_in * t * n * n + c_in * c_out * t * n);  // adjacency product + weights
  c += batch_norm(c_out);
  if (c_in != c_out) c += pointwise(c_in, c_out, t, n);
  return c;
}

inline BlockCost temporal_conv(Index c_in, Index c_out, Index k_t, Index stride, Index t, Index n) {
  Index t_out = (t - 1) / stride + 1;
  BlockCost c;
  c.params = c_out * c_in * k_t;
  c.macs = static_cast<long long>(c_out) * c_in * k_t * t_out * n;
  c += batch_norm(c_out);
  if (c_in != c_out) c += pointwise(c_in, c_out, t_out, n);
  return c;
}

}  // namespace cost

inline ModelCost count_model(const ModelConfig& cfg, Index joints) {
  cfg.validate();
  Index k = PartitionedAdjacency::num_groups;
  Index n = joints, t = cfg.frames, w = cfg.gfm_width, c = cfg.channels();
  ModelCost mc;
  if (cfg.enable_prm) {
    Index h = cfg.prm_hidden;
    mc.prm += cost::pointwise(c, h, t, n);
    mc.prm += cost::graph_conv(k, h, h, t, n);
    mc.prm += cost::graph_conv(k, h, h, t, n);
    mc.prm += cost::temporal_conv(h, h, 3, 1, t, n);
    mc.prm += cost::pointwise(h, cfg.offset_channels(), t, n);
  }
  if (is_parallel(cfg.fusion_mode)) {
    mc.gfm += cost::graph_conv(k, c, w, t, n);      // pos1
    mc.gfm += cost::graph_conv(k, w, w, t, n);      // pos2
    mc.gfm += cost::graph_conv(k, w, w, t, n);      // pos3
    mc.gfm += cost::graph_conv(k, c, w, t, n);      // mot
    mc.gfm += cost::temporal_conv(2 * w, 2 * w, 3, 2, t, n);
    mc.gfm += cost::temporal_conv(3 * w, 3 * w, 3, 3, t / 2, n);
  } else {
    Index c0 = cfg.fusion_mode == FusionMode::sequential_pm ? 2 * c : c;
    mc.gfm += cost::graph_conv(k, c0, w, t, n);
    mc.gfm += cost::temporal_conv(w, 2 * w, 3, 2, t, n);
    mc.gfm += cost::graph_conv(k, 2 * w, 2 * w, t / 2, n);
    mc.gfm += cost::temporal_conv(2 * w, 3 * w, 3, 3, t / 2, n);
    mc.gfm += cost::graph_conv(k, 3 * w, 4 * w, t / 6, n);
  }
  Index fused = cfg.fused_channels();
  if (cfg.enable_tam) {
    Index r = cfg.tam_reduction;
    mc.tam += cost::pointwise(fused, fused / r, 1, 1);  // se_reduce on the pooled vector
    mc.tam += cost::pointwise(fused / r, fused, 1, 1);  // se_expand
    mc.tam += cost::graph_conv(k, fused, fused, 1, n);
  }
  mc.head += cost::pointwise(fused, cfg.num_classes, 1, 1);
  return mc;
}

inline ModelCost count_model(const ModelConfig& cfg) {
  return count_model(cfg, resolve_topology(cfg.topology).num_joints);
}

}  // namespace prgcn
