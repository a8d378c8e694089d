#pragma once

// Attentive feature fusion: entmax-masked iterative feature selection,
// multi-head attention from history onto future-known features, and the
// per-step output head.

#include <string>
#include <vector>

#include "tsdf/nn.hpp"

namespace tsdf {

struct StepOutput {
  Tensor decision;  // relu(s2), [.., d]
  Tensor next;      // f1(s1), input to the next mask net
};

struct SelectionResult {
  Tensor out;                // sum of decision outputs, [.., d]
  std::vector<Tensor> masks;  // M_j, [.., F] each
};

class FeatureSelector {
 public:
  FeatureSelector() = default;
  FeatureSelector(ParameterSet& ps, const std::string& name, std::size_t features, std::size_t width, std::size_t steps,
                  std::mt19937_64& rng);

  std::size_t features() const { return features_; }
  std::size_t width() const { return width_; }
  std::size_t steps() const { return mask_nets_.size(); }

  /// Mask logits for step j from the carried feature (the raw input at j = 0).
  Tensor mask_logits(std::size_t j, const Tensor& a) const;
  /// s = LN(GLU(shared(x_masked))), split into s1 | s2.
  StepOutput step(std::size_t j, const Tensor& x_masked) const;

 private:
  std::size_t features_ = 0, width_ = 0;
  std::vector<Linear> mask_nets_;  // h_j
  std::vector<Linear> carry_;      // f1_j
  GluLayer shared_;
  LayerNorm norm_;
};

StepOutput selector_step(const FeatureSelector& sel, std::size_t j, const Tensor& x_masked);

/// M_j = entmax15(h_j(a_{j-1})), a_0 = x; output is the sum of decision outputs.
SelectionResult feature_select(const FeatureSelector& sel, const Tensor& x);

struct ImportanceReport {
  std::vector<double> D;
  std::size_t rows = 0;  // B*T summed over batches
  std::size_t steps = 0;
};

/// Running average of mask rows across batches and decision steps.
class ImportanceAccumulator {
 public:
  void add(const std::vector<Tensor>& masks);
  ImportanceReport report() const;

 private:
  std::vector<double> sum_;
  std::size_t rows_ = 0, steps_ = 0, batches_ = 0;
};

/// D = (1 / (B T J)) sum_b sum_t sum_j M_j[b, t, :].
ImportanceReport importance_distribution(const std::vector<Tensor>& masks);

struct AttentionOutput {
  Tensor out;                   // [B, Tq, d]
  std::vector<double> weights;  // [B, H, Tq, Tk] row-major, values only
  std::size_t heads = 0, tq = 0, tk = 0;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& ps, const std::string& name, std::size_t width, std::size_t heads,
                     std::mt19937_64& rng);
  std::size_t width() const { return width_; }
  std::size_t heads() const { return wq_.size(); }
  std::size_t head_dim() const { return width_ / wq_.size(); }
  const Linear& wq(std::size_t i) const { return wq_[i]; }
  const Linear& wk(std::size_t i) const { return wk_[i]; }
  const Linear& wv(std::size_t i) const { return wv_[i]; }
  const Linear& wo() const { return wo_; }

  AttentionOutput operator()(const Tensor& q_src, const Tensor& kv_src, bool keep_weights = false) const;

 private:
  std::size_t width_ = 0;
  std::vector<Linear> wq_, wk_, wv_;
  Linear wo_;
};

/// head_i = softmax(Q_i K_i^T / sqrt(d_attn)) V_i; out = concat(heads) W^O.
AttentionOutput multihead_attention(const Tensor& q_src, const Tensor& kv_src, const MultiHeadAttention& params,
                                    bool keep_weights = false);

/// GLU then a scalar projection, shared across time steps: [B,h,d] -> [B,h].
class OutputHead {
 public:
  OutputHead() = default;
  OutputHead(ParameterSet& ps, const std::string& name, std::size_t width, std::mt19937_64& rng);
  Tensor operator()(const Tensor& fused) const;

 private:
  GluLayer glu_;
  Linear fc_;
};

Tensor output_head(const OutputHead& head, const Tensor& fused);

}  // namespace tsdf
