#include "tsdf/affn.hpp"

#include <cmath>

#include "tsdf/errors.hpp"

namespace tsdf {

FeatureSelector::FeatureSelector(ParameterSet& ps, const std::string& name, std::size_t features, std::size_t width,
                                 std::size_t steps, std::mt19937_64& rng)
    : features_(features), width_(width) {
  if (steps < 1) throw ConfigError("feature selection needs at least one decision step, got " + std::to_string(steps));
  if (features < 1 || width < 1) throw ConfigError("feature selection needs features and width >= 1");
  for (std::size_t j = 0; j < steps; ++j) {
    const std::string p = name + ".step" + std::to_string(j);
    mask_nets_.emplace_back(ps, p + ".mask", j == 0 ? features : width, features, rng);
    carry_.emplace_back(ps, p + ".carry", width, width, rng);
  }
  shared_ = GluLayer(ps, name + ".shared", features, 2 * width, rng);
  norm_ = LayerNorm(ps, name + ".norm", 2 * width);
}

Tensor FeatureSelector::mask_logits(std::size_t j, const Tensor& a) const { return mask_nets_.at(j)(a); }

StepOutput FeatureSelector::step(std::size_t j, const Tensor& x_masked) const {
  if (x_masked.dim(-1) != features_) {
    throw ShapeError("selector expects " + std::to_string(features_) + " features, got " +
                     std::to_string(x_masked.dim(-1)));
  }
  Tensor s = norm_(shared_(x_masked));
  Tensor s1 = slice_last_dim(s, 0, width_);
  Tensor s2 = slice_last_dim(s, width_, width_);
  return {relu(s2), carry_.at(j)(s1)};
}

StepOutput selector_step(const FeatureSelector& sel, std::size_t j, const Tensor& x_masked) {
  return sel.step(j, x_masked);
}

SelectionResult feature_select(const FeatureSelector& sel, const Tensor& x) {
  if (sel.steps() < 1) throw ConfigError("feature selection needs at least one decision step");
  SelectionResult r;
  Tensor a = x;
  for (std::size_t j = 0; j < sel.steps(); ++j) {
    Tensor m = entmax15(sel.mask_logits(j, a));
    StepOutput s = sel.step(j, mul(m, x));
    r.out = j == 0 ? s.decision : add(r.out, s.decision);
    r.masks.push_back(m);
    a = s.next;
  }
  return r;
}

void ImportanceAccumulator::add(const std::vector<Tensor>& masks) {
  if (masks.empty()) return;
  const std::size_t F = masks[0].dim(-1);
  if (sum_.empty()) sum_.assign(F, 0.0);
  if (sum_.size() != F) throw ShapeError("mask width changed between batches");
  for (const auto& m : masks) {
    if (m.dim(-1) != F) throw ShapeError("mask width changed between steps");
    const auto d = m.data();
    for (std::size_t i = 0; i < d.size(); ++i) sum_[i % F] += d[i];
  }
  rows_ += masks[0].size() / F;
  steps_ = masks.size();
  ++batches_;
}

ImportanceReport ImportanceAccumulator::report() const {
  if (batches_ == 0 || rows_ == 0) throw UsageError("importance distribution needs at least one mask");
  ImportanceReport r;
  r.rows = rows_;
  r.steps = steps_;
  r.D = sum_;
  const double denom = static_cast<double>(rows_ * steps_);
  for (double& v : r.D) v /= denom;
  return r;
}

ImportanceReport importance_distribution(const std::vector<Tensor>& masks) {
  ImportanceAccumulator acc;
  acc.add(masks);
  return acc.report();
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& ps, const std::string& name, std::size_t width, std::size_t heads,
                                       std::mt19937_64& rng)
    : width_(width) {
  if (heads < 1 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const std::size_t dh = width / heads;
  for (std::size_t i = 0; i < heads; ++i) {
    const std::string p = name + ".head" + std::to_string(i);
    wq_.emplace_back(ps, p + ".wq", width, dh, rng, false);
    wk_.emplace_back(ps, p + ".wk", width, dh, rng, false);
    wv_.emplace_back(ps, p + ".wv", width, dh, rng, false);
  }
  wo_ = Linear(ps, name + ".wo", width, width, rng);
}

AttentionOutput MultiHeadAttention::operator()(const Tensor& q_src, const Tensor& kv_src, bool keep_weights) const {
  if (q_src.ndim() != 3 || kv_src.ndim() != 3 || q_src.dim(0) != kv_src.dim(0)) {
    throw ShapeError("attention expects [B,T,d] inputs with equal batch, got " + shape_str(q_src.shape()) + " and " +
                     shape_str(kv_src.shape()));
  }
  if (q_src.dim(2) != width_ || kv_src.dim(2) != width_) {
    throw ShapeError("attention width is " + std::to_string(width_) + ", inputs have " + std::to_string(q_src.dim(2)) +
                     " and " + std::to_string(kv_src.dim(2)));
  }
  const std::size_t B = q_src.dim(0), tq = q_src.dim(1), tk = kv_src.dim(1), H = heads();
  const double inv = 1.0 / std::sqrt(static_cast<double>(head_dim()));
  AttentionOutput out;
  out.heads = H;
  out.tq = tq;
  out.tk = tk;
  if (keep_weights) out.weights.assign(B * H * tq * tk, 0.0);
  std::vector<Tensor> heads_out;
  heads_out.reserve(H);
  for (std::size_t i = 0; i < H; ++i) {
    Tensor q = wq_[i](q_src), k = wk_[i](kv_src), v = wv_[i](kv_src);
    Tensor a = softmax_last_dim(scale(matmul(q, transpose(k)), inv));
    if (keep_weights) {
      const auto d = a.data();
      for (std::size_t b = 0; b < B; ++b) {
        std::copy(d.begin() + static_cast<std::ptrdiff_t>(b * tq * tk),
                  d.begin() + static_cast<std::ptrdiff_t>((b + 1) * tq * tk),
                  out.weights.begin() + static_cast<std::ptrdiff_t>((b * H + i) * tq * tk));
      }
    }
    heads_out.push_back(matmul(a, v));
  }
  out.out = wo_(H == 1 ? heads_out[0] : concat_last_dim(heads_out));
  return out;
}

AttentionOutput multihead_attention(const Tensor& q_src, const Tensor& kv_src, const MultiHeadAttention& params,
                                    bool keep_weights) {
  return params(q_src, kv_src, keep_weights);
}

OutputHead::OutputHead(ParameterSet& ps, const std::string& name, std::size_t width, std::mt19937_64& rng)
    : glu_(ps, name + ".glu", width, width, rng), fc_(ps, name + ".fc", width, 1, rng) {}

Tensor OutputHead::operator()(const Tensor& fused) const {
  Tensor y = fc_(glu_(fused));
  Shape s = y.shape();
  s.pop_back();
  return reshape(y, s);
}

Tensor output_head(const OutputHead& head, const Tensor& fused) { return head(fused); }

}  // namespace tsdf
