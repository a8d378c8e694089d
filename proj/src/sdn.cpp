#include "tsdf/sdn.hpp"

#include <algorithm>
#include <cmath>

#include "tsdf/errors.hpp"

namespace tsdf {

std::size_t EmbeddingTable::default_dim(std::size_t vocab) {
  return std::max<std::size_t>(1, std::min<std::size_t>(8, (vocab + 1) / 2));
}

EmbeddingTable::EmbeddingTable(ParameterSet& ps, const std::string& name, std::size_t vocab, std::mt19937_64& rng)
    : vocab_(vocab), dim_(default_dim(vocab)) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v((vocab + 1) * dim_);
  for (double& x : v) x = n(rng);
  table_ = ps.add(name + ".table", Tensor::from({vocab + 1, dim_}, std::move(v)));
}

Tensor EmbeddingTable::operator()(std::span<const std::size_t> index, std::span<const double> present, std::size_t B,
                                  std::size_t T, std::size_t stride, std::size_t offset) const {
  std::vector<std::size_t> idx(B * T);
  std::vector<double> mask(B * T);
  for (std::size_t i = 0; i < B * T; ++i) {
    const std::size_t k = index[i * stride + offset];
    idx[i] = k <= vocab_ ? k : 0;
    mask[i] = present[i * stride + offset];
  }
  Tensor e = embedding(table_, idx, {B, T});
  return mul(e, Tensor::from({B, T, 1}, std::move(mask)));
}

ExogenousEncoder::ExogenousEncoder(ParameterSet& ps, const std::string& name, const SeriesDataset& ds,
                                   const ExogenousLayout& layout, std::mt19937_64& rng)
    : layout_(layout) {
  auto table_for = [&](std::size_t col) -> const EmbeddingTable& {
    auto it = tables_.find(col);
    if (it == tables_.end()) {
      it = tables_.emplace(col, EmbeddingTable(ps, name + ".embed." + ds.columns[col].schema.name,
                                               ds.vocab_size(col), rng)).first;
    }
    return it->second;
  };
  for (std::size_t c : layout_.hist_cont) hist_groups_.push_back({ds.columns[c].schema.name, hist_width_++, 1});
  for (std::size_t c : layout_.hist_cat) {
    const std::size_t d = table_for(c).dim();
    hist_groups_.push_back({ds.columns[c].schema.name, hist_width_, d});
    hist_width_ += d;
  }
  for (std::size_t c : layout_.fut_cont) fut_groups_.push_back({ds.columns[c].schema.name, fut_width_++, 1});
  for (std::size_t c : layout_.fut_cat) {
    const std::size_t d = table_for(c).dim();
    fut_groups_.push_back({ds.columns[c].schema.name, fut_width_, d});
    fut_width_ += d;
  }
}

ExogenousFrame ExogenousEncoder::encode(const Batch& batch) const {
  const std::size_t B = batch.x.dim(0), w = batch.x.dim(1), h = batch.y.dim(1);
  auto side = [&](const Tensor& cont, const CategoricalBlock& cat, const std::vector<std::size_t>& cols,
                  std::size_t T) {
    std::vector<Tensor> parts;
    if (cont.dim(2) > 0) parts.push_back(cont);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      parts.push_back(tables_.at(cols[c])(cat.index, cat.present, B, T, cat.cols, c));
    }
    if (parts.empty()) return Tensor::zeros({B, T, 1});
    return parts.size() == 1 ? parts[0] : concat_last_dim(parts);
  };
  ExogenousFrame f;
  f.Ep = side(batch.hist_cont, batch.hist_cat, layout_.hist_cat, w);
  f.Eq = side(batch.fut_cont, batch.fut_cat, layout_.fut_cat, h);
  return f;
}

ExogenousFrame encode_exogenous(const ExogenousEncoder& encoder, const Batch& batch) { return encoder.encode(batch); }

SdnBlock::SdnBlock(ParameterSet& ps, const std::string& name, std::size_t w, std::size_t h, std::size_t d_hist,
                   std::size_t d_fut, const LiftShape& lift, const EncoderShape& enc, std::mt19937_64& rng)
    : w_(w), h_(h), m_(lift.columns) {
  if (lift.columns < 1 || lift.hidden < 1) throw ConfigError("SDN lifting needs hidden and column widths >= 1");
  lift_p_ = Mlp(ps, name + ".lift_p", {std::max<std::size_t>(d_hist, 1), lift.hidden, lift.columns},
                Activation::Relu, rng);
  lift_q_ = Mlp(ps, name + ".lift_q", {std::max<std::size_t>(d_fut, 1), lift.hidden, lift.columns},
                Activation::Relu, rng);
  coef_ = TdnBlock(ps, name, w, lift.columns, enc, rng);
}

std::pair<Tensor, Tensor> SdnBlock::lift(const ExogenousFrame& frame, const ForwardContext& ctx) const {
  if (frame.Ep.ndim() != 3 || frame.Ep.dim(1) != w_ || frame.Eq.ndim() != 3 || frame.Eq.dim(1) != h_) {
    throw ShapeError("exogenous frame " + shape_str(frame.Ep.shape()) + "/" + shape_str(frame.Eq.shape()) +
                     " does not match w=" + std::to_string(w_) + ", h=" + std::to_string(h_));
  }
  return {lift_p_(frame.Ep, ctx), lift_q_(frame.Eq, ctx)};
}

BlockOutput SdnBlock::forward_lifted(const Tensor& xn, const Tensor& cp, const Tensor& cq,
                                     const ForwardContext& ctx) const {
  if (xn.dim(-1) != w_) {
    throw ShapeError("block input has length " + std::to_string(xn.dim(-1)) + ", block expects " + std::to_string(w_));
  }
  auto [p, q] = coef_.coefficients(xn, ctx);
  const std::size_t B = xn.dim(0);
  BlockOutput out;
  out.P = p;
  out.Q = q;
  out.W = reshape(matmul(cp, reshape(p, {B, m_, 1})), {B, w_});
  out.V = reshape(matmul(cq, reshape(q, {B, m_, 1})), {B, h_});
  return out;
}

BlockOutput SdnBlock::forward(const Tensor& xn, const ExogenousFrame& frame, const ForwardContext& ctx) const {
  auto [cp, cq] = lift(frame, ctx);
  return forward_lifted(xn, cp, cq, ctx);
}

TdnOutput sdn_forward(const std::vector<SdnBlock>& blocks, const Tensor& x0, const ExogenousFrame& frame,
                      const ForwardContext& ctx) {
  TdnOutput out;
  Tensor x = x0;
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    BlockOutput b = blocks[n].forward(x, frame, ctx);
    x = sub(x, b.W);
    out.V = n == 0 ? b.V : add(out.V, b.V);
    out.per_block.push_back(std::move(b));
  }
  out.residual = blocks.empty() ? Tensor() : x;
  return out;
}

}  // namespace tsdf
