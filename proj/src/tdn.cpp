#include "tsdf/tdn.hpp"

#include "tsdf/errors.hpp"

namespace tsdf {

TdnBlock::TdnBlock(ParameterSet& ps, const std::string& name, std::size_t w, std::size_t count,
                   const EncoderShape& enc, std::mt19937_64& rng)
    : w_(w), count_(count) {
  if (enc.layers < 1 || enc.width < 1) throw ConfigError("block encoder needs at least one layer of width >= 1");
  std::vector<std::size_t> widths{w};
  for (std::size_t i = 0; i < enc.layers; ++i) widths.push_back(enc.width);
  ls_ = Mlp(ps, name + ".ls", widths, Activation::Relu, rng);
  lp_ = Linear(ps, name + ".lp", enc.width, count, rng);
  lq_ = Linear(ps, name + ".lq", enc.width, count, rng);
}

std::pair<Tensor, Tensor> TdnBlock::coefficients(const Tensor& x, const ForwardContext& ctx) const {
  Tensor s = ls_.hidden(x, ctx);
  return {lp_(s), lq_(s)};
}

BlockOutput block_forward(const TdnBlock& block, const Tensor& xn, const BasisSet& basis, const ForwardContext& ctx) {
  if (xn.dim(-1) != block.window()) {
    throw ShapeError("block input has length " + std::to_string(xn.dim(-1)) + ", block expects " +
                     std::to_string(block.window()));
  }
  if (basis.Cp.dim(0) != block.window() || basis.Cp.dim(1) != block.count() || basis.Cq.dim(1) != block.count()) {
    throw ShapeError("basis " + shape_str(basis.Cp.shape()) + "/" + shape_str(basis.Cq.shape()) +
                     " does not fit block with w=" + std::to_string(block.window()) +
                     " and " + std::to_string(block.count()) + " coefficients");
  }
  auto [p, q] = block.coefficients(xn, ctx);
  BlockOutput out;
  out.P = p;
  out.Q = q;
  out.W = matmul(p, transpose(basis.Cp));
  out.V = matmul(q, transpose(basis.Cq));
  return out;
}

TdnOutput tdn_forward(const std::vector<TdnBlock>& blocks, const std::vector<BasisSet>& bases, const Tensor& x0,
                      const ForwardContext& ctx) {
  if (blocks.empty()) throw ConfigError("decomposition needs at least one block");
  if (bases.size() != blocks.size()) throw ShapeError("one basis set per block is required");
  TdnOutput out;
  Tensor x = x0;
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    BlockOutput b = block_forward(blocks[n], x, bases[n], ctx);
    x = sub(x, b.W);
    out.V = n == 0 ? b.V : add(out.V, b.V);
    out.per_block.push_back(std::move(b));
  }
  out.residual = x;
  return out;
}

BasisSource BasisSource::analytic(const TimeGrid& grid, const BasisFamily& family) {
  BasisSource s;
  s.grid_ = grid;
  s.fixed_ = analytic_basis(grid, family);
  s.count_ = family.count();
  s.label_ = family.label();
  return s;
}

BasisSource BasisSource::networks(ParameterSet& ps, const std::string& name, const TimeGrid& grid,
                                  const PretrainedBasisModel& bank, bool trainable) {
  BasisSource s;
  s.grid_ = grid;
  s.nets_ = BasisNetworks(ps, name, bank, trainable);
  s.learned_ = true;
  s.count_ = bank.count();
  s.label_ = bank.family().label();
  if (!trainable) {
    // Frozen networks give a constant matrix; evaluate once.
    NoGradGuard ng;
    s.fixed_.C = s.nets_.evaluate(grid);
    auto [cp, cq] = split_basis(s.fixed_.C, grid);
    s.fixed_.Cp = cp;
    s.fixed_.Cq = cq;
    s.learned_ = false;
  }
  return s;
}

BasisSet BasisSource::evaluate() const {
  if (!learned_) return fixed_;
  BasisSet set;
  set.C = nets_.evaluate(grid_);
  auto [cp, cq] = split_basis(set.C, grid_);
  set.Cp = cp;
  set.Cq = cq;
  return set;
}

TdnStack::TdnStack(ParameterSet& ps, const std::string& name, std::size_t w, std::vector<BasisSource> sources,
                   std::size_t blocks_per_family, const EncoderShape& enc, std::mt19937_64& rng)
    : sources_(std::move(sources)) {
  if (sources_.empty() || blocks_per_family == 0) throw ConfigError("decomposition needs at least one block");
  for (std::size_t f = 0; f < sources_.size(); ++f) {
    for (std::size_t b = 0; b < blocks_per_family; ++b) {
      blocks_.emplace_back(ps, name + ".block" + std::to_string(blocks_.size()), w, sources_[f].count(), enc, rng);
      family_of_.push_back(f);
    }
  }
}

TdnOutput TdnStack::forward(const Tensor& x0, const ForwardContext& ctx) const {
  std::vector<BasisSet> per_family;
  per_family.reserve(sources_.size());
  for (const auto& s : sources_) per_family.push_back(s.evaluate());
  std::vector<BasisSet> bases;
  bases.reserve(blocks_.size());
  for (std::size_t f : family_of_) bases.push_back(per_family[f]);
  return tdn_forward(blocks_, bases, x0, ctx);
}

std::vector<std::string> TdnStack::block_labels() const {
  std::vector<std::string> out;
  for (std::size_t f : family_of_) out.push_back(sources_[f].label());
  return out;
}

}  // namespace tsdf
