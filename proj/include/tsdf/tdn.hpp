#pragma once

// Temporal decomposition: a cascade of residual blocks, each projecting the
// running residual onto basis coefficients for a backcast and a forecast.

#include <string>
#include <vector>

#include "tsdf/basis.hpp"
#include "tsdf/nn.hpp"

namespace tsdf {

/// One block's outputs for a batch: W [B,w], V [B,h], P and Q [B,m].
struct BlockOutput {
  Tensor W, V, P, Q;
};

struct TdnOutput {
  Tensor V;         // [B,h], sum of per-block forecasts
  Tensor residual;  // [B,w], X0 minus every backcast
  std::vector<BlockOutput> per_block;

  bool empty() const { return per_block.empty(); }
};

struct EncoderShape {
  std::size_t layers = 4;
  std::size_t width = 256;
};

class TdnBlock {
 public:
  TdnBlock() = default;
  TdnBlock(ParameterSet& ps, const std::string& name, std::size_t w, std::size_t count, const EncoderShape& enc,
           std::mt19937_64& rng);

  std::size_t window() const { return w_; }
  std::size_t count() const { return count_; }
  /// S = Ls(X), P = Lp(S), Q = Lq(S).
  std::pair<Tensor, Tensor> coefficients(const Tensor& x, const ForwardContext& ctx) const;
  const Linear& lp() const { return lp_; }
  const Linear& lq() const { return lq_; }

 private:
  std::size_t w_ = 0, count_ = 0;
  Mlp ls_;
  Linear lp_, lq_;
};

/// W = P Cp^T, V = Q Cq^T.
BlockOutput block_forward(const TdnBlock& block, const Tensor& xn, const BasisSet& basis, const ForwardContext& ctx);

/// Runs the cascade X_{n+1} = X_n - W_n. `bases[n]` feeds block n.
TdnOutput tdn_forward(const std::vector<TdnBlock>& blocks, const std::vector<BasisSet>& bases, const Tensor& x0,
                      const ForwardContext& ctx);

/// Where a family's basis matrix comes from: fixed analytic values or
/// (optionally fine-tuned) pretrained networks.
class BasisSource {
 public:
  BasisSource() = default;
  static BasisSource analytic(const TimeGrid& grid, const BasisFamily& family);
  static BasisSource networks(ParameterSet& ps, const std::string& name, const TimeGrid& grid,
                              const PretrainedBasisModel& bank, bool trainable);

  BasisSet evaluate() const;
  std::size_t count() const { return count_; }
  const std::string& label() const { return label_; }

 private:
  TimeGrid grid_;
  BasisSet fixed_;
  BasisNetworks nets_;
  bool learned_ = false;
  std::size_t count_ = 0;
  std::string label_;
};

/// Blocks stacked per family in declaration order.
class TdnStack {
 public:
  TdnStack() = default;
  TdnStack(ParameterSet& ps, const std::string& name, std::size_t w, std::vector<BasisSource> sources,
           std::size_t blocks_per_family, const EncoderShape& enc, std::mt19937_64& rng);

  TdnOutput forward(const Tensor& x0, const ForwardContext& ctx) const;
  const std::vector<TdnBlock>& blocks() const { return blocks_; }
  const std::vector<BasisSource>& sources() const { return sources_; }
  /// Family label for each block, e.g. "trig4".
  std::vector<std::string> block_labels() const;

 private:
  std::vector<BasisSource> sources_;
  std::vector<TdnBlock> blocks_;
  std::vector<std::size_t> family_of_;
};

}  // namespace tsdf
