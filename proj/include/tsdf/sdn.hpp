#pragma once

// Spatial decomposition: same coefficient machinery as the temporal blocks,
// but the basis matrices are learned liftings of exogenous features.

#include <map>
#include <string>
#include <vector>

#include "tsdf/data.hpp"
#include "tsdf/tdn.hpp"

namespace tsdf {

/// Encoded exogenous inputs. Ep [B,w,d_hist], Eq [B,h,d_fut]. A side with no
/// columns carries a single all-zero column so its lifting stays well formed.
struct ExogenousFrame {
  Tensor Ep, Eq;
};

/// Learned vectors for one discrete column. Row 0 is the unknown label.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(ParameterSet& ps, const std::string& name, std::size_t vocab, std::mt19937_64& rng);
  static std::size_t default_dim(std::size_t vocab);

  /// Looks up [B,T] indices; rows where `present` is 0 come out exactly zero.
  Tensor operator()(std::span<const std::size_t> index, std::span<const double> present, std::size_t B,
                    std::size_t T, std::size_t stride, std::size_t offset) const;
  std::size_t dim() const { return dim_; }
  std::size_t vocab() const { return vocab_; }

 private:
  std::size_t vocab_ = 0, dim_ = 0;
  Tensor table_;
};

/// A named run of consecutive feature columns (one per source column).
struct FeatureGroup {
  std::string name;
  std::size_t offset = 0, width = 0;
};

class ExogenousEncoder {
 public:
  ExogenousEncoder() = default;
  ExogenousEncoder(ParameterSet& ps, const std::string& name, const SeriesDataset& ds, const ExogenousLayout& layout,
                   std::mt19937_64& rng);

  ExogenousFrame encode(const Batch& batch) const;
  /// Widths of the encoded blocks excluding the zero placeholder column.
  std::size_t hist_width() const { return hist_width_; }
  std::size_t fut_width() const { return fut_width_; }
  const std::vector<FeatureGroup>& hist_groups() const { return hist_groups_; }
  const std::vector<FeatureGroup>& fut_groups() const { return fut_groups_; }

 private:
  ExogenousLayout layout_;
  std::map<std::size_t, EmbeddingTable> tables_;  // by dataset column
  std::size_t hist_width_ = 0, fut_width_ = 0;
  std::vector<FeatureGroup> hist_groups_, fut_groups_;
};

/// Convenience for callers holding raw batches.
ExogenousFrame encode_exogenous(const ExogenousEncoder& encoder, const Batch& batch);

struct LiftShape {
  std::size_t hidden = 32;
  std::size_t columns = 32;  // basis width m
};

class SdnBlock {
 public:
  SdnBlock() = default;
  SdnBlock(ParameterSet& ps, const std::string& name, std::size_t w, std::size_t h, std::size_t d_hist,
           std::size_t d_fut, const LiftShape& lift, const EncoderShape& enc, std::mt19937_64& rng);

  /// Lifted bases: Cp = Ln_p(Ep) [B,w,m], Cq = Ln_q(Eq) [B,h,m].
  std::pair<Tensor, Tensor> lift(const ExogenousFrame& frame, const ForwardContext& ctx) const;
  BlockOutput forward(const Tensor& xn, const ExogenousFrame& frame, const ForwardContext& ctx) const;
  BlockOutput forward_lifted(const Tensor& xn, const Tensor& cp, const Tensor& cq, const ForwardContext& ctx) const;
  std::size_t window() const { return w_; }
  std::size_t horizon() const { return h_; }
  std::size_t columns() const { return m_; }

 private:
  std::size_t w_ = 0, h_ = 0, m_ = 0;
  Mlp lift_p_, lift_q_;
  TdnBlock coef_;
};

/// Residual cascade over SDN blocks. An empty block list means the network is
/// disabled and yields an empty output.
TdnOutput sdn_forward(const std::vector<SdnBlock>& blocks, const Tensor& x0, const ExogenousFrame& frame,
                      const ForwardContext& ctx);

}  // namespace tsdf
