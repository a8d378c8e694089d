#pragma once

// The full forecaster: temporal and spatial decomposition stacks feeding the
// attentive fusion network, with an additive skip from the decomposition
// forecasts.

#include <string>
#include <vector>

#include "tsdf/affn.hpp"
#include "tsdf/basis.hpp"
#include "tsdf/data.hpp"
#include "tsdf/sdn.hpp"
#include "tsdf/tdn.hpp"

namespace tsdf {

enum class BasisMode { Analytic, Pretrained };

struct ModelConfig {
  std::size_t w = 60;
  std::size_t h = 12;
  std::vector<BasisFamily> families = {BasisFamily::trig(4), BasisFamily::poly(3)};
  std::size_t blocks_per_family = 2;
  EncoderShape encoder;
  BasisMode basis_mode = BasisMode::Pretrained;
  bool finetune_basis = true;
  bool sdn = true;  // only active when the dataset has exogenous columns
  std::size_t sdn_blocks = 2;
  LiftShape lift;
  std::size_t width = 64;
  std::size_t steps = 3;
  std::size_t heads = 4;
  bool skip = true;
  /// Subtract each window's history mean before decomposition and add it back
  /// to the forecast.
  bool window_norm = false;

  void validate() const;
};

struct ModelOutput {
  Tensor forecast;  // [B,h], scaled units
  Tensor level;     // [B,1] window level (zeros unless window_norm)
  Tensor x0;        // [B,w] decomposition input
  TdnOutput tdn, sdn;
  SelectionResult hist_sel, fut_sel;
  AttentionOutput attention;
  Tensor head;  // [B,h] fusion-head contribution
  /// mean(residual^2) over the temporal (and spatial, when active) residuals.
  Tensor residual_penalty;
};

class TsdfNet {
 public:
  /// `banks` holds one pretrained model per family in pretrained mode and is
  /// ignored otherwise. The dataset must be fitted (vocabularies are read).
  TsdfNet(const ModelConfig& cfg, const SeriesDataset& ds, const std::vector<PretrainedBasisModel>& banks,
          std::uint64_t seed);
  TsdfNet(const TsdfNet&) = delete;
  TsdfNet& operator=(const TsdfNet&) = delete;

  ModelOutput forward(const Batch& batch, const ForwardContext& ctx, bool keep_attention = false) const;

  ParameterSet& params() { return ps_; }
  const ParameterSet& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }
  const ExogenousLayout& layout() const { return layout_; }
  bool sdn_active() const { return !sdn_blocks_.empty(); }
  const TdnStack& tdn() const { return tdn_; }

  /// Names of the selector inputs, grouped per source (embedding dims merge).
  const std::vector<FeatureGroup>& hist_features() const { return hist_groups_; }
  const std::vector<FeatureGroup>& fut_features() const { return fut_groups_; }
  const std::vector<PretrainedBasisModel>& banks() const { return banks_; }

 private:
  ModelConfig cfg_;
  ParameterSet ps_;
  ExogenousLayout layout_;
  std::vector<PretrainedBasisModel> banks_;
  TdnStack tdn_;
  ExogenousEncoder encoder_;
  std::vector<SdnBlock> sdn_blocks_;
  FeatureSelector hist_sel_, fut_sel_;
  Linear time_proj_;
  MultiHeadAttention mha_;
  LayerNorm fuse_norm_;
  OutputHead head_;
  std::vector<FeatureGroup> hist_groups_, fut_groups_;
};

/// Merges per-column importance into per-group importance.
std::vector<double> group_importance(const std::vector<double>& D, const std::vector<FeatureGroup>& groups);

}  // namespace tsdf
