#include "tsdf/model.hpp"

#include "tsdf/errors.hpp"

namespace tsdf {

void ModelConfig::validate() const {
  if (w < 1 || h < 1) throw ConfigError("model needs w >= 1 and h >= 1");
  if (families.empty()) throw ConfigError("model needs at least one basis family");
  for (const auto& f : families) f.validate();
  if (blocks_per_family < 1) throw ConfigError("blocks_per_family must be >= 1");
  if (steps < 1) throw ConfigError("decision steps must be >= 1");
  if (heads < 1 || width < 1 || width % heads != 0) throw ConfigError("width must be a positive multiple of heads");
  if (sdn && sdn_blocks < 1) throw ConfigError("sdn_blocks must be >= 1 when SDN is enabled");
}

TsdfNet::TsdfNet(const ModelConfig& cfg, const SeriesDataset& ds, const std::vector<PretrainedBasisModel>& banks,
                 std::uint64_t seed)
    : cfg_(cfg), layout_(ExogenousLayout::from(ds)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const TimeGrid grid = make_time_grid(cfg_.w, cfg_.h);

  std::vector<BasisSource> sources;
  if (cfg_.basis_mode == BasisMode::Pretrained) {
    if (banks.size() != cfg_.families.size()) {
      throw ConfigError("pretrained basis mode needs one bank per family (" + std::to_string(cfg_.families.size()) +
                        "), got " + std::to_string(banks.size()));
    }
    banks_ = banks;
    for (std::size_t f = 0; f < banks_.size(); ++f) {
      if (banks_[f].family().label() != cfg_.families[f].label()) {
        throw ConfigError("basis bank " + std::to_string(f) + " is " + banks_[f].family().label() + ", config expects " +
                          cfg_.families[f].label());
      }
      sources.push_back(BasisSource::networks(ps_, "basis" + std::to_string(f), grid, banks_[f], cfg_.finetune_basis));
    }
  } else {
    for (const auto& f : cfg_.families) sources.push_back(BasisSource::analytic(grid, f));
  }
  tdn_ = TdnStack(ps_, "tdn", cfg_.w, std::move(sources), cfg_.blocks_per_family, cfg_.encoder, rng);

  const bool has_exog = !layout_.empty();
  if (has_exog) encoder_ = ExogenousEncoder(ps_, "exog", ds, layout_, rng);
  if (cfg_.sdn && has_exog) {
    for (std::size_t n = 0; n < cfg_.sdn_blocks; ++n) {
      sdn_blocks_.emplace_back(ps_, "sdn.block" + std::to_string(n), cfg_.w, cfg_.h, encoder_.hist_width(),
                               encoder_.fut_width(), cfg_.lift, cfg_.encoder, rng);
    }
  }

  // Selector inputs: decomposition components first, then encoded exogenous.
  const auto labels = tdn_.block_labels();
  std::size_t fh = 0, ff = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const std::string p = "tdn.block" + std::to_string(n) + "." + labels[n];
    hist_groups_.push_back({p + ".backcast", fh++, 1});
    fut_groups_.push_back({p + ".forecast", ff++, 1});
  }
  hist_groups_.push_back({"tdn.residual", fh++, 1});
  for (std::size_t n = 0; n < sdn_blocks_.size(); ++n) {
    const std::string p = "sdn.block" + std::to_string(n);
    hist_groups_.push_back({p + ".backcast", fh++, 1});
    fut_groups_.push_back({p + ".forecast", ff++, 1});
  }
  if (!sdn_blocks_.empty()) hist_groups_.push_back({"sdn.residual", fh++, 1});
  if (has_exog) {
    for (auto g : encoder_.hist_groups()) {
      g.offset += fh;
      hist_groups_.push_back(g);
    }
    for (auto g : encoder_.fut_groups()) {
      g.offset += ff;
      fut_groups_.push_back(g);
    }
    fh += encoder_.hist_width();
    ff += encoder_.fut_width();
  }

  hist_sel_ = FeatureSelector(ps_, "affn.hist", fh, cfg_.width, cfg_.steps, rng);
  fut_sel_ = FeatureSelector(ps_, "affn.fut", ff, cfg_.width, cfg_.steps, rng);
  time_proj_ = Linear(ps_, "affn.time_proj", cfg_.w, cfg_.h, rng);
  mha_ = MultiHeadAttention(ps_, "affn.mha", cfg_.width, cfg_.heads, rng);
  fuse_norm_ = LayerNorm(ps_, "affn.fuse_norm", cfg_.width);
  head_ = OutputHead(ps_, "affn.head", cfg_.width, rng);
}

namespace {

Tensor as_feature(const Tensor& t) { return reshape(t, {t.dim(0), t.dim(1), 1}); }

}  // namespace

ModelOutput TsdfNet::forward(const Batch& batch, const ForwardContext& ctx, bool keep_attention) const {
  const std::size_t B = batch.x.dim(0);
  if (batch.x.dim(1) != cfg_.w || batch.y.dim(1) != cfg_.h) {
    throw ShapeError("batch windows are " + std::to_string(batch.x.dim(1)) + "/" + std::to_string(batch.y.dim(1)) +
                     ", model expects w=" + std::to_string(cfg_.w) + ", h=" + std::to_string(cfg_.h));
  }
  ModelOutput out;
  if (cfg_.window_norm) {
    std::vector<double> lv(B);
    const auto x = batch.x.data();
    for (std::size_t b = 0; b < B; ++b) {
      double s = 0.0;
      for (std::size_t t = 0; t < cfg_.w; ++t) s += x[b * cfg_.w + t];
      lv[b] = s / static_cast<double>(cfg_.w);
    }
    out.level = Tensor::from({B, 1}, std::move(lv));
    out.x0 = sub(batch.x, out.level);
  } else {
    out.level = Tensor::zeros({B, 1});
    out.x0 = batch.x;
  }

  out.tdn = tdn_.forward(out.x0, ctx);
  ExogenousFrame frame;
  if (!layout_.empty()) frame = encoder_.encode(batch);
  if (!sdn_blocks_.empty()) out.sdn = sdn_forward(sdn_blocks_, out.x0, frame, ctx);

  std::vector<Tensor> hist, fut;
  for (const auto& b : out.tdn.per_block) {
    hist.push_back(as_feature(b.W));
    fut.push_back(as_feature(b.V));
  }
  hist.push_back(as_feature(out.tdn.residual));
  for (const auto& b : out.sdn.per_block) {
    hist.push_back(as_feature(b.W));
    fut.push_back(as_feature(b.V));
  }
  if (!out.sdn.empty()) hist.push_back(as_feature(out.sdn.residual));
  if (encoder_.hist_width() > 0) hist.push_back(frame.Ep);
  if (encoder_.fut_width() > 0) fut.push_back(frame.Eq);

  out.hist_sel = feature_select(hist_sel_, concat_last_dim(hist));
  out.fut_sel = feature_select(fut_sel_, concat_last_dim(fut));

  // [B,w,d] -> [B,d,w] -> [B,d,h] -> [B,h,d]
  Tensor q = transpose(time_proj_(transpose(out.hist_sel.out)));
  out.attention = mha_(q, out.fut_sel.out, keep_attention);
  Tensor fused = fuse_norm_(add(q, ctx.drop(out.attention.out)));
  out.head = head_(fused);

  Tensor f = out.head;
  if (cfg_.skip) {
    f = add(f, out.tdn.V);
    if (!out.sdn.empty()) f = add(f, out.sdn.V);
  }
  out.forecast = add(f, out.level);

  out.residual_penalty = mean(square(out.tdn.residual));
  if (!out.sdn.empty()) out.residual_penalty = add(out.residual_penalty, mean(square(out.sdn.residual)));
  return out;
}

std::vector<double> group_importance(const std::vector<double>& D, const std::vector<FeatureGroup>& groups) {
  std::vector<double> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.width; ++i) s += D.at(g.offset + i);
    out.push_back(s);
  }
  return out;
}

}  // namespace tsdf
