#include "tsdf/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsdf/errors.hpp"

namespace tsdf {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (lambda_residual < 0.0) throw ConfigError("lambda_residual must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction <= 0.5)) throw ConfigError("val_fraction must be in (0, 0.5]");
  if (min_delta < 0.0) throw ConfigError("min_delta must be >= 0");
}

bool EarlyStopper::update(double val_loss) {
  ++epochs_;
  improved_ = epochs_ == 1 || val_loss < best_ - min_delta_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

std::pair<std::vector<Window>, std::vector<Window>> split_validation(const std::vector<Window>& windows,
                                                                     double val_fraction) {
  if (windows.size() < 2) {
    throw UsageError("training needs at least 2 windows for a validation split, got " +
                     std::to_string(windows.size()));
  }
  std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(windows.size()) * val_fraction));
  n_val = std::clamp<std::size_t>(n_val, 1, windows.size() - 1);
  const auto cut = windows.end() - static_cast<std::ptrdiff_t>(n_val);
  return {std::vector<Window>(windows.begin(), cut), std::vector<Window>(cut, windows.end())};
}

namespace {

std::vector<std::vector<double>> snapshot(const ParameterSet& ps) {
  std::vector<std::vector<double>> s;
  for (const auto& it : ps.items()) s.emplace_back(it.value.data().begin(), it.value.data().end());
  return s;
}

void restore(ParameterSet& ps, const std::vector<std::vector<double>>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto d = ps.items()[i].value.mutable_data();
    std::copy(s[i].begin(), s[i].end(), d.begin());
  }
}

template <typename F>
void for_batches(const std::vector<Window>& windows, std::size_t batch, F&& f) {
  for (std::size_t b = 0; b < windows.size(); b += batch) {
    const std::size_t n = std::min(batch, windows.size() - b);
    f(std::vector<Window>(windows.begin() + static_cast<std::ptrdiff_t>(b),
                          windows.begin() + static_cast<std::ptrdiff_t>(b + n)));
  }
}

WindowSpec spec_of(const TsdfNet& model) { return {model.config().w, model.config().h, 1}; }

}  // namespace

double evaluate_loss(const TsdfNet& model, const SeriesDataset& ds, const std::vector<Window>& windows,
                     std::size_t batch) {
  if (windows.empty()) throw UsageError("no windows to evaluate");
  NoGradGuard ng;
  const ForwardContext ctx;
  double total = 0.0;
  std::size_t count = 0;
  for_batches(windows, batch, [&](const std::vector<Window>& ws) {
    Batch b = make_batch(ds, model.layout(), spec_of(model), ws);
    ModelOutput o = model.forward(b, ctx);
    const auto p = o.forecast.data(), y = b.y.data();
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - y[i]) * (p[i] - y[i]);
    count += p.size();
  });
  return total / static_cast<double>(count);
}

TrainResult train(TsdfNet& model, const SeriesDataset& ds, const std::vector<Window>& windows,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (windows.empty()) throw UsageError("training set is empty: no window fits before the test boundary");
  auto [train_w, val_w] = split_validation(windows, cfg.val_fraction);

  std::mt19937_64 rng(cfg.seed);
  ForwardContext ctx;
  ctx.train = true;
  ctx.dropout = cfg.dropout;
  ctx.rng = &rng;
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(model.params(), acfg);
  EarlyStopper stopper(cfg.patience, cfg.min_delta);
  TrainResult result;
  std::vector<std::vector<double>> best = snapshot(model.params());
  std::vector<Window> order = train_w;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cfg.lr;
    try {
      for_batches(order, cfg.batch, [&](const std::vector<Window>& ws) {
        Batch b = make_batch(ds, model.layout(), spec_of(model), ws);
        model.params().zero_grad();
        ModelOutput o = model.forward(b, ctx);
        Tensor loss = mse_loss(o.forecast, b.y);
        if (cfg.lambda_residual > 0.0) loss = add(loss, scale(o.residual_penalty, cfg.lambda_residual));
        if (!std::isfinite(loss.item())) throw NumericError("training loss became non-finite");
        backward(loss);
        opt.step();
        loss_sum += loss.item();
        ++batches;
      });
      rec.train_loss = loss_sum / static_cast<double>(batches);
      rec.val_loss = evaluate_loss(model, ds, val_w);
      if (!std::isfinite(rec.val_loss)) throw NumericError("validation loss became non-finite");
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (" + e.what() +
                         "); try a smaller learning rate");
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool stop = stopper.update(rec.val_loss);
    if (stopper.improved()) best = snapshot(model.params());
    if (stop) break;
  }
  restore(model.params(), best);
  result.best_epoch = stopper.best_epoch();
  result.best_val = stopper.best();
  result.restored_val = evaluate_loss(model, ds, val_w);
  return result;
}

std::vector<double> predict(const TsdfNet& model, const SeriesDataset& ds, const std::vector<Window>& windows,
                            std::size_t batch) {
  NoGradGuard ng;
  const ForwardContext ctx;
  const std::size_t tgt = ds.target_index();
  std::vector<double> out;
  out.reserve(windows.size() * model.config().h);
  for_batches(windows, batch, [&](const std::vector<Window>& ws) {
    Batch b = make_batch(ds, model.layout(), spec_of(model), ws);
    ModelOutput o = model.forward(b, ctx);
    for (double z : o.forecast.data()) out.push_back(ds.unscale(tgt, z));
  });
  return out;
}

ScoredForecast score_windows(const TsdfNet& model, const SeriesDataset& ds, const std::vector<Window>& windows) {
  const std::vector<double> pred = predict(model, ds, windows);
  const std::size_t h = model.config().h, w = model.config().w;
  const Column& target = ds.target();
  ScoredForecast s;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (std::size_t t = windows[i].score_from; t < h; ++t) {
      const std::size_t row = windows[i].start + w + t;
      if (target.missing[row]) continue;
      s.timestamps.push_back(ds.timestamps[row]);
      s.y_true.push_back(target.values[row]);
      s.y_pred.push_back(pred[i * h + t]);
    }
  }
  return s;
}

namespace {

void check_pair(const std::vector<double>& y, const std::vector<double>& yhat, const char* what, std::size_t min_n) {
  if (y.size() != yhat.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(y.size()) + " targets vs " +
                     std::to_string(yhat.size()) + " forecasts");
  }
  if (y.size() < min_n) throw UsageError(std::string(what) + " needs at least " + std::to_string(min_n) + " points");
}

}  // namespace

double rae(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_pair(y, yhat, "rae", 2);
  const double m = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += std::abs(y[i] - yhat[i]);
    den += std::abs(y[i] - m);
  }
  if (den == 0.0) throw NumericError("rae is undefined for a constant target");
  return num / den;
}

double smape(const std::vector<double>& y, const std::vector<double>& yhat, bool strict) {
  check_pair(y, yhat, "smape", 1);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += std::abs(y[i] - yhat[i]);
    den += std::abs(y[i]) + std::abs(yhat[i]);
  }
  if (den == 0.0) throw NumericError("smape is undefined when targets and forecasts are all zero");
  const double v = 2.0 * num / den;
  return strict ? v / static_cast<double>(y.size()) : v;
}

double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_pair(y, yhat, "rmse", 1);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

MetricReport compute_metrics(const std::vector<double>& y, const std::vector<double>& yhat) {
  MetricReport r;
  r.rae = rae(y, yhat);
  r.smape = smape(y, yhat);
  r.rmse = rmse(y, yhat);
  r.n_test = y.size();
  return r;
}

}  // namespace tsdf
