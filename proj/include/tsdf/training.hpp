#pragma once

// Optimization loop with early stopping, forecasting over window sets, and
// the evaluation metrics.

#include <functional>
#include <string>
#include <vector>

#include "tsdf/model.hpp"

namespace tsdf {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 32;
  double dropout = 0.1;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 1;
  double lambda_residual = 0.1;
  double val_fraction = 0.1;
  double min_delta = 1e-6;

  void validate() const;
};

/// Stops after `patience` consecutive epochs without an improvement larger
/// than `min_delta`.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience, double min_delta = 1e-6) : patience_(patience), min_delta_(min_delta) {}
  /// Records one epoch's validation loss; returns true when training should stop.
  bool update(double val_loss);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = 0.0;
  std::size_t best_epoch_ = 0, epochs_ = 0, stale_ = 0;
  bool improved_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  /// Validation loss recomputed after restoring the best weights.
  double restored_val = 0.0;
};

/// Chronological split of training windows: the last `val_fraction` validate.
std::pair<std::vector<Window>, std::vector<Window>> split_validation(const std::vector<Window>& windows,
                                                                     double val_fraction);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on MSE(forecast, target) + lambda * residual penalty. Restores the
/// best-validation weights before returning.
TrainResult train(TsdfNet& model, const SeriesDataset& ds, const std::vector<Window>& windows,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Forecast MSE in scaled units over `windows`, evaluation mode.
double evaluate_loss(const TsdfNet& model, const SeriesDataset& ds, const std::vector<Window>& windows,
                     std::size_t batch = 64);

/// Evaluation-mode forecasts, raw scale, [windows.size() * h] row-major.
std::vector<double> predict(const TsdfNet& model, const SeriesDataset& ds, const std::vector<Window>& windows,
                            std::size_t batch = 64);

/// RAE = sum|Y - Yhat| / sum|Y - mean(Y)|.
double rae(const std::vector<double>& y, const std::vector<double>& yhat);
/// 2 sum|Y - Yhat| / sum(|Y| + |Yhat|); `strict` multiplies by 1/N as in the
/// literal printed formula.
double smape(const std::vector<double>& y, const std::vector<double>& yhat, bool strict = false);
double rmse(const std::vector<double>& y, const std::vector<double>& yhat);

struct MetricReport {
  double rae = 0.0;
  double smape = 0.0;
  double rmse = 0.0;
  std::size_t n_test = 0;
};

MetricReport compute_metrics(const std::vector<double>& y, const std::vector<double>& yhat);

/// Scored target/forecast pairs for a set of test windows (raw scale).
struct ScoredForecast {
  std::vector<std::string> timestamps;
  std::vector<double> y_true, y_pred;
};

ScoredForecast score_windows(const TsdfNet& model, const SeriesDataset& ds, const std::vector<Window>& windows);

}  // namespace tsdf
