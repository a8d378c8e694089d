#pragma once

// Run configuration (JSON), checkpoints, and the train/predict/explain
// pipelines shared by the command-line tool and the acceptance suite.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsdf/lorenz.hpp"
#include "tsdf/model.hpp"
#include "tsdf/training.hpp"

namespace tsdf {

struct RunConfig {
  int version = 1;
  // Data: either a CSV with a schema or an in-process Lorenz system.
  std::string data_path;
  Schema schema;
  std::optional<LorenzConfig> lorenz;
  WindowSpec window;
  SplitSpec split;
  ModelConfig model;
  std::vector<std::string> bank_paths;  // pretrained mode, one per family; empty = pretrain in-process
  TrainConfig train;
  std::string output_dir = "run";
  std::string base_dir = ".";  // relative paths resolve against this
  std::string canonical;       // normalized JSON used for hashing

  static RunConfig from_json(const std::string& text, const std::string& base_dir = ".");
  static RunConfig load(const std::string& path);
  std::string resolve(const std::string& path) const;
  /// FNV-1a over the canonical JSON, hex.
  std::string hash() const;
};

/// Dataset, windows and standardization prepared for a run.
struct PreparedData {
  SeriesDataset ds;
  WindowSplit split;
};

PreparedData prepare_data(const RunConfig& cfg);

/// Loads the configured banks or pretrains them (cached under the output dir).
std::vector<PretrainedBasisModel> obtain_banks(const RunConfig& cfg, bool verbose = false);

/// Parameters, standardization and vocabularies needed to rebuild a model.
void save_checkpoint(const std::string& path, const RunConfig& cfg, const TsdfNet& model, const SeriesDataset& ds);

struct LoadedModel {
  std::unique_ptr<TsdfNet> model;
  std::string config_hash;
};

/// Rebuilds the model from `cfg` and the checkpoint, and installs the saved
/// standardization stats into `ds`. A config hash mismatch is a config error.
LoadedModel load_checkpoint(const std::string& path, const RunConfig& cfg, SeriesDataset& ds);

struct TrainRunResult {
  TrainResult train;
  MetricReport metrics;
  ScoredForecast forecast;
};

/// Full training run: writes checkpoint.bin, history.csv, metrics.json and
/// forecast.csv into the output directory.
TrainRunResult run_train(const RunConfig& cfg, bool verbose = false);

void write_forecast_csv(const std::string& path, const ScoredForecast& f);
ScoredForecast read_forecast_csv(const std::string& path);
void write_metrics_json(const std::string& path, const MetricReport& m);
void write_history_csv(const std::string& path, const std::vector<EpochRecord>& h);

/// Writes importance.json, importance_future.json, masks.csv, attention.csv
/// and components.csv for the test windows.
void run_explain(const RunConfig& cfg, const TsdfNet& model, const PreparedData& data, const std::string& out_dir);

}  // namespace tsdf
