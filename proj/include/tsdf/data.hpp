#pragma once

// Series ingestion, train-only standardization and sliding windows.

#include <map>
#include <string>
#include <vector>

#include "tsdf/tensor.hpp"

namespace tsdf {

enum class ColumnRole { Target, HistExog, FutureExog };
enum class ColumnType { Continuous, Discrete };

ColumnRole column_role_from_string(const std::string& s);
ColumnType column_type_from_string(const std::string& s);
std::string to_string(ColumnRole r);
std::string to_string(ColumnType t);

struct ColumnSchema {
  std::string name;
  ColumnRole role = ColumnRole::Target;
  ColumnType type = ColumnType::Continuous;
};

struct Schema {
  std::vector<ColumnSchema> columns;
  std::string timestamp;  // optional timestamp column name
};

struct Column {
  ColumnSchema schema;
  std::vector<double> values;      // continuous raw values (0 where missing)
  std::vector<std::string> labels;  // discrete raw labels
  std::vector<bool> missing;
};

struct Standardization {
  double mean = 0.0;
  double std = 1.0;
};

class SeriesDataset {
 public:
  std::vector<std::string> timestamps;
  std::vector<Column> columns;

  std::size_t length() const { return timestamps.size(); }
  std::size_t target_index() const;
  const Column& target() const { return columns[target_index()]; }
  std::vector<std::size_t> columns_with(ColumnRole role, ColumnType type) const;

  /// Standardization stats and discrete vocabularies from rows [0, train_rows).
  void fit(std::size_t train_rows);
  bool fitted() const { return !stats_.empty(); }
  const Standardization& stats(std::size_t col) const { return stats_.at(col); }
  void set_stats(std::vector<Standardization> stats) { stats_ = std::move(stats); }
  const std::vector<Standardization>& all_stats() const { return stats_; }

  /// z-scored value, 0 where missing.
  double scaled(std::size_t col, std::size_t row) const;
  double unscale(std::size_t col, double z) const;
  /// Discrete: vocabulary index in [1, vocab]; 0 for unseen labels.
  std::size_t category(std::size_t col, std::size_t row) const;
  std::size_t vocab_size(std::size_t col) const;
  const std::map<std::string, std::size_t>& vocabulary(std::size_t col) const { return vocab_.at(col); }
  void set_vocabulary(std::size_t col, std::map<std::string, std::size_t> v);

 private:
  std::vector<Standardization> stats_;
  std::map<std::size_t, std::map<std::string, std::size_t>> vocab_;
};

/// Reads a headed CSV. Blank, "NA" and "nan" cells are flagged missing.
SeriesDataset load_csv(const std::string& path, const Schema& schema);
SeriesDataset parse_csv(const std::string& text, const Schema& schema, const std::string& source = "<memory>");
/// Writes timestamp (when present) and every column with round-trip precision.
void export_csv(const SeriesDataset& ds, const std::string& path);

struct WindowSpec {
  std::size_t w = 1;
  std::size_t h = 1;
  std::size_t stride = 1;
};

/// History rows [start, start+w), target rows [start+w, start+w+h).
/// Only target steps at offset >= score_from enter test metrics.
struct Window {
  std::size_t start = 0;
  std::size_t score_from = 0;
};

struct SplitSpec {
  double test_fraction = 0.1;
  std::size_t test_points = 0;  // overrides test_fraction when > 0
};

struct WindowSplit {
  std::vector<Window> train;
  std::vector<Window> test;
  std::size_t boundary = 0;  // first test row
};

std::size_t window_count(std::size_t length, const WindowSpec& spec);

/// Chronological split at `boundary`. Training windows end before it; test
/// windows start their targets at or after it. When the horizon is longer
/// than the test region, the single window ending at the series end is used
/// and scored from the boundary on.
WindowSplit make_windows(std::size_t length, const WindowSpec& spec, const SplitSpec& split);

/// Categorical exogenous inputs for one batch: row-major [B, T, n_cols].
struct CategoricalBlock {
  std::vector<std::size_t> index;
  std::vector<double> present;  // 1 where observed, 0 where missing
  std::size_t cols = 0;
};

struct Batch {
  Tensor x;  // [B, w] scaled target history
  Tensor y;  // [B, h] scaled target horizon
  Tensor hist_cont;  // [B, w, n] continuous hist + future-known columns (history rows)
  Tensor fut_cont;   // [B, h, n] continuous future-known columns (horizon rows)
  CategoricalBlock hist_cat, fut_cat;
  std::vector<Window> windows;
};

/// Column groups feeding the exogenous encoders, in a fixed order.
struct ExogenousLayout {
  std::vector<std::size_t> hist_cont, hist_cat, fut_cont, fut_cat;
  std::vector<std::size_t> cat_vocab_hist, cat_vocab_fut;

  static ExogenousLayout from(const SeriesDataset& ds);
  bool empty() const { return hist_cont.empty() && hist_cat.empty() && fut_cont.empty() && fut_cat.empty(); }
};

Batch make_batch(const SeriesDataset& ds, const ExogenousLayout& layout, const WindowSpec& spec,
                 const std::vector<Window>& windows);

}  // namespace tsdf
