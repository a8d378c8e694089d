#pragma once

// Normalized time grid and the basis dictionaries the temporal decomposition
// projects onto: analytic trig/poly families, user-supplied custom columns,
// and small per-column networks pretrained to approximate them.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tsdf/nn.hpp"
#include "tsdf/tensor.hpp"

namespace tsdf {

/// t = [-w, ..., 0, ..., h] / L with L = w + h + 1.
struct TimeGrid {
  std::size_t w = 0;
  std::size_t h = 0;
  std::size_t L = 0;
  std::vector<double> t;
};

TimeGrid make_time_grid(std::size_t w, std::size_t h);

enum class BasisKind { Trig, Poly, Custom };

std::string to_string(BasisKind k);
BasisKind basis_kind_from_string(const std::string& s);

struct BasisFamily {
  BasisKind kind = BasisKind::Trig;
  int k = 1;
  // Custom families only: column count and evaluator f(column, t).
  std::size_t custom_count = 0;
  std::function<double(std::size_t, double)> custom_fn;
  std::string custom_name;

  static BasisFamily trig(int k) { return {BasisKind::Trig, k, 0, {}, {}}; }
  static BasisFamily poly(int k) { return {BasisKind::Poly, k, 0, {}, {}}; }
  static BasisFamily custom(std::string name, std::size_t count, std::function<double(std::size_t, double)> fn);

  /// Trig k -> 4k columns, poly k -> k columns.
  std::size_t count() const;
  /// Column c evaluated at time t.
  double evaluate(std::size_t column, double t) const;
  std::string label() const;  // e.g. "trig4"
  void validate() const;
};

/// Full basis matrix and its history/horizon row blocks.
struct BasisSet {
  Tensor C;   // [L, count]
  Tensor Cp;  // [w, count], rows with t < 0
  Tensor Cq;  // [h, count], rows with t > 0
};

/// Rows of C with t < 0 and with t > 0; the t = 0 anchor row is dropped so the
/// halves line up with the history and forecast windows exactly.
std::pair<Tensor, Tensor> split_basis(const Tensor& C, const TimeGrid& grid);

BasisSet analytic_basis(const TimeGrid& grid, const BasisFamily& family);

struct PretrainOptions {
  std::size_t samples = 10000;
  std::size_t epochs = 100;
  std::size_t batch = 40;
  std::vector<std::size_t> hidden = {32, 32};
  double lr = 3e-3;
  double first_layer_scale = 3.0;
  double tolerance = 0.02;
  std::uint64_t seed = 7;
  std::size_t check_points = 1001;
};

/// Per-column 1 -> 32 -> 32 -> 1 tanh networks approximating a family on [-1, 1].
class PretrainedBasisModel {
 public:
  struct LayerWeights {
    std::size_t in = 0, out = 0;
    std::vector<double> weight;  // row-major [in, out]
    std::vector<double> bias;
  };
  using ColumnWeights = std::vector<LayerWeights>;

  PretrainedBasisModel() = default;
  PretrainedBasisModel(BasisFamily family, std::vector<ColumnWeights> columns);

  const BasisFamily& family() const { return family_; }
  const std::vector<ColumnWeights>& columns() const { return columns_; }
  std::size_t count() const { return columns_.size(); }
  double max_error() const { return max_error_; }
  void set_max_error(double e) { max_error_ = e; }

  /// Plain evaluation of one column network.
  double evaluate(std::size_t column, double t) const;
  /// Max |model - analytic| per column over an evenly spaced grid on [-1, 1].
  std::vector<double> column_errors(std::size_t points = 1001) const;

  std::string to_json() const;
  static PretrainedBasisModel from_json(const std::string& text);
  void save(const std::string& path) const;
  static PretrainedBasisModel load(const std::string& path);

 private:
  BasisFamily family_;
  std::vector<ColumnWeights> columns_;
  double max_error_ = -1.0;
};

/// Fits every column by L2 regression on uniform samples of t in [-1, 1].
/// Throws NumericError with the achieved error when the tolerance is missed.
PretrainedBasisModel pretrain_basis_model(const BasisFamily& family, const PretrainOptions& opts = {});

/// Basis networks registered as trainable parameters of a larger model.
class BasisNetworks {
 public:
  BasisNetworks() = default;
  BasisNetworks(ParameterSet& ps, const std::string& name, const PretrainedBasisModel& bank, bool trainable);
  /// Evaluates all columns on the grid: [L, count].
  Tensor evaluate(const TimeGrid& grid) const;
  std::size_t count() const { return nets_.size(); }

 private:
  std::vector<Mlp> nets_;
  ParameterSet frozen_params_;  // holds the weights when not trainable
};

}  // namespace tsdf
