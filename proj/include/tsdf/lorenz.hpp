#pragma once

// Ring-coupled Lorenz-63 units integrated with fixed-step RK4.

#include <cstdint>
#include <vector>

#include "tsdf/data.hpp"

namespace tsdf {

struct LorenzConfig {
  std::size_t units = 30;  // 3 state variables each
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double coupling = 0.3;  // c * (x_{i-1} - x_i) added to each unit's dx/dt
  bool time_varying = false;
  double rho_end = 38.0;  // ramp target when time_varying
  double dt = 0.01;
  std::size_t steps = 5000;
  std::size_t burn_in = 1000;  // integrated and discarded before sampling
  std::uint64_t seed = 1;
  bool zero_init = false;
  double noise_std = 0.0;  // additive Gaussian observation noise

  void validate() const;
};

/// Rows are samples, columns are u{i}_x, u{i}_y, u{i}_z; [steps, 3 * units].
std::vector<double> lorenz_trajectory(const LorenzConfig& cfg);

/// Target is column 0 (u0_x); the rest are historical exogenous columns.
SeriesDataset lorenz_generate(const LorenzConfig& cfg);

}  // namespace tsdf
