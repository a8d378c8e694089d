#include "tsdf/lorenz.hpp"

#include <cmath>
#include <random>
#include <string>

#include "tsdf/errors.hpp"

namespace tsdf {

void LorenzConfig::validate() const {
  if (units < 1) throw ConfigError("lorenz needs at least one unit");
  if (!(dt > 0.0)) throw ConfigError("lorenz dt must be > 0");
  if (steps < 1) throw ConfigError("lorenz steps must be >= 1");
  if (noise_std < 0.0) throw ConfigError("lorenz noise_std must be >= 0");
}

namespace {

void derivative(const LorenzConfig& c, double rho, const std::vector<double>& s, std::vector<double>& d) {
  const std::size_t n = c.units;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = s[3 * i], y = s[3 * i + 1], z = s[3 * i + 2];
    const double xprev = s[3 * ((i + n - 1) % n)];
    d[3 * i] = c.sigma * (y - x) + c.coupling * (xprev - x);
    d[3 * i + 1] = x * (rho - z) - y;
    d[3 * i + 2] = x * y - c.beta * z;
  }
}

}  // namespace

std::vector<double> lorenz_trajectory(const LorenzConfig& cfg) {
  cfg.validate();
  const std::size_t dim = 3 * cfg.units;
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> s(dim, 0.0);
  if (!cfg.zero_init) {
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (std::size_t i = 0; i < cfg.units; ++i) {
      s[3 * i] = u(rng);
      s[3 * i + 1] = u(rng);
      s[3 * i + 2] = 25.0 + u(rng);
    }
  }
  std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  std::vector<double> out(cfg.steps * dim);
  const std::size_t total = cfg.burn_in + cfg.steps;
  const double h = cfg.dt;
  for (std::size_t step = 0; step < total; ++step) {
    double rho = cfg.rho;
    if (cfg.time_varying && step >= cfg.burn_in && cfg.steps > 1) {
      const double frac = static_cast<double>(step - cfg.burn_in) / static_cast<double>(cfg.steps - 1);
      rho = cfg.rho + (cfg.rho_end - cfg.rho) * frac;
    }
    if (step >= cfg.burn_in) std::copy(s.begin(), s.end(), out.begin() + static_cast<std::ptrdiff_t>((step - cfg.burn_in) * dim));
    derivative(cfg, rho, s, k1);
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
    derivative(cfg, rho, tmp, k2);
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
    derivative(cfg, rho, tmp, k3);
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = s[i] + h * k3[i];
    derivative(cfg, rho, tmp, k4);
    for (std::size_t i = 0; i < dim; ++i) {
      s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (!std::isfinite(s[i]) || std::abs(s[i]) > 1e6) {
        throw NumericError("lorenz trajectory diverged at step " + std::to_string(step) + "; try a smaller dt");
      }
    }
  }
  if (cfg.noise_std > 0.0) {
    std::normal_distribution<double> n(0.0, cfg.noise_std);
    for (double& v : out) v += n(rng);
  }
  return out;
}

SeriesDataset lorenz_generate(const LorenzConfig& cfg) {
  const std::vector<double> traj = lorenz_trajectory(cfg);
  const std::size_t dim = 3 * cfg.units;
  SeriesDataset ds;
  ds.timestamps.reserve(cfg.steps);
  for (std::size_t t = 0; t < cfg.steps; ++t) ds.timestamps.push_back(std::to_string(t));
  const char axes[] = {'x', 'y', 'z'};
  for (std::size_t c = 0; c < dim; ++c) {
    Column col;
    col.schema.name = "u" + std::to_string(c / 3) + "_" + axes[c % 3];
    col.schema.role = c == 0 ? ColumnRole::Target : ColumnRole::HistExog;
    col.values.resize(cfg.steps);
    for (std::size_t t = 0; t < cfg.steps; ++t) col.values[t] = traj[t * dim + c];
    col.missing.assign(cfg.steps, false);
    ds.columns.push_back(std::move(col));
  }
  return ds;
}

}  // namespace tsdf
