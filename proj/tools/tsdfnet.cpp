// Command-line front end: pretrain-basis, train, predict, evaluate,
// lorenz-gen, explain.

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "tsdf/errors.hpp"
#include "tsdf/run.hpp"

using namespace tsdf;
namespace fs = std::filesystem;

namespace {

int cmd_pretrain(const std::string& family, int k, const std::string& out, std::uint64_t seed) {
  BasisFamily f;
  f.kind = basis_kind_from_string(family);
  if (f.kind == BasisKind::Custom) throw UsageError("custom families cannot be pretrained from the command line");
  f.k = k;
  PretrainOptions o;
  o.seed = seed;
  PretrainedBasisModel m = pretrain_basis_model(f, o);
  m.save(out);
  std::printf("%s: %zu columns, max error %.6g\n", f.label().c_str(), m.count(), m.max_error());
  return 0;
}

int cmd_train(const std::string& config, const std::string& out_dir, bool quiet) {
  RunConfig cfg = RunConfig::load(config);
  if (!out_dir.empty()) cfg.output_dir = fs::absolute(out_dir).string();
  TrainRunResult r = run_train(cfg, !quiet);
  std::printf("best epoch %zu, val %.6g; test rae %.6g smape %.6g rmse %.6g (n=%zu)\n", r.train.best_epoch,
              r.train.best_val, r.metrics.rae, r.metrics.smape, r.metrics.rmse, r.metrics.n_test);
  return 0;
}

int cmd_predict(const std::string& config, const std::string& checkpoint, const std::string& out) {
  RunConfig cfg = RunConfig::load(config);
  PreparedData data = prepare_data(cfg);
  LoadedModel lm = load_checkpoint(checkpoint, cfg, data.ds);
  ScoredForecast f = score_windows(*lm.model, data.ds, data.split.test);
  write_forecast_csv(out, f);
  return 0;
}

int cmd_evaluate(const std::string& forecast, const std::string& out, bool strict) {
  ScoredForecast f = read_forecast_csv(forecast);
  if (f.y_true.empty()) throw DataError(forecast + " has no rows with both y_true and y_pred");
  MetricReport m;
  // Degenerate inputs (perfect forecast of a constant target) score 0 where the
  // ratio is undefined only because the error is zero too.
  double abs_err = 0.0;
  for (std::size_t i = 0; i < f.y_true.size(); ++i) abs_err += std::abs(f.y_true[i] - f.y_pred[i]);
  auto guarded = [&](auto fn) {
    try {
      return fn();
    } catch (const NumericError&) {
      if (abs_err == 0.0) return 0.0;
      throw;
    }
  };
  m.rae = guarded([&] { return f.y_true.size() >= 2 ? rae(f.y_true, f.y_pred) : throw NumericError("rae needs 2 points"); });
  m.smape = guarded([&] { return smape(f.y_true, f.y_pred, strict); });
  m.rmse = rmse(f.y_true, f.y_pred);
  m.n_test = f.y_true.size();
  write_metrics_json(out, m);
  std::printf("rae %.6g smape %.6g rmse %.6g (n=%zu)\n", m.rae, m.smape, m.rmse, m.n_test);
  return 0;
}

int cmd_explain(const std::string& config, const std::string& checkpoint, const std::string& out_dir) {
  RunConfig cfg = RunConfig::load(config);
  PreparedData data = prepare_data(cfg);
  LoadedModel lm = load_checkpoint(checkpoint, cfg, data.ds);
  run_explain(cfg, *lm.model, data, out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Tensors are allocated and freed per step; keep them on the heap instead of
  // paying an mmap/munmap round trip and page faults for each one.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Self-decomposing time-series forecaster"};
  app.require_subcommand(1);

  std::string family = "trig", out, config, out_dir, checkpoint, forecast;
  int k = 4;
  std::uint64_t seed = 7;
  bool quiet = false, strict = false;

  auto* pre = app.add_subcommand("pretrain-basis", "Fit per-column networks to an analytic basis family");
  pre->add_option("--family", family, "trig or poly")->required();
  pre->add_option("--k", k, "Order/frequency parameter")->required();
  pre->add_option("--out", out, "Output bank JSON")->required();
  pre->add_option("--seed", seed, "Sampling seed");

  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoint, history, metrics and forecast");
  tr->add_option("--config", config, "Run config JSON")->required();
  tr->add_option("--out-dir", out_dir, "Override the config's output directory");
  tr->add_flag("--quiet", quiet, "No per-epoch progress");

  auto* pr = app.add_subcommand("predict", "Forecast the test windows with a trained checkpoint");
  pr->add_option("--config", config, "Run config JSON")->required();
  pr->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  pr->add_option("--out", out, "Output forecast CSV")->required();

  auto* ev = app.add_subcommand("evaluate", "Score a forecast CSV");
  ev->add_option("--forecast", forecast, "CSV with timestamp,y_true,y_pred")->required();
  ev->add_option("--out", out, "Output metrics JSON")->required();
  ev->add_flag("--strict-smape", strict, "Apply the extra 1/N factor to SMAPE");

  LorenzConfig lc;
  auto* lg = app.add_subcommand("lorenz-gen", "Generate a ring-coupled Lorenz dataset as CSV");
  lg->add_option("--out", out, "Output CSV")->required();
  lg->add_flag("--time-varying", lc.time_varying, "Ramp rho linearly over the run");
  lg->add_option("--seed", lc.seed, "Initial-state and noise seed");
  lg->add_option("--steps", lc.steps, "Samples to emit");
  lg->add_option("--units", lc.units, "Coupled 3-d units");
  lg->add_option("--coupling", lc.coupling, "Ring coupling strength");
  lg->add_option("--dt", lc.dt, "Integration step");
  lg->add_option("--burn-in", lc.burn_in, "Discarded initial steps");
  lg->add_option("--rho-end", lc.rho_end, "Final rho when time-varying");
  lg->add_option("--noise", lc.noise_std, "Observation noise std");
  lg->add_flag("--zero-init", lc.zero_init, "Start at the origin");

  auto* ex = app.add_subcommand("explain", "Dump importance, masks, attention and components");
  ex->add_option("--config", config, "Run config JSON")->required();
  ex->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ex->add_option("--out-dir", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*pre) return cmd_pretrain(family, k, out, seed);
    if (*tr) return cmd_train(config, out_dir, quiet);
    if (*pr) return cmd_predict(config, checkpoint, out);
    if (*ev) return cmd_evaluate(forecast, out, strict);
    if (*lg) {
      export_csv(lorenz_generate(lc), out);
      return 0;
    }
    if (*ex) return cmd_explain(config, checkpoint, out_dir);
  } catch (const Error& e) {
    std::cerr << "tsdfnet: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "tsdfnet: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
