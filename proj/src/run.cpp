#include "tsdf/run.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tsdf/errors.hpp"

namespace tsdf {

using json = nlohmann::json;
namespace fs = std::filesystem;

// --- config --------------------------------------------------------------------

namespace {

class KeyChecker {
 public:
  void check(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
      bad_.push_back(where + " (expected an object)");
      return;
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items()) {
      if (!ok.count(k)) bad_.push_back(where.empty() ? k : where + "." + k);
    }
  }
  void fail(const std::string& msg) { problems_.push_back(msg); }
  void raise() const {
    if (bad_.empty() && problems_.empty()) return;
    std::string msg = "invalid run config";
    if (!bad_.empty()) {
      msg += "; unknown keys:";
      for (const auto& b : bad_) msg += " " + b;
    }
    for (const auto& p : problems_) msg += "; " + p;
    throw ConfigError(msg);
  }

 private:
  std::vector<std::string> bad_, problems_;
};

template <typename T>
void read(const json& obj, const char* key, T& out, KeyChecker& kc, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    kc.fail(where + "." + key + " has the wrong type");
  }
}

BasisFamily family_from_json(const json& j, KeyChecker& kc, const std::string& where) {
  kc.check(j, where, {"kind", "k"});
  std::string kind = "trig";
  int k = 1;
  read(j, "kind", kind, kc, where);
  read(j, "k", k, kc, where);
  if (kind == "custom") kc.fail(where + ": custom families are available through the library API only");
  BasisFamily f;
  try {
    f.kind = basis_kind_from_string(kind);
  } catch (const ConfigError& e) {
    kc.fail(e.what());
  }
  f.k = k;
  return f;
}

json family_to_json(const BasisFamily& f) { return {{"kind", to_string(f.kind)}, {"k", f.k}}; }

}  // namespace

RunConfig RunConfig::from_json(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  c.base_dir = base_dir;
  KeyChecker kc;
  kc.check(j, "", {"version", "data", "window", "split", "model", "train", "output_dir"});
  if (!j.is_object()) kc.raise();
  read(j, "version", c.version, kc, "");
  if (c.version != 1) kc.fail("unsupported config version " + std::to_string(c.version));
  read(j, "output_dir", c.output_dir, kc, "");

  if (!j.contains("data")) kc.fail("missing data section");
  else {
    const json& d = j["data"];
    kc.check(d, "data", {"path", "timestamp", "columns", "lorenz"});
    if (d.contains("lorenz")) {
      const json& l = d["lorenz"];
      kc.check(l, "data.lorenz", {"units", "sigma", "rho", "beta", "coupling", "time_varying", "rho_end", "dt",
                                  "steps", "burn_in", "seed", "zero_init", "noise_std"});
      LorenzConfig lc;
      read(l, "units", lc.units, kc, "data.lorenz");
      read(l, "sigma", lc.sigma, kc, "data.lorenz");
      read(l, "rho", lc.rho, kc, "data.lorenz");
      read(l, "beta", lc.beta, kc, "data.lorenz");
      read(l, "coupling", lc.coupling, kc, "data.lorenz");
      read(l, "time_varying", lc.time_varying, kc, "data.lorenz");
      read(l, "rho_end", lc.rho_end, kc, "data.lorenz");
      read(l, "dt", lc.dt, kc, "data.lorenz");
      read(l, "steps", lc.steps, kc, "data.lorenz");
      read(l, "burn_in", lc.burn_in, kc, "data.lorenz");
      read(l, "seed", lc.seed, kc, "data.lorenz");
      read(l, "zero_init", lc.zero_init, kc, "data.lorenz");
      read(l, "noise_std", lc.noise_std, kc, "data.lorenz");
      c.lorenz = lc;
      if (d.contains("path")) kc.fail("data.path and data.lorenz are mutually exclusive");
    } else {
      read(d, "path", c.data_path, kc, "data");
      read(d, "timestamp", c.schema.timestamp, kc, "data");
      if (c.data_path.empty()) kc.fail("data.path is required");
      if (!d.contains("columns") || !d["columns"].is_array() || d["columns"].empty()) {
        kc.fail("data.columns must be a non-empty array");
      } else {
        std::size_t i = 0;
        for (const auto& col : d["columns"]) {
          const std::string where = "data.columns[" + std::to_string(i++) + "]";
          kc.check(col, where, {"name", "role", "type"});
          ColumnSchema cs;
          std::string role = "target", type = "continuous";
          read(col, "name", cs.name, kc, where);
          read(col, "role", role, kc, where);
          read(col, "type", type, kc, where);
          try {
            cs.role = column_role_from_string(role);
            cs.type = column_type_from_string(type);
          } catch (const ConfigError& e) {
            kc.fail(where + ": " + e.what());
          }
          if (cs.name.empty()) kc.fail(where + ".name is required");
          c.schema.columns.push_back(cs);
        }
      }
    }
  }

  if (j.contains("window")) {
    const json& w = j["window"];
    kc.check(w, "window", {"w", "h", "stride"});
    read(w, "w", c.window.w, kc, "window");
    read(w, "h", c.window.h, kc, "window");
    read(w, "stride", c.window.stride, kc, "window");
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    kc.check(s, "split", {"test_fraction", "test_points"});
    read(s, "test_fraction", c.split.test_fraction, kc, "split");
    read(s, "test_points", c.split.test_points, kc, "split");
  }
  c.model.w = c.window.w;
  c.model.h = c.window.h;
  if (j.contains("model")) {
    const json& m = j["model"];
    kc.check(m, "model", {"families", "blocks_per_family", "encoder_layers", "encoder_width", "basis_mode",
                          "finetune_basis", "banks", "sdn", "sdn_blocks", "lift_hidden", "lift_columns", "width",
                          "steps", "heads", "skip", "window_norm"});
    if (m.contains("families")) {
      c.model.families.clear();
      std::size_t i = 0;
      for (const auto& f : m["families"]) c.model.families.push_back(family_from_json(f, kc, "model.families[" + std::to_string(i++) + "]"));
    }
    read(m, "blocks_per_family", c.model.blocks_per_family, kc, "model");
    read(m, "encoder_layers", c.model.encoder.layers, kc, "model");
    read(m, "encoder_width", c.model.encoder.width, kc, "model");
    std::string mode = "pretrained";
    read(m, "basis_mode", mode, kc, "model");
    if (mode == "pretrained") c.model.basis_mode = BasisMode::Pretrained;
    else if (mode == "analytic") c.model.basis_mode = BasisMode::Analytic;
    else kc.fail("model.basis_mode must be pretrained or analytic");
    read(m, "finetune_basis", c.model.finetune_basis, kc, "model");
    read(m, "banks", c.bank_paths, kc, "model");
    read(m, "sdn", c.model.sdn, kc, "model");
    read(m, "sdn_blocks", c.model.sdn_blocks, kc, "model");
    read(m, "lift_hidden", c.model.lift.hidden, kc, "model");
    read(m, "lift_columns", c.model.lift.columns, kc, "model");
    read(m, "width", c.model.width, kc, "model");
    read(m, "steps", c.model.steps, kc, "model");
    read(m, "heads", c.model.heads, kc, "model");
    read(m, "skip", c.model.skip, kc, "model");
    read(m, "window_norm", c.model.window_norm, kc, "model");
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    kc.check(t, "train", {"lr", "batch", "dropout", "patience", "max_epochs", "seed", "lambda_residual",
                          "val_fraction", "min_delta"});
    read(t, "lr", c.train.lr, kc, "train");
    read(t, "batch", c.train.batch, kc, "train");
    read(t, "dropout", c.train.dropout, kc, "train");
    read(t, "patience", c.train.patience, kc, "train");
    read(t, "max_epochs", c.train.max_epochs, kc, "train");
    read(t, "seed", c.train.seed, kc, "train");
    read(t, "lambda_residual", c.train.lambda_residual, kc, "train");
    read(t, "val_fraction", c.train.val_fraction, kc, "train");
    read(t, "min_delta", c.train.min_delta, kc, "train");
  }
  if (!c.bank_paths.empty() && c.bank_paths.size() != c.model.families.size()) {
    kc.fail("model.banks needs one path per family");
  }
  kc.raise();

  c.model.validate();
  c.train.validate();
  if (c.window.stride < 1) throw ConfigError("window.stride must be >= 1");

  json canon;
  canon["version"] = c.version;
  if (c.lorenz) {
    const auto& l = *c.lorenz;
    canon["data"]["lorenz"] = {{"units", l.units},     {"sigma", l.sigma},   {"rho", l.rho},
                               {"beta", l.beta},       {"coupling", l.coupling}, {"time_varying", l.time_varying},
                               {"rho_end", l.rho_end}, {"dt", l.dt},         {"steps", l.steps},
                               {"burn_in", l.burn_in}, {"seed", l.seed},     {"zero_init", l.zero_init},
                               {"noise_std", l.noise_std}};
  } else {
    canon["data"]["path"] = c.data_path;
    canon["data"]["timestamp"] = c.schema.timestamp;
    for (const auto& col : c.schema.columns) {
      canon["data"]["columns"].push_back({{"name", col.name}, {"role", to_string(col.role)}, {"type", to_string(col.type)}});
    }
  }
  canon["window"] = {{"w", c.window.w}, {"h", c.window.h}, {"stride", c.window.stride}};
  canon["split"] = {{"test_fraction", c.split.test_fraction}, {"test_points", c.split.test_points}};
  json fams = json::array();
  for (const auto& f : c.model.families) fams.push_back(family_to_json(f));
  canon["model"] = {{"families", fams},
                    {"blocks_per_family", c.model.blocks_per_family},
                    {"encoder_layers", c.model.encoder.layers},
                    {"encoder_width", c.model.encoder.width},
                    {"basis_mode", c.model.basis_mode == BasisMode::Pretrained ? "pretrained" : "analytic"},
                    {"finetune_basis", c.model.finetune_basis},
                    {"sdn", c.model.sdn},
                    {"sdn_blocks", c.model.sdn_blocks},
                    {"lift_hidden", c.model.lift.hidden},
                    {"lift_columns", c.model.lift.columns},
                    {"width", c.model.width},
                    {"steps", c.model.steps},
                    {"heads", c.model.heads},
                    {"skip", c.model.skip},
                    {"window_norm", c.model.window_norm}};
  canon["train"] = {{"lr", c.train.lr},
                    {"batch", c.train.batch},
                    {"dropout", c.train.dropout},
                    {"patience", c.train.patience},
                    {"max_epochs", c.train.max_epochs},
                    {"seed", c.train.seed},
                    {"lambda_residual", c.train.lambda_residual},
                    {"val_fraction", c.train.val_fraction},
                    {"min_delta", c.train.min_delta}};
  c.canonical = canon.dump();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read run config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path p(path);
  return from_json(ss.str(), p.has_parent_path() ? p.parent_path().string() : ".");
}

std::string RunConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- data and banks ---------------------------------------------------------------

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData p;
  p.ds = cfg.lorenz ? lorenz_generate(*cfg.lorenz) : load_csv(cfg.resolve(cfg.data_path), cfg.schema);
  p.split = make_windows(p.ds.length(), cfg.window, cfg.split);
  p.ds.fit(p.split.boundary);
  return p;
}

std::vector<PretrainedBasisModel> obtain_banks(const RunConfig& cfg, bool verbose) {
  std::vector<PretrainedBasisModel> banks;
  if (cfg.model.basis_mode != BasisMode::Pretrained) return banks;
  for (std::size_t f = 0; f < cfg.model.families.size(); ++f) {
    const BasisFamily& fam = cfg.model.families[f];
    if (!cfg.bank_paths.empty()) {
      banks.push_back(PretrainedBasisModel::load(cfg.resolve(cfg.bank_paths[f])));
      if (banks.back().family().label() != fam.label()) {
        throw ConfigError("bank " + cfg.bank_paths[f] + " holds " + banks.back().family().label() + ", expected " +
                          fam.label());
      }
      continue;
    }
    const fs::path cache = fs::path(cfg.resolve(cfg.output_dir)) / ("bank_" + fam.label() + ".json");
    if (fs::exists(cache)) {
      banks.push_back(PretrainedBasisModel::load(cache.string()));
      continue;
    }
    if (verbose) std::cerr << "pretraining basis bank " << fam.label() << "\n";
    banks.push_back(pretrain_basis_model(fam));
    fs::create_directories(cache.parent_path());
    banks.back().save(cache.string());
  }
  return banks;
}

// --- checkpoints ------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'S', 'D', 'F', 'C', 'K', 'P', 'T'};

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg, const TsdfNet& model, const SeriesDataset& ds) {
  json meta;
  meta["version"] = 1;
  meta["config_hash"] = cfg.hash();
  meta["config"] = json::parse(cfg.canonical);
  json stats = json::array();
  for (const auto& s : ds.all_stats()) stats.push_back({s.mean, s.std});
  meta["stats"] = stats;
  json vocab = json::object();
  for (std::size_t c = 0; c < ds.columns.size(); ++c) {
    if (ds.columns[c].schema.type == ColumnType::Discrete) vocab[ds.columns[c].schema.name] = ds.vocabulary(c);
  }
  meta["vocab"] = vocab;
  json banks = json::array();
  for (const auto& b : model.banks()) banks.push_back(json::parse(b.to_json()));
  meta["banks"] = banks;
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& it : model.params().items()) {
    tensors.push_back({{"name", it.name}, {"shape", it.value.shape()}, {"offset", offset}});
    offset += it.value.size();
  }
  meta["tensors"] = tensors;
  const std::string m = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = m.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& it : model.params().items()) {
    const auto d = it.value.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint " + path);
}

LoadedModel load_checkpoint(const std::string& path, const RunConfig& cfg, SeriesDataset& ds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0 || len > (1ULL << 32)) {
    throw DataError(path + " is not a checkpoint");
  }
  std::string m(len, '\0');
  in.read(m.data(), static_cast<std::streamsize>(len));
  json meta;
  try {
    meta = json::parse(m);
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint metadata: " + std::string(e.what()));
  }
  LoadedModel out;
  try {
    if (meta.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    out.config_hash = meta.at("config_hash").get<std::string>();
    if (out.config_hash != cfg.hash()) {
      throw ConfigError("checkpoint was trained with config hash " + out.config_hash + ", current config is " +
                        cfg.hash());
    }
    std::vector<Standardization> stats;
    for (const auto& s : meta.at("stats")) stats.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    if (stats.size() != ds.columns.size()) throw DataError("checkpoint column count differs from the dataset");
    ds.set_stats(stats);
    for (std::size_t c = 0; c < ds.columns.size(); ++c) {
      if (ds.columns[c].schema.type != ColumnType::Discrete) continue;
      ds.set_vocabulary(c, meta.at("vocab").at(ds.columns[c].schema.name).get<std::map<std::string, std::size_t>>());
    }
    std::vector<PretrainedBasisModel> banks;
    for (const auto& b : meta.at("banks")) banks.push_back(PretrainedBasisModel::from_json(b.dump()));
    out.model = std::make_unique<TsdfNet>(cfg.model, ds, banks, cfg.train.seed);
    auto& items = out.model->params().items();
    const auto& tensors = meta.at("tensors");
    if (tensors.size() != items.size()) throw DataError("checkpoint tensor count differs from the model");
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != items[i].name ||
          tensors[i].at("shape").get<Shape>() != items[i].value.shape()) {
        throw DataError("checkpoint tensor " + tensors[i].at("name").get<std::string>() + " does not match the model");
      }
      auto d = items[i].value.mutable_data();
      in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!in) throw DataError("checkpoint " + path + " is truncated");
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint metadata: " + std::string(e.what()));
  }
  return out;
}

// --- artifacts --------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

}  // namespace

void write_forecast_csv(const std::string& path, const ScoredForecast& f) {
  auto out = open_out(path);
  out << "timestamp,y_true,y_pred\n";
  for (std::size_t i = 0; i < f.y_pred.size(); ++i) {
    out << f.timestamps[i] << ',' << (i < f.y_true.size() ? fmt(f.y_true[i]) : "") << ',' << fmt(f.y_pred[i]) << '\n';
  }
}

ScoredForecast read_forecast_csv(const std::string& path) {
  Schema s;
  s.timestamp = "timestamp";
  s.columns = {{"y_true", ColumnRole::Target, ColumnType::Continuous},
               {"y_pred", ColumnRole::HistExog, ColumnType::Continuous}};
  SeriesDataset ds;
  try {
    ds = load_csv(path, s);
  } catch (const ConfigError& e) {
    throw DataError(std::string("forecast file needs timestamp,y_true,y_pred columns: ") + e.what());
  }
  ScoredForecast f;
  for (std::size_t r = 0; r < ds.length(); ++r) {
    if (ds.columns[0].missing[r] || ds.columns[1].missing[r]) continue;
    f.timestamps.push_back(ds.timestamps[r]);
    f.y_true.push_back(ds.columns[0].values[r]);
    f.y_pred.push_back(ds.columns[1].values[r]);
  }
  return f;
}

void write_metrics_json(const std::string& path, const MetricReport& m) {
  json j;
  j["rae"] = m.rae;
  j["smape"] = m.smape;
  j["rmse"] = m.rmse;
  j["n_test"] = m.n_test;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& h) {
  auto out = open_out(path);
  out << "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : h) out << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.val_loss) << ',' << fmt(r.lr) << '\n';
}

TrainRunResult run_train(const RunConfig& cfg, bool verbose) {
  PreparedData data = prepare_data(cfg);
  if (data.split.train.empty()) {
    throw UsageError("no training window fits before the test boundary (row " + std::to_string(data.split.boundary) +
                     "); shrink w + h or the test split");
  }
  auto banks = obtain_banks(cfg, verbose);
  TsdfNet model(cfg.model, data.ds, banks, cfg.train.seed);
  TrainRunResult r;
  r.train = train(model, data.ds, data.split.train, cfg.train, [&](const EpochRecord& e) {
    if (verbose) {
      std::fprintf(stderr, "epoch %zu train %.6g val %.6g\n", e.epoch, e.train_loss, e.val_loss);
    }
  });
  r.forecast = score_windows(model, data.ds, data.split.test);
  r.metrics = compute_metrics(r.forecast.y_true, r.forecast.y_pred);

  const fs::path dir(cfg.resolve(cfg.output_dir));
  fs::create_directories(dir);
  save_checkpoint((dir / "checkpoint.bin").string(), cfg, model, data.ds);
  write_history_csv((dir / "history.csv").string(), r.train.history);
  write_metrics_json((dir / "metrics.json").string(), r.metrics);
  write_forecast_csv((dir / "forecast.csv").string(), r.forecast);
  return r;
}

void run_explain(const RunConfig& cfg, const TsdfNet& model, const PreparedData& data, const std::string& out_dir) {
  (void)cfg;
  const auto& windows = data.split.test;
  if (windows.empty()) throw UsageError("no test windows to explain");
  fs::create_directories(out_dir);
  NoGradGuard ng;
  const ForwardContext ctx;
  const WindowSpec spec{model.config().w, model.config().h, 1};
  Batch b = make_batch(data.ds, model.layout(), spec, windows);
  ModelOutput o = model.forward(b, ctx, true);

  auto importance = [&](const std::vector<Tensor>& masks, const std::vector<FeatureGroup>& groups,
                        const std::string& file) {
    const ImportanceReport rep = importance_distribution(masks);
    const auto g = group_importance(rep.D, groups);
    json j = json::object();
    for (std::size_t i = 0; i < groups.size(); ++i) j[groups[i].name] = g[i];
    auto out = open_out((fs::path(out_dir) / file).string());
    out << j.dump(2) << '\n';
  };
  importance(o.hist_sel.masks, model.hist_features(), "importance.json");
  importance(o.fut_sel.masks, model.fut_features(), "importance_future.json");

  auto feature_names = [](const std::vector<FeatureGroup>& groups) {
    std::vector<std::string> names;
    for (const auto& g : groups) {
      for (std::size_t i = 0; i < g.width; ++i) names.push_back(g.width == 1 ? g.name : g.name + "#" + std::to_string(i));
    }
    return names;
  };
  auto masks_csv = [&](const std::vector<Tensor>& masks, const std::vector<FeatureGroup>& groups,
                       const std::string& file) {
    const auto names = feature_names(groups);
    auto out = open_out((fs::path(out_dir) / file).string());
    out << "sample,step,time,feature,weight\n";
    for (std::size_t j = 0; j < masks.size(); ++j) {
      const auto d = masks[j].data();
      const std::size_t B = masks[j].dim(0), T = masks[j].dim(1), F = masks[j].dim(2);
      for (std::size_t s = 0; s < B; ++s)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t f = 0; f < F; ++f)
            out << s << ',' << j << ',' << t << ',' << names[f] << ',' << fmt(d[(s * T + t) * F + f]) << '\n';
    }
  };
  masks_csv(o.hist_sel.masks, model.hist_features(), "masks.csv");
  masks_csv(o.fut_sel.masks, model.fut_features(), "masks_future.csv");

  {
    // Averaged over the explained windows.
    const auto& a = o.attention;
    const std::size_t B = windows.size();
    auto out = open_out((fs::path(out_dir) / "attention.csv").string());
    out << "head,query_time,key_time,weight\n";
    for (std::size_t hd = 0; hd < a.heads; ++hd)
      for (std::size_t q = 0; q < a.tq; ++q)
        for (std::size_t k = 0; k < a.tk; ++k) {
          double s = 0.0;
          for (std::size_t bi = 0; bi < B; ++bi) s += a.weights[((bi * a.heads + hd) * a.tq + q) * a.tk + k];
          out << hd << ',' << q << ',' << k << ',' << fmt(s / static_cast<double>(B)) << '\n';
        }
  }

  {
    // First explained window, target scale (standard deviations times std).
    const double sd = data.ds.stats(data.ds.target_index()).std;
    auto out = open_out((fs::path(out_dir) / "components.csv").string());
    out << "block,kind,step,value\n";
    auto dump = [&](const std::string& name, const TdnOutput& t) {
      for (std::size_t n = 0; n < t.per_block.size(); ++n) {
        const auto& blk = t.per_block[n];
        const std::string id = name + std::to_string(n);
        for (std::size_t s = 0; s < blk.W.dim(1); ++s) out << id << ",backcast," << s << ',' << fmt(blk.W.at(s) * sd) << '\n';
        for (std::size_t s = 0; s < blk.V.dim(1); ++s) out << id << ",forecast," << s << ',' << fmt(blk.V.at(s) * sd) << '\n';
      }
      if (!t.empty()) {
        for (std::size_t s = 0; s < t.residual.dim(1); ++s) out << name << "_residual,backcast," << s << ',' << fmt(t.residual.at(s) * sd) << '\n';
      }
    };
    dump("tdn", o.tdn);
    dump("sdn", o.sdn);
    for (std::size_t s = 0; s < o.head.dim(1); ++s) out << "affn,forecast," << s << ',' << fmt(o.head.at(s) * sd) << '\n';

    auto coef = open_out((fs::path(out_dir) / "coefficients.csv").string());
    coef << "block,kind,index,value\n";
    auto dump_coef = [&](const std::string& name, const TdnOutput& t) {
      for (std::size_t n = 0; n < t.per_block.size(); ++n) {
        const auto& blk = t.per_block[n];
        for (std::size_t i = 0; i < blk.P.dim(1); ++i) coef << name << n << ",backcast," << i << ',' << fmt(blk.P.at(i)) << '\n';
        for (std::size_t i = 0; i < blk.Q.dim(1); ++i) coef << name << n << ",forecast," << i << ',' << fmt(blk.Q.at(i)) << '\n';
      }
    };
    dump_coef("tdn", o.tdn);
    dump_coef("sdn", o.sdn);
  }
}

}  // namespace tsdf
