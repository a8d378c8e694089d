#include "tsdf/basis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tsdf/errors.hpp"

namespace tsdf {

using json = nlohmann::json;

TimeGrid make_time_grid(std::size_t w, std::size_t h) {
  if (w < 1 || h < 1) throw ConfigError("time grid needs w >= 1 and h >= 1");
  TimeGrid g;
  g.w = w;
  g.h = h;
  g.L = w + h + 1;
  g.t.resize(g.L);
  const double L = static_cast<double>(g.L);
  for (std::size_t i = 0; i < g.L; ++i) {
    g.t[i] = (static_cast<double>(i) - static_cast<double>(w)) / L;
  }
  return g;
}

std::string to_string(BasisKind k) {
  switch (k) {
    case BasisKind::Trig: return "trig";
    case BasisKind::Poly: return "poly";
    default: return "custom";
  }
}

BasisKind basis_kind_from_string(const std::string& s) {
  if (s == "trig") return BasisKind::Trig;
  if (s == "poly") return BasisKind::Poly;
  if (s == "custom") return BasisKind::Custom;
  throw ConfigError("unknown basis family kind '" + s + "' (expected trig, poly or custom)");
}

BasisFamily BasisFamily::custom(std::string name, std::size_t count, std::function<double(std::size_t, double)> fn) {
  BasisFamily f;
  f.kind = BasisKind::Custom;
  f.k = static_cast<int>(count);
  f.custom_count = count;
  f.custom_fn = std::move(fn);
  f.custom_name = std::move(name);
  return f;
}

void BasisFamily::validate() const {
  if (kind == BasisKind::Custom) {
    if (custom_count < 1) throw ConfigError("custom basis family needs at least one column");
    return;
  }
  if (k < 1) throw ConfigError("basis family " + to_string(kind) + " needs k >= 1, got " + std::to_string(k));
}

std::size_t BasisFamily::count() const {
  validate();
  switch (kind) {
    case BasisKind::Trig: return 4 * static_cast<std::size_t>(k);
    case BasisKind::Poly: return static_cast<std::size_t>(k);
    default: return custom_count;
  }
}

double BasisFamily::evaluate(std::size_t column, double t) const {
  switch (kind) {
    case BasisKind::Trig: {
      // [sin(-kt), cos(-kt), ..., sin(-t), cos(-t), cos(t), sin(t), ..., cos(kt), sin(kt)]
      const std::size_t half = 2 * static_cast<std::size_t>(k);
      if (column < half) {
        const double f = -static_cast<double>(k - static_cast<int>(column / 2));
        return column % 2 == 0 ? std::sin(f * t) : std::cos(f * t);
      }
      const std::size_t c = column - half;
      const double f = static_cast<double>(c / 2 + 1);
      return c % 2 == 0 ? std::cos(f * t) : std::sin(f * t);
    }
    case BasisKind::Poly:
      return std::pow(t, static_cast<double>(column + 1));
    default:
      if (!custom_fn) throw ConfigError("custom basis family '" + custom_name + "' has no evaluator");
      return custom_fn(column, t);
  }
}

std::string BasisFamily::label() const {
  if (kind == BasisKind::Custom) return custom_name.empty() ? "custom" : custom_name;
  return to_string(kind) + std::to_string(k);
}

std::pair<Tensor, Tensor> split_basis(const Tensor& C, const TimeGrid& grid) {
  if (C.ndim() != 2 || C.dim(0) != grid.L) {
    throw ShapeError("split_basis: basis has shape " + shape_str(C.shape()) + ", grid has " + std::to_string(grid.L) +
                     " rows");
  }
  // Row slicing via the column-major view: [count, L] -> slice -> back.
  Tensor ct = transpose(C);
  Tensor cp = transpose(slice_last_dim(ct, 0, grid.w));
  Tensor cq = transpose(slice_last_dim(ct, grid.w + 1, grid.h));
  return {cp, cq};
}

BasisSet analytic_basis(const TimeGrid& grid, const BasisFamily& family) {
  family.validate();
  const std::size_t m = family.count();
  std::vector<double> c(grid.L * m);
  for (std::size_t i = 0; i < grid.L; ++i) {
    for (std::size_t j = 0; j < m; ++j) c[i * m + j] = family.evaluate(j, grid.t[i]);
  }
  BasisSet set;
  set.C = Tensor::from({grid.L, m}, std::move(c));
  auto [cp, cq] = split_basis(set.C, grid);
  set.Cp = cp;
  set.Cq = cq;
  return set;
}

// --- pretrained networks ------------------------------------------------------

PretrainedBasisModel::PretrainedBasisModel(BasisFamily family, std::vector<ColumnWeights> columns)
    : family_(std::move(family)), columns_(std::move(columns)) {}

double PretrainedBasisModel::evaluate(std::size_t column, double t) const {
  const auto& layers = columns_.at(column);
  std::vector<double> h{t}, next;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    next.assign(L.out, 0.0);
    for (std::size_t o = 0; o < L.out; ++o) {
      double s = L.bias[o];
      for (std::size_t i = 0; i < L.in; ++i) s += h[i] * L.weight[i * L.out + o];
      next[o] = l + 1 < layers.size() ? std::tanh(s) : s;
    }
    h.swap(next);
  }
  return h[0];
}

std::vector<double> PretrainedBasisModel::column_errors(std::size_t points) const {
  std::vector<double> err(columns_.size(), 0.0);
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    for (std::size_t i = 0; i < points; ++i) {
      const double t = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(points - 1);
      err[c] = std::max(err[c], std::abs(evaluate(c, t) - family_.evaluate(c, t)));
    }
  }
  return err;
}

std::string PretrainedBasisModel::to_json() const {
  json j;
  j["format"] = "tsdfnet-basis-bank";
  j["version"] = 1;
  j["family"] = {{"kind", to_string(family_.kind)}, {"k", family_.k}};
  if (family_.kind == BasisKind::Custom) j["family"]["name"] = family_.custom_name;
  j["activation"] = "tanh";
  j["max_error"] = max_error_;
  json cols = json::array();
  for (const auto& col : columns_) {
    json layers = json::array();
    for (const auto& L : col) {
      layers.push_back({{"shape", {L.in, L.out}}, {"weight", L.weight}, {"bias", L.bias}});
    }
    cols.push_back({{"layers", layers}});
  }
  j["columns"] = cols;
  return j.dump();
}

PretrainedBasisModel PretrainedBasisModel::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("basis bank is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "tsdfnet-basis-bank") throw DataError("not a basis bank file");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported basis bank version");
    BasisFamily fam;
    fam.kind = basis_kind_from_string(j.at("family").at("kind").get<std::string>());
    fam.k = j.at("family").at("k").get<int>();
    if (fam.kind == BasisKind::Custom) {
      fam.custom_name = j["family"].value("name", "custom");
      fam.custom_count = j.at("columns").size();
    }
    std::vector<ColumnWeights> cols;
    for (const auto& c : j.at("columns")) {
      ColumnWeights cw;
      for (const auto& l : c.at("layers")) {
        LayerWeights lw;
        lw.in = l.at("shape").at(0).get<std::size_t>();
        lw.out = l.at("shape").at(1).get<std::size_t>();
        lw.weight = l.at("weight").get<std::vector<double>>();
        lw.bias = l.at("bias").get<std::vector<double>>();
        if (lw.weight.size() != lw.in * lw.out || lw.bias.size() != lw.out) {
          throw DataError("basis bank layer has inconsistent sizes");
        }
        cw.push_back(std::move(lw));
      }
      if (cw.empty() || cw.front().in != 1 || cw.back().out != 1) throw DataError("basis column network must map 1 -> 1");
      cols.push_back(std::move(cw));
    }
    if (fam.kind != BasisKind::Custom && cols.size() != fam.count()) {
      throw DataError("basis bank has " + std::to_string(cols.size()) + " columns, family " + fam.label() + " needs " +
                      std::to_string(fam.count()));
    }
    PretrainedBasisModel m(fam, std::move(cols));
    m.max_error_ = j.value("max_error", -1.0);
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed basis bank: ") + e.what());
  }
}

void PretrainedBasisModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json() << '\n';
}

PretrainedBasisModel PretrainedBasisModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read basis bank " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

namespace {

PretrainedBasisModel::ColumnWeights snapshot(const Mlp& mlp) {
  PretrainedBasisModel::ColumnWeights cw;
  for (const auto& l : mlp.layers()) {
    PretrainedBasisModel::LayerWeights lw;
    lw.in = l.in();
    lw.out = l.out();
    lw.weight.assign(l.weight().data().begin(), l.weight().data().end());
    lw.bias.assign(l.bias().data().begin(), l.bias().data().end());
    cw.push_back(std::move(lw));
  }
  return cw;
}

PretrainedBasisModel::ColumnWeights fit_column(const BasisFamily& family, std::size_t column,
                                               const PretrainOptions& opts) {
  std::mt19937_64 rng(opts.seed * 1000003ULL + column);
  ParameterSet ps;
  std::vector<std::size_t> widths{1};
  widths.insert(widths.end(), opts.hidden.begin(), opts.hidden.end());
  widths.push_back(1);
  Mlp net(ps, "col", widths, Activation::Tanh, rng);
  {
    // Spread the first-layer tanh units across [-1, 1] instead of leaving
    // them in their near-linear range.
    std::uniform_real_distribution<double> wu(-opts.first_layer_scale, opts.first_layer_scale);
    for (double& v : ps.items()[0].value.mutable_data()) v = wu(rng);
    for (double& v : ps.items()[1].value.mutable_data()) v = wu(rng);
  }

  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> ts(opts.samples), ys(opts.samples);
  for (std::size_t i = 0; i < opts.samples; ++i) {
    ts[i] = u(rng);
    ys[i] = family.evaluate(column, ts[i]);
  }
  std::vector<std::size_t> order(opts.samples);
  std::iota(order.begin(), order.end(), std::size_t{0});

  AdamState state;
  AdamConfig cfg;
  const ForwardContext ctx;
  const std::size_t steps_per_epoch = (opts.samples + opts.batch - 1) / opts.batch;
  const double total = static_cast<double>(opts.epochs * steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < opts.samples; b += opts.batch) {
      const std::size_t n = std::min(opts.batch, opts.samples - b);
      std::vector<double> x(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = ts[order[b + i]];
        y[i] = ys[order[b + i]];
      }
      Tensor pred = net(Tensor::from({n, 1}, std::move(x)), ctx);
      Tensor loss = mse_loss(pred, Tensor::from({n, 1}, std::move(y)));
      ps.zero_grad();
      backward(loss);
      // Cosine decay to 1% of the initial rate over the whole run.
      const double progress = static_cast<double>(step++) / total;
      cfg.lr = opts.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress)));
      adam_step(ps.items(), state, cfg);
    }
  }
  return snapshot(net);
}

}  // namespace

PretrainedBasisModel pretrain_basis_model(const BasisFamily& family, const PretrainOptions& opts) {
  family.validate();
  if (opts.batch == 0 || opts.samples == 0 || opts.epochs == 0) throw ConfigError("pretraining needs samples, epochs and batch > 0");
  const std::size_t m = family.count();
  std::vector<PretrainedBasisModel::ColumnWeights> cols;
  cols.reserve(m);
  for (std::size_t c = 0; c < m; ++c) cols.push_back(fit_column(family, c, opts));
  PretrainedBasisModel model(family, std::move(cols));
  const auto errs = model.column_errors(opts.check_points);
  const double worst = *std::max_element(errs.begin(), errs.end());
  model.set_max_error(worst);
  if (worst > opts.tolerance) {
    const auto bad = static_cast<std::size_t>(std::max_element(errs.begin(), errs.end()) - errs.begin());
    throw NumericError("basis pretraining failed for " + family.label() + ": column " + std::to_string(bad) +
                       " max error " + std::to_string(worst) + " > " + std::to_string(opts.tolerance));
  }
  return model;
}

BasisNetworks::BasisNetworks(ParameterSet& ps, const std::string& name, const PretrainedBasisModel& bank,
                             bool trainable) {
  ParameterSet& target = trainable ? ps : frozen_params_;
  std::mt19937_64 dummy(0);
  for (std::size_t c = 0; c < bank.count(); ++c) {
    const auto& cw = bank.columns()[c];
    std::vector<std::size_t> widths{cw.front().in};
    for (const auto& l : cw) widths.push_back(l.out);
    const std::size_t first = target.items().size();
    nets_.emplace_back(target, name + ".col" + std::to_string(c), widths, Activation::Tanh, dummy);
    // Overwrite the fresh init with the pretrained weights.
    std::size_t li = 0;
    for (std::size_t p = first; p < target.items().size(); p += 2, ++li) {
      auto w = target.items()[p].value.mutable_data();
      auto b = target.items()[p + 1].value.mutable_data();
      std::copy(cw[li].weight.begin(), cw[li].weight.end(), w.begin());
      std::copy(cw[li].bias.begin(), cw[li].bias.end(), b.begin());
    }
  }
  if (!trainable) {
    for (auto& it : frozen_params_.items()) it.value.set_requires_grad(false);
  }
}

Tensor BasisNetworks::evaluate(const TimeGrid& grid) const {
  Tensor t = Tensor::from({grid.L, 1}, grid.t);
  const ForwardContext ctx;
  std::vector<Tensor> cols;
  cols.reserve(nets_.size());
  for (const auto& net : nets_) cols.push_back(net(t, ctx));
  return concat_last_dim(cols);
}

}  // namespace tsdf
