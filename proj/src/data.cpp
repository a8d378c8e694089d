#include "tsdf/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "tsdf/errors.hpp"

namespace tsdf {

ColumnRole column_role_from_string(const std::string& s) {
  if (s == "target") return ColumnRole::Target;
  if (s == "hist_exog") return ColumnRole::HistExog;
  if (s == "future_exog") return ColumnRole::FutureExog;
  throw ConfigError("unknown column role '" + s + "' (expected target, hist_exog or future_exog)");
}

ColumnType column_type_from_string(const std::string& s) {
  if (s == "continuous") return ColumnType::Continuous;
  if (s == "discrete") return ColumnType::Discrete;
  throw ConfigError("unknown column type '" + s + "' (expected continuous or discrete)");
}

std::string to_string(ColumnRole r) {
  switch (r) {
    case ColumnRole::Target: return "target";
    case ColumnRole::HistExog: return "hist_exog";
    default: return "future_exog";
  }
}

std::string to_string(ColumnType t) { return t == ColumnType::Continuous ? "continuous" : "discrete"; }

std::size_t SeriesDataset::target_index() const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].schema.role == ColumnRole::Target) return i;
  }
  throw DataError("dataset has no target column");
}

std::vector<std::size_t> SeriesDataset::columns_with(ColumnRole role, ColumnType type) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].schema.role == role && columns[i].schema.type == type) out.push_back(i);
  }
  return out;
}

void SeriesDataset::fit(std::size_t train_rows) {
  if (train_rows == 0 || train_rows > length()) {
    throw UsageError("standardization needs 1.." + std::to_string(length()) + " training rows, got " +
                     std::to_string(train_rows));
  }
  stats_.assign(columns.size(), {});
  vocab_.clear();
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const Column& col = columns[c];
    if (col.schema.type == ColumnType::Discrete) {
      std::set<std::string> seen;
      for (std::size_t r = 0; r < train_rows; ++r) {
        if (!col.missing[r]) seen.insert(col.labels[r]);
      }
      std::map<std::string, std::size_t> v;
      std::size_t next = 1;
      for (const auto& s : seen) v[s] = next++;
      vocab_[c] = std::move(v);
      continue;
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < train_rows; ++r) {
      if (!col.missing[r]) {
        sum += col.values[r];
        ++n;
      }
    }
    Standardization s;
    if (n > 0) {
      s.mean = sum / static_cast<double>(n);
      double var = 0.0;
      for (std::size_t r = 0; r < train_rows; ++r) {
        if (!col.missing[r]) var += (col.values[r] - s.mean) * (col.values[r] - s.mean);
      }
      var /= static_cast<double>(n);
      s.std = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    stats_[c] = s;
  }
}

double SeriesDataset::scaled(std::size_t col, std::size_t row) const {
  const Column& c = columns[col];
  if (c.missing[row]) return 0.0;
  const auto& s = stats_.at(col);
  return (c.values[row] - s.mean) / s.std;
}

double SeriesDataset::unscale(std::size_t col, double z) const {
  const auto& s = stats_.at(col);
  return z * s.std + s.mean;
}

std::size_t SeriesDataset::category(std::size_t col, std::size_t row) const {
  const Column& c = columns[col];
  if (c.missing[row]) return 0;
  const auto& v = vocab_.at(col);
  auto it = v.find(c.labels[row]);
  return it == v.end() ? 0 : it->second;
}

std::size_t SeriesDataset::vocab_size(std::size_t col) const { return vocab_.at(col).size(); }

void SeriesDataset::set_vocabulary(std::size_t col, std::map<std::string, std::size_t> v) { vocab_[col] = std::move(v); }

// --- CSV -----------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "nan" || s == "NaN" || s == "null"; }

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

SeriesDataset parse_csv(const std::string& text, const Schema& schema, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file, header row expected");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  auto find_col = [&](const std::string& name) -> long {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<long>(i);
    }
    return -1;
  };

  std::size_t targets = 0;
  for (const auto& c : schema.columns) targets += c.role == ColumnRole::Target;
  if (targets != 1) throw ConfigError("schema must name exactly one target column");

  std::vector<long> idx;
  for (const auto& c : schema.columns) {
    const long i = find_col(c.name);
    if (i < 0) {
      if (c.role == ColumnRole::Target) throw DataError(source + ": target column '" + c.name + "' not found in header");
      throw ConfigError("schema column '" + c.name + "' not found in " + source);
    }
    idx.push_back(i);
  }
  long ts_idx = -1;
  if (!schema.timestamp.empty()) {
    ts_idx = find_col(schema.timestamp);
    if (ts_idx < 0) throw ConfigError("timestamp column '" + schema.timestamp + "' not found in " + source);
  }

  SeriesDataset ds;
  for (const auto& c : schema.columns) ds.columns.push_back(Column{c, {}, {}, {}});
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    }
    ds.timestamps.push_back(ts_idx >= 0 ? trim(cells[static_cast<std::size_t>(ts_idx)]) : std::to_string(row - 1));
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      const std::string cell = trim(cells[static_cast<std::size_t>(idx[c])]);
      Column& col = ds.columns[c];
      const bool miss = is_missing(cell);
      col.missing.push_back(miss);
      if (col.schema.type == ColumnType::Discrete) {
        col.labels.push_back(miss ? std::string() : cell);
        col.values.push_back(0.0);
        continue;
      }
      double v = 0.0;
      if (!miss) {
        const char* b = cell.data();
        const char* e = b + cell.size();
        auto [p, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || p != e || !std::isfinite(v)) {
          throw DataError(source + ": row " + std::to_string(row) + ", column '" + col.schema.name +
                          "': cannot parse '" + cell + "' as a number");
        }
      }
      col.values.push_back(v);
    }
  }
  if (ds.length() == 0) throw DataError(source + ": no data rows");
  return ds;
}

SeriesDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema, path);
}

void export_csv(const SeriesDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "timestamp";
  for (const auto& c : ds.columns) out << ',' << quote(c.schema.name);
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < ds.length(); ++r) {
    out << quote(ds.timestamps[r]);
    for (const auto& c : ds.columns) {
      out << ',';
      if (c.missing[r]) continue;
      if (c.schema.type == ColumnType::Discrete) {
        out << quote(c.labels[r]);
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", c.values[r]);
        out << buf;
      }
    }
    out << '\n';
  }
}

// --- windows -------------------------------------------------------------------

std::size_t window_count(std::size_t length, const WindowSpec& spec) {
  if (spec.w < 1 || spec.h < 1 || spec.stride < 1) throw ConfigError("window needs w, h, stride >= 1");
  if (length < spec.w + spec.h) {
    throw UsageError("series of length " + std::to_string(length) + " is too short: need at least w + h = " +
                     std::to_string(spec.w + spec.h) + " rows");
  }
  return (length - spec.w - spec.h) / spec.stride + 1;
}

WindowSplit make_windows(std::size_t length, const WindowSpec& spec, const SplitSpec& split) {
  const std::size_t n = window_count(length, spec);
  std::size_t test_rows = split.test_points;
  if (test_rows == 0) {
    if (!(split.test_fraction > 0.0 && split.test_fraction < 1.0)) {
      throw ConfigError("test_fraction must be in (0,1)");
    }
    test_rows = static_cast<std::size_t>(std::llround(static_cast<double>(length) * split.test_fraction));
  }
  if (test_rows == 0 || test_rows >= length) throw ConfigError("test split leaves no training or no test rows");
  WindowSplit out;
  out.boundary = length - test_rows;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t s = k * spec.stride;
    if (s + spec.w + spec.h <= out.boundary) out.train.push_back({s, 0});
    if (s + spec.w >= out.boundary) out.test.push_back({s, 0});
  }
  if (out.test.empty()) {
    const std::size_t s = length - spec.w - spec.h;
    out.test.push_back({s, out.boundary > s + spec.w ? out.boundary - (s + spec.w) : 0});
  }
  return out;
}

ExogenousLayout ExogenousLayout::from(const SeriesDataset& ds) {
  ExogenousLayout l;
  for (std::size_t i = 0; i < ds.columns.size(); ++i) {
    const auto& s = ds.columns[i].schema;
    if (s.role == ColumnRole::Target) continue;
    const bool cat = s.type == ColumnType::Discrete;
    // Future-known columns are also observed over the history.
    (cat ? l.hist_cat : l.hist_cont).push_back(i);
    if (s.role == ColumnRole::FutureExog) (cat ? l.fut_cat : l.fut_cont).push_back(i);
  }
  for (std::size_t c : l.hist_cat) l.cat_vocab_hist.push_back(ds.fitted() ? ds.vocab_size(c) : 0);
  for (std::size_t c : l.fut_cat) l.cat_vocab_fut.push_back(ds.fitted() ? ds.vocab_size(c) : 0);
  return l;
}

Batch make_batch(const SeriesDataset& ds, const ExogenousLayout& layout, const WindowSpec& spec,
                 const std::vector<Window>& windows) {
  if (!ds.fitted()) throw UsageError("dataset must be fitted before batching");
  const std::size_t B = windows.size(), w = spec.w, h = spec.h;
  const std::size_t tgt = ds.target_index();
  std::vector<double> x(B * w), y(B * h);
  std::vector<double> hc(B * w * layout.hist_cont.size()), fc(B * h * layout.fut_cont.size());
  Batch b;
  b.windows = windows;
  b.hist_cat.cols = layout.hist_cat.size();
  b.fut_cat.cols = layout.fut_cat.size();
  b.hist_cat.index.resize(B * w * b.hist_cat.cols);
  b.hist_cat.present.resize(B * w * b.hist_cat.cols);
  b.fut_cat.index.resize(B * h * b.fut_cat.cols);
  b.fut_cat.present.resize(B * h * b.fut_cat.cols);
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t s = windows[i].start;
    if (s + w + h > ds.length()) throw UsageError("window exceeds series length");
    for (std::size_t t = 0; t < w; ++t) {
      const std::size_t r = s + t;
      x[i * w + t] = ds.scaled(tgt, r);
      for (std::size_t c = 0; c < layout.hist_cont.size(); ++c) {
        hc[(i * w + t) * layout.hist_cont.size() + c] = ds.scaled(layout.hist_cont[c], r);
      }
      for (std::size_t c = 0; c < b.hist_cat.cols; ++c) {
        const std::size_t k = (i * w + t) * b.hist_cat.cols + c;
        b.hist_cat.index[k] = ds.category(layout.hist_cat[c], r);
        b.hist_cat.present[k] = ds.columns[layout.hist_cat[c]].missing[r] ? 0.0 : 1.0;
      }
    }
    for (std::size_t t = 0; t < h; ++t) {
      const std::size_t r = s + w + t;
      y[i * h + t] = ds.scaled(tgt, r);
      for (std::size_t c = 0; c < layout.fut_cont.size(); ++c) {
        fc[(i * h + t) * layout.fut_cont.size() + c] = ds.scaled(layout.fut_cont[c], r);
      }
      for (std::size_t c = 0; c < b.fut_cat.cols; ++c) {
        const std::size_t k = (i * h + t) * b.fut_cat.cols + c;
        b.fut_cat.index[k] = ds.category(layout.fut_cat[c], r);
        b.fut_cat.present[k] = ds.columns[layout.fut_cat[c]].missing[r] ? 0.0 : 1.0;
      }
    }
  }
  b.x = Tensor::from({B, w}, std::move(x));
  b.y = Tensor::from({B, h}, std::move(y));
  b.hist_cont = Tensor::from({B, w, layout.hist_cont.size()}, std::move(hc));
  b.fut_cont = Tensor::from({B, h, layout.fut_cont.size()}, std::move(fc));
  return b;
}

}  // namespace tsdf
