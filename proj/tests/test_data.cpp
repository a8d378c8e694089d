#include <doctest.h>

#include <array>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "tsdf/data.hpp"
#include "tsdf/errors.hpp"
#include "tsdf/lorenz.hpp"

using namespace tsdf;
namespace fs = std::filesystem;

namespace {

Schema target_only() { return Schema{{{"y", ColumnRole::Target, ColumnType::Continuous}}, ""}; }

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "tsdf_test_data";
  fs::create_directories(dir);
  return dir / name;
}

using State = std::array<double, 3>;

State lorenz63(const State& s, double sigma, double rho, double beta) {
  return {sigma * (s[1] - s[0]), s[0] * (rho - s[2]) - s[1], s[0] * s[1] - beta * s[2]};
}

State rk4(const State& s, double dt, double sigma, double rho, double beta) {
  auto add = [](const State& a, const State& b, double f) { return State{a[0] + f * b[0], a[1] + f * b[1], a[2] + f * b[2]}; };
  const State k1 = lorenz63(s, sigma, rho, beta);
  const State k2 = lorenz63(add(s, k1, dt / 2), sigma, rho, beta);
  const State k3 = lorenz63(add(s, k2, dt / 2), sigma, rho, beta);
  const State k4 = lorenz63(add(s, k3, dt), sigma, rho, beta);
  State out;
  for (int i = 0; i < 3; ++i) out[i] = s[i] + dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  return out;
}

}  // namespace

TEST_CASE("csv with only a target column") {
  SeriesDataset ds = parse_csv("y\n1\n2\n3\n", target_only());
  CHECK(ds.length() == 3);
  CHECK(ds.columns.size() == 1);
  CHECK(ds.target().values == std::vector<double>{1, 2, 3});
  CHECK(ExogenousLayout::from(ds).empty());
}

TEST_CASE("blank and NA cells are flagged missing") {
  Schema s{{{"y", ColumnRole::Target, ColumnType::Continuous}, {"x", ColumnRole::HistExog, ColumnType::Continuous}}, "t"};
  SeriesDataset ds = parse_csv("t,y,x\na,1,\nb,2,NA\nc,3,4.5\n", s);
  CHECK(ds.timestamps == std::vector<std::string>{"a", "b", "c"});
  CHECK(ds.columns[1].missing == std::vector<bool>{true, true, false});
  CHECK(ds.columns[1].values[2] == 4.5);
  ds.fit(3);
  CHECK(ds.scaled(1, 0) == 0.0);
}

TEST_CASE("export then load reproduces values bit-exactly") {
  Schema s{{{"y", ColumnRole::Target, ColumnType::Continuous},
            {"x", ColumnRole::HistExog, ColumnType::Continuous},
            {"d", ColumnRole::FutureExog, ColumnType::Discrete}},
           "timestamp"};
  SeriesDataset ds;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1e3);
  ds.timestamps = {"0", "1", "2", "3"};
  for (const auto& c : s.columns) {
    Column col;
    col.schema = c;
    col.missing = {false, true, false, false};
    for (int i = 0; i < 4; ++i) {
      col.values.push_back(col.missing[i] ? 0.0 : n(rng) / 7.0);
      col.labels.push_back(col.missing[i] ? "" : "lab" + std::to_string(i % 2));
    }
    if (c.role == ColumnRole::Target) col.missing.assign(4, false), col.values[1] = 1.0 / 3.0;
    if (c.type == ColumnType::Continuous) col.labels.clear();
    ds.columns.push_back(col);
  }
  const fs::path p = temp_file("roundtrip.csv");
  export_csv(ds, p.string());
  SeriesDataset back = load_csv(p.string(), s);
  CHECK(back.timestamps == ds.timestamps);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(back.columns[c].missing == ds.columns[c].missing);
    if (s.columns[c].type == ColumnType::Continuous) {
      for (std::size_t r = 0; r < 4; ++r) CHECK(std::memcmp(&back.columns[c].values[r], &ds.columns[c].values[r], sizeof(double)) == 0);
    } else {
      CHECK(back.columns[c].labels == ds.columns[c].labels);
    }
  }
}

TEST_CASE("load errors name the row and column") {
  Schema s{{{"y", ColumnRole::Target, ColumnType::Continuous}, {"x", ColumnRole::HistExog, ColumnType::Continuous}}, ""};
  try {
    parse_csv("y,x\n1,2\n3,abc\n", s);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("'x'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_csv("x\n1\n", Schema{{{"y", ColumnRole::Target, ColumnType::Continuous}}, ""}), DataError);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", target_only()), DataError);
}

TEST_CASE("window counts") {
  CHECK(window_count(10, {3, 2, 1}) == 6);
  CHECK(window_count(10, {3, 2, 10}) == 1);
  CHECK(window_count(17, {3, 2, 4}) == 4);
  try {
    window_count(4, {3, 2, 1});
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("at least w + h = 5") != std::string::npos);
  }
}

TEST_CASE("monthly series: the test set is exactly the final-year horizon") {
  WindowSplit s = make_windows(144, {60, 12, 1}, SplitSpec{0.1, 12});
  CHECK(s.boundary == 132);
  REQUIRE(s.test.size() == 1);
  CHECK(s.test[0].start == 72);
  CHECK(s.test[0].start + 60 == 132);
  CHECK(s.train.size() == 61);
}

TEST_CASE("no window straddles the train/test boundary") {
  for (std::size_t len : {50, 97, 200}) {
    for (std::size_t stride : {1, 3, 7}) {
      const WindowSpec spec{8, 5, stride};
      WindowSplit s = make_windows(len, spec, SplitSpec{0.2, 0});
      REQUIRE_FALSE(s.test.empty());
      for (const auto& tr : s.train) {
        CHECK(tr.start + spec.w + spec.h <= s.boundary);
        for (const auto& te : s.test) CHECK(tr.start + spec.w + spec.h - 1 < te.start + spec.w + te.score_from);
      }
    }
  }
}

TEST_CASE("standardize then invert reproduces raw values") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(500.0, 120.0);
  std::string csv = "y\n";
  for (int i = 0; i < 50; ++i) csv += std::to_string(n(rng)) + "\n";
  SeriesDataset ds = parse_csv(csv, target_only());
  ds.fit(40);
  for (std::size_t r = 0; r < 50; ++r) CHECK(std::abs(ds.unscale(0, ds.scaled(0, r)) - ds.target().values[r]) <= 1e-9);
  // Train rows only: changing a test row leaves the statistics alone.
  SeriesDataset ds2 = parse_csv(csv, target_only());
  ds2.columns[0].values[45] = 1e9;
  ds2.fit(40);
  CHECK(ds2.stats(0).mean == ds.stats(0).mean);
  CHECK(ds2.stats(0).std == ds.stats(0).std);
}

TEST_CASE("lorenz from the origin stays at the origin") {
  LorenzConfig c;
  c.zero_init = true;
  c.steps = 500;
  c.burn_in = 100;
  for (double v : lorenz_trajectory(c)) CHECK(v == 0.0);
}

TEST_CASE("uncoupled lorenz units match a single-unit integrator") {
  LorenzConfig c;
  c.units = 4;
  c.coupling = 0.0;
  c.steps = 2000;
  c.burn_in = 0;
  c.seed = 11;
  const auto traj = lorenz_trajectory(c);
  const std::size_t dim = 12;
  double worst = 0.0;
  for (std::size_t u = 0; u < 4; ++u) {
    State s{traj[3 * u], traj[3 * u + 1], traj[3 * u + 2]};
    for (std::size_t t = 1; t < c.steps; ++t) {
      s = rk4(s, c.dt, c.sigma, c.rho, c.beta);
      for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(traj[t * dim + 3 * u + k] - s[k]));
    }
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("default lorenz configuration stays bounded and is deterministic") {
  for (std::uint64_t seed : {1, 2, 3}) {
    LorenzConfig c;
    c.seed = seed;
    const auto a = lorenz_trajectory(c);
    REQUIRE(a.size() == 5000 * 90);
    double mx = 0.0;
    for (double v : a) mx = std::max(mx, std::abs(v));
    CHECK(mx < 100.0);
    CHECK(lorenz_trajectory(c) == a);
  }
  LorenzConfig tv;
  tv.time_varying = true;
  tv.steps = 300;
  SeriesDataset ds = lorenz_generate(tv);
  CHECK(ds.columns.size() == 90);
  CHECK(ds.columns[0].schema.role == ColumnRole::Target);
  CHECK(ds.columns[1].schema.name == "u0_y");
  CHECK(ds.columns[89].schema.role == ColumnRole::HistExog);
}

TEST_CASE("an unstable step size raises a divergence error") {
  LorenzConfig c;
  c.units = 2;
  c.dt = 0.5;
  c.steps = 100;
  try {
    lorenz_trajectory(c);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("smaller dt") != std::string::npos);
  }
}
