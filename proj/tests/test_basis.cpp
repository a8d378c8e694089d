#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "tsdf/basis.hpp"
#include "tsdf/errors.hpp"

using namespace tsdf;

TEST_CASE("time grid examples") {
  TimeGrid g = make_time_grid(2, 1);
  CHECK(g.L == 4);
  REQUIRE(g.t.size() == 4);
  const double want[] = {-0.5, -0.25, 0.0, 0.25};
  for (int i = 0; i < 4; ++i) CHECK(g.t[i] == doctest::Approx(want[i]).epsilon(1e-15));

  TimeGrid g1 = make_time_grid(1, 1);
  CHECK(g1.t[0] == doctest::Approx(-1.0 / 3.0));
  CHECK(g1.t[1] == 0.0);
  CHECK(g1.t[2] == doctest::Approx(1.0 / 3.0));

  CHECK_THROWS_AS(make_time_grid(0, 3), ConfigError);
  CHECK_THROWS_AS(make_time_grid(3, 0), ConfigError);
}

TEST_CASE("time grid invariants over random sizes") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> d(1, 400);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t w = d(rng), h = d(rng);
    TimeGrid g = make_time_grid(w, h);
    REQUIRE(g.t.size() == w + h + 1);
    CHECK(g.t[w] == 0.0);
    CHECK(g.t.front() == doctest::Approx(-static_cast<double>(w) / g.L));
    CHECK(g.t.back() == doctest::Approx(static_cast<double>(h) / g.L));
    for (std::size_t i = 1; i < g.L; ++i) {
      CHECK(g.t[i] > g.t[i - 1]);
      CHECK(g.t[i] - g.t[i - 1] == doctest::Approx(1.0 / g.L).epsilon(1e-9));
    }
    CHECK(std::abs(g.t.front()) < 1.0);
    CHECK(std::abs(g.t.back()) < 1.0);
  }
}

TEST_CASE("analytic basis values and column counts") {
  TimeGrid g = make_time_grid(2, 1);
  BasisSet p = analytic_basis(g, BasisFamily::poly(2));
  CHECK(p.C.shape() == Shape{4, 2});
  const double want[] = {-.5, .25, -.25, .0625, 0, 0, .25, .0625};
  for (int i = 0; i < 8; ++i) CHECK(p.C.at(i) == doctest::Approx(want[i]).epsilon(1e-15));

  BasisSet t1 = analytic_basis(g, BasisFamily::trig(1));
  // Columns: sin(-t), cos(-t), cos(t), sin(t); row 2 is t = 0.
  CHECK(t1.C.at(2 * 4 + 3) == 0.0);
  CHECK(t1.C.at(2 * 4 + 2) == 1.0);

  CHECK(BasisFamily::trig(3).count() == 12);
  CHECK(BasisFamily::poly(5).count() == 5);
  CHECK_THROWS_AS(analytic_basis(g, BasisFamily::poly(0)), ConfigError);
  CHECK_THROWS_AS(analytic_basis(g, BasisFamily::trig(-1)), ConfigError);
}

TEST_CASE("trig column ordering") {
  BasisFamily f = BasisFamily::trig(2);
  const double t = 0.37;
  const double want[] = {std::sin(-2 * t), std::cos(-2 * t), std::sin(-t), std::cos(-t),
                         std::cos(t),      std::sin(t),      std::cos(2 * t), std::sin(2 * t)};
  for (std::size_t c = 0; c < 8; ++c) CHECK(f.evaluate(c, t) == doctest::Approx(want[c]).epsilon(1e-15));
}

TEST_CASE("split basis partitions rows") {
  TimeGrid g = make_time_grid(2, 1);
  BasisSet s = analytic_basis(g, BasisFamily::trig(1));
  CHECK(s.Cp.dim(0) == 2);
  CHECK(s.Cq.dim(0) == 1);

  TimeGrid g2 = make_time_grid(5, 3);
  BasisSet s2 = analytic_basis(g2, BasisFamily::poly(3));
  const std::size_t m = 3;
  // Cp rows then Cq rows reconstruct C without the t = 0 row.
  for (std::size_t r = 0; r < g2.L; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      if (r < 5) CHECK(s2.Cp.at(r * m + c) == s2.C.at(r * m + c));
      if (r > 5) CHECK(s2.Cq.at((r - 6) * m + c) == s2.C.at(r * m + c));
    }
  }
  CHECK(s2.Cp.dim(0) + s2.Cq.dim(0) + 1 == g2.L);

  BasisFamily f = BasisFamily::trig(1);
  BasisSet s3 = analytic_basis(g2, f);
  for (std::size_t i = 0; i < 3; ++i) {
    const double t = static_cast<double>(i + 1) / static_cast<double>(g2.L);
    for (std::size_t c = 0; c < 4; ++c) CHECK(s3.Cq.at(i * 4 + c) == doctest::Approx(f.evaluate(c, t)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(split_basis(Tensor::zeros({4, 2}), g2), ShapeError);
}

TEST_CASE("pretrained basis networks meet the tolerance") {
  PretrainedBasisModel p1 = pretrain_basis_model(BasisFamily::poly(1));
  CHECK(std::abs(p1.evaluate(0, 0.0)) <= 0.02);

  PretrainedBasisModel t1 = pretrain_basis_model(BasisFamily::trig(1));
  CHECK(std::abs(t1.evaluate(1, 0.0) - 1.0) <= 0.02);  // cos(-t) at 0

  for (const auto& fam : {BasisFamily::poly(2), BasisFamily::trig(2)}) {
    PretrainedBasisModel m = pretrain_basis_model(fam);
    // Independent dense-grid comparison.
    for (std::size_t c = 0; c < m.count(); ++c) {
      double worst = 0.0;
      for (int i = 0; i <= 1000; ++i) {
        const double t = -1.0 + 2.0 * i / 1000.0;
        worst = std::max(worst, std::abs(m.evaluate(c, t) - fam.evaluate(c, t)));
      }
      CHECK_MESSAGE(worst <= 0.02, fam.label() << " column " << c << " error " << worst);
    }
  }
}

TEST_CASE("pretraining reports failure with the achieved error") {
  PretrainOptions o;
  o.samples = 40;
  o.epochs = 1;
  o.tolerance = 1e-9;
  try {
    pretrain_basis_model(BasisFamily::trig(1), o);
    FAIL("expected failure");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("max error") != std::string::npos);
  }
}

TEST_CASE("basis bank round-trips through JSON and feeds trainable networks") {
  PretrainOptions o;
  o.samples = 400;
  o.epochs = 2;
  o.tolerance = 10.0;
  PretrainedBasisModel m = pretrain_basis_model(BasisFamily::poly(2), o);
  const std::string path = "test_bank_roundtrip.json";
  m.save(path);
  PretrainedBasisModel back = PretrainedBasisModel::load(path);
  std::remove(path.c_str());
  REQUIRE(back.count() == 2);
  CHECK(back.family().kind == BasisKind::Poly);
  CHECK(back.family().k == 2);
  for (double t : {-0.9, -0.1, 0.0, 0.4, 1.0}) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(back.evaluate(c, t) == m.evaluate(c, t));
  }
  CHECK_THROWS_AS(PretrainedBasisModel::from_json("{"), DataError);
  CHECK_THROWS_AS(PretrainedBasisModel::from_json("{\"format\":\"other\"}"), DataError);

  ParameterSet ps;
  BasisNetworks nets(ps, "bank", back, true);
  CHECK(ps.items().size() == 2 * 3 * 2);
  TimeGrid g = make_time_grid(3, 2);
  Tensor C = nets.evaluate(g);
  CHECK(C.shape() == Shape{6, 2});
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(C.at(r * 2 + c) == doctest::Approx(back.evaluate(c, g.t[r])).epsilon(1e-12));
  }
  backward(sum(C));
  CHECK(ps.items()[0].value.has_grad());

  ParameterSet frozen;
  BasisNetworks fixed(frozen, "bank", back, false);
  CHECK(frozen.items().empty());
  CHECK(fixed.evaluate(g).at(3) == C.at(3));
}
