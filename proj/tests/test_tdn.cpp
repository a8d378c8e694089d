#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tsdf/errors.hpp"
#include "tsdf/tdn.hpp"

using namespace tsdf;

namespace {

void set_all(Tensor t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

void zero_biases(ParameterSet& ps) {
  for (auto& it : ps.items()) {
    if (it.name.size() > 5 && it.name.compare(it.name.size() - 5, 5, ".bias") == 0) set_all(it.value, 0.0);
  }
}

struct Stack {
  ParameterSet ps;
  std::vector<TdnBlock> blocks;
  std::vector<BasisSet> bases;
};

void build(Stack& s, std::size_t n, std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const TimeGrid g = make_time_grid(w, h);
  const BasisFamily fams[] = {BasisFamily::trig(2), BasisFamily::poly(3)};
  for (std::size_t i = 0; i < n; ++i) {
    const BasisFamily& f = fams[i % 2];
    s.blocks.emplace_back(s.ps, "b" + std::to_string(i), w, f.count(), EncoderShape{2, 16}, rng);
    s.bases.push_back(analytic_basis(g, f));
  }
}

}  // namespace

TEST_CASE("zero backcast coefficients give a zero backcast") {
  std::mt19937_64 rng(1);
  ParameterSet ps;
  TdnBlock blk(ps, "b", 6, 8, EncoderShape{2, 16}, rng);
  set_all(blk.lp().weight(), 0.0);
  set_all(blk.lp().bias(), 0.0);
  BasisSet basis = analytic_basis(make_time_grid(6, 3), BasisFamily::trig(2));
  BlockOutput o = block_forward(blk, oracle::random_tensor({4, 6}, rng), basis, ForwardContext{});
  for (double v : o.P.data()) CHECK(v == 0.0);
  for (double v : o.W.data()) CHECK(v == 0.0);
}

TEST_CASE("constant basis column with Q = 2 gives a forecast of twos") {
  std::mt19937_64 rng(2);
  ParameterSet ps;
  BasisFamily one = BasisFamily::custom("one", 1, [](std::size_t, double) { return 1.0; });
  TdnBlock blk(ps, "b", 5, 1, EncoderShape{2, 8}, rng);
  set_all(blk.lq().weight(), 0.0);
  set_all(blk.lq().bias(), 2.0);
  BasisSet basis = analytic_basis(make_time_grid(5, 4), one);
  BlockOutput o = block_forward(blk, oracle::random_tensor({3, 5}, rng), basis, ForwardContext{});
  CHECK(o.V.shape() == Shape{3, 4});
  for (double v : o.V.data()) CHECK(v == 2.0);
}

TEST_CASE("block backcast and forecast match a dense matmul oracle") {
  std::mt19937_64 rng(3);
  ParameterSet ps;
  const std::size_t w = 7, h = 3, B = 5;
  BasisSet basis = analytic_basis(make_time_grid(w, h), BasisFamily::trig(2));
  const std::size_t m = 8;
  TdnBlock blk(ps, "b", w, m, EncoderShape{3, 16}, rng);
  BlockOutput o = block_forward(blk, oracle::random_tensor({B, w}, rng), basis, ForwardContext{});
  std::vector<double> cpt(m * w), cqt(m * h);
  for (std::size_t r = 0; r < w; ++r)
    for (std::size_t c = 0; c < m; ++c) cpt[c * w + r] = basis.Cp.at(r * m + c);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < m; ++c) cqt[c * h + r] = basis.Cq.at(r * m + c);
  const std::vector<double> P(o.P.data().begin(), o.P.data().end()), Q(o.Q.data().begin(), o.Q.data().end());
  const auto W = oracle::dense_matmul(P, cpt, B, m, w);
  const auto V = oracle::dense_matmul(Q, cqt, B, m, h);
  for (std::size_t i = 0; i < W.size(); ++i) CHECK(std::abs(o.W.at(i) - W[i]) <= 1e-12);
  for (std::size_t i = 0; i < V.size(); ++i) CHECK(std::abs(o.V.at(i) - V[i]) <= 1e-12);
}

TEST_CASE("block rejects mismatched basis or window") {
  std::mt19937_64 rng(4);
  ParameterSet ps;
  TdnBlock blk(ps, "b", 6, 3, EncoderShape{1, 4}, rng);
  BasisSet wrong_w = analytic_basis(make_time_grid(5, 2), BasisFamily::poly(3));
  BasisSet wrong_m = analytic_basis(make_time_grid(6, 2), BasisFamily::poly(2));
  BasisSet ok = analytic_basis(make_time_grid(6, 2), BasisFamily::poly(3));
  CHECK_THROWS_AS(block_forward(blk, Tensor::zeros({2, 6}), wrong_w, {}), ShapeError);
  CHECK_THROWS_AS(block_forward(blk, Tensor::zeros({2, 6}), wrong_m, {}), ShapeError);
  CHECK_THROWS_AS(block_forward(blk, Tensor::zeros({2, 5}), ok, {}), ShapeError);
  CHECK_THROWS_AS(tdn_forward({}, {}, Tensor::zeros({2, 6}), {}), ConfigError);
}

TEST_CASE("a block that reproduces its input leaves a zero residual") {
  const std::size_t w = 4, h = 2;
  std::mt19937_64 rng(5);
  ParameterSet ps;
  // One indicator column per history step makes Cp the identity.
  const TimeGrid g = make_time_grid(w, h);
  BasisFamily ind = BasisFamily::custom("ind", w, [g](std::size_t c, double t) {
    return std::abs(t - g.t[c]) < 1e-12 ? 1.0 : 0.0;
  });
  TdnBlock blk(ps, "b", w, w, EncoderShape{2, w}, rng);
  // Identity encoder and identity Lp, no biases: P = relu(relu(X)) = X for X > 0.
  for (auto& it : ps.items()) {
    auto d = it.value.mutable_data();
    if (it.name.find(".bias") != std::string::npos) {
      std::fill(d.begin(), d.end(), 0.0);
    } else {
      std::fill(d.begin(), d.end(), 0.0);
      for (std::size_t i = 0; i < w; ++i) d[i * w + i] = 1.0;
    }
  }
  std::vector<TdnBlock> blocks{blk};
  Tensor x0 = oracle::random_tensor({3, w}, rng, 0.5, 2.0);
  TdnOutput o = tdn_forward(blocks, {analytic_basis(g, ind)}, x0, {});
  for (double v : o.residual.data()) CHECK(std::abs(v) <= 1e-15);
}

TEST_CASE("zero input with zero-bias blocks gives zero forecast and residual") {
  Stack s;
  build(s, 3, 6, 3, 6);
  zero_biases(s.ps);
  TdnOutput o = tdn_forward(s.blocks, s.bases, Tensor::zeros({2, 6}), {});
  for (double v : o.V.data()) CHECK(v == 0.0);
  for (double v : o.residual.data()) CHECK(v == 0.0);
}

TEST_CASE("telescoping residual and forecast additivity") {
  for (std::size_t n : {1, 2, 3, 4, 8}) {
    Stack s;
    build(s, n, 9, 4, 100 + n);
    std::mt19937_64 rng(n);
    Tensor x0 = oracle::random_tensor({5, 9}, rng, -2.0, 2.0);
    TdnOutput o = tdn_forward(s.blocks, s.bases, x0, {});
    REQUIRE(o.per_block.size() == n);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      double r = x0.at(i);
      for (const auto& b : o.per_block) r -= b.W.at(i);
      CHECK(std::abs(o.residual.at(i) - r) <= 1e-9);
    }
    for (std::size_t i = 0; i < o.V.size(); ++i) {
      double v = 0.0;
      for (const auto& b : o.per_block) v += b.V.at(i);
      CHECK(std::abs(o.V.at(i) - v) <= 1e-9);
    }
    for (const auto& b : o.per_block) {
      CHECK(b.W.shape() == Shape{5, 9});
      CHECK(b.V.shape() == Shape{5, 4});
    }
  }
}

TEST_CASE("perturbing one block's forecast head changes V by that block's change only") {
  Stack s;
  build(s, 3, 8, 5, 7);
  std::mt19937_64 rng(8);
  Tensor x0 = oracle::random_tensor({4, 8}, rng);
  TdnOutput before = tdn_forward(s.blocks, s.bases, x0, {});
  Tensor wq = s.blocks[1].lq().weight();
  for (double& v : wq.mutable_data()) v += 0.05;
  TdnOutput after = tdn_forward(s.blocks, s.bases, x0, {});
  for (std::size_t i = 0; i < before.V.size(); ++i) {
    const double dv = after.V.at(i) - before.V.at(i);
    const double dv1 = after.per_block[1].V.at(i) - before.per_block[1].V.at(i);
    CHECK(dv == doctest::Approx(dv1).epsilon(1e-12));
    CHECK(after.per_block[0].V.at(i) == before.per_block[0].V.at(i));
    CHECK(after.per_block[2].V.at(i) == before.per_block[2].V.at(i));
  }
}

TEST_CASE("residual penalty sends gradient to the first block's backcast head") {
  Stack s;
  build(s, 2, 6, 3, 9);
  std::mt19937_64 rng(10);
  Tensor x0 = oracle::random_tensor({4, 6}, rng);
  TdnOutput o = tdn_forward(s.blocks, s.bases, x0, {});
  backward(mean(square(o.residual)));
  const Tensor& w = s.blocks[0].lp().weight();
  REQUIRE(w.has_grad());
  double norm = 0.0;
  for (double g : w.grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("shape contract over random window sizes") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> d(1, 30);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = d(rng), h = d(rng);
    ParameterSet ps;
    TdnStack stack(ps, "tdn", w, {BasisSource::analytic(make_time_grid(w, h), BasisFamily::trig(1))}, 2,
                   EncoderShape{1, 8}, rng);
    TdnOutput o = stack.forward(oracle::random_tensor({2, w}, rng), {});
    for (const auto& b : o.per_block) {
      CHECK(b.W.shape() == Shape{2, w});
      CHECK(b.V.shape() == Shape{2, h});
    }
  }
}

TEST_CASE("pretrained basis source evaluates the bank on the grid and trains") {
  PretrainOptions opts;
  opts.samples = 200;
  opts.epochs = 1;
  opts.tolerance = 100.0;
  PretrainedBasisModel bank = pretrain_basis_model(BasisFamily::poly(2), opts);
  const TimeGrid g = make_time_grid(5, 3);
  std::mt19937_64 rng(13);

  ParameterSet ps;
  TdnStack stack(ps, "tdn", 5, {BasisSource::networks(ps, "basis0", g, bank, true)}, 2, EncoderShape{1, 8}, rng);
  BasisSet set = stack.sources()[0].evaluate();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(set.Cp.at(r * 2 + c) == doctest::Approx(bank.evaluate(c, g.t[r])).epsilon(1e-12));
  TdnOutput o = stack.forward(oracle::random_tensor({3, 5}, rng), {});
  backward(sum(o.V));
  CHECK(ps.find("basis0.col0.0.weight")->has_grad());
  CHECK(stack.block_labels() == std::vector<std::string>{"poly2", "poly2"});

  ParameterSet frozen;
  BasisSource fixed = BasisSource::networks(frozen, "basis0", g, bank, false);
  CHECK(frozen.items().empty());
  CHECK(fixed.evaluate().Cq.at(1) == doctest::Approx(set.Cq.at(1)).epsilon(1e-12));
}
