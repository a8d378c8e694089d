#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "selector_task.hpp"
#include "tsdf/affn.hpp"
#include "tsdf/errors.hpp"

using namespace tsdf;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// y[r, :] = x[r, :] W + b for row-major x [rows, in], W [in, out].
std::vector<double> affine(const std::vector<double>& x, std::size_t rows, const Tensor& W, const Tensor* b) {
  const std::size_t in = W.dim(0), out = W.dim(1);
  std::vector<double> y(rows * out, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b ? b->at(o) : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * W.at(i * out + o);
      y[r * out + o] = s;
    }
  return y;
}

const Tensor& param(const ParameterSet& ps, const std::string& name) {
  const Tensor* t = ps.find(name);
  REQUIRE_MESSAGE(t != nullptr, name);
  return *t;
}

}  // namespace

TEST_CASE("negative s2 contributes nothing to the decision output") {
  std::mt19937_64 rng(1);
  ParameterSet ps;
  FeatureSelector sel(ps, "sel", 3, 4, 2, rng);
  Tensor gain = param(ps, "sel.norm.gain"), bias = param(ps, "sel.norm.bias");
  for (std::size_t i = 4; i < 8; ++i) {
    gain.mutable_data()[i] = 0.0;
    bias.mutable_data()[i] = -1.0;
  }
  StepOutput s = selector_step(sel, 0, oracle::random_tensor({5, 3}, rng));
  for (double v : s.decision.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(selector_step(sel, 0, Tensor::zeros({5, 4})), ShapeError);
}

TEST_CASE("one-hot mask passes only the selected feature") {
  std::mt19937_64 rng(2);
  ParameterSet ps;
  FeatureSelector sel(ps, "sel", 4, 6, 1, rng);
  Tensor x = oracle::random_tensor({3, 4}, rng);
  Tensor onehot = Tensor::from({1, 4}, {0, 0, 1, 0});
  Tensor xm = mul(onehot, x);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t f = 0; f < 4; ++f) CHECK((f == 2 ? xm.at(r * 4 + f) == x.at(r * 4 + f) : xm.at(r * 4 + f) == 0.0));
  // Changing the other features leaves the step unchanged.
  Tensor x2 = x.clone();
  for (std::size_t r = 0; r < 3; ++r) x2.mutable_data()[r * 4] += 5.0;
  StepOutput a = sel.step(0, xm), b = sel.step(0, mul(onehot, x2));
  CHECK(values(a.decision) == values(b.decision));
}

TEST_CASE("selector step matches a composed oracle") {
  std::mt19937_64 rng(3);
  ParameterSet ps;
  const std::size_t F = 5, d = 3, R = 4;
  FeatureSelector sel(ps, "sel", F, d, 2, rng);
  Tensor x = oracle::random_tensor({R, F}, rng);
  StepOutput s = sel.step(1, x);

  const Tensor& sw = param(ps, "sel.shared.weight");
  const Tensor& sb = param(ps, "sel.shared.bias");
  auto pre = affine(values(x), R, sw, &sb);  // [R, 4d]
  std::vector<double> g(R * 2 * d);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < 2 * d; ++i)
      g[r * 2 * d + i] = pre[r * 4 * d + i] * oracle::sigmoid(pre[r * 4 * d + 2 * d + i]);
  const Tensor& gain = param(ps, "sel.norm.gain");
  const Tensor& lb = param(ps, "sel.norm.bias");
  std::vector<double> n(R * 2 * d);
  for (std::size_t r = 0; r < R; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 2 * d; ++i) mu += g[r * 2 * d + i];
    mu /= 2.0 * d;
    for (std::size_t i = 0; i < 2 * d; ++i) var += (g[r * 2 * d + i] - mu) * (g[r * 2 * d + i] - mu);
    var /= 2.0 * d;
    for (std::size_t i = 0; i < 2 * d; ++i)
      n[r * 2 * d + i] = (g[r * 2 * d + i] - mu) / std::sqrt(var + 1e-5) * gain.at(i) + lb.at(i);
  }
  std::vector<double> s1(R * d);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      s1[r * d + i] = n[r * 2 * d + i];
      CHECK(std::abs(s.decision.at(r * d + i) - std::max(0.0, n[r * 2 * d + d + i])) <= 1e-12);
    }
  const Tensor& cb = param(ps, "sel.step1.carry.bias");
  auto next = affine(s1, R, param(ps, "sel.step1.carry.weight"), &cb);
  for (std::size_t i = 0; i < next.size(); ++i) CHECK(std::abs(s.next.at(i) - next[i]) <= 1e-12);
}

TEST_CASE("feature selection: masks on the simplex, uniform for flat logits, step count checked") {
  std::mt19937_64 rng(4);
  ParameterSet ps;
  FeatureSelector sel(ps, "sel", 5, 8, 3, rng);
  SelectionResult r = feature_select(sel, oracle::random_tensor({2, 7, 5}, rng, -3, 3));
  REQUIRE(r.masks.size() == 3);
  CHECK(r.out.shape() == Shape{2, 7, 8});
  for (const auto& m : r.masks) {
    for (std::size_t row = 0; row < 14; ++row) {
      double s = 0.0;
      for (std::size_t f = 0; f < 5; ++f) {
        CHECK(m.at(row * 5 + f) >= 0.0);
        s += m.at(row * 5 + f);
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }

  ParameterSet ps1;
  FeatureSelector flat(ps1, "flat", 4, 4, 1, rng);
  for (double& v : Tensor(param(ps1, "flat.step0.mask.weight")).mutable_data()) v = 0.0;
  for (double& v : Tensor(param(ps1, "flat.step0.mask.bias")).mutable_data()) v = 0.0;
  SelectionResult u = feature_select(flat, oracle::random_tensor({3, 4}, rng));
  for (double v : u.masks[0].data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  ParameterSet ps2;
  CHECK_THROWS_AS(FeatureSelector(ps2, "bad", 3, 4, 0, rng), ConfigError);
}

TEST_CASE("permuting two identical feature columns leaves the output unchanged") {
  std::mt19937_64 rng(5);
  ParameterSet ps;
  FeatureSelector sel(ps, "sel", 4, 6, 3, rng);
  Tensor x = oracle::random_tensor({5, 4}, rng);
  auto d = x.mutable_data();
  for (std::size_t r = 0; r < 5; ++r) d[r * 4 + 3] = d[r * 4 + 1];
  Tensor y = x.clone();
  auto e = y.mutable_data();
  for (std::size_t r = 0; r < 5; ++r) std::swap(e[r * 4 + 1], e[r * 4 + 3]);
  CHECK(values(feature_select(sel, x).out) == values(feature_select(sel, y).out));
}

TEST_CASE("feature permutation with matching parameter permutation is invisible") {
  std::mt19937_64 rng(6);
  const std::size_t F = 4, d = 5;
  ParameterSet ps;
  FeatureSelector sel(ps, "sel", F, d, 3, rng);
  ParameterSet ps2;
  FeatureSelector perm(ps2, "sel", F, d, 3, rng);
  const std::vector<std::size_t> p{2, 0, 3, 1};  // new feature i is old feature p[i]
  for (std::size_t k = 0; k < ps.items().size(); ++k) {
    const auto& src = ps.items()[k];
    auto dst = ps2.items()[k].value.mutable_data();
    const auto s = src.value.data();
    const Shape& sh = src.value.shape();
    const bool in_f = src.name == "sel.step0.mask.weight" || src.name == "sel.shared.weight";
    const bool out_f = src.name.find(".mask.") != std::string::npos;
    for (std::size_t i = 0; i < s.size(); ++i) dst[i] = s[i];
    if (in_f) {
      for (std::size_t r = 0; r < F; ++r)
        for (std::size_t c = 0; c < sh[1]; ++c) dst[r * sh[1] + c] = s[p[r] * sh[1] + c];
    }
    if (out_f) {
      const std::vector<double> tmp(dst.begin(), dst.end());
      const std::size_t rows = sh.size() == 2 ? sh[0] : 1;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < F; ++c) dst[r * F + c] = tmp[r * F + p[c]];
    }
  }
  Tensor x = oracle::random_tensor({6, F}, rng);
  Tensor xp = Tensor::zeros({6, F});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < F; ++c) xp.mutable_data()[r * F + c] = x.at(r * F + p[c]);
  SelectionResult a = feature_select(sel, x), b = feature_select(perm, xp);
  for (std::size_t i = 0; i < a.out.size(); ++i) CHECK(b.out.at(i) == doctest::Approx(a.out.at(i)).epsilon(1e-12));
}

TEST_CASE("importance distribution examples and triple-loop oracle") {
  std::vector<Tensor> uniform{Tensor::full({2, 3, 4}, 0.25), Tensor::full({2, 3, 4}, 0.25)};
  for (double v : importance_distribution(uniform).D) CHECK(v == doctest::Approx(0.25));
  ImportanceReport one = importance_distribution({Tensor::from({1, 1, 2}, {1, 0})});
  CHECK(one.D == std::vector<double>{1.0, 0.0});
  CHECK_THROWS_AS(importance_distribution({}), UsageError);

  std::mt19937_64 rng(7);
  const std::size_t B = 3, T = 5, F = 6, J = 4;
  std::vector<Tensor> masks;
  for (std::size_t j = 0; j < J; ++j) masks.push_back(entmax15(oracle::random_tensor({B, T, F}, rng, -3, 3)));
  ImportanceReport rep = importance_distribution(masks);
  double total = 0.0;
  for (std::size_t f = 0; f < F; ++f) {
    double s = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < J; ++j) s += masks[j].at((b * T + t) * F + f);
    s /= static_cast<double>(B * T * J);
    CHECK(std::abs(rep.D[f] - s) <= 1e-12);
    CHECK(rep.D[f] >= 0.0);
    total += rep.D[f];
  }
  CHECK(std::abs(total - 1.0) <= 1e-9);
}

TEST_CASE("trained selector concentrates on the only informative feature") {
  std::vector<double> d0;
  for (std::uint64_t seed : {1, 2, 3}) {
    selector_task::Options o;
    o.seed = seed;
    const selector_task::Result r = selector_task::run(o);
    REQUIRE(r.D.size() == 3);
    d0.push_back(r.D[0]);
  }
  std::sort(d0.begin(), d0.end());
  INFO("D[0] per seed (sorted): " << d0[0] << " " << d0[1] << " " << d0[2]);
  CHECK(d0[1] > 0.8);
}

TEST_CASE("attention: single key, identical keys, shape errors") {
  std::mt19937_64 rng(8);
  ParameterSet ps;
  MultiHeadAttention mha(ps, "mha", 4, 2, rng);
  Tensor kv = oracle::random_tensor({2, 1, 4}, rng);
  AttentionOutput a = mha(oracle::random_tensor({2, 3, 4}, rng), kv, true);
  AttentionOutput b = mha(oracle::random_tensor({2, 3, 4}, rng), kv, true);
  CHECK(values(a.out) == values(b.out));
  for (double w : a.weights) CHECK(w == 1.0);

  Tensor same = Tensor::zeros({1, 5, 4});
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 4; ++c) same.mutable_data()[t * 4 + c] = 0.1 * static_cast<double>(c);
  AttentionOutput u = mha(oracle::random_tensor({1, 2, 4}, rng), same, true);
  for (double w : u.weights) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));

  CHECK_THROWS_AS(mha(Tensor::zeros({1, 2, 3}), Tensor::zeros({1, 2, 4})), ShapeError);
  CHECK_THROWS_AS(MultiHeadAttention(ps, "bad", 6, 4, rng), ConfigError);
}

TEST_CASE("attention matches a straight-line dense implementation") {
  std::mt19937_64 rng(9);
  ParameterSet ps;
  const std::size_t B = 2, Tq = 3, Tk = 4, d = 6, H = 2, dh = 3;
  MultiHeadAttention mha(ps, "mha", d, H, rng);
  Tensor q = oracle::random_tensor({B, Tq, d}, rng), kv = oracle::random_tensor({B, Tk, d}, rng);
  AttentionOutput got = mha(q, kv, true);
  const auto qv = values(q), kvv = values(kv);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> qb(qv.begin() + b * Tq * d, qv.begin() + (b + 1) * Tq * d);
    std::vector<double> kb(kvv.begin() + b * Tk * d, kvv.begin() + (b + 1) * Tk * d);
    std::vector<double> concat(Tq * d);
    for (std::size_t hd = 0; hd < H; ++hd) {
      auto Q = affine(qb, Tq, mha.wq(hd).weight(), nullptr);
      auto K = affine(kb, Tk, mha.wk(hd).weight(), nullptr);
      auto V = affine(kb, Tk, mha.wv(hd).weight(), nullptr);
      for (std::size_t i = 0; i < Tq; ++i) {
        std::vector<double> s(Tk);
        double mx = -1e300, z = 0.0;
        for (std::size_t j = 0; j < Tk; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += Q[i * dh + c] * K[j * dh + c];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        for (double& v : s) z += (v = std::exp(v - mx));
        double rowsum = 0.0;
        for (std::size_t j = 0; j < Tk; ++j) {
          s[j] /= z;
          const double w = got.weights[((b * H + hd) * Tq + i) * Tk + j];
          CHECK(std::abs(w - s[j]) <= 1e-12);
          rowsum += w;
        }
        CHECK(std::abs(rowsum - 1.0) <= 1e-9);
        for (std::size_t c = 0; c < dh; ++c) {
          double v = 0.0;
          for (std::size_t j = 0; j < Tk; ++j) v += s[j] * V[j * dh + c];
          concat[i * d + hd * dh + c] = v;
        }
      }
    }
    auto out = affine(concat, Tq, mha.wo().weight(), &mha.wo().bias());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(got.out.at(b * Tq * d + i) - out[i]) <= 1e-12);
  }
}

TEST_CASE("attention output is invariant to jointly permuting key/value positions") {
  std::mt19937_64 rng(10);
  ParameterSet ps;
  MultiHeadAttention mha(ps, "mha", 4, 2, rng);
  Tensor q = oracle::random_tensor({1, 3, 4}, rng), kv = oracle::random_tensor({1, 5, 4}, rng);
  Tensor kvp = kv.clone();
  const std::vector<std::size_t> p{4, 2, 0, 1, 3};
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 4; ++c) kvp.mutable_data()[t * 4 + c] = kv.at(p[t] * 4 + c);
  AttentionOutput a = mha(q, kv), b = mha(q, kvp);
  for (std::size_t i = 0; i < a.out.size(); ++i) CHECK(b.out.at(i) == doctest::Approx(a.out.at(i)).epsilon(1e-12));
}

TEST_CASE("output head: zeros, time sharing, per-step oracle") {
  std::mt19937_64 rng(11);
  ParameterSet ps;
  OutputHead head(ps, "head", 4, rng);
  Tensor y0 = output_head(head, Tensor::zeros({2, 3, 4}));
  CHECK(y0.shape() == Shape{2, 3});
  for (double v : y0.data()) CHECK(v == 0.0);  // biases start at zero

  Tensor c = Tensor::zeros({1, 5, 4});
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t k = 0; k < 4; ++k) c.mutable_data()[t * 4 + k] = 0.3 * static_cast<double>(k) - 0.2;
  Tensor yc = head(c);
  // Equal up to rounding: GEMM tail rows take a different kernel.
  for (std::size_t t = 1; t < 5; ++t) CHECK(yc.at(t) == doctest::Approx(yc.at(0)).epsilon(1e-14));

  for (auto& it : ps.items())
    for (double& v : it.value.mutable_data()) v += 0.01;  // nonzero biases
  Tensor x = oracle::random_tensor({2, 3, 4}, rng);
  Tensor y = head(x);
  const Tensor& gw = param(ps, "head.glu.weight");
  const Tensor& gb = param(ps, "head.glu.bias");
  const Tensor& fw = param(ps, "head.fc.weight");
  const Tensor& fb = param(ps, "head.fc.bias");
  const auto xv = values(x);
  for (std::size_t r = 0; r < 6; ++r) {
    std::vector<double> xr(xv.begin() + r * 4, xv.begin() + (r + 1) * 4);
    auto pre = affine(xr, 1, gw, &gb);
    std::vector<double> g(4);
    for (std::size_t i = 0; i < 4; ++i) g[i] = pre[i] * oracle::sigmoid(pre[4 + i]);
    auto o = affine(g, 1, fw, &fb);
    CHECK(std::abs(y.at(r) - o[0]) <= 1e-12);
  }
}
