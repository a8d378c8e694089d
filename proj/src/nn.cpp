#include "tsdf/nn.hpp"

#include <cmath>

#include "tsdf/errors.hpp"

namespace tsdf {

Tensor& ParameterSet::add(std::string name, Tensor t) {
  for (const auto& it : items_) {
    if (it.name == name) throw ConfigError("duplicate parameter name " + name);
  }
  t.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(t)});
  return items_.back().value;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& it : items_) n += it.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& it : items_) it.value.zero_grad();
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& it : items_) {
    if (it.name == name) return &it.value;
  }
  return nullptr;
}

Tensor ForwardContext::drop(const Tensor& x) const {
  if (!train || dropout == 0.0) return x;
  if (rng == nullptr) throw UsageError("training forward needs a dropout generator");
  return tsdf::dropout(x, dropout, train, *rng);
}

Linear::Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
               bool bias)
    : in_(in), out_(out) {
  // Glorot-uniform weights, zero bias.
  const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-lim, lim);
  std::vector<double> w(in * out);
  for (double& v : w) v = u(rng);
  weight_ = ps.add(name + ".weight", Tensor::from({in, out}, std::move(w)));
  if (bias) bias_ = ps.add(name + ".bias", Tensor::zeros({out}));
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.ndim() == 0 || x.dim(-1) != in_) {
    throw ShapeError("linear layer expects last dimension " + std::to_string(in_) + ", got " + shape_str(x.shape()));
  }
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add(y, bias_) : y;
}

Mlp::Mlp(ParameterSet& ps, const std::string& name, std::vector<std::size_t> widths, Activation act,
         std::mt19937_64& rng, bool bias)
    : act_(act) {
  if (widths.size() < 2) throw ConfigError("mlp " + name + " needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.emplace_back(ps, name + "." + std::to_string(i), widths[i], widths[i + 1], rng, bias);
  }
}

namespace {
Tensor activate(const Tensor& x, Activation a) { return a == Activation::Relu ? relu(x) : tsdf::tanh(x); }
}  // namespace

Tensor Mlp::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = ctx.drop(activate(h, act_));
  }
  return h;
}

Tensor Mlp::hidden(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = x;
  for (const auto& l : layers_) h = ctx.drop(activate(l(h), act_));
  return h;
}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, std::size_t width) {
  gain_ = ps.add(name + ".gain", Tensor::full({width}, 1.0));
  bias_ = ps.add(name + ".bias", Tensor::zeros({width}));
}

GluLayer::GluLayer(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng)
    : proj_(ps, name, in, 2 * out, rng) {}

void adam_step(std::vector<NamedTensor>& params, AdamState& state, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (state.m.size() != params.size()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].value;
    if (!p.has_grad()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    auto g = p.grad();
    auto d = p.mutable_data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      d[j] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

Adam::Adam(ParameterSet& ps, AdamConfig cfg) : ps_(&ps), cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be > 0");
}

}  // namespace tsdf
