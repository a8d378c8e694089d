#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tsdf/tensor.hpp"

namespace tsdf {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Flat, ordered registry of trainable tensors. Layers register into it at
/// construction; the optimizer and checkpoints walk it in order.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor t);
  std::vector<NamedTensor>& items() { return items_; }
  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t count() const;  // total scalar count
  void zero_grad();
  const Tensor* find(const std::string& name) const;

 private:
  std::vector<NamedTensor> items_;
};

/// Per-forward settings: train flag and the generator used for dropout.
struct ForwardContext {
  bool train = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  Tensor drop(const Tensor& x) const;
};

/// y = x W + b over the last dimension.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
         bool bias = true);
  Tensor operator()(const Tensor& x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor weight_, bias_;
};

enum class Activation { Relu, Tanh };

/// Stack of Linear layers with an activation (and dropout) between them.
/// The last layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& ps, const std::string& name, std::vector<std::size_t> widths, Activation act,
      std::mt19937_64& rng, bool bias = true);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
  /// Applies hidden layers only and activates the final one too.
  Tensor hidden(const Tensor& x, const ForwardContext& ctx) const;
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
  Activation act_ = Activation::Relu;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& ps, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain_, bias_, 1e-5); }

 private:
  Tensor gain_, bias_;
};

/// Linear to 2*out followed by a gated linear unit.
class GluLayer {
 public:
  GluLayer() = default;
  GluLayer(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const { return glu(proj_(x)); }

 private:
  Linear proj_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update over `params` using their grads.
/// Params without a grad buffer are skipped.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, const AdamConfig& cfg);

class Adam {
 public:
  Adam(ParameterSet& ps, AdamConfig cfg);
  void step() { adam_step(ps_->items(), state_, cfg_); }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParameterSet* ps_;
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace tsdf
