#include "tsdf/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tsdf/errors.hpp"

namespace tsdf {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   const char* op, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(fn);
  }
  return Tensor(std::move(n));
}

// Parent i grad buffer, or nullptr when it does not need one.
std::vector<double>* pgrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

const std::vector<double>& pdata(Node& self, std::size_t i) { return self.parents[i]->data; }

std::size_t last_dim(const Tensor& t, const char* op) {
  if (t.ndim() == 0) throw ShapeError(std::string(op) + ": expected at least 1 dimension");
  return t.shape().back();
}

// Index maps for numpy broadcasting of a and b into the common output shape.
struct Broadcast {
  Shape out;
  enum class Kind { Same, RightRepeat, LeftRepeat, General } kind = Kind::Same;
  std::size_t a_n = 0, b_n = 0;
  std::vector<std::size_t> a_idx, b_idx;  // General only

  std::size_t ai(std::size_t i) const {
    switch (kind) {
      case Kind::Same: return i;
      case Kind::RightRepeat: return i;
      case Kind::LeftRepeat: return i % a_n;
      default: return a_idx[i];
    }
  }
  std::size_t bi(std::size_t i) const {
    switch (kind) {
      case Kind::Same: return i;
      case Kind::RightRepeat: return i % b_n;
      case Kind::LeftRepeat: return i;
      default: return b_idx[i];
    }
  }
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  bc.a_n = numel(a);
  bc.b_n = numel(b);
  if (a == b) {
    bc.out = a;
    bc.kind = Broadcast::Kind::Same;
    return bc;
  }
  if (is_suffix(b, a)) {
    bc.out = a;
    bc.kind = Broadcast::Kind::RightRepeat;
    return bc;
  }
  if (is_suffix(a, b)) {
    bc.out = b;
    bc.kind = Broadcast::Kind::LeftRepeat;
    return bc;
  }
  const std::size_t nd = std::max(a.size(), b.size());
  Shape pa(nd, 1), pb(nd, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (nd - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (nd - b.size()));
  bc.out.resize(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    bc.out[d] = std::max(pa[d], pb[d]);
  }
  std::vector<std::size_t> sa(nd), sb(nd);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = nd; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : acc_a;
    sb[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = numel(bc.out);
  bc.a_idx.resize(n);
  bc.b_idx.resize(n);
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      oa += idx[d] * sa[d];
      ob += idx[d] * sb[d];
    }
    bc.a_idx[i] = oa;
    bc.b_idx[i] = ob;
    for (std::size_t d = nd; d-- > 0;) {
      if (++idx[d] < bc.out[d]) break;
      idx[d] = 0;
    }
  }
  bc.kind = Broadcast::Kind::General;
  return bc;
}

template <class F>
Tensor unary(const Tensor& a, const char* op, F f, std::function<void(Node&)> bw) {
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a}, op, std::move(bw));
}

}  // namespace

std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->data.assign(numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

std::size_t Tensor::dim(int i) const {
  const int nd = static_cast<int>(ndim());
  const int k = i < 0 ? nd + i : i;
  if (k < 0 || k >= nd) throw ShapeError("dimension index " + std::to_string(i) + " out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(k)];
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

// --- tape -------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      tape.nodes_.push_back(n);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::run(const Tensor& root) const {
  for (Node* n : nodes_) {
    if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
  }
  auto& g = root.node()->ensure_grad();
  if (root.node()->parents.empty()) {
    g[0] += 1.0;
  } else {
    g[0] = 1.0;
  }
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  }
  if (!loss.requires_grad()) return;
  Tape::record(loss).run(loss);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

bool all_finite(const Tensor& t) {
  // v - v is 0 for finite v and NaN otherwise; the sum vectorizes where an
  // early-exit loop would not.
  double acc = 0.0;
  for (double v : t.data()) acc += v - v;
  return acc == 0.0;
}

void check_finite(const Tensor& t, const char* what) {
  if (!all_finite(t)) throw NumericError(std::string("non-finite value produced by ") + what);
}

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 1 || b.ndim() < 2) {
    throw ShapeError("matmul: operands " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  if (b.ndim() == 2) {
    const std::size_t k = a.dim(-1);
    if (k != b.dim(0)) {
      throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t n = b.dim(1);
    const std::size_t m = a.size() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(m * n);
    Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
    Tensor r = make_result(out_shape, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
      MapC g(self.grad.data(), m, n);
      if (auto* ga = pgrad(self, 0)) Map(ga->data(), m, k).noalias() += g * MapC(pdata(self, 1).data(), k, n).transpose();
      if (auto* gb = pgrad(self, 1)) Map(gb->data(), k, n).noalias() += MapC(pdata(self, 0).data(), m, k).transpose() * g;
    });
    check_finite(r, "matmul");
    return r;
  }
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("matmul: batched operands must be [b,m,k] x [b,k,n], got " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(bs * m * n);
  for (std::size_t i = 0; i < bs; ++i) {
    Map(out.data() + i * m * n, m, n).noalias() =
        MapC(a.data().data() + i * m * k, m, k) * MapC(b.data().data() + i * k * n, k, n);
  }
  Tensor r = make_result({bs, m, n}, std::move(out), {a, b}, "bmm", [bs, m, k, n](Node& self) {
    auto* ga = pgrad(self, 0);
    auto* gb = pgrad(self, 1);
    const auto& ad = pdata(self, 0);
    const auto& bd = pdata(self, 1);
    for (std::size_t i = 0; i < bs; ++i) {
      MapC g(self.grad.data() + i * m * n, m, n);
      if (ga) Map(ga->data() + i * m * k, m, k).noalias() += g * MapC(bd.data() + i * k * n, k, n).transpose();
      if (gb) Map(gb->data() + i * k * n, k, n).noalias() += MapC(ad.data() + i * m * k, m, k).transpose() * g;
    }
  });
  check_finite(r, "batched matmul");
  return r;
}

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  auto bc = std::make_shared<Broadcast>(broadcast(a.shape(), b.shape(), name));
  const std::size_t n = numel(bc->out);
  std::vector<double> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[bc->ai(i)], y = bd[bc->bi(i)];
    out[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
  }
  Tensor r = make_result(bc->out, std::move(out), {a, b}, name, [bc, op, n](Node& self) {
    auto* ga = pgrad(self, 0);
    auto* gb = pgrad(self, 1);
    const auto& g = self.grad;
    if (op == BinOp::Mul) {
      const auto& ad = pdata(self, 0);
      const auto& bd = pdata(self, 1);
      for (std::size_t i = 0; i < n; ++i) {
        if (ga) (*ga)[bc->ai(i)] += g[i] * bd[bc->bi(i)];
        if (gb) (*gb)[bc->bi(i)] += g[i] * ad[bc->ai(i)];
      }
      return;
    }
    const double sb = op == BinOp::Sub ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (ga) (*ga)[bc->ai(i)] += g[i];
      if (gb) (*gb)[bc->bi(i)] += sb * g[i];
    }
  });
  check_finite(r, name);
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& a, double s) {
  Tensor r = unary(a, "scale", [s](double x) { return x * s; }, [s](Node& self) {
    auto& ga = *pgrad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
  check_finite(r, "scale");
  return r;
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](Node& self) {
    auto& ga = *pgrad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](Node& self) {
    auto& ga = *pgrad(self, 0);
    const auto& x = pdata(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * x[i] * self.grad[i];
  });
}

Tensor concat_last_dim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last_dim: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    const std::size_t w = last_dim(p, "concat_last_dim");
    pl.pop_back();
    if (pl != lead) {
      throw ShapeError("concat_last_dim: leading shape " + shape_str(p.shape()) + " differs from " +
                       shape_str(parts[0].shape()));
    }
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = numel(lead);
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    auto d = parts[j].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(d.begin() + r * widths[j], widths[j], out.begin() + r * total + off);
    }
    off += widths[j];
  }
  Shape s = lead;
  s.push_back(total);
  return make_result(s, std::move(out), parts, "concat", [widths, rows, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t j = 0; j < widths.size(); ++j) {
      if (auto* g = pgrad(self, j)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[j]; ++c) (*g)[r * widths[j] + c] += self.grad[r * total + off + c];
        }
      }
      off += widths[j];
    }
  });
}

Tensor slice_last_dim(const Tensor& a, std::size_t start, std::size_t len) {
  const std::size_t w = last_dim(a, "slice_last_dim");
  if (start + len > w) {
    throw ShapeError("slice_last_dim: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") exceeds last dimension " + std::to_string(w));
  }
  const std::size_t rows = a.size() / std::max<std::size_t>(w, 1);
  std::vector<double> out(rows * len);
  auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(d.begin() + r * w + start, len, out.begin() + r * len);
  Shape s = a.shape();
  s.back() = len;
  return make_result(s, std::move(out), {a}, "slice", [rows, w, start, len](Node& self) {
    auto& g = *pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < len; ++c) g[r * w + start + c] += self.grad[r * len + c];
    }
  });
}

std::pair<Tensor, Tensor> split_last_dim(const Tensor& a) {
  const std::size_t w = last_dim(a, "split_last_dim");
  if (w % 2 != 0) throw ShapeError("split_last_dim: last dimension " + std::to_string(w) + " is odd");
  return {slice_last_dim(a, 0, w / 2), slice_last_dim(a, w / 2, w / 2)};
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() < 2) throw ShapeError("transpose: need >= 2 dims, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(-2), c = a.dim(-1);
  const std::size_t batch = a.size() / (r * c);
  std::vector<double> out(a.size());
  auto d = a.data();
  for (std::size_t b = 0; b < batch; ++b) {
    Map(out.data() + b * r * c, c, r) = MapC(d.data() + b * r * c, r, c).transpose();
  }
  Shape s = a.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  return make_result(s, std::move(out), {a}, "transpose", [batch, r, c](Node& self) {
    auto& g = *pgrad(self, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      Map(g.data() + b * r * c, r, c) += MapC(self.grad.data() + b * r * c, c, r).transpose();
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, "reshape", [](Node& self) {
    auto& g = *pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, "sum", [](Node& self) {
    auto& g = *pgrad(self, 0);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean_last_dim(const Tensor& a) {
  const std::size_t w = last_dim(a, "mean_last_dim");
  if (w == 0) throw ShapeError("mean_last_dim: empty last dimension");
  const std::size_t rows = a.size() / w;
  std::vector<double> out(rows, 0.0);
  auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c) out[r] += d[r * w + c];
    out[r] /= static_cast<double>(w);
  }
  Shape s = a.shape();
  s.back() = 1;
  return make_result(s, std::move(out), {a}, "mean_last_dim", [rows, w](Node& self) {
    auto& g = *pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double v = self.grad[r] / static_cast<double>(w);
      for (std::size_t c = 0; c < w; ++c) g[r * w + c] += v;
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> index, const Shape& index_shape) {
  if (table.ndim() != 2) throw ShapeError("embedding: table must be [vocab, dim]");
  if (numel(index_shape) != index.size()) throw ShapeError("embedding: index count does not match index shape");
  const std::size_t vocab = table.dim(0), dim = table.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t i : idx) {
    if (i >= vocab) throw ShapeError("embedding: index " + std::to_string(i) + " >= vocab " + std::to_string(vocab));
  }
  std::vector<double> out(idx.size() * dim);
  auto d = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(d.begin() + idx[i] * dim, dim, out.begin() + i * dim);
  Shape s = index_shape;
  s.push_back(dim);
  return make_result(s, std::move(out), {table}, "embedding", [idx = std::move(idx), dim](Node& self) {
    auto& g = *pgrad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < dim; ++c) g[idx[i] * dim + c] += self.grad[i * dim + c];
    }
  });
}

// --- activations --------------------------------------------------------------

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](Node& self) {
    auto& g = *pgrad(self, 0);
    const auto& x = pdata(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, "sigmoid",
               [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
               [](Node& self) {
                 auto& g = *pgrad(self, 0);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double y = self.data[i];
                   g[i] += self.grad[i] * y * (1.0 - y);
                 }
               });
}

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](Node& self) {
    auto& g = *pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.data[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor softmax_last_dim(const Tensor& a) {
  const std::size_t w = last_dim(a, "softmax_last_dim");
  if (w == 0) throw ShapeError("softmax_last_dim: empty last dimension");
  const std::size_t rows = a.size() / w;
  std::vector<double> out(a.size());
  auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = d.data() + r * w;
    double* y = out.data() + r * w;
    const double mx = *std::max_element(x, x + w);
    double z = 0.0;
    for (std::size_t c = 0; c < w; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < w; ++c) y[c] /= z;
  }
  Tensor r = make_result(a.shape(), std::move(out), {a}, "softmax", [rows, w](Node& self) {
    auto& g = *pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * w;
      const double* gy = self.grad.data() + r * w;
      double dot = 0.0;
      for (std::size_t c = 0; c < w; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < w; ++c) g[r * w + c] += y[c] * (gy[c] - dot);
    }
  });
  check_finite(r, "softmax");
  return r;
}

void entmax15_row(std::span<const double> logits, std::span<double> out) {
  // p_i = [z_i/2 - tau]_+^2 with tau chosen so sum(p) = 1. Candidate thresholds
  // come from the sorted prefix of size k; the support is the largest k whose
  // threshold lies below its k-th largest value.
  const std::size_t d = logits.size();
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = (logits[i] - mx) / 2.0;
  std::vector<double> s = x;
  std::sort(s.begin(), s.end(), std::greater<>());
  double csum = 0.0, csq = 0.0, tau_star = s[0] - 1.0;
  for (std::size_t k = 1; k <= d; ++k) {
    csum += s[k - 1];
    csq += s[k - 1] * s[k - 1];
    const double kk = static_cast<double>(k);
    const double m = csum / kk;
    const double ss = kk * (csq / kk - m * m);
    const double delta = std::max((1.0 - ss) / kk, 0.0);
    const double tau = m - std::sqrt(delta);
    if (tau <= s[k - 1]) tau_star = tau;
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double v = std::max(x[i] - tau_star, 0.0);
    out[i] = v * v;
  }
}

Tensor entmax15(const Tensor& a) {
  const std::size_t w = last_dim(a, "entmax15");
  if (w == 0) throw ShapeError("entmax15: empty last dimension");
  check_finite(a, "entmax15 input");
  const std::size_t rows = a.size() / w;
  std::vector<double> out(a.size());
  auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    entmax15_row(d.subspan(r * w, w), std::span<double>(out.data() + r * w, w));
  }
  return make_result(a.shape(), std::move(out), {a}, "entmax15", [rows, w](Node& self) {
    // On the support, J = diag(s) - s s^T / sum(s) with s = sqrt(p).
    auto& g = *pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = self.data.data() + r * w;
      const double* gy = self.grad.data() + r * w;
      double ssum = 0.0, dot = 0.0;
      for (std::size_t c = 0; c < w; ++c) {
        const double s = std::sqrt(p[c]);
        ssum += s;
        dot += s * gy[c];
      }
      const double q = dot / ssum;
      for (std::size_t c = 0; c < w; ++c) {
        const double s = std::sqrt(p[c]);
        g[r * w + c] += s * gy[c] - q * s;
      }
    }
  });
}

Tensor glu(const Tensor& a) {
  const std::size_t w = last_dim(a, "glu");
  if (w % 2 != 0) throw ShapeError("glu: last dimension " + std::to_string(w) + " is odd");
  auto [value, gate] = split_last_dim(a);
  return mul(value, sigmoid(gate));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t w = last_dim(x, "layer_norm");
  if (gain.size() != w || bias.size() != w) {
    throw ShapeError("layer_norm: gain/bias size must equal last dimension " + std::to_string(w));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be > 0");
  const std::size_t rows = x.size() / w;
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  auto d = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = d.data() + r * w;
    double mu = 0.0;
    for (std::size_t c = 0; c < w; ++c) mu += xr[c];
    mu /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t c = 0; c < w; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(w);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = iv;
    for (std::size_t c = 0; c < w; ++c) {
      const double h = (xr[c] - mu) * iv;
      (*xhat)[r * w + c] = h;
      out[r * w + c] = gd[c] * h + bd[c];
    }
  }
  Tensor r = make_result(x.shape(), std::move(out), {x, gain, bias}, "layer_norm", [rows, w, xhat, inv](Node& self) {
    auto* gx = pgrad(self, 0);
    auto* gg = pgrad(self, 1);
    auto* gb = pgrad(self, 2);
    const auto& gain = pdata(self, 1);
    const double n = static_cast<double>(w);
    std::vector<double> dh(w);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gy = self.grad.data() + r * w;
      const double* h = xhat->data() + r * w;
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t c = 0; c < w; ++c) {
        if (gg) (*gg)[c] += gy[c] * h[c];
        if (gb) (*gb)[c] += gy[c];
        dh[c] = gy[c] * gain[c];
        s1 += dh[c];
        s2 += dh[c] * h[c];
      }
      if (gx) {
        for (std::size_t c = 0; c < w; ++c) (*gx)[r * w + c] += (*inv)[r] / n * (n * dh[c] - s1 - h[c] * s2);
      }
    }
  });
  check_finite(r, "layer_norm");
  return r;
}

Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0,1), got " + std::to_string(p));
  if (!train || p == 0.0) return a;
  std::vector<double> mask(a.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask) m = u(rng) < p ? 0.0 : keep;
  return mul(a, Tensor::from(a.shape(), std::move(mask)));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

}  // namespace tsdf
