#include "rehar/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rehar/error.hpp"

namespace rehar {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_to_string(t.shape()));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Forward, typename Derivative>
NodeId unary_map(Graph& g, NodeId a, OpKind kind, Forward f, Derivative df) {
  const Tensor& x = g.value(a);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return g.record(kind, {a}, std::move(out),
                  [a, df](Graph& gr, NodeId self, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(a);
                    if (dx.empty()) return;
                    const Tensor& xv = gr.value(a);
                    const Tensor& yv = gr.value(self);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * df(xv[i], yv[i]);
                  });
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Variable: return "variable";
    case OpKind::Parameter: return "parameter";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::VecMat: return "vecmat";
    case OpKind::Slice: return "slice";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::GlobalMaxPool: return "global_max_pool";
    case OpKind::Softmax: return "softmax";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Pick: return "pick";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Graph

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw Error("graph: node id " + std::to_string(id) + " out of range");
  return nodes_[id];
}

Graph::Node& Graph::node(NodeId id) {
  if (id >= nodes_.size()) throw Error("graph: node id " + std::to_string(id) + " out of range");
  return nodes_[id];
}

NodeId Graph::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Constant, {}, std::move(value), nullptr, false, {}, {}, false});
  return nodes_.size() - 1;
}

NodeId Graph::variable(Tensor value) {
  nodes_.push_back(Node{OpKind::Variable, {}, std::move(value), nullptr, true, {}, {}, false});
  return nodes_.size() - 1;
}

NodeId Graph::parameter(const Tensor& value) {
  nodes_.push_back(Node{OpKind::Parameter, {}, Tensor{}, &value, true, {}, {}, false});
  return nodes_.size() - 1;
}

NodeId Graph::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  bool needs = false;
  const NodeId next = nodes_.size();
  for (NodeId in : inputs) {
    if (in >= next) throw Error("graph: input id must precede the node consuming it");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), nullptr, needs,
                        needs ? std::move(backward) : BackwardFn{}, {}, false});
  return next;
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = node(id);
  return n.borrowed ? *n.borrowed : n.owned;
}

void Graph::backward(NodeId output) {
  const Tensor& out = value(output);
  if (out.size() != 1)
    throw ShapeError("backward: output must be scalar, got " + shape_to_string(out.shape()));
  for (Node& n : nodes_) {
    n.touched = false;
    if (n.requires_grad)
      n.grad.assign(value(static_cast<NodeId>(&n - nodes_.data())).size(), 0.0);
    else
      n.grad.clear();
  }
  Node& root = nodes_[output];
  if (!root.requires_grad) return;
  root.grad[0] = 1.0;
  root.touched = true;
  for (NodeId id = output + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.touched || !n.backward) continue;
    n.backward(*this, id, n.grad);
  }
}

std::span<const double> Graph::grad(NodeId id) const {
  const Node& n = node(id);
  if (!n.requires_grad) return {};
  return n.grad;
}

std::span<double> Graph::grad_accumulator(NodeId id) {
  Node& n = node(id);
  if (!n.requires_grad) return {};
  n.touched = true;
  return n.grad;
}

// ---------------------------------------------------------------------------
// Element-wise

NodeId add(Graph& g, NodeId a, NodeId b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require_same_shape(x, y, "add");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return g.record(OpKind::Add, {a, b}, std::move(out),
                  [a, b](Graph& gr, NodeId, std::span<const double> dy) {
                    for (NodeId in : {a, b}) {
                      auto dx = gr.grad_accumulator(in);
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                    }
                  });
}

NodeId sub(Graph& g, NodeId a, NodeId b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require_same_shape(x, y, "sub");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return g.record(OpKind::Sub, {a, b}, std::move(out),
                  [a, b](Graph& gr, NodeId, std::span<const double> dy) {
                    auto da = gr.grad_accumulator(a);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
                    auto db = gr.grad_accumulator(b);
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] -= dy[i];
                  });
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require_same_shape(x, y, "mul");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return g.record(OpKind::Mul, {a, b}, std::move(out),
                  [a, b](Graph& gr, NodeId, std::span<const double> dy) {
                    const Tensor& xv = gr.value(a);
                    const Tensor& yv = gr.value(b);
                    auto da = gr.grad_accumulator(a);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * yv[i];
                    auto db = gr.grad_accumulator(b);
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * xv[i];
                  });
}

NodeId scale(Graph& g, NodeId a, double factor) {
  const Tensor& x = g.value(a);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return g.record(OpKind::Scale, {a}, std::move(out),
                  [a, factor](Graph& gr, NodeId, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(a);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
                  });
}

NodeId sum(Graph& g, NodeId a) {
  const Tensor& x = g.value(a);
  double s = 0.0;
  for (double v : x.data()) s += v;
  return g.record(OpKind::Sum, {a}, Tensor::scalar(s),
                  [a](Graph& gr, NodeId, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(a);
                    for (double& d : dx) d += dy[0];
                  });
}

NodeId sigmoid(Graph& g, NodeId a) {
  return unary_map(
      g, a, OpKind::Sigmoid, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

NodeId tanh(Graph& g, NodeId a) {
  return unary_map(
      g, a, OpKind::Tanh, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

NodeId relu(Graph& g, NodeId a) {
  return unary_map(
      g, a, OpKind::Relu, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and indexing

NodeId vecmat(Graph& g, NodeId x, NodeId w) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  require_rank(xv, 1, "vecmat", "x");
  require_rank(wv, 2, "vecmat", "w");
  const std::size_t rows = wv.dim(0);
  const std::size_t cols = wv.dim(1);
  if (xv.dim(0) != rows)
    throw ShapeError("vecmat: x has length " + std::to_string(xv.dim(0)) + " but w is " +
                     shape_to_string(wv.shape()));
  Tensor out({cols});
  double* y = out.data().data();
  const double* wp = wv.data().data();
  for (std::size_t d = 0; d < rows; ++d) axpy(xv[d], wp + d * cols, y, cols);
  return g.record(OpKind::VecMat, {x, w}, std::move(out),
                  [x, w, rows, cols](Graph& gr, NodeId, std::span<const double> dy) {
                    const double* wp = gr.value(w).data().data();
                    const Tensor& xv = gr.value(x);
                    auto dx = gr.grad_accumulator(x);
                    if (!dx.empty())
                      for (std::size_t d = 0; d < rows; ++d) dx[d] += dot(wp + d * cols, dy.data(), cols);
                    auto dw = gr.grad_accumulator(w);
                    if (!dw.empty())
                      for (std::size_t d = 0; d < rows; ++d)
                        axpy(xv[d], dy.data(), dw.data() + d * cols, cols);
                  });
}

NodeId slice(Graph& g, NodeId a, std::size_t offset, std::size_t length) {
  const Tensor& x = g.value(a);
  require_rank(x, 1, "slice", "input");
  if (length == 0 || offset + length > x.size())
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") outside length " +
                     std::to_string(x.size()));
  Tensor out({length});
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(offset), length, out.data().begin());
  return g.record(OpKind::Slice, {a}, std::move(out),
                  [a, offset](Graph& gr, NodeId, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(a);
                    if (dx.empty()) return;
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[offset + i] += dy[i];
                  });
}

NodeId pick(Graph& g, NodeId a, std::size_t index) {
  const Tensor& x = g.value(a);
  if (index >= x.size())
    throw ShapeError("pick: index " + std::to_string(index) + " outside " +
                     shape_to_string(x.shape()));
  return g.record(OpKind::Pick, {a}, Tensor::scalar(x[index]),
                  [a, index](Graph& gr, NodeId, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(a);
                    if (!dx.empty()) dx[index] += dy[0];
                  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling (H x W x C layout)

namespace {

struct ConvGeometry {
  std::size_t h, w, cin, kh, kw, cout, oh, ow;
  std::ptrdiff_t pad_y, pad_x;
};

void conv_forward(const ConvGeometry& s, const double* in, const double* k, const double* bias,
                  double* out) {
  for (std::size_t y = 0; y < s.oh; ++y) {
    for (std::size_t x = 0; x < s.ow; ++x) {
      double* o = out + (y * s.ow + x) * s.cout;
      std::copy_n(bias, s.cout, o);
      for (std::size_t ky = 0; ky < s.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - s.pad_y;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
        for (std::size_t kx = 0; kx < s.kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - s.pad_x;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
          const double* ip = in + (static_cast<std::size_t>(iy) * s.w + static_cast<std::size_t>(ix)) * s.cin;
          const double* kp = k + (ky * s.kw + kx) * s.cin * s.cout;
          for (std::size_t ci = 0; ci < s.cin; ++ci) axpy(ip[ci], kp + ci * s.cout, o, s.cout);
        }
      }
    }
  }
}

void conv_backward(const ConvGeometry& s, const double* in, const double* k, const double* dout,
                   double* din, double* dk, double* dbias) {
  for (std::size_t y = 0; y < s.oh; ++y) {
    for (std::size_t x = 0; x < s.ow; ++x) {
      const double* go = dout + (y * s.ow + x) * s.cout;
      if (dbias)
        for (std::size_t co = 0; co < s.cout; ++co) dbias[co] += go[co];
      for (std::size_t ky = 0; ky < s.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - s.pad_y;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
        for (std::size_t kx = 0; kx < s.kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - s.pad_x;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
          const std::size_t pix = (static_cast<std::size_t>(iy) * s.w + static_cast<std::size_t>(ix)) * s.cin;
          const std::size_t koff = (ky * s.kw + kx) * s.cin * s.cout;
          if (dk)
            for (std::size_t ci = 0; ci < s.cin; ++ci)
              axpy(in[pix + ci], go, dk + koff + ci * s.cout, s.cout);
          if (din)
            for (std::size_t ci = 0; ci < s.cin; ++ci)
              din[pix + ci] += dot(k + koff + ci * s.cout, go, s.cout);
        }
      }
    }
  }
}

void require_spatial(const Tensor& t, const char* op) {
  require_rank(t, 3, op, "feature maps");
}

}  // namespace

NodeId conv2d(Graph& g, NodeId input, NodeId kernels, NodeId bias, Padding padding) {
  const Tensor& in = g.value(input);
  const Tensor& k = g.value(kernels);
  const Tensor& b = g.value(bias);
  require_rank(in, 3, "conv2d", "input");
  require_rank(k, 4, "conv2d", "kernels");
  require_rank(b, 1, "conv2d", "bias");
  ConvGeometry s{};
  s.h = in.dim(0);
  s.w = in.dim(1);
  s.cin = in.dim(2);
  s.kh = k.dim(0);
  s.kw = k.dim(1);
  s.cout = k.dim(3);
  if (k.dim(2) != s.cin)
    throw ShapeError("conv2d: input has " + std::to_string(s.cin) + " channels but kernels " +
                     shape_to_string(k.shape()) + " expect " + std::to_string(k.dim(2)));
  if (b.dim(0) != s.cout)
    throw ShapeError("conv2d: bias " + shape_to_string(b.shape()) + " does not match " +
                     std::to_string(s.cout) + " output channels");
  if (s.kh % 2 == 0 || s.kw % 2 == 0)
    throw ShapeError("conv2d: kernel size must be odd, got " + shape_to_string(k.shape()));
  if (padding == Padding::Same) {
    s.oh = s.h;
    s.ow = s.w;
    s.pad_y = static_cast<std::ptrdiff_t>(s.kh / 2);
    s.pad_x = static_cast<std::ptrdiff_t>(s.kw / 2);
  } else {
    if (s.h < s.kh || s.w < s.kw)
      throw ShapeError("conv2d: valid padding needs input " + shape_to_string(in.shape()) +
                       " at least as large as kernel " + shape_to_string(k.shape()));
    s.oh = s.h - s.kh + 1;
    s.ow = s.w - s.kw + 1;
    s.pad_y = s.pad_x = 0;
  }
  Tensor out({s.oh, s.ow, s.cout});
  conv_forward(s, in.data().data(), k.data().data(), b.data().data(), out.data().data());
  return g.record(OpKind::Conv2d, {input, kernels, bias}, std::move(out),
                  [input, kernels, bias, s](Graph& gr, NodeId, std::span<const double> dy) {
                    auto din = gr.grad_accumulator(input);
                    auto dk = gr.grad_accumulator(kernels);
                    auto db = gr.grad_accumulator(bias);
                    conv_backward(s, gr.value(input).data().data(), gr.value(kernels).data().data(),
                                  dy.data(), din.empty() ? nullptr : din.data(),
                                  dk.empty() ? nullptr : dk.data(), db.empty() ? nullptr : db.data());
                  });
}

NodeId max_pool2d(Graph& g, NodeId input) {
  const Tensor& in = g.value(input);
  require_spatial(in, "max_pool2d");
  const std::size_t h = in.dim(0), w = in.dim(1), c = in.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("max_pool2d: spatial dimensions must be even, got " + shape_to_string(in.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({oh, ow, c});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((2 * y) * w + 2 * x) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (y * ow + x) * c + ch;
        out[o] = in[best];
        argmax[o] = best;
      }
  return g.record(OpKind::MaxPool2d, {input}, std::move(out),
                  [input, argmax = std::move(argmax)](Graph& gr, NodeId, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(input);
                    if (dx.empty()) return;
                    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
                  });
}

NodeId global_avg_pool(Graph& g, NodeId feature_maps) {
  const Tensor& in = g.value(feature_maps);
  require_spatial(in, "global_avg_pool");
  const std::size_t n = in.dim(0) * in.dim(1), c = in.dim(2);
  Tensor out({c});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += in[p * c + ch];
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] /= static_cast<double>(n);
  return g.record(OpKind::GlobalAvgPool, {feature_maps}, std::move(out),
                  [feature_maps, n, c](Graph& gr, NodeId, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(feature_maps);
                    if (dx.empty()) return;
                    const double inv = 1.0 / static_cast<double>(n);
                    for (std::size_t p = 0; p < n; ++p)
                      for (std::size_t ch = 0; ch < c; ++ch) dx[p * c + ch] += dy[ch] * inv;
                  });
}

NodeId global_max_pool(Graph& g, NodeId feature_maps) {
  const Tensor& in = g.value(feature_maps);
  require_spatial(in, "global_max_pool");
  const std::size_t n = in.dim(0) * in.dim(1), c = in.dim(2);
  Tensor out({c});
  std::vector<std::size_t> argmax(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::size_t best = ch;
    for (std::size_t p = 1; p < n; ++p)
      if (in[p * c + ch] > in[best]) best = p * c + ch;
    out[ch] = in[best];
    argmax[ch] = best;
  }
  return g.record(OpKind::GlobalMaxPool, {feature_maps}, std::move(out),
                  [feature_maps, argmax = std::move(argmax)](Graph& gr, NodeId, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(feature_maps);
                    if (dx.empty()) return;
                    for (std::size_t ch = 0; ch < argmax.size(); ++ch) dx[argmax[ch]] += dy[ch];
                  });
}

// ---------------------------------------------------------------------------
// Probabilities

std::vector<double> softmax_values(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  double mx = logits[0];
  for (double v : logits) {
    if (std::isnan(v)) throw NumericError("softmax: NaN logit");
    mx = std::max(mx, v);
  }
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

NodeId softmax(Graph& g, NodeId logits) {
  const Tensor& x = g.value(logits);
  require_rank(x, 1, "softmax", "logits");
  Tensor out({x.size()}, softmax_values(x.data()));
  return g.record(OpKind::Softmax, {logits}, std::move(out),
                  [logits](Graph& gr, NodeId self, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(logits);
                    if (dx.empty()) return;
                    const Tensor& y = gr.value(self);
                    double inner = 0.0;
                    for (std::size_t i = 0; i < y.size(); ++i) inner += dy[i] * y[i];
                    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += y[i] * (dy[i] - inner);
                  });
}

NodeId cross_entropy(Graph& g, NodeId probs, std::size_t target) {
  const Tensor& p = g.value(probs);
  require_rank(p, 1, "cross_entropy", "probabilities");
  if (target >= p.size())
    throw ShapeError("cross_entropy: target " + std::to_string(target) + " outside " +
                     std::to_string(p.size()) + " categories");
  double total = 0.0;
  for (double v : p.data()) total += v;
  if (std::abs(total - 1.0) > 1e-6)
    throw NumericError("cross_entropy: probabilities sum to " + std::to_string(total));
  const double pt = p[target];
  const double loss = -std::log(std::max(pt, kProbabilityFloor));
  return g.record(OpKind::CrossEntropy, {probs}, Tensor::scalar(loss),
                  [probs, target, pt](Graph& gr, NodeId, std::span<const double> dy) {
                    auto dx = gr.grad_accumulator(probs);
                    if (dx.empty() || pt <= kProbabilityFloor) return;
                    dx[target] -= dy[0] / pt;
                  });
}

// ---------------------------------------------------------------------------
// LSTM

LstmState lstm_cell_step(Graph& g, NodeId x, LstmState prev, const LstmNodes& params) {
  const Tensor& wx = g.value(params.input_kernel);
  const Tensor& wh = g.value(params.recurrent_kernel);
  const Tensor& b = g.value(params.bias);
  require_rank(wx, 2, "lstm_cell_step", "input kernel");
  require_rank(wh, 2, "lstm_cell_step", "recurrent kernel");
  require_rank(b, 1, "lstm_cell_step", "bias");
  const std::size_t units = wh.dim(0);
  if (wh.dim(1) != 4 * units || wx.dim(1) != 4 * units || b.dim(0) != 4 * units)
    throw ShapeError("lstm_cell_step: inconsistent kernels " + shape_to_string(wx.shape()) + ", " +
                     shape_to_string(wh.shape()) + ", bias " + shape_to_string(b.shape()));
  require_shape(g.value(prev.h), {units}, "lstm_cell_step: h_prev");
  require_shape(g.value(prev.c), {units}, "lstm_cell_step: c_prev");
  if (g.value(x).shape() != Shape{wx.dim(0)})
    throw ShapeError("lstm_cell_step: input " + shape_to_string(g.value(x).shape()) +
                     " does not match input kernel " + shape_to_string(wx.shape()));

  const NodeId z = add(g, add(g, vecmat(g, x, params.input_kernel),
                              vecmat(g, prev.h, params.recurrent_kernel)),
                       params.bias);
  const NodeId i = sigmoid(g, slice(g, z, 0, units));
  const NodeId f = sigmoid(g, slice(g, z, units, units));
  const NodeId cand = tanh(g, slice(g, z, 2 * units, units));
  const NodeId o = sigmoid(g, slice(g, z, 3 * units, units));
  const NodeId c = add(g, mul(g, f, prev.c), mul(g, i, cand));
  const NodeId h = mul(g, o, tanh(g, c));
  return {h, c};
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

double check_gradients(const ScalarBuilder& build, const Tensor& parameter,
                       const GradCheckOptions& options) {
  Graph g;
  const NodeId p = g.variable(parameter);
  const NodeId out = build(g, p);
  if (g.value(out).size() != 1)
    throw ShapeError("check_gradients: graph output must be scalar, got " +
                     shape_to_string(g.value(out).shape()));
  g.backward(out);
  const std::vector<double> analytic(g.grad(p).begin(), g.grad(p).end());

  std::vector<std::size_t> entries(parameter.size());
  std::iota(entries.begin(), entries.end(), std::size_t{0});
  if (options.max_entries != 0 && options.max_entries < entries.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(options.max_entries);
    std::sort(entries.begin(), entries.end());
  }

  auto evaluate = [&](const Tensor& probe) {
    Graph fg;
    const NodeId q = fg.variable(probe);
    return fg.value(build(fg, q)).item();
  };

  double worst = 0.0;
  Tensor probe = parameter;
  for (std::size_t idx : entries) {
    const double base = probe[idx];
    probe[idx] = base + options.epsilon;
    const double up = evaluate(probe);
    probe[idx] = base - options.epsilon;
    const double down = evaluate(probe);
    probe[idx] = base;
    const double numeric = (up - down) / (2.0 * options.epsilon);
    const double a = analytic.empty() ? 0.0 : analytic[idx];
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace rehar
