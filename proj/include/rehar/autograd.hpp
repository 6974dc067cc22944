#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rehar/tensor.hpp"

namespace rehar {

using NodeId = std::size_t;

enum class OpKind {
  Constant,
  Variable,
  Parameter,
  Add,
  Sub,
  Mul,
  Scale,
  Sum,
  Sigmoid,
  Tanh,
  Relu,
  VecMat,
  Slice,
  Conv2d,
  MaxPool2d,
  GlobalAvgPool,
  GlobalMaxPool,
  Softmax,
  CrossEntropy,
  Pick,
};

const char* op_name(OpKind kind);

class Graph;

// Backward rule of one node. Receives the gradient flowing into the node's
// output and accumulates into its inputs through Graph::grad_accumulator.
using BackwardFn = std::function<void(Graph&, NodeId self, std::span<const double> out_grad)>;

// Define-by-run tape. Nodes are appended in evaluation order, so every input
// id is smaller than the id of the node consuming it and backward() walks the
// tape in exact reverse order.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId constant(Tensor value);
  // Owned differentiable leaf (images under saliency, gradient-check probes).
  NodeId variable(Tensor value);
  // Borrowed differentiable leaf. The tensor must outlive the graph and stay
  // unmodified while the graph is alive.
  NodeId parameter(const Tensor& value);

  NodeId record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(NodeId id) const;
  OpKind kind(NodeId id) const { return node(id).kind; }
  std::span<const NodeId> inputs(NodeId id) const { return node(id).inputs; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }

  // Reverse sweep seeded with d(output)/d(output) = 1. Output must be scalar.
  void backward(NodeId output);

  // Gradient of the last backward() output with respect to node `id`.
  // Empty for nodes that do not require gradients.
  std::span<const double> grad(NodeId id) const;

  // Used by backward rules; empty span when `id` needs no gradient.
  std::span<double> grad_accumulator(NodeId id);

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    std::vector<double> grad;
    bool touched = false;
  };

  const Node& node(NodeId id) const;
  Node& node(NodeId id);

  std::vector<Node> nodes_;
};

enum class Padding { Same, Valid };

// Element-wise, identical shapes only (no broadcasting).
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, double factor);
NodeId sum(Graph& g, NodeId a);
NodeId sigmoid(Graph& g, NodeId a);
NodeId tanh(Graph& g, NodeId a);
NodeId relu(Graph& g, NodeId a);

// Row vector times matrix: x (D) * W (D x N) -> N.
NodeId vecmat(Graph& g, NodeId x, NodeId w);
NodeId slice(Graph& g, NodeId a, std::size_t offset, std::size_t length);
NodeId pick(Graph& g, NodeId a, std::size_t index);

// input H x W x Cin, kernels kh x kw x Cin x Cout, bias Cout.
NodeId conv2d(Graph& g, NodeId input, NodeId kernels, NodeId bias, Padding padding);
// 2x2 window, stride 2; ties resolve to the first cell in row-major order.
NodeId max_pool2d(Graph& g, NodeId input);
NodeId global_avg_pool(Graph& g, NodeId feature_maps);
NodeId global_max_pool(Graph& g, NodeId feature_maps);

NodeId softmax(Graph& g, NodeId logits);
// -log(max(p[target], 1e-12)) for a probability vector p.
NodeId cross_entropy(Graph& g, NodeId probs, std::size_t target);

inline constexpr double kProbabilityFloor = 1e-12;

// Gate layout along the 4U axis: input, forget, cell candidate, output.
struct LstmNodes {
  NodeId input_kernel;      // D x 4U
  NodeId recurrent_kernel;  // U x 4U
  NodeId bias;              // 4U
};

struct LstmState {
  NodeId h;
  NodeId c;
};

LstmState lstm_cell_step(Graph& g, NodeId x, LstmState prev, const LstmNodes& params);

// Plain (non-graph) numerics shared with evaluation code.
std::vector<double> softmax_values(std::span<const double> logits);

struct GradCheckOptions {
  double epsilon = 1e-5;
  // 0 checks every entry; otherwise a seeded sample of this many entries.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

// Builds a scalar-valued graph from a differentiable leaf holding the
// parameter. Called once for the analytic pass and twice per checked entry.
using ScalarBuilder = std::function<NodeId(Graph&, NodeId parameter)>;

// max |analytic - numeric| / max(1e-8, |analytic| + |numeric|) over the
// checked entries, numeric being the central difference with step epsilon.
double check_gradients(const ScalarBuilder& build, const Tensor& parameter,
                       const GradCheckOptions& options = {});

}  // namespace rehar
