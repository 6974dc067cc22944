#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rehar/autograd.hpp"
#include "rehar/backbone.hpp"
#include "rehar/optical_flow.hpp"
#include "rehar/tensor.hpp"

namespace rehar {

enum class FusionKind {
  Lstm,            // LSTM1 over (gap_frame, gmax_frame, gap_flow, gmax_flow)
  ElementwiseSum,  // ablation: sum of the four vectors, linear projection
};

const char* fusion_name(FusionKind kind);
FusionKind parse_fusion(const std::string& name);

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t num_categories = 6;
  std::size_t time_step = 7;
  std::size_t lstm_units = 200;
  FusionKind fusion = FusionKind::Lstm;

  void validate() const;
};

struct LstmParams {
  Tensor input_kernel;      // D x 4U
  Tensor recurrent_kernel;  // U x 4U
  Tensor bias;              // 4U
};

struct DenseParams {
  Tensor weight;  // in x out
  Tensor bias;    // out
};

struct NamedTensor {
  std::string name;
  std::string group;
  Tensor* tensor;
};

struct NamedConstTensor {
  std::string name;
  std::string group;
  const Tensor* tensor;
};

// Both CNN streams, LSTM1 + FC1 (frame representation), LSTM2 + FC2 (clip
// prediction). The sum-fusion variant replaces LSTM1 by `projection`.
struct ReHARModel {
  ModelConfig config;
  Backbone backbone_frame;
  Backbone backbone_flow;
  LstmParams lstm1;
  DenseParams projection;
  DenseParams fc1;
  LstmParams lstm2;
  DenseParams fc2;

  // Glorot-uniform input/dense kernels, orthogonal recurrent kernels, zero
  // biases with forget-gate bias 1, He-uniform convolutions.
  static ReHARModel create(const ModelConfig& config, std::uint64_t seed);
  // Every parameter zero (shape skeleton for checkpoint loading).
  static ReHARModel zeros(const ModelConfig& config);

  // Canonical traversal order; checkpoints store parameters in this order.
  std::vector<NamedTensor> parameters();
  std::vector<NamedConstTensor> parameters() const;
  std::size_t parameter_count() const;
};

struct ModelNodes {
  BackboneNodes frame;
  BackboneNodes flow;
  std::optional<LstmNodes> lstm1;
  NodeId projection_w = 0, projection_b = 0;
  NodeId fc1_w = 0, fc1_b = 0;
  LstmNodes lstm2{};
  NodeId fc2_w = 0, fc2_b = 0;
};

ModelNodes bind_model(Graph& g, const ReHARModel& model);

// Parameter leaf ids in the canonical order of ReHARModel::parameters().
std::vector<NodeId> parameter_nodes(const ReHARModel& model, const ModelNodes& nodes);

// Probability vector over activities (softmax output of FC1 or FC2).
struct FrameRepresentation {
  std::vector<double> probs;
};

struct OneHotTarget {
  std::size_t num_categories;
  std::size_t index;

  std::vector<double> dense() const;
};

struct LossBreakdown {
  std::vector<double> frame_losses;
  double final_loss = 0.0;
  double lambda_weight = 2.0;
  double total = 0.0;
};

inline constexpr double kDefaultLambda = 2.0;

// -sum_i g_i log(max(p_i, 1e-12)). Rejects p whose sum is off by more than 1e-6.
double categorical_cross_entropy(const OneHotTarget& target, std::span<const double> probs);

// sum_t frame_losses[t] + lambda * final_loss, summed left to right.
LossBreakdown total_loss(std::span<const double> frame_losses, double final_loss,
                         double lambda_weight = kDefaultLambda);

// ---------------------------------------------------------------------------
// Graph-level building blocks

struct RepresentationNodes {
  NodeId logits;
  NodeId probs;
};

// LSTM1 over the 4-step sequence from zero state, FC1 + softmax on the last h.
RepresentationNodes frame_representation(Graph& g, const ReHARModel& model, const ModelNodes& nodes,
                                         NodeId gap_frame, NodeId gmax_frame, NodeId gap_flow,
                                         NodeId gmax_flow);

// Ablation: element-wise sum, linear projection to lstm_units, FC1 + softmax.
RepresentationNodes frame_representation_sum_variant(Graph& g, const ReHARModel& model,
                                                     const ModelNodes& nodes, NodeId gap_frame,
                                                     NodeId gmax_frame, NodeId gap_flow,
                                                     NodeId gmax_flow);

// Dispatches on model.config.fusion.
RepresentationNodes represent_frame(Graph& g, const ReHARModel& model, const ModelNodes& nodes,
                                    NodeId gap_frame, NodeId gmax_frame, NodeId gap_flow,
                                    NodeId gmax_flow);

// LSTM2 over exactly time_step representations, FC2 + softmax.
RepresentationNodes recognize_activity(Graph& g, const ReHARModel& model, const ModelNodes& nodes,
                                       std::span<const NodeId> representations);

// Model inputs for one clip: time_step frame images and flow images, each
// input_size x input_size x 3 with values in [0, 1].
struct ClipTensors {
  std::vector<Tensor> frames;
  std::vector<Tensor> flows;
};

ClipTensors to_clip_tensors(std::span<const FramePair> pairs);

// preprocess_clip to time_step + 1 frames at the backbone input size, then
// to_clip_tensors.
ClipTensors prepare_clip(const VideoClip& clip, const ModelConfig& config, const FlowParams& flow = {});

// Evaluation-time stream ablation: a disabled stream contributes zero vectors
// in place of its pooled features.
struct StreamMask {
  bool frame = true;
  bool flow = true;
};

struct ClipGraph {
  std::vector<NodeId> frame_inputs;
  std::vector<NodeId> flow_inputs;
  std::vector<RepresentationNodes> representations;
  RepresentationNodes final;
  std::vector<NodeId> frame_losses;
  NodeId final_loss = 0;
  NodeId total = 0;
  bool has_loss = false;
};

struct ClipGraphOptions {
  std::optional<std::size_t> label;  // when set, loss nodes are recorded
  double lambda_weight = kDefaultLambda;
  bool differentiable_inputs = false;  // images as variables (saliency)
  StreamMask streams{};
};

// backbones -> per-frame representation -> LSTM2, plus the multi-task loss on
// the same graph so one backward pass reaches every parameter.
ClipGraph build_clip_graph(Graph& g, const ReHARModel& model, const ModelNodes& nodes,
                           const ClipTensors& clip, const ClipGraphOptions& options = {});

LossBreakdown loss_breakdown(const Graph& g, const ClipGraph& clip, double lambda_weight);

// ---------------------------------------------------------------------------
// Value-level API

FrameRepresentation frame_representation(const ReHARModel& model, const Tensor& gap_frame,
                                         const Tensor& gmax_frame, const Tensor& gap_flow,
                                         const Tensor& gmax_flow);
FrameRepresentation frame_representation_sum_variant(const ReHARModel& model, const Tensor& gap_frame,
                                                     const Tensor& gmax_frame, const Tensor& gap_flow,
                                                     const Tensor& gmax_flow);
Tensor recognize_activity(const ReHARModel& model, std::span<const FrameRepresentation> reprs);

struct ClipResult {
  std::vector<FrameRepresentation> representations;
  std::vector<double> final_probs;
  std::optional<LossBreakdown> loss;
};

ClipResult forward_clip(const ReHARModel& model, const ClipTensors& clip,
                        std::optional<std::size_t> label = std::nullopt,
                        double lambda_weight = kDefaultLambda, StreamMask streams = {});

}  // namespace rehar
