#include "rehar/model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "rehar/error.hpp"

namespace rehar {

const char* fusion_name(FusionKind kind) {
  return kind == FusionKind::Lstm ? "lstm" : "sum";
}

FusionKind parse_fusion(const std::string& name) {
  if (name == "lstm") return FusionKind::Lstm;
  if (name == "sum") return FusionKind::ElementwiseSum;
  throw ConfigError("unknown fusion '" + name + "' (expected lstm or sum)");
}

void ModelConfig::validate() const {
  backbone.validate();
  if (num_categories < 2) throw ConfigError("model: num_categories must be >= 2");
  if (time_step < 1) throw ConfigError("model: time_step must be >= 1");
  if (lstm_units < 1) throw ConfigError("model: lstm_units must be >= 1");
}

std::vector<double> OneHotTarget::dense() const {
  std::vector<double> g(num_categories, 0.0);
  g.at(index) = 1.0;
  return g;
}

double categorical_cross_entropy(const OneHotTarget& target, std::span<const double> probs) {
  if (probs.size() != target.num_categories || target.index >= target.num_categories)
    throw ShapeError("categorical_cross_entropy: target does not match " + std::to_string(probs.size()) +
                     " probabilities");
  double total = 0.0;
  for (double p : probs) total += p;
  if (std::abs(total - 1.0) > 1e-6)
    throw NumericError("categorical_cross_entropy: probabilities sum to " + std::to_string(total));
  const auto g = target.dense();
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (g[i] != 0.0) loss -= g[i] * std::log(std::max(probs[i], kProbabilityFloor));
  return loss;
}

LossBreakdown total_loss(std::span<const double> frame_losses, double final_loss, double lambda_weight) {
  auto check = [](double v, const char* what) {
    if (!std::isfinite(v) || v < 0.0) throw NumericError(std::string("total_loss: invalid ") + what);
  };
  check(final_loss, "final loss");
  check(lambda_weight, "lambda");
  LossBreakdown out;
  out.frame_losses.assign(frame_losses.begin(), frame_losses.end());
  out.final_loss = final_loss;
  out.lambda_weight = lambda_weight;
  double sum = 0.0;
  for (double l : frame_losses) {
    check(l, "frame loss");
    sum += l;
  }
  out.total = sum + lambda_weight * final_loss;
  return out;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  Tensor t({fan_in, fan_out});
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : t.data()) w = dist(rng);
  return t;
}

// Rows x cols matrix with orthonormal rows (or columns, whichever is shorter).
Tensor orthogonal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const bool transposed = rows < cols;
  const auto n = static_cast<Eigen::Index>(transposed ? cols : rows);
  const auto m = static_cast<Eigen::Index>(transposed ? rows : cols);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < m; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      t[i * cols + j] = transposed ? q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i))
                                   : q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return t;
}

LstmParams make_lstm(std::size_t input, std::size_t units, std::mt19937_64* rng) {
  LstmParams p{Tensor({input, 4 * units}), Tensor({units, 4 * units}), Tensor({4 * units})};
  if (rng) {
    p.input_kernel = glorot_uniform(input, 4 * units, *rng);
    p.recurrent_kernel = orthogonal(units, 4 * units, *rng);
    for (std::size_t i = units; i < 2 * units; ++i) p.bias[i] = 1.0;
  }
  return p;
}

DenseParams make_dense(std::size_t in, std::size_t out, std::mt19937_64* rng) {
  DenseParams p{Tensor({in, out}), Tensor({out})};
  if (rng) p.weight = glorot_uniform(in, out, *rng);
  return p;
}

ReHARModel make_model(const ModelConfig& config, std::mt19937_64* rng) {
  config.validate();
  ReHARModel m;
  m.config = config;
  const std::size_t feat = config.backbone.final_channels();
  const std::size_t units = config.lstm_units;
  const std::size_t cats = config.num_categories;
  if (rng) {
    m.backbone_frame = build_backbone(config.backbone, (*rng)());
    m.backbone_flow = build_backbone(config.backbone, (*rng)());
  } else {
    m.backbone_frame = zero_backbone(config.backbone);
    m.backbone_flow = zero_backbone(config.backbone);
  }
  if (config.fusion == FusionKind::Lstm)
    m.lstm1 = make_lstm(feat, units, rng);
  else
    m.projection = make_dense(feat, units, rng);
  m.fc1 = make_dense(units, cats, rng);
  m.lstm2 = make_lstm(cats, units, rng);
  m.fc2 = make_dense(units, cats, rng);
  return m;
}

template <typename Model, typename Out>
void collect_parameters(Model& m, Out& out) {
  auto push = [&](const std::string& name, const std::string& group, auto* t) {
    out.push_back({name, group, t});
  };
  for (auto* stream : {&m.backbone_frame, &m.backbone_flow}) {
    const std::string group = stream == &m.backbone_frame ? "backbone_frame" : "backbone_flow";
    for (std::size_t s = 0; s < stream->stages().size(); ++s)
      for (std::size_t k = 0; k < stream->stages()[s].size(); ++k) {
        auto& layer = stream->stages()[s][k];
        const std::string base = group + ".block" + std::to_string(s + 1) + "_conv" + std::to_string(k + 1);
        push(base + ".kernel", group, &layer.kernels);
        push(base + ".bias", group, &layer.bias);
      }
  }
  if (m.config.fusion == FusionKind::Lstm) {
    push("lstm1.input_kernel", "lstm1", &m.lstm1.input_kernel);
    push("lstm1.recurrent_kernel", "lstm1", &m.lstm1.recurrent_kernel);
    push("lstm1.bias", "lstm1", &m.lstm1.bias);
  } else {
    push("projection.weight", "projection", &m.projection.weight);
    push("projection.bias", "projection", &m.projection.bias);
  }
  push("fc1.weight", "fc1", &m.fc1.weight);
  push("fc1.bias", "fc1", &m.fc1.bias);
  push("lstm2.input_kernel", "lstm2", &m.lstm2.input_kernel);
  push("lstm2.recurrent_kernel", "lstm2", &m.lstm2.recurrent_kernel);
  push("lstm2.bias", "lstm2", &m.lstm2.bias);
  push("fc2.weight", "fc2", &m.fc2.weight);
  push("fc2.bias", "fc2", &m.fc2.bias);
}

}  // namespace

ReHARModel ReHARModel::create(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_model(config, &rng);
}

ReHARModel ReHARModel::zeros(const ModelConfig& config) { return make_model(config, nullptr); }

std::vector<NamedTensor> ReHARModel::parameters() {
  std::vector<NamedTensor> out;
  collect_parameters(*this, out);
  return out;
}

std::vector<NamedConstTensor> ReHARModel::parameters() const {
  std::vector<NamedConstTensor> out;
  collect_parameters(*this, out);
  return out;
}

std::size_t ReHARModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

ModelNodes bind_model(Graph& g, const ReHARModel& model) {
  ModelNodes n;
  n.frame = bind_backbone(g, model.backbone_frame);
  n.flow = bind_backbone(g, model.backbone_flow);
  if (model.config.fusion == FusionKind::Lstm) {
    n.lstm1 = LstmNodes{g.parameter(model.lstm1.input_kernel), g.parameter(model.lstm1.recurrent_kernel),
                        g.parameter(model.lstm1.bias)};
  } else {
    n.projection_w = g.parameter(model.projection.weight);
    n.projection_b = g.parameter(model.projection.bias);
  }
  n.fc1_w = g.parameter(model.fc1.weight);
  n.fc1_b = g.parameter(model.fc1.bias);
  n.lstm2 = LstmNodes{g.parameter(model.lstm2.input_kernel), g.parameter(model.lstm2.recurrent_kernel),
                      g.parameter(model.lstm2.bias)};
  n.fc2_w = g.parameter(model.fc2.weight);
  n.fc2_b = g.parameter(model.fc2.bias);
  return n;
}

std::vector<NodeId> parameter_nodes(const ReHARModel& model, const ModelNodes& nodes) {
  std::vector<NodeId> ids;
  for (const auto* stream : {&nodes.frame, &nodes.flow})
    for (const auto& stage : stream->stages)
      for (const auto& [k, b] : stage) {
        ids.push_back(k);
        ids.push_back(b);
      }
  if (model.config.fusion == FusionKind::Lstm) {
    ids.insert(ids.end(), {nodes.lstm1->input_kernel, nodes.lstm1->recurrent_kernel, nodes.lstm1->bias});
  } else {
    ids.insert(ids.end(), {nodes.projection_w, nodes.projection_b});
  }
  ids.insert(ids.end(), {nodes.fc1_w, nodes.fc1_b, nodes.lstm2.input_kernel, nodes.lstm2.recurrent_kernel,
                         nodes.lstm2.bias, nodes.fc2_w, nodes.fc2_b});
  return ids;
}

// ---------------------------------------------------------------------------
// Graph-level model

namespace {

void require_feature_width(const Graph& g, const ReHARModel& model, std::initializer_list<NodeId> ids) {
  const std::size_t width = model.config.backbone.final_channels();
  for (NodeId id : ids)
    if (g.value(id).shape() != Shape{width})
      throw ShapeError("frame representation: pooled vector " + shape_to_string(g.value(id).shape()) +
                       " does not match backbone width " + std::to_string(width));
}

LstmState zero_state(Graph& g, std::size_t units) {
  return {g.constant(Tensor({units})), g.constant(Tensor({units}))};
}

RepresentationNodes dense_softmax(Graph& g, NodeId x, NodeId w, NodeId b) {
  const NodeId logits = add(g, vecmat(g, x, w), b);
  return {logits, softmax(g, logits)};
}

}  // namespace

RepresentationNodes frame_representation(Graph& g, const ReHARModel& model, const ModelNodes& nodes,
                                         NodeId gap_frame, NodeId gmax_frame, NodeId gap_flow,
                                         NodeId gmax_flow) {
  if (!nodes.lstm1) throw Error("frame_representation: model has no LSTM1 (sum fusion)");
  require_feature_width(g, model, {gap_frame, gmax_frame, gap_flow, gmax_flow});
  LstmState state = zero_state(g, model.config.lstm_units);
  for (NodeId step : {gap_frame, gmax_frame, gap_flow, gmax_flow})
    state = lstm_cell_step(g, step, state, *nodes.lstm1);
  return dense_softmax(g, state.h, nodes.fc1_w, nodes.fc1_b);
}

RepresentationNodes frame_representation_sum_variant(Graph& g, const ReHARModel& model,
                                                     const ModelNodes& nodes, NodeId gap_frame,
                                                     NodeId gmax_frame, NodeId gap_flow,
                                                     NodeId gmax_flow) {
  if (model.config.fusion != FusionKind::ElementwiseSum)
    throw Error("frame_representation_sum_variant: model uses LSTM fusion");
  require_feature_width(g, model, {gap_frame, gmax_frame, gap_flow, gmax_flow});
  const NodeId fused = add(g, add(g, add(g, gap_frame, gmax_frame), gap_flow), gmax_flow);
  const NodeId projected = add(g, vecmat(g, fused, nodes.projection_w), nodes.projection_b);
  return dense_softmax(g, projected, nodes.fc1_w, nodes.fc1_b);
}

RepresentationNodes represent_frame(Graph& g, const ReHARModel& model, const ModelNodes& nodes,
                                    NodeId gap_frame, NodeId gmax_frame, NodeId gap_flow,
                                    NodeId gmax_flow) {
  if (model.config.fusion == FusionKind::Lstm)
    return frame_representation(g, model, nodes, gap_frame, gmax_frame, gap_flow, gmax_flow);
  return frame_representation_sum_variant(g, model, nodes, gap_frame, gmax_frame, gap_flow, gmax_flow);
}

RepresentationNodes recognize_activity(Graph& g, const ReHARModel& model, const ModelNodes& nodes,
                                       std::span<const NodeId> representations) {
  if (representations.size() != model.config.time_step)
    throw ShapeError("recognize_activity: expected " + std::to_string(model.config.time_step) +
                     " representations, got " + std::to_string(representations.size()));
  LstmState state = zero_state(g, model.config.lstm_units);
  for (NodeId r : representations) state = lstm_cell_step(g, r, state, nodes.lstm2);
  return dense_softmax(g, state.h, nodes.fc2_w, nodes.fc2_b);
}

ClipTensors to_clip_tensors(std::span<const FramePair> pairs) {
  ClipTensors c;
  for (const auto& p : pairs) {
    c.frames.push_back(to_tensor(p.frame));
    c.flows.push_back(to_tensor(p.flow));
  }
  return c;
}

ClipTensors prepare_clip(const VideoClip& clip, const ModelConfig& config, const FlowParams& flow) {
  const std::size_t side = config.backbone.input_size;
  const auto pairs = preprocess_clip(clip, config.time_step + 1, side, side, flow);
  return to_clip_tensors(pairs);
}

ClipGraph build_clip_graph(Graph& g, const ReHARModel& model, const ModelNodes& nodes,
                           const ClipTensors& clip, const ClipGraphOptions& options) {
  const std::size_t steps = model.config.time_step;
  if (clip.frames.size() != steps || clip.flows.size() != steps)
    throw ShapeError("forward_clip: expected " + std::to_string(steps) + " (frame, flow) pairs, got " +
                     std::to_string(clip.frames.size()) + "/" + std::to_string(clip.flows.size()));
  if (options.label && *options.label >= model.config.num_categories)
    throw ShapeError("forward_clip: label " + std::to_string(*options.label) + " out of range");

  ClipGraph out;
  const std::size_t width = model.config.backbone.final_channels();
  std::vector<NodeId> reprs;
  for (std::size_t t = 0; t < steps; ++t) {
    const NodeId frame = options.differentiable_inputs ? g.variable(clip.frames[t]) : g.constant(clip.frames[t]);
    const NodeId flow = options.differentiable_inputs ? g.variable(clip.flows[t]) : g.constant(clip.flows[t]);
    out.frame_inputs.push_back(frame);
    out.flow_inputs.push_back(flow);
    PooledFeatures f{}, o{};
    if (options.streams.frame) {
      f = extract_features(g, model.backbone_frame, nodes.frame, frame);
    } else {
      f.gap = f.gmax = g.constant(Tensor({width}));
    }
    if (options.streams.flow) {
      o = extract_features(g, model.backbone_flow, nodes.flow, flow);
    } else {
      o.gap = o.gmax = g.constant(Tensor({width}));
    }
    out.representations.push_back(represent_frame(g, model, nodes, f.gap, f.gmax, o.gap, o.gmax));
    reprs.push_back(out.representations.back().probs);
  }
  out.final = recognize_activity(g, model, nodes, reprs);

  if (options.label) {
    for (const auto& r : out.representations) out.frame_losses.push_back(cross_entropy(g, r.probs, *options.label));
    out.final_loss = cross_entropy(g, out.final.probs, *options.label);
    NodeId acc = out.frame_losses.front();
    for (std::size_t t = 1; t < out.frame_losses.size(); ++t) acc = add(g, acc, out.frame_losses[t]);
    out.total = add(g, acc, scale(g, out.final_loss, options.lambda_weight));
    out.has_loss = true;
  }
  return out;
}

LossBreakdown loss_breakdown(const Graph& g, const ClipGraph& clip, double lambda_weight) {
  if (!clip.has_loss) throw Error("loss_breakdown: clip graph was built without a label");
  std::vector<double> frame;
  for (NodeId id : clip.frame_losses) frame.push_back(g.value(id).item());
  LossBreakdown b = total_loss(frame, g.value(clip.final_loss).item(), lambda_weight);
  b.total = g.value(clip.total).item();
  return b;
}

// ---------------------------------------------------------------------------
// Value-level API

namespace {

FrameRepresentation to_repr(const Graph& g, NodeId probs) {
  const auto v = g.value(probs).data();
  return {{v.begin(), v.end()}};
}

}  // namespace

FrameRepresentation frame_representation(const ReHARModel& model, const Tensor& gap_frame,
                                         const Tensor& gmax_frame, const Tensor& gap_flow,
                                         const Tensor& gmax_flow) {
  Graph g;
  const auto nodes = bind_model(g, model);
  return to_repr(g, frame_representation(g, model, nodes, g.constant(gap_frame), g.constant(gmax_frame),
                                         g.constant(gap_flow), g.constant(gmax_flow))
                        .probs);
}

FrameRepresentation frame_representation_sum_variant(const ReHARModel& model, const Tensor& gap_frame,
                                                     const Tensor& gmax_frame, const Tensor& gap_flow,
                                                     const Tensor& gmax_flow) {
  Graph g;
  const auto nodes = bind_model(g, model);
  return to_repr(g, frame_representation_sum_variant(g, model, nodes, g.constant(gap_frame),
                                                     g.constant(gmax_frame), g.constant(gap_flow),
                                                     g.constant(gmax_flow))
                        .probs);
}

Tensor recognize_activity(const ReHARModel& model, std::span<const FrameRepresentation> reprs) {
  Graph g;
  const auto nodes = bind_model(g, model);
  std::vector<NodeId> ids;
  for (const auto& r : reprs) {
    if (r.probs.size() != model.config.num_categories)
      throw ShapeError("recognize_activity: representation width " + std::to_string(r.probs.size()) +
                       " does not match " + std::to_string(model.config.num_categories) + " categories");
    ids.push_back(g.constant(Tensor({r.probs.size()}, r.probs)));
  }
  return g.value(recognize_activity(g, model, nodes, ids).probs);
}

ClipResult forward_clip(const ReHARModel& model, const ClipTensors& clip, std::optional<std::size_t> label,
                        double lambda_weight, StreamMask streams) {
  Graph g;
  const auto nodes = bind_model(g, model);
  ClipGraphOptions opts;
  opts.label = label;
  opts.lambda_weight = lambda_weight;
  opts.streams = streams;
  const ClipGraph cg = build_clip_graph(g, model, nodes, clip, opts);
  ClipResult r;
  for (const auto& rep : cg.representations) r.representations.push_back(to_repr(g, rep.probs));
  r.final_probs = to_repr(g, cg.final.probs).probs;
  if (label) r.loss = loss_breakdown(g, cg, lambda_weight);
  return r;
}

}  // namespace rehar
