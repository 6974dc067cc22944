#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "rehar/model.hpp"
#include "rehar/tensor.hpp"

namespace rehar::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// 2 frames of 8x8x3, two tiny stages, 3 categories.
inline ModelConfig tiny_model_config(FusionKind fusion = FusionKind::Lstm) {
  ModelConfig c;
  c.backbone.input_size = 8;
  c.backbone.stage_channels = {3, 4};
  c.backbone.convs_per_stage = {1};
  c.num_categories = 3;
  c.time_step = 2;
  c.lstm_units = 5;
  c.fusion = fusion;
  return c;
}

inline ClipTensors random_clip(const ModelConfig& c, std::uint64_t seed) {
  ClipTensors clip;
  const std::size_t s = c.backbone.input_size;
  for (std::size_t t = 0; t < c.time_step; ++t) {
    clip.frames.push_back(random_tensor({s, s, 3}, seed * 31 + 2 * t, 0.0, 1.0));
    clip.flows.push_back(random_tensor({s, s, 3}, seed * 31 + 2 * t + 1, 0.0, 1.0));
  }
  return clip;
}

// Max relative error between backward() on the clip graph and central
// differences of the value-level loss, over `per_tensor` sampled entries of
// every parameter tensor (all entries when the tensor is smaller).
struct GradientCheckStats {
  double max_relative = 0.0;
  double max_absolute = 0.0;
  std::size_t checked = 0;
  std::size_t over_1e4 = 0;  // entries with relative error >= 1e-4
};

inline double end_to_end_gradient_error(ReHARModel& model, const ClipTensors& clip, std::size_t label,
                                        std::uint64_t seed, std::size_t per_tensor = 6, double eps = 1e-5,
                                        GradientCheckStats* stats = nullptr) {
  Graph g;
  const ModelNodes nodes = bind_model(g, model);
  ClipGraphOptions opts;
  opts.label = label;
  const ClipGraph cg = build_clip_graph(g, model, nodes, clip, opts);
  g.backward(cg.total);
  const auto ids = parameter_nodes(model, nodes);
  auto params = model.parameters();
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = *params[k].tensor;
    const auto analytic = g.grad(ids[k]);
    std::vector<std::size_t> picks(t.size());
    for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(std::min(per_tensor, picks.size()));
    for (std::size_t i : picks) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = forward_clip(model, clip, label).loss->total;
      t[i] = saved - eps;
      const double down = forward_clip(model, clip, label).loss->total;
      t[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      worst = std::max(worst, err);
      if (stats) {
        stats->max_relative = std::max(stats->max_relative, err);
        stats->max_absolute = std::max(stats->max_absolute, std::abs(analytic[i] - numeric));
        ++stats->checked;
        stats->over_1e4 += err >= 1e-4 ? 1 : 0;
      }
    }
  }
  return worst;
}

}  // namespace rehar::testing
