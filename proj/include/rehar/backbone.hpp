#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rehar/autograd.hpp"
#include "rehar/tensor.hpp"

namespace rehar {

// Truncated VGG-style stack: every stage is `convs_per_stage` 3x3 same
// convolutions with ReLU, then a 2x2 max-pool. There is no flatten or dense
// stage. VGG16 itself is {input 224, channels {64,128,256,512,512},
// convs {2,2,3,3,3}}.
struct BackboneConfig {
  std::size_t input_size = 32;
  std::size_t input_channels = 3;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  // One entry per stage, or a single entry applied to every stage.
  std::vector<std::size_t> convs_per_stage{2};

  std::size_t final_channels() const { return stage_channels.back(); }
  std::size_t final_size() const;
  std::size_t convs_in_stage(std::size_t stage) const;
  void validate() const;

  static BackboneConfig vgg16();
};

struct ConvLayer {
  Tensor kernels;  // 3 x 3 x Cin x Cout
  Tensor bias;     // Cout
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneConfig config, std::vector<std::vector<ConvLayer>> stages);

  const BackboneConfig& config() const noexcept { return config_; }
  const std::vector<std::vector<ConvLayer>>& stages() const noexcept { return stages_; }
  std::vector<std::vector<ConvLayer>>& stages() noexcept { return stages_; }

 private:
  BackboneConfig config_;
  std::vector<std::vector<ConvLayer>> stages_;
};

// He-uniform kernels, zero biases; deterministic in (config, seed).
Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed);

// Shape-only construction (all parameters zero), used when loading checkpoints.
Backbone zero_backbone(const BackboneConfig& config);

struct PooledFeatures {
  NodeId gap;
  NodeId gmax;
};

// Node ids of one backbone's parameters inside a graph.
struct BackboneNodes {
  std::vector<std::vector<std::pair<NodeId, NodeId>>> stages;  // (kernels, bias)
};

BackboneNodes bind_backbone(Graph& g, const Backbone& backbone);

// Runs the stack on an H x W x C image node and returns both global poolings.
PooledFeatures extract_features(Graph& g, const Backbone& backbone, const BackboneNodes& nodes,
                                NodeId image);

// Convenience: forward only, returns (gap, gmax) values.
std::pair<Tensor, Tensor> extract_features(const Backbone& backbone, const Tensor& image);

}  // namespace rehar
