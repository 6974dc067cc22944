#include "rehar/backbone.hpp"

#include <cmath>
#include <random>

#include "rehar/error.hpp"

namespace rehar {

std::size_t BackboneConfig::final_size() const {
  return input_size >> stage_channels.size();
}

std::size_t BackboneConfig::convs_in_stage(std::size_t stage) const {
  return convs_per_stage.size() == 1 ? convs_per_stage[0] : convs_per_stage.at(stage);
}

void BackboneConfig::validate() const {
  if (stage_channels.empty()) throw ConfigError("backbone: stage_channels must not be empty");
  if (input_channels < 1) throw ConfigError("backbone: input_channels must be >= 1");
  for (auto c : stage_channels)
    if (c < 1) throw ConfigError("backbone: channel counts must be >= 1");
  if (convs_per_stage.size() != 1 && convs_per_stage.size() != stage_channels.size())
    throw ConfigError("backbone: convs_per_stage needs one entry or one per stage");
  for (auto n : convs_per_stage)
    if (n < 1) throw ConfigError("backbone: convs_per_stage entries must be >= 1");
  const std::size_t div = std::size_t{1} << stage_channels.size();
  if (input_size == 0 || input_size % div != 0)
    throw ConfigError("backbone: input size " + std::to_string(input_size) + " is not divisible by " +
                      std::to_string(div));
}

BackboneConfig BackboneConfig::vgg16() {
  BackboneConfig c;
  c.input_size = 224;
  c.stage_channels = {64, 128, 256, 512, 512};
  c.convs_per_stage = {2, 2, 3, 3, 3};
  return c;
}

Backbone::Backbone(BackboneConfig config, std::vector<std::vector<ConvLayer>> stages)
    : config_(std::move(config)), stages_(std::move(stages)) {
  config_.validate();
  if (stages_.size() != config_.stage_channels.size())
    throw ShapeError("backbone: stage count does not match config");
  std::size_t cin = config_.input_channels;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (stages_[s].size() != config_.convs_in_stage(s))
      throw ShapeError("backbone: stage " + std::to_string(s) + " has wrong conv count");
    const std::size_t cout = config_.stage_channels[s];
    for (const auto& layer : stages_[s]) {
      require_shape(layer.kernels, {3, 3, cin, cout}, "backbone kernels");
      require_shape(layer.bias, {cout}, "backbone bias");
      cin = cout;
    }
  }
}

namespace {

Backbone make_backbone(const BackboneConfig& config, std::mt19937_64* rng) {
  config.validate();
  std::vector<std::vector<ConvLayer>> stages(config.stage_channels.size());
  std::size_t cin = config.input_channels;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::size_t cout = config.stage_channels[s];
    for (std::size_t k = 0; k < config.convs_in_stage(s); ++k) {
      ConvLayer layer{Tensor({3, 3, cin, cout}), Tensor({cout})};
      if (rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(9 * cin));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& w : layer.kernels.data()) w = dist(*rng);
      }
      stages[s].push_back(std::move(layer));
      cin = cout;
    }
  }
  return Backbone(config, std::move(stages));
}

}  // namespace

Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_backbone(config, &rng);
}

Backbone zero_backbone(const BackboneConfig& config) { return make_backbone(config, nullptr); }

BackboneNodes bind_backbone(Graph& g, const Backbone& backbone) {
  BackboneNodes nodes;
  for (const auto& stage : backbone.stages()) {
    auto& bound = nodes.stages.emplace_back();
    for (const auto& layer : stage) bound.emplace_back(g.parameter(layer.kernels), g.parameter(layer.bias));
  }
  return nodes;
}

PooledFeatures extract_features(Graph& g, const Backbone& backbone, const BackboneNodes& nodes,
                                NodeId image) {
  const auto& cfg = backbone.config();
  require_shape(g.value(image), {cfg.input_size, cfg.input_size, cfg.input_channels}, "extract_features: image");
  NodeId x = image;
  for (const auto& stage : nodes.stages) {
    for (const auto& [kernels, bias] : stage) x = relu(g, conv2d(g, x, kernels, bias, Padding::Same));
    x = max_pool2d(g, x);
  }
  return {global_avg_pool(g, x), global_max_pool(g, x)};
}

std::pair<Tensor, Tensor> extract_features(const Backbone& backbone, const Tensor& image) {
  Graph g;
  const auto nodes = bind_backbone(g, backbone);
  const auto pooled = extract_features(g, backbone, nodes, g.constant(image));
  return {g.value(pooled.gap), g.value(pooled.gmax)};
}

}  // namespace rehar
