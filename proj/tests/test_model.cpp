#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "rehar/model.hpp"
#include "test_support.hpp"

using namespace rehar;
using namespace rehar::testing;

TEST(Loss, TotalLossWeightsFinalTermByLambda) {
  const std::vector<double> frame{0.1, 0.2, 0.3};
  const LossBreakdown l = total_loss(frame, 0.5, 2.0);
  EXPECT_EQ(l.total, 1.6);
  EXPECT_EQ(total_loss(frame, 0.5).lambda_weight, 2.0);
}

TEST(Loss, TotalLossRejectsNegativeTerms) {
  const std::vector<double> frame{0.1, -0.2};
  EXPECT_THROW(total_loss(frame, 0.5), Error);
  const std::vector<double> ok{0.1};
  EXPECT_THROW(total_loss(ok, NAN), Error);
}

TEST(Loss, UniformCrossEntropyIsLogOfCategoryCount) {
  const std::vector<double> p(11, 1.0 / 11.0);
  EXPECT_NEAR(categorical_cross_entropy({11, 4}, p), std::log(11.0), 1e-12);
}

TEST(Loss, CrossEntropyOfConfidentCorrectPredictionIsSmall) {
  const std::vector<double> p{0.98, 0.01, 0.01};
  EXPECT_NEAR(categorical_cross_entropy({3, 0}, p), -std::log(0.98), 1e-15);
}

TEST(Loss, OneHotDense) {
  EXPECT_EQ((OneHotTarget{4, 2}.dense()), (std::vector<double>{0, 0, 1, 0}));
}

TEST(Model, ParameterOrderIsCanonical) {
  ReHARModel m = ReHARModel::create(tiny_model_config(), 1);
  const auto params = m.parameters();
  ASSERT_FALSE(params.empty());
  EXPECT_EQ(params.front().name, "backbone_frame.block1_conv1.kernel");
  EXPECT_EQ(params.back().name, "fc2.bias");
  std::size_t count = 0;
  for (const auto& p : params) count += p.tensor->size();
  EXPECT_EQ(count, m.parameter_count());
}

TEST(Model, SumVariantReplacesLstm1ByProjection) {
  ReHARModel m = ReHARModel::create(tiny_model_config(FusionKind::ElementwiseSum), 1);
  bool has_projection = false, has_lstm1 = false;
  for (const auto& p : m.parameters()) {
    has_projection |= p.group == "projection";
    has_lstm1 |= p.group == "lstm1";
  }
  EXPECT_TRUE(has_projection);
  EXPECT_FALSE(has_lstm1);
}

TEST(Model, InitializationFollowsConventions) {
  ModelConfig c = tiny_model_config();
  ReHARModel m = ReHARModel::create(c, 3);
  const std::size_t U = c.lstm_units;
  // forget-gate bias 1, the rest 0
  for (std::size_t i = 0; i < 4 * U; ++i) EXPECT_EQ(m.lstm1.bias[i], (i >= U && i < 2 * U) ? 1.0 : 0.0);
  // U x 4U orthogonal: rows are orthonormal
  const Tensor& r = m.lstm2.recurrent_kernel;
  for (std::size_t a = 0; a < U; ++a)
    for (std::size_t b = 0; b < U; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < 4 * U; ++j) dot += r[a * 4 * U + j] * r[b * 4 * U + j];
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-12);
    }
  // Glorot-uniform bound sqrt(6 / (fan_in + fan_out))
  const double bound = std::sqrt(6.0 / static_cast<double>(c.num_categories + 4 * U));
  for (double v : m.lstm2.input_kernel.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(Model, CreateIsSeedDeterministic) {
  ReHARModel a = ReHARModel::create(tiny_model_config(), 9);
  ReHARModel b = ReHARModel::create(tiny_model_config(), 9);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].tensor->same_values(*pb[i].tensor));
}

TEST(Model, ForwardProducesDistributions) {
  const ModelConfig c = tiny_model_config();
  ReHARModel m = ReHARModel::create(c, 2);
  const ClipResult r = forward_clip(m, random_clip(c, 4), 1);
  ASSERT_EQ(r.representations.size(), c.time_step);
  for (const auto& rep : r.representations) {
    EXPECT_EQ(rep.probs.size(), c.num_categories);
    EXPECT_NEAR(std::accumulate(rep.probs.begin(), rep.probs.end(), 0.0), 1.0, 1e-12);
  }
  EXPECT_NEAR(std::accumulate(r.final_probs.begin(), r.final_probs.end(), 0.0), 1.0, 1e-12);
  ASSERT_TRUE(r.loss.has_value());
  double frame_sum = 0.0;
  for (std::size_t t = 0; t < c.time_step; ++t) {
    EXPECT_NEAR(r.loss->frame_losses[t], -std::log(r.representations[t].probs[1]), 1e-12);
    frame_sum += r.loss->frame_losses[t];
  }
  EXPECT_NEAR(r.loss->final_loss, -std::log(r.final_probs[1]), 1e-12);
  EXPECT_NEAR(r.loss->total, frame_sum + 2.0 * r.loss->final_loss, 1e-12);
}

TEST(Model, RecognizeActivityRequiresTimeStepRepresentations) {
  const ModelConfig c = tiny_model_config();
  ReHARModel m = ReHARModel::create(c, 2);
  std::vector<FrameRepresentation> reps(c.time_step + 1, FrameRepresentation{std::vector<double>(3, 1.0 / 3)});
  EXPECT_THROW(recognize_activity(m, reps), ShapeError);
  reps.pop_back();
  EXPECT_EQ(recognize_activity(m, reps).size(), c.num_categories);
}

TEST(Model, FrameRepresentationRejectsWrongFeatureWidth) {
  ReHARModel m = ReHARModel::create(tiny_model_config(), 2);
  const Tensor good({4}), bad({5});
  EXPECT_THROW(frame_representation(m, good, good, good, bad), ShapeError);
  EXPECT_EQ(frame_representation(m, good, good, good, good).probs.size(), 3u);
}

TEST(Model, LstmFusionIsOrderSensitiveSumIsNot) {
  ReHARModel lstm = ReHARModel::create(tiny_model_config(), 5);
  ReHARModel sumv = ReHARModel::create(tiny_model_config(FusionKind::ElementwiseSum), 5);
  const Tensor a = random_tensor({4}, 1), b = random_tensor({4}, 2), c = random_tensor({4}, 3), d = random_tensor({4}, 4);
  EXPECT_NE(frame_representation(lstm, a, b, c, d).probs, frame_representation(lstm, d, c, b, a).probs);
  const auto s1 = frame_representation_sum_variant(sumv, a, b, c, d).probs;
  const auto s2 = frame_representation_sum_variant(sumv, d, c, b, a).probs;
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_NEAR(s1[i], s2[i], 1e-14);
}

TEST(Model, StreamMaskZeroesPooledFeatures) {
  const ModelConfig c = tiny_model_config();
  ReHARModel m = ReHARModel::create(c, 2);
  ClipTensors clip = random_clip(c, 7);
  ClipTensors other = clip;
  for (auto& f : other.flows) f = random_tensor(f.shape(), 123, 0.0, 1.0);
  const StreamMask frame_only{true, false};
  EXPECT_EQ(forward_clip(m, clip, std::nullopt, 2.0, frame_only).final_probs,
            forward_clip(m, other, std::nullopt, 2.0, frame_only).final_probs);
  EXPECT_NE(forward_clip(m, clip).final_probs, forward_clip(m, other).final_probs);
}

TEST(Model, EndToEndGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ModelConfig c = tiny_model_config();
    ReHARModel m = ReHARModel::create(c, seed);
    EXPECT_LT(end_to_end_gradient_error(m, random_clip(c, seed), seed % 3, seed, 3), 1e-4) << "seed " << seed;
  }
}
