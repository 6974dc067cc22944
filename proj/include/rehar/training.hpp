#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rehar/model.hpp"
#include "rehar/tensor.hpp"

namespace rehar {

enum class OptimizerKind { RmsProp, Sgd };

const char* optimizer_name(OptimizerKind kind);

// Per-parameter optimizer state. Accumulators exist for rmsprop only and
// follow the order of the parameter list the state was created for.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::RmsProp;
  double learning_rate = 0.001;
  double fuzz = 1e-8;
  double decay_rho = 0.9;
  std::vector<std::vector<double>> accumulators;

  static OptimizerState rmsprop(std::span<const std::size_t> sizes, double learning_rate,
                                double decay_rho = 0.9, double fuzz = 1e-8);
  static OptimizerState sgd(double learning_rate);
  void validate() const;
};

// acc <- rho * acc + (1 - rho) * g^2 ; w <- w - lr * g / (sqrt(acc) + fuzz)
void rmsprop_step(Tensor& param, std::span<const double> grad, std::span<double> accumulator,
                  double learning_rate, double decay_rho, double fuzz);
// w <- w - lr * g
void sgd_step(Tensor& param, std::span<const double> grad, double learning_rate);

// Applies one update to every parameter using its gradient buffer.
void apply_optimizer(OptimizerState& state, std::span<Tensor* const> params);

struct TrainingConfig {
  double lambda_weight = kDefaultLambda;
  double rmsprop_lr = 0.001;
  double sgd_lr = 0.0001;
  double fuzz = 1e-8;
  double decay_rho = 0.9;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 20;
  std::size_t switch_patience = 3;
  double switch_threshold = 0.01;  // relative improvement of the smoothed loss
  double ema_beta = 0.7;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  OptimizerKind phase = OptimizerKind::RmsProp;
  double total_loss = 0.0;  // mean over clips
  double loss1_sum = 0.0;   // mean over clips of sum_t loss_1,t
  double loss2 = 0.0;       // mean over clips
  double accuracy = 0.0;    // training accuracy of the final prediction
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
};

// Tab-separated, one line per epoch after a header line.
void write_history(std::ostream& out, const TrainingHistory& history);

struct TrainingSample {
  ClipTensors inputs;
  std::size_t label = 0;
  std::string id;
};

// Decides the permanent rmsprop -> SGD switch from an exponential moving
// average of the epoch loss.
class PhaseController {
 public:
  PhaseController(double ema_beta, double threshold, std::size_t patience);
  // Feeds one epoch loss; returns true when the switch should happen now.
  bool observe(double epoch_loss);
  bool switched() const noexcept { return switched_; }

 private:
  double beta_, threshold_;
  std::size_t patience_;
  bool has_ema_ = false;
  double ema_ = 0.0;
  std::size_t stalled_ = 0;
  bool switched_ = false;
};

// Mean-of-batch gradients of the multi-task loss for a set of clips,
// accumulated in clip order. Returns per-clip loss breakdowns and whether
// each final prediction was correct.
struct BatchResult {
  std::vector<LossBreakdown> losses;
  std::vector<bool> correct;
};

// Gradients are written into the parameters' grad buffers (which must be
// enabled). Throws NumericError naming the first parameter group with a
// non-finite gradient.
BatchResult accumulate_batch_gradients(ReHARModel& model, std::span<const TrainingSample* const> batch,
                                       double lambda_weight, std::size_t threads);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Seeded shuffling, mini-batch mean gradients of the multi-task loss,
// rmsprop until the smoothed loss stalls, then SGD until max_epochs.
TrainingHistory train(ReHARModel& model, std::span<const TrainingSample> dataset, const TrainingConfig& config,
                      const EpochCallback& on_epoch = {});

}  // namespace rehar
