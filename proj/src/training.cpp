#include "rehar/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "rehar/error.hpp"

namespace rehar {

const char* optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::RmsProp ? "rmsprop" : "sgd";
}

OptimizerState OptimizerState::rmsprop(std::span<const std::size_t> sizes, double learning_rate,
                                       double decay_rho, double fuzz) {
  OptimizerState s;
  s.kind = OptimizerKind::RmsProp;
  s.learning_rate = learning_rate;
  s.decay_rho = decay_rho;
  s.fuzz = fuzz;
  for (auto n : sizes) s.accumulators.emplace_back(n, 0.0);
  s.validate();
  return s;
}

OptimizerState OptimizerState::sgd(double learning_rate) {
  OptimizerState s;
  s.kind = OptimizerKind::Sgd;
  s.learning_rate = learning_rate;
  s.validate();
  return s;
}

void OptimizerState::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  if (!(fuzz > 0.0)) throw ConfigError("optimizer: fuzz must be positive");
  if (!(decay_rho >= 0.0 && decay_rho < 1.0)) throw ConfigError("optimizer: decay_rho must be in [0, 1)");
}

void rmsprop_step(Tensor& param, std::span<const double> grad, std::span<double> accumulator,
                  double learning_rate, double decay_rho, double fuzz) {
  if (grad.size() != param.size() || accumulator.size() != param.size())
    throw ShapeError("rmsprop_step: gradient/accumulator size does not match parameter " +
                     shape_to_string(param.shape()));
  auto w = param.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    accumulator[i] = decay_rho * accumulator[i] + (1.0 - decay_rho) * grad[i] * grad[i];
    w[i] -= learning_rate * grad[i] / (std::sqrt(accumulator[i]) + fuzz);
  }
}

void sgd_step(Tensor& param, std::span<const double> grad, double learning_rate) {
  if (grad.size() != param.size())
    throw ShapeError("sgd_step: gradient size does not match parameter " + shape_to_string(param.shape()));
  auto w = param.data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * grad[i];
}

void apply_optimizer(OptimizerState& state, std::span<Tensor* const> params) {
  if (state.kind == OptimizerKind::RmsProp) {
    if (state.accumulators.size() != params.size())
      throw ShapeError("apply_optimizer: accumulator count does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
      rmsprop_step(*params[i], params[i]->grad(), state.accumulators[i], state.learning_rate, state.decay_rho,
                   state.fuzz);
  } else {
    for (Tensor* p : params) sgd_step(*p, p->grad(), state.learning_rate);
  }
}

void TrainingConfig::validate() const {
  if (!(lambda_weight >= 0.0)) throw ConfigError("training: lambda must be >= 0");
  if (!(rmsprop_lr > 0.0) || !(sgd_lr > 0.0)) throw ConfigError("training: learning rates must be positive");
  if (!(fuzz > 0.0)) throw ConfigError("training: fuzz must be positive");
  if (!(decay_rho >= 0.0 && decay_rho < 1.0)) throw ConfigError("training: decay_rho must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (switch_patience < 1) throw ConfigError("training: switch_patience must be >= 1");
  if (!(switch_threshold >= 0.0)) throw ConfigError("training: switch_threshold must be >= 0");
  if (!(ema_beta >= 0.0 && ema_beta < 1.0)) throw ConfigError("training: ema_beta must be in [0, 1)");
  if (threads < 1) throw ConfigError("training: threads must be >= 1");
}

void write_history(std::ostream& out, const TrainingHistory& history) {
  out << "epoch\tphase\ttotal_loss\tloss1_sum\tloss2\taccuracy\n";
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(9);
  for (const auto& e : history.epochs)
    out << e.epoch << '\t' << optimizer_name(e.phase) << '\t' << e.total_loss << '\t' << e.loss1_sum << '\t'
        << e.loss2 << '\t' << e.accuracy << '\n';
  out.flags(flags);
  out.precision(prec);
}

PhaseController::PhaseController(double ema_beta, double threshold, std::size_t patience)
    : beta_(ema_beta), threshold_(threshold), patience_(patience) {}

bool PhaseController::observe(double epoch_loss) {
  if (switched_) return false;
  if (!has_ema_) {
    ema_ = epoch_loss;
    has_ema_ = true;
    return false;
  }
  const double next = beta_ * ema_ + (1.0 - beta_) * epoch_loss;
  const double improvement = ema_ > 0.0 ? (ema_ - next) / ema_ : 0.0;
  ema_ = next;
  stalled_ = improvement < threshold_ ? stalled_ + 1 : 0;
  if (stalled_ >= patience_) {
    switched_ = true;
    return true;
  }
  return false;
}

namespace {

struct ClipOutcome {
  std::vector<std::vector<double>> grads;  // canonical parameter order
  LossBreakdown loss;
  bool correct = false;
};

ClipOutcome run_clip(const ReHARModel& model, const TrainingSample& sample, double lambda_weight) {
  Graph g;
  const ModelNodes nodes = bind_model(g, model);
  ClipGraphOptions opts;
  opts.label = sample.label;
  opts.lambda_weight = lambda_weight;
  const ClipGraph cg = build_clip_graph(g, model, nodes, sample.inputs, opts);
  g.backward(cg.total);
  ClipOutcome out;
  out.loss = loss_breakdown(g, cg, lambda_weight);
  const auto probs = g.value(cg.final.probs).data();
  out.correct = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin()) == sample.label;
  for (NodeId id : parameter_nodes(model, nodes)) {
    const auto gr = g.grad(id);
    out.grads.emplace_back(gr.begin(), gr.end());
  }
  return out;
}

}  // namespace

BatchResult accumulate_batch_gradients(ReHARModel& model, std::span<const TrainingSample* const> batch,
                                       double lambda_weight, std::size_t threads) {
  if (batch.empty()) throw Error("accumulate_batch_gradients: empty batch");
  std::vector<ClipOutcome> outcomes(batch.size());
  const ReHARModel& frozen = model;
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), batch.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) outcomes[i] = run_clip(frozen, *batch[i], lambda_weight);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < batch.size(); i += workers)
            outcomes[i] = run_clip(frozen, *batch[i], lambda_weight);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  auto params = model.parameters();
  for (auto& p : params) {
    if (!p.tensor->has_grad()) p.tensor->set_requires_grad(true);
    p.tensor->zero_grad();
  }
  BatchResult result;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    auto& o = outcomes[i];
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto acc = params[k].tensor->grad();
      const auto& gk = o.grads[k];
      for (std::size_t j = 0; j < acc.size(); ++j) {
        if (!std::isfinite(gk[j]))
          throw NumericError("non-finite gradient in parameter group '" + params[k].group + "' (" +
                             params[k].name + ") on clip '" + batch[i]->id + "'");
        acc[j] += gk[j];
      }
    }
    result.losses.push_back(std::move(o.loss));
    result.correct.push_back(o.correct);
  }
  for (auto& p : params)
    for (double& v : p.tensor->grad()) v *= inv;
  return result;
}

TrainingHistory train(ReHARModel& model, std::span<const TrainingSample> dataset, const TrainingConfig& config,
                      const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");
  for (const auto& s : dataset)
    if (s.label >= model.config.num_categories)
      throw DataError("train: clip '" + s.id + "' has label " + std::to_string(s.label) + " outside " +
                      std::to_string(model.config.num_categories) + " categories");

  auto named = model.parameters();
  std::vector<Tensor*> params;
  std::vector<std::size_t> sizes;
  for (auto& p : named) {
    p.tensor->set_requires_grad(true);
    params.push_back(p.tensor);
    sizes.push_back(p.tensor->size());
  }
  OptimizerState optimizer = OptimizerState::rmsprop(sizes, config.rmsprop_lr, config.decay_rho, config.fuzz);
  PhaseController phase(config.ema_beta, config.switch_threshold, config.switch_patience);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainingHistory history;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.phase = optimizer.kind;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const TrainingSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&dataset[order[i]]);
      const BatchResult br = accumulate_batch_gradients(model, batch, config.lambda_weight, config.threads);
      for (std::size_t i = 0; i < br.losses.size(); ++i) {
        const auto& l = br.losses[i];
        if (!std::isfinite(l.total)) throw NumericError("non-finite loss on clip '" + batch[i]->id + "'");
        rec.total_loss += l.total;
        rec.loss1_sum += std::accumulate(l.frame_losses.begin(), l.frame_losses.end(), 0.0);
        rec.loss2 += l.final_loss;
        correct += br.correct[i] ? 1 : 0;
      }
      apply_optimizer(optimizer, params);
    }
    const double n = static_cast<double>(dataset.size());
    rec.total_loss /= n;
    rec.loss1_sum /= n;
    rec.loss2 /= n;
    rec.accuracy = static_cast<double>(correct) / n;
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (phase.observe(rec.total_loss)) optimizer = OptimizerState::sgd(config.sgd_lr);
  }
  for (Tensor* p : params) p->set_requires_grad(false);
  return history;
}

}  // namespace rehar
