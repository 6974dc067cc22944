#include "rehar/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <ostream>
#include <thread>

namespace rehar {

namespace {

std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

void check_inputs(std::span<const double> scores, std::span<const bool> positives) {
  if (scores.size() != positives.size()) throw ShapeError("average_precision: scores and labels differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("average_precision: non-finite score");
}

}  // namespace

std::vector<PrecisionRecallPoint> precision_recall_curve(std::span<const double> scores,
                                                         std::span<const bool> positives) {
  check_inputs(scores, positives);
  const auto total_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  std::vector<PrecisionRecallPoint> curve;
  std::size_t tp = 0;
  const auto order = rank_by_score(scores);
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (positives[order[k]]) ++tp;
    curve.push_back({total_pos ? static_cast<double>(tp) / static_cast<double>(total_pos) : 0.0,
                     static_cast<double>(tp) / static_cast<double>(k + 1)});
  }
  return curve;
}

double average_precision(std::span<const double> scores, std::span<const bool> positives) {
  check_inputs(scores, positives);
  const auto total_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  if (total_pos == 0) throw UndefinedAveragePrecision("average_precision: no positive instances");
  const auto order = rank_by_score(scores);
  const double total = static_cast<double>(total_pos);
  std::size_t tp = 0;
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (positives[order[k]]) ++tp;
    const double recall = static_cast<double>(tp) / total;
    ap += (recall - prev_recall) * (static_cast<double>(tp) / static_cast<double>(k + 1));
    prev_recall = recall;
  }
  return ap;
}

MeanAveragePrecision mean_average_precision(std::span<const std::vector<double>> scores,
                                            std::span<const std::size_t> labels, std::size_t num_categories) {
  if (scores.size() != labels.size()) throw ShapeError("mean_average_precision: scores and labels differ in length");
  MeanAveragePrecision out;
  out.per_category.resize(num_categories);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < num_categories; ++c) {
    std::vector<double> col(scores.size());
    std::vector<char> pos_storage(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != num_categories) throw ShapeError("mean_average_precision: ragged score rows");
      if (labels[i] >= num_categories) throw ShapeError("mean_average_precision: label out of range");
      col[i] = scores[i][c];
      pos_storage[i] = labels[i] == c;
    }
    auto pos = std::unique_ptr<bool[]>(new bool[scores.size()]);
    for (std::size_t i = 0; i < scores.size(); ++i) pos[i] = pos_storage[i] != 0;
    try {
      const double ap = average_precision(col, std::span<const bool>(pos.get(), scores.size()));
      out.per_category[c] = ap;
      sum += ap;
      ++defined;
    } catch (const UndefinedAveragePrecision&) {
      out.skipped.push_back(c);
      std::cerr << "warning: category " << c << " has no positive clips; AP skipped\n";
    }
  }
  if (defined == 0) throw UndefinedAveragePrecision("mean_average_precision: no category has positives");
  out.mean = sum / static_cast<double>(defined);
  return out;
}

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(std::size_t num_categories) : n_(num_categories), counts_(n_ * n_, 0) {}

void ConfusionMatrix::add(std::size_t predicted, std::size_t actual) {
  if (predicted >= n_ || actual >= n_)
    throw ShapeError("confusion_matrix: label out of range [0, " + std::to_string(n_) + ")");
  ++counts_[predicted * n_ + actual];
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::column_total(std::size_t actual) const {
  std::size_t t = 0;
  for (std::size_t p = 0; p < n_; ++p) t += at(p, actual);
  return t;
}

std::vector<double> ConfusionMatrix::row_percentages() const {
  std::vector<double> out(counts_.size(), 0.0);
  for (std::size_t p = 0; p < n_; ++p) {
    std::size_t row = 0;
    for (std::size_t a = 0; a < n_; ++a) row += at(p, a);
    if (row == 0) continue;
    for (std::size_t a = 0; a < n_; ++a)
      out[p * n_ + a] = 100.0 * static_cast<double>(at(p, a)) / static_cast<double>(row);
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predicted, std::span<const std::size_t> actual,
                                 std::size_t num_categories) {
  if (predicted.size() != actual.size()) throw ShapeError("confusion_matrix: sequences differ in length");
  ConfusionMatrix cm(num_categories);
  for (std::size_t i = 0; i < predicted.size(); ++i) cm.add(predicted[i], actual[i]);
  return cm;
}

// ---------------------------------------------------------------------------

namespace {

SaliencyMap reduce_channels(std::span<const double> grad, const Shape& shape) {
  SaliencyMap m;
  m.height = shape.at(0);
  m.width = shape.at(1);
  const std::size_t c = shape.at(2);
  m.values.assign(m.width * m.height, 0.0);
  for (std::size_t p = 0; p < m.values.size(); ++p) {
    double best = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) best = std::max(best, std::abs(grad.empty() ? 0.0 : grad[p * c + ch]));
    m.values[p] = best;
  }
  return m;
}

}  // namespace

SaliencyResult input_saliency(const ReHARModel& model, const ClipTensors& clip, std::size_t category) {
  if (category >= model.config.num_categories)
    throw ShapeError("input_saliency: category " + std::to_string(category) + " outside " +
                     std::to_string(model.config.num_categories) + " categories");
  Graph g;
  const ModelNodes nodes = bind_model(g, model);
  ClipGraphOptions opts;
  opts.differentiable_inputs = true;
  const ClipGraph cg = build_clip_graph(g, model, nodes, clip, opts);
  g.backward(pick(g, cg.final.logits, category));
  SaliencyResult r;
  for (std::size_t t = 0; t < cg.frame_inputs.size(); ++t) {
    r.frame_maps.push_back(reduce_channels(g.grad(cg.frame_inputs[t]), g.value(cg.frame_inputs[t]).shape()));
    r.flow_maps.push_back(reduce_channels(g.grad(cg.flow_inputs[t]), g.value(cg.flow_inputs[t]).shape()));
  }
  return r;
}

std::vector<std::uint8_t> saliency_to_gray(const SaliencyMap& map) {
  const double mx = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  std::vector<std::uint8_t> px(map.values.size(), 0);
  if (!(mx > 0.0)) return px;
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::lround(255.0 * map.values[i] / mx));
  return px;
}

// ---------------------------------------------------------------------------

EvaluationReport evaluate(const ReHARModel& model, std::span<const EvalSample> samples, StreamMask streams,
                          std::size_t threads) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  const std::size_t n = samples.size();
  EvaluationReport r;
  r.probs.resize(n);
  auto run = [&](std::size_t i) {
    r.probs[i] = forward_clip(model, *samples[i].inputs, std::nullopt, kDefaultLambda, streams).final_probs;
  };
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) run(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = r.probs[i];
    r.predicted.push_back(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
    r.actual.push_back(samples[i].label);
    correct += r.predicted.back() == r.actual.back() ? 1 : 0;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  r.map = mean_average_precision(r.probs, r.actual, model.config.num_categories);
  r.confusion = confusion_matrix(r.predicted, r.actual, model.config.num_categories);
  return r;
}

double accuracy_over(const EvaluationReport& report, std::span<const std::size_t> categories) {
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < report.actual.size(); ++i) {
    if (std::find(categories.begin(), categories.end(), report.actual[i]) == categories.end()) continue;
    ++total;
    correct += report.predicted[i] == report.actual[i] ? 1 : 0;
  }
  if (total == 0) throw DataError("accuracy_over: no clips in the requested categories");
  return static_cast<double>(correct) / static_cast<double>(total);
}

void write_ap_table(std::ostream& out, const MeanAveragePrecision& map, std::span<const std::string> names,
                    const std::string& method) {
  if (names.size() != map.per_category.size()) throw ShapeError("write_ap_table: name count mismatch");
  out << "method";
  for (const auto& n : names) out << '\t' << n;
  out << "\tMean\n" << method;
  const auto flags = out.flags();
  out << std::fixed << std::setprecision(3);
  for (const auto& ap : map.per_category) {
    out << '\t';
    if (ap)
      out << *ap;
    else
      out << "n/a";
  }
  out << '\t' << map.mean << '\n';
  out.flags(flags);
}

void write_confusion_matrix(std::ostream& out, const ConfusionMatrix& cm) {
  out << "predicted\\actual";
  for (std::size_t a = 0; a < cm.num_categories(); ++a) out << '\t' << a;
  out << '\n';
  for (std::size_t p = 0; p < cm.num_categories(); ++p) {
    out << p;
    for (std::size_t a = 0; a < cm.num_categories(); ++a) out << '\t' << cm.at(p, a);
    out << '\n';
  }
}

}  // namespace rehar
