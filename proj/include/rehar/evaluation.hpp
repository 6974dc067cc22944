#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rehar/error.hpp"
#include "rehar/model.hpp"

namespace rehar {

class UndefinedAveragePrecision : public Error {
 public:
  using Error::Error;
};

struct PrecisionRecallPoint {
  double recall;
  double precision;
};

// One point per rank after sorting by descending score (ties by index).
std::vector<PrecisionRecallPoint> precision_recall_curve(std::span<const double> scores,
                                                         std::span<const bool> positives);

// Rectangle rule over the PR staircase: sum over ranks k of
// (recall(k) - recall(k-1)) * precision(k). Throws UndefinedAveragePrecision
// when there is no positive.
double average_precision(std::span<const double> scores, std::span<const bool> positives);

struct MeanAveragePrecision {
  double mean = 0.0;
  std::vector<std::optional<double>> per_category;  // nullopt when undefined
  std::vector<std::size_t> skipped;                 // categories without positives
};

// scores[i][c] is the confidence of clip i for category c.
MeanAveragePrecision mean_average_precision(std::span<const std::vector<double>> scores,
                                            std::span<const std::size_t> labels, std::size_t num_categories);

// Rows index the predicted category, columns the actual category.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_categories);

  std::size_t num_categories() const noexcept { return n_; }
  std::size_t at(std::size_t predicted, std::size_t actual) const { return counts_.at(predicted * n_ + actual); }
  void add(std::size_t predicted, std::size_t actual);
  std::size_t total() const;
  std::size_t column_total(std::size_t actual) const;
  // Row-normalized percentages (each non-empty row sums to 100).
  std::vector<double> row_percentages() const;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predicted, std::span<const std::size_t> actual,
                                 std::size_t num_categories);

// Absolute input gradients of one pre-softmax FC2 unit, max-reduced over color
// channels. One map per frame image and one per flow image.
struct SaliencyMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major
};

struct SaliencyResult {
  std::vector<SaliencyMap> frame_maps;
  std::vector<SaliencyMap> flow_maps;
};

SaliencyResult input_saliency(const ReHARModel& model, const ClipTensors& clip, std::size_t category);

// Scales a map to 0..255 by its own maximum (an all-zero map stays black).
std::vector<std::uint8_t> saliency_to_gray(const SaliencyMap& map);

// Whole-split evaluation.
struct EvaluationReport {
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> actual;
  double accuracy = 0.0;
  MeanAveragePrecision map;
  ConfusionMatrix confusion{1};
};

struct EvalSample {
  const ClipTensors* inputs;
  std::size_t label;
};

EvaluationReport evaluate(const ReHARModel& model, std::span<const EvalSample> samples, StreamMask streams = {},
                          std::size_t threads = 1);

// Accuracy restricted to clips whose actual label is in `categories`.
double accuracy_over(const EvaluationReport& report, std::span<const std::size_t> categories);

// Header `method`, one column per category name, `Mean`; one value row.
void write_ap_table(std::ostream& out, const MeanAveragePrecision& map, std::span<const std::string> names,
                    const std::string& method = "rehar");
// Header line plus one line per predicted category.
void write_confusion_matrix(std::ostream& out, const ConfusionMatrix& cm);

}  // namespace rehar
