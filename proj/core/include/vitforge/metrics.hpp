#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitforge {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// K x K counts; entry (i, j) counts samples of true class i predicted as j.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes, std::vector<std::string> class_names = {});

  /// Throws MetricsError on length mismatch or a label outside [0, K).
  static ConfusionMatrix from_labels(std::span<const int> truth, std::span<const int> predicted,
                                     std::size_t num_classes);

  void add(int truth, int predicted, std::uint64_t count = 1);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t column_sum(std::size_t predicted) const;

  /// Defaults to "0".."K-1" when no names were given.
  const std::vector<std::string>& class_names() const { return names_; }
  void set_class_names(std::vector<std::string> names);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
  std::vector<std::string> names_;
};

/// trace / total. Throws MetricsError for an empty matrix.
double accuracy(const ConfusionMatrix& cm);

/// Binary accuracy (TN + TP) / (TP + FP + TN + FN).
double binary_accuracy(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn);

/// Ratios with a zero denominator evaluate to 0.
double precision(std::uint64_t tp, std::uint64_t fp);
double recall(std::uint64_t tp, std::uint64_t fn);
double f1_score(double precision, double recall);

struct ClassMetrics {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the metric's denominator was zero and 0 was substituted.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

/// One-vs-rest decomposition of class `class_id`.
ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t class_id);

struct Report {
  std::string model_label;
  std::vector<std::string> class_names;
  double accuracy = 0.0;
  std::vector<ClassMetrics> classes;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;

  bool any_undefined() const;
  friend bool operator==(const Report&, const Report&) = default;
};

Report make_report(const ConfusionMatrix& cm, std::string model_label);

/// JSON text; parse_report(serialize_report(r)) == r.
std::string serialize_report(const Report& report);
Report parse_report(const std::string& text);

/// Per-class precision, recall, and F1 plus accuracy, one column per model.
struct ComparisonTable {
  std::vector<std::string> models;
  std::vector<std::string> class_names;
  struct Row {
    std::string parameter;  // Precision, Recall, F1 Score, Accuracy
    std::string class_name;  // empty for accuracy
    std::vector<double> values;
  };
  std::vector<Row> rows;

  /// Fixed-width text table with four-decimal values.
  std::string render() const;
};

/// Throws MetricsError when class names differ between reports.
ComparisonTable compare(std::span<const Report> reports);

/// Text report for one model: the comparison layout plus macro averages,
/// support counts, and a note for any zero-division substitutions.
std::string render_report(const Report& report);

}  // namespace vitforge
