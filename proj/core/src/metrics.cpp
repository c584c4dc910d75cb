#include "vitforge/metrics.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>

namespace vitforge {

namespace {

std::vector<std::string> default_names(std::size_t k) {
  std::vector<std::string> names(k);
  for (std::size_t i = 0; i < k; ++i) names[i] = std::to_string(i);
  return names;
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::vector<std::string> class_names)
    : k_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw MetricsError("confusion matrix needs at least one class");
  set_class_names(class_names.empty() ? default_names(num_classes) : std::move(class_names));
}

void ConfusionMatrix::set_class_names(std::vector<std::string> names) {
  if (names.size() != k_) {
    throw MetricsError(fmt::format("{} class names for a {}-class confusion matrix", names.size(), k_));
  }
  names_ = std::move(names);
}

ConfusionMatrix ConfusionMatrix::from_labels(std::span<const int> truth, std::span<const int> predicted,
                                             std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw MetricsError(
        fmt::format("{} true labels but {} predictions", truth.size(), predicted.size()));
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
  const auto k = static_cast<int>(k_);
  if (truth < 0 || truth >= k || predicted < 0 || predicted >= k) {
    throw MetricsError(fmt::format("label pair ({}, {}) outside [0, {})", truth, predicted, k_));
  }
  counts_[static_cast<std::size_t>(truth) * k_ + static_cast<std::size_t>(predicted)] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw MetricsError(fmt::format("cannot merge {}-class into {}-class matrix", other.k_, k_));
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += at(i, predicted);
  return s;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw MetricsError("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

double binary_accuracy(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
  const auto n = tp + fp + tn + fn;
  if (n == 0) throw MetricsError("accuracy of zero samples");
  return static_cast<double>(tn + tp) / static_cast<double>(n);
}

double precision(std::uint64_t tp, std::uint64_t fp) { return ratio(tp, tp + fp); }

double recall(std::uint64_t tp, std::uint64_t fn) { return ratio(tp, tp + fn); }

double f1_score(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t class_id) {
  if (class_id >= cm.num_classes()) {
    throw MetricsError(fmt::format("class {} outside a {}-class matrix", class_id, cm.num_classes()));
  }
  ClassMetrics m;
  m.tp = cm.at(class_id, class_id);
  m.fn = cm.row_sum(class_id) - m.tp;
  m.fp = cm.column_sum(class_id) - m.tp;
  m.tn = cm.total() - m.tp - m.fn - m.fp;
  m.precision = precision(m.tp, m.fp);
  m.recall = recall(m.tp, m.fn);
  m.f1 = f1_score(m.precision, m.recall);
  m.precision_undefined = m.tp + m.fp == 0;
  m.recall_undefined = m.tp + m.fn == 0;
  m.f1_undefined = m.precision + m.recall == 0.0;
  return m;
}

bool Report::any_undefined() const {
  return std::any_of(classes.begin(), classes.end(), [](const ClassMetrics& c) {
    return c.precision_undefined || c.recall_undefined || c.f1_undefined;
  });
}

Report make_report(const ConfusionMatrix& cm, std::string model_label) {
  Report r;
  r.model_label = std::move(model_label);
  r.class_names = cm.class_names();
  r.accuracy = accuracy(cm);
  const std::size_t k = cm.num_classes();
  for (std::size_t c = 0; c < k; ++c) {
    r.classes.push_back(class_metrics(cm, c));
    r.macro_precision += r.classes.back().precision;
    r.macro_recall += r.classes.back().recall;
    r.macro_f1 += r.classes.back().f1;
  }
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  return r;
}

std::string serialize_report(const Report& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model_label;
  j["accuracy"] = report.accuracy;
  j["macro"] = {{"precision", report.macro_precision}, {"recall", report.macro_recall}, {"f1", report.macro_f1}};
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    const auto& m = report.classes[c];
    classes.push_back({{"name", report.class_names.at(c)},
                       {"tp", m.tp},
                       {"fp", m.fp},
                       {"fn", m.fn},
                       {"tn", m.tn},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"precision_undefined", m.precision_undefined},
                       {"recall_undefined", m.recall_undefined},
                       {"f1_undefined", m.f1_undefined}});
  }
  return j.dump(2) + "\n";
}

Report parse_report(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Report r;
    r.model_label = j.at("model").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_precision = j.at("macro").at("precision").get<double>();
    r.macro_recall = j.at("macro").at("recall").get<double>();
    r.macro_f1 = j.at("macro").at("f1").get<double>();
    for (const auto& c : j.at("classes")) {
      r.class_names.push_back(c.at("name").get<std::string>());
      ClassMetrics m;
      m.tp = c.at("tp").get<std::uint64_t>();
      m.fp = c.at("fp").get<std::uint64_t>();
      m.fn = c.at("fn").get<std::uint64_t>();
      m.tn = c.at("tn").get<std::uint64_t>();
      m.precision = c.at("precision").get<double>();
      m.recall = c.at("recall").get<double>();
      m.f1 = c.at("f1").get<double>();
      m.precision_undefined = c.at("precision_undefined").get<bool>();
      m.recall_undefined = c.at("recall_undefined").get<bool>();
      m.f1_undefined = c.at("f1_undefined").get<bool>();
      r.classes.push_back(m);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw MetricsError(fmt::format("malformed report: {}", e.what()));
  }
}

ComparisonTable compare(std::span<const Report> reports) {
  if (reports.empty()) throw MetricsError("nothing to compare");
  ComparisonTable t;
  t.class_names = reports[0].class_names;
  for (const auto& r : reports) {
    if (r.class_names != t.class_names) {
      throw MetricsError(fmt::format("report '{}' has classes [{}], expected [{}]", r.model_label,
                                     fmt::join(r.class_names, ", "), fmt::join(t.class_names, ", ")));
    }
    t.models.push_back(r.model_label);
  }
  struct Metric {
    const char* label;
    double ClassMetrics::*field;
  };
  for (const Metric metric : {Metric{"Precision", &ClassMetrics::precision}, Metric{"Recall", &ClassMetrics::recall},
                              Metric{"F1 Score", &ClassMetrics::f1}}) {
    for (std::size_t c = 0; c < t.class_names.size(); ++c) {
      ComparisonTable::Row row{metric.label, t.class_names[c], {}};
      for (const auto& r : reports) row.values.push_back(r.classes.at(c).*metric.field);
      t.rows.push_back(std::move(row));
    }
  }
  ComparisonTable::Row acc{"Accuracy", "", {}};
  for (const auto& r : reports) acc.values.push_back(r.accuracy);
  t.rows.push_back(std::move(acc));
  return t;
}

std::string ComparisonTable::render() const {
  std::size_t class_width = 5;
  for (const auto& n : class_names) class_width = std::max(class_width, n.size());
  std::vector<std::size_t> widths;
  for (const auto& m : models) widths.push_back(std::max<std::size_t>(m.size(), 6));

  std::string out = fmt::format("{:<12}{:<{}}", "Parameters", "Class", class_width + 2);
  for (std::size_t m = 0; m < models.size(); ++m) out += fmt::format("{:>{}}", models[m], widths[m] + 2);
  out += '\n';
  std::string previous;
  for (const auto& row : rows) {
    const std::string label = row.parameter == previous ? "" : row.parameter;
    previous = row.parameter;
    out += fmt::format("{:<12}{:<{}}", label, row.class_name, class_width + 2);
    for (std::size_t m = 0; m < row.values.size(); ++m) out += fmt::format("{:>{}.4f}", row.values[m], widths[m] + 2);
    out += '\n';
  }
  return out;
}

std::string render_report(const Report& report) {
  const std::span<const Report> one(&report, 1);
  std::string out = fmt::format("Model: {}\n\n", report.model_label);
  out += compare(one).render();

  std::size_t class_width = 5;
  for (const auto& n : report.class_names) class_width = std::max(class_width, n.size());
  out += fmt::format("\n{:<{}}{:>8}{:>8}{:>8}{:>8}{:>10}\n", "Class", class_width + 2, "TP", "FP", "FN", "TN",
                     "Support");
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    const auto& m = report.classes[c];
    out += fmt::format("{:<{}}{:>8}{:>8}{:>8}{:>8}{:>10}\n", report.class_names[c], class_width + 2, m.tp, m.fp, m.fn,
                       m.tn, m.tp + m.fn);
  }
  out += fmt::format("\nMacro precision {:.4f}\nMacro recall    {:.4f}\nMacro F1        {:.4f}\n",
                     report.macro_precision, report.macro_recall, report.macro_f1);
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    const auto& m = report.classes[c];
    if (m.precision_undefined) out += fmt::format("note: precision of {} is undefined (no predictions); reported as 0\n", report.class_names[c]);
    if (m.recall_undefined) out += fmt::format("note: recall of {} is undefined (no samples); reported as 0\n", report.class_names[c]);
    if (m.f1_undefined) out += fmt::format("note: F1 of {} is undefined (precision + recall = 0); reported as 0\n", report.class_names[c]);
  }
  return out;
}

}  // namespace vitforge
