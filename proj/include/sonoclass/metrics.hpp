// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Confusion matrices (rows = true class, columns = prediction) and every
// metric derived from them.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sono::metrics {

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  // Missing names default to "class<j>".
  explicit ConfusionMatrix(std::size_t classes, std::vector<std::string> class_names = {});

  std::size_t classes() const { return classes_; }
  const std::vector<std::string>& class_names() const { return names_; }

  std::uint64_t at(std::size_t truth, std::size_t predicted) const;
  void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1);
  // Cell-wise sum; class counts must agree.
  void merge(const ConfusionMatrix& other);

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t k) const;
  std::uint64_t col_sum(std::size_t k) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_ = 0;
  std::vector<std::string> names_;
  std::vector<std::uint64_t> cells_;
};

ConfusionMatrix confusion_accumulate(std::span<const std::size_t> predictions,
                                     std::span<const std::size_t> labels, std::size_t classes,
                                     std::vector<std::string> class_names = {});

struct BinaryCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
};
BinaryCounts binary_counts(const ConfusionMatrix& m, std::size_t k);

struct PrecisionRecallF1 {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};
// Zero whenever the denominator is zero.
PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& m, std::size_t k);

// Row-normalized diagonal; 0 (with a warning) for empty rows.
std::vector<double> per_class_diagonal_accuracy(const ConfusionMatrix& m);
// (TP + TN) / total for class k against the rest.
double one_vs_rest_accuracy(const ConfusionMatrix& m, std::size_t k);

struct ClassMetrics {
  std::string name;
  std::uint64_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double diagonal_accuracy = 0.0;
  double one_vs_rest_accuracy = 0.0;

  bool operator==(const ClassMetrics&) const = default;
};

struct MetricsReport {
  double overall_accuracy = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix matrix;

  bool operator==(const MetricsReport&) const = default;
};

// Throws std::invalid_argument on an empty matrix.
MetricsReport overall_metrics(const ConfusionMatrix& m);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

enum class Format { kJson, kCsv, kMarkdown };
Format parse_format(std::string_view name);

std::string report_emit(const MetricsReport& report, Format format);

// Header row and first column carry class names.
std::string matrix_csv(const ConfusionMatrix& m);
ConfusionMatrix matrix_from_csv(const std::string& text);

struct SummaryRow {
  std::string architecture;
  std::string loss;
  double accuracy = 0.0;
  double f1 = 0.0;
  double class_accuracy = 0.0;
};

// Percentages are whole numbers, F1 has two decimals.
std::string render_run_summary(const std::vector<SummaryRow>& rows, const std::string& class_label);
std::string render_per_class_table(const MetricsReport& report);

}  // namespace sono::metrics
