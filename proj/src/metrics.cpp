// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "sonoclass/csv.hpp"
#include "sonoclass/log.hpp"

namespace sono::metrics {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::string percent(double x) { return std::to_string(std::lround(100.0 * x)) + "%"; }

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::vector<std::string> class_names)
    : classes_(classes), names_(std::move(class_names)), cells_(classes * classes, 0) {
  if (names_.size() > classes_) throw std::invalid_argument("more class names than classes");
  for (std::size_t j = names_.size(); j < classes_; ++j) names_.push_back("class" + std::to_string(j));
}

std::uint64_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  if (truth >= classes_ || predicted >= classes_) throw std::out_of_range("confusion matrix index");
  return cells_[truth * classes_ + predicted];
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t count) {
  if (truth >= classes_ || predicted >= classes_) {
    throw std::out_of_range("class index " + std::to_string(std::max(truth, predicted)) + " >= " +
                            std::to_string(classes_));
  }
  cells_[truth * classes_ + predicted] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("merging matrices of different class counts");
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] += other.cells_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (const auto c : cells_) s += c;
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t k = 0; k < classes_; ++k) s += cells_[k * classes_ + k];
  return s;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < classes_; ++j) s += at(k, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < classes_; ++i) s += at(i, k);
  return s;
}

ConfusionMatrix confusion_accumulate(std::span<const std::size_t> predictions,
                                     std::span<const std::size_t> labels, std::size_t classes,
                                     std::vector<std::string> class_names) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("predictions and labels differ in length");
  }
  ConfusionMatrix m(classes, std::move(class_names));
  for (std::size_t i = 0; i < labels.size(); ++i) m.add(labels[i], predictions[i]);
  return m;
}

BinaryCounts binary_counts(const ConfusionMatrix& m, std::size_t k) {
  BinaryCounts b;
  b.tp = m.at(k, k);
  b.fp = m.col_sum(k) - b.tp;
  b.fn = m.row_sum(k) - b.tp;
  b.tn = m.total() - b.tp - b.fp - b.fn;
  return b;
}

PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& m, std::size_t k) {
  const BinaryCounts b = binary_counts(m, k);
  PrecisionRecallF1 r;
  r.precision = ratio(b.tp, b.tp + b.fp);
  r.recall = ratio(b.tp, b.tp + b.fn);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::vector<double> per_class_diagonal_accuracy(const ConfusionMatrix& m) {
  std::vector<double> out(m.classes());
  for (std::size_t k = 0; k < m.classes(); ++k) {
    const auto row = m.row_sum(k);
    if (row == 0) warn("class '" + m.class_names()[k] + "' has no samples; diagonal accuracy reported as 0");
    out[k] = ratio(m.at(k, k), row);
  }
  return out;
}

double one_vs_rest_accuracy(const ConfusionMatrix& m, std::size_t k) {
  const BinaryCounts b = binary_counts(m, k);
  return ratio(b.tp + b.tn, m.total());
}

MetricsReport overall_metrics(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw std::invalid_argument("metrics of an empty confusion matrix");
  MetricsReport r;
  r.matrix = m;
  r.overall_accuracy = ratio(m.trace(), total);
  const auto diag = per_class_diagonal_accuracy(m);
  for (std::size_t k = 0; k < m.classes(); ++k) {
    const auto prf = precision_recall_f1(m, k);
    ClassMetrics c;
    c.name = m.class_names()[k];
    c.support = m.row_sum(k);
    c.precision = prf.precision;
    c.recall = prf.recall;
    c.f1 = prf.f1;
    c.diagonal_accuracy = diag[k];
    c.one_vs_rest_accuracy = one_vs_rest_accuracy(m, k);
    r.macro_f1 += c.f1;
    r.weighted_f1 += c.f1 * static_cast<double>(c.support);
    r.per_class.push_back(std::move(c));
  }
  r.macro_f1 /= static_cast<double>(m.classes());
  r.weighted_f1 /= static_cast<double>(total);
  return r;
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : report.per_class) {
    classes.push_back({{"name", c.name},
                       {"support", c.support},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"diagonal_accuracy", c.diagonal_accuracy},
                       {"one_vs_rest_accuracy", c.one_vs_rest_accuracy}});
  }
  nlohmann::json cells = nlohmann::json::array();
  const auto& m = report.matrix;
  for (std::size_t i = 0; i < m.classes(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.classes(); ++j) row.push_back(m.at(i, j));
    cells.push_back(row);
  }
  return {{"overall_accuracy", report.overall_accuracy},
          {"macro_f1", report.macro_f1},
          {"weighted_f1", report.weighted_f1},
          {"total", m.total()},
          {"classes", classes},
          {"confusion_matrix", {{"class_names", m.class_names()}, {"cells", cells}}}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.overall_accuracy = j.at("overall_accuracy").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.weighted_f1 = j.at("weighted_f1").get<double>();
  for (const auto& c : j.at("classes")) {
    r.per_class.push_back({c.at("name").get<std::string>(), c.at("support").get<std::uint64_t>(),
                           c.at("precision").get<double>(), c.at("recall").get<double>(),
                           c.at("f1").get<double>(), c.at("diagonal_accuracy").get<double>(),
                           c.at("one_vs_rest_accuracy").get<double>()});
  }
  const auto& cm = j.at("confusion_matrix");
  const auto names = cm.at("class_names").get<std::vector<std::string>>();
  r.matrix = ConfusionMatrix(names.size(), names);
  const auto& cells = cm.at("cells");
  if (cells.size() != names.size()) throw std::invalid_argument("confusion matrix rows do not match class names");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (cells[i].size() != names.size()) throw std::invalid_argument("confusion matrix is not square");
    for (std::size_t k = 0; k < names.size(); ++k) r.matrix.add(i, k, cells[i][k].get<std::uint64_t>());
  }
  return r;
}

Format parse_format(std::string_view name) {
  if (name == "json") return Format::kJson;
  if (name == "csv") return Format::kCsv;
  if (name == "markdown" || name == "md") return Format::kMarkdown;
  throw std::invalid_argument("unknown report format '" + std::string(name) + "' (json, csv, markdown)");
}

std::string render_run_summary(const std::vector<SummaryRow>& rows, const std::string& class_label) {
  std::ostringstream out;
  out << "| Ensemble Architecture | Loss Function | Accuracy Score | F1-Score | " << class_label << " Accuracy |\n";
  out << "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out << "| " << r.architecture << " | " << r.loss << " | " << percent(r.accuracy) << " | " << fixed(r.f1, 2)
        << " | " << percent(r.class_accuracy) << " |\n";
  }
  return out.str();
}

std::string render_per_class_table(const MetricsReport& report) {
  std::ostringstream out;
  out << "| Class Label | Accuracy (%) |\n|---|---|\n";
  for (const auto& c : report.per_class) {
    out << "| " << c.name << " | " << std::lround(100.0 * c.diagonal_accuracy) << " |\n";
  }
  return out.str();
}

std::string report_emit(const MetricsReport& report, Format format) {
  switch (format) {
    case Format::kJson:
      return to_json(report).dump(2) + "\n";
    case Format::kCsv: {
      std::ostringstream out;
      out << "class,support,precision,recall,f1,diagonal_accuracy,one_vs_rest_accuracy\n";
      for (const auto& c : report.per_class) {
        out << csv::join({c.name, std::to_string(c.support), fixed(c.precision, 6), fixed(c.recall, 6),
                          fixed(c.f1, 6), fixed(c.diagonal_accuracy, 6), fixed(c.one_vs_rest_accuracy, 6)})
            << '\n';
      }
      return out.str();
    }
    case Format::kMarkdown: {
      std::ostringstream out;
      out << "| Metric | Value |\n|---|---|\n";
      out << "| Samples | " << report.matrix.total() << " |\n";
      out << "| Overall accuracy | " << fixed(report.overall_accuracy, 4) << " |\n";
      out << "| Macro F1 | " << fixed(report.macro_f1, 4) << " |\n";
      out << "| Weighted F1 | " << fixed(report.weighted_f1, 4) << " |\n\n";
      out << render_per_class_table(report) << '\n';
      out << "| Class | Support | Precision | Recall | F1 | One-vs-rest accuracy |\n|---|---|---|---|---|---|\n";
      for (const auto& c : report.per_class) {
        out << "| " << c.name << " | " << c.support << " | " << fixed(c.precision, 4) << " | "
            << fixed(c.recall, 4) << " | " << fixed(c.f1, 4) << " | " << fixed(c.one_vs_rest_accuracy, 4)
            << " |\n";
      }
      return out.str();
    }
  }
  throw std::invalid_argument("unknown report format");
}

std::string matrix_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  csv::Row header{"true\\predicted"};
  for (const auto& n : m.class_names()) header.push_back(n);
  out << csv::join(header) << '\n';
  for (std::size_t i = 0; i < m.classes(); ++i) {
    csv::Row row{m.class_names()[i]};
    for (std::size_t j = 0; j < m.classes(); ++j) row.push_back(std::to_string(m.at(i, j)));
    out << csv::join(row) << '\n';
  }
  return out.str();
}

ConfusionMatrix matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<csv::Row> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rows.push_back(csv::split_line(line));
  }
  if (rows.empty()) throw std::invalid_argument("empty matrix CSV");
  const std::vector<std::string> names(rows[0].begin() + 1, rows[0].end());
  if (rows.size() != names.size() + 1) throw std::invalid_argument("matrix CSV is not square");
  ConfusionMatrix m(names.size(), names);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (rows[i + 1].size() != names.size() + 1) throw std::invalid_argument("matrix CSV row has wrong width");
    for (std::size_t j = 0; j < names.size(); ++j) m.add(i, j, std::stoull(rows[i + 1][j + 1]));
  }
  return m;
}

}  // namespace sono::metrics
