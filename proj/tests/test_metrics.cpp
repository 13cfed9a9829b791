// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <utility>

#include "sonoclass/metrics.hpp"
#include "sonoclass/rng.hpp"
#include "support.hpp"

using namespace sono;
using namespace sono::metrics;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j) m.add(i, j, rows[i][j]);
  return m;
}

ConfusionMatrix random_matrix(std::uint64_t seed) {
  SampleRng rng(seed);
  const auto k = static_cast<std::size_t>(rng.uniform_int(2, 8));
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < k; ++i) {
    // Some rows and columns empty on purpose.
    if (rng.bernoulli(0.1)) continue;
    for (std::size_t j = 0; j < k; ++j) {
      if (rng.bernoulli(0.3)) m.add(i, j, static_cast<std::uint64_t>(rng.uniform_int(0, i == j ? 80 : 15)));
    }
  }
  return m;
}

// Per-class accuracies listed for the ensemble's 16 classes, in row order.
const std::vector<std::pair<std::string, std::uint64_t>> kReferenceDiagonal = {
    {"Femur", 94},
    {"Head (PPP, Tectum)", 91},
    {"Head (Cerebellum)", 90},
    {"Head (Sagittal)", 95},
    {"Other", 84},
    {"Stomach", 88},
    {"Bladder (CDC)", 85},
    {"Nasal triangle", 84},
    {"Shoulder bone", 96},
    {"Spine", 85},
    {"Kidneys", 77},
    {"Umbilical cord (Anterior abdominal wall)", 55},
    {"Placenta (Umbilical cord)", 70},
    {"Slice through three vessels", 86},
    {"Four-chamber heart section", 78},
    {"Cervix", 93},
};

}  // namespace

TEST_CASE("accumulate") {
  std::vector<std::size_t> y{0, 1, 2, 2, 1};
  const ConfusionMatrix d = confusion_accumulate(y, y, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(d.at(i, j) == (i == j ? std::count(y.begin(), y.end(), i) : 0));

  const ConfusionMatrix e = confusion_accumulate({}, {}, 4);
  CHECK(e.total() == 0);
  CHECK(e.classes() == 4);
  CHECK(e.class_names()[3] == "class3");

  SampleRng rng(9);
  std::vector<std::size_t> p(1000), t(1000);
  std::vector<std::vector<std::uint64_t>> oracle(6, std::vector<std::uint64_t>(6, 0));
  for (std::size_t i = 0; i < 1000; ++i) {
    p[i] = static_cast<std::size_t>(rng.uniform_int(0, 5));
    t[i] = static_cast<std::size_t>(rng.uniform_int(0, 5));
    ++oracle[t[i]][p[i]];
  }
  const ConfusionMatrix m = confusion_accumulate(p, t, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(m.at(i, j) == oracle[i][j]);
  CHECK(m.total() == 1000);

  std::vector<std::size_t> out_of_range{6};
  std::vector<std::size_t> zero{0};
  CHECK_THROWS_AS(confusion_accumulate(out_of_range, zero, 6), std::out_of_range);
  CHECK_THROWS_AS(confusion_accumulate(zero, out_of_range, 6), std::out_of_range);
  std::vector<std::size_t> two{0, 1};
  CHECK_THROWS_AS(confusion_accumulate(two, zero, 6), std::invalid_argument);
}

TEST_CASE("merge is cell-wise and associative") {
  const ConfusionMatrix a = from_rows({{1, 2}, {3, 4}}), b = from_rows({{5, 0}, {1, 1}}), c = from_rows({{0, 7}, {2, 0}});
  ConfusionMatrix ab = a;
  ab.merge(b);
  CHECK(ab == from_rows({{6, 2}, {4, 5}}));
  ConfusionMatrix left = ab;
  left.merge(c);
  ConfusionMatrix bc = b;
  bc.merge(c);
  ConfusionMatrix right = a;
  right.merge(bc);
  CHECK(left == right);
  CHECK_THROWS_AS(left.merge(ConfusionMatrix(3)), std::invalid_argument);
}

TEST_CASE("binary counts and precision/recall/F1 hand cases") {
  const ConfusionMatrix id = from_rows({{5, 0}, {0, 5}});
  const BinaryCounts c0 = binary_counts(id, 0);
  CHECK(c0.tp == 5);
  CHECK(c0.fn == 0);
  CHECK(c0.fp == 0);
  CHECK(c0.tn == 5);

  const ConfusionMatrix m = from_rows({{1, 0}, {1, 2}});
  const BinaryCounts b = binary_counts(m, 0);
  CHECK(b.tp == 1);
  CHECK(b.fp == 1);
  CHECK(b.fn == 0);
  CHECK(b.tn == 2);
  const PrecisionRecallF1 prf = precision_recall_f1(m, 0);
  CHECK(prf.precision == 0.5);
  CHECK(prf.recall == 1.0);
  CHECK(prf.f1 == 2.0 / 3.0);

  const PrecisionRecallF1 perfect = precision_recall_f1(id, 1);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  // Class 2 never appears and is never predicted.
  const ConfusionMatrix z = from_rows({{2, 1, 0}, {0, 3, 0}, {0, 0, 0}});
  const PrecisionRecallF1 none = precision_recall_f1(z, 2);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
}

TEST_CASE("diagonal accuracy examples and empty-row warning") {
  CHECK(per_class_diagonal_accuracy(from_rows({{3, 1}, {0, 4}})) == std::vector<double>{0.75, 1.0});
  CHECK(per_class_diagonal_accuracy(from_rows({{7, 0}, {0, 2}})) == std::vector<double>{1.0, 1.0});
  sono::testing::WarningCapture warnings;
  const auto d = per_class_diagonal_accuracy(from_rows({{3, 1}, {0, 0}}));
  CHECK(d[1] == 0.0);
  CHECK(warnings.messages.size() == 1);
}

TEST_CASE("properties on 1000 random matrices") {
  sono::testing::WarningCapture quiet;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const ConfusionMatrix m = random_matrix(s);
    const auto diag = per_class_diagonal_accuracy(m);
    for (std::size_t k = 0; k < m.classes(); ++k) {
      const PrecisionRecallF1 prf = precision_recall_f1(m, k);
      CHECK(diag[k] == prf.recall);
      const BinaryCounts b = binary_counts(m, k);
      CHECK(b.tp + b.tn + b.fp + b.fn == m.total());
      const double hm = prf.precision + prf.recall > 0.0 ? 2 * prf.precision * prf.recall / (prf.precision + prf.recall) : 0.0;
      CHECK(std::abs(prf.f1 - hm) <= 1e-12);
      for (double r : {prf.precision, prf.recall, prf.f1, diag[k], one_vs_rest_accuracy(m, k)}) {
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
      }
    }
    if (m.total() == 0) {
      CHECK_THROWS_AS(overall_metrics(m), std::invalid_argument);
      continue;
    }
    const MetricsReport r = overall_metrics(m);
    CHECK(r.overall_accuracy == static_cast<double>(m.trace()) / static_cast<double>(m.total()));
    CHECK(r.macro_f1 >= 0.0);
    CHECK(r.macro_f1 <= 1.0);
    CHECK(r.weighted_f1 >= 0.0);
    CHECK(r.weighted_f1 <= 1.0);
    CHECK(report_from_json(nlohmann::json::parse(report_emit(r, Format::kJson))) == r);
    CHECK(report_emit(r, Format::kMarkdown) == report_emit(r, Format::kMarkdown));
  }
}

TEST_CASE("overall metrics") {
  const MetricsReport p = overall_metrics(from_rows({{4, 0, 0}, {0, 4, 0}, {0, 0, 4}}));
  CHECK(p.overall_accuracy == 1.0);
  CHECK(p.macro_f1 == 1.0);
  CHECK(p.weighted_f1 == p.macro_f1);

  const MetricsReport r = overall_metrics(from_rows({{3, 1}, {0, 4}}));
  CHECK(r.overall_accuracy == 7.0 / 8.0);

  const MetricsReport imb = overall_metrics(from_rows({{90, 10}, {6, 4}}));
  CHECK(std::abs(imb.macro_f1 - imb.weighted_f1) > 0.05);
  double macro = 0.0, weighted = 0.0;
  for (const auto& c : imb.per_class) {
    macro += c.f1 / 2.0;
    weighted += c.f1 * static_cast<double>(c.support) / 110.0;
  }
  CHECK(std::abs(imb.macro_f1 - macro) <= 1e-15);
  CHECK(std::abs(imb.weighted_f1 - weighted) <= 1e-15);

  CHECK_THROWS_AS(overall_metrics(ConfusionMatrix(3)), std::invalid_argument);
  CHECK_THROWS_AS(parse_format("xml"), std::invalid_argument);
}

TEST_CASE("per-class table renders the reference accuracies") {
  std::vector<std::string> names;
  for (const auto& [n, _] : kReferenceDiagonal) names.push_back(n);
  ConfusionMatrix m(names.size(), names);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::uint64_t hit = kReferenceDiagonal[i].second;
    m.add(i, i, hit);
    m.add(i, (i + 1) % names.size(), 100 - hit);
  }
  const MetricsReport r = overall_metrics(m);
  const std::string t3 = render_per_class_table(r);
  CHECK(t3.find("| Femur | 94 |") != std::string::npos);
  CHECK(t3.find("| Kidneys | 77 |") != std::string::npos);
  CHECK(t3.find("| Umbilical cord (Anterior abdominal wall) | 55 |") != std::string::npos);
  CHECK(report_emit(r, Format::kMarkdown).find(t3) != std::string::npos);
}

TEST_CASE("run summary row renders the reference values") {
  const std::vector<SummaryRow> rows = {
      {"EfficientNet-B0+ EfficientNet-B6", "LDAM Loss", 0.84, 0.84, 0.45},
      {"EfficientNet-B0+ EfficientNet-B6", "LDAM-Focal Loss", 0.85, 0.86, 0.55},
  };
  const std::string t2 = render_run_summary(rows, "Umbilical cord (Anterior abdominal wall)");
  CHECK(t2.find("| EfficientNet-B0+ EfficientNet-B6 | LDAM-Focal Loss | 85% | 0.86 | 55% |") != std::string::npos);
  CHECK(t2.find("Umbilical cord (Anterior abdominal wall) Accuracy") != std::string::npos);
}

TEST_CASE("matrix csv round trip and json key order") {
  ConfusionMatrix m(3, {"a", "b,with comma", "c"});
  m.add(0, 1, 3);
  m.add(2, 2, 9);
  m.add(1, 0, 1);
  CHECK(matrix_from_csv(matrix_csv(m)) == m);
  const std::string csv = report_emit(overall_metrics(m), Format::kCsv);
  CHECK(csv.rfind("class,support,precision,recall,f1,diagonal_accuracy,one_vs_rest_accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
