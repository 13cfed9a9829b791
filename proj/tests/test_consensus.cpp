// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "naive_em.hpp"
#include "sonoclass/consensus.hpp"
#include "sonoclass/selftest.hpp"
#include "support.hpp"

using namespace sono;
using namespace sono::consensus;

namespace {

AnnotationSet make_set(std::size_t items, std::size_t annotators, std::size_t k,
                       const std::vector<Annotation>& records) {
  AnnotationSet s;
  for (std::size_t i = 0; i < items; ++i) s.item_ids.push_back("i" + std::to_string(i));
  for (std::size_t a = 0; a < annotators; ++a) s.annotator_ids.push_back("a" + std::to_string(a));
  s.classes = k;
  s.records = records;
  return s;
}

void check_stochastic(const Matrix& m) {
  for (const auto& row : m) {
    double s = 0.0;
    for (double v : row) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

}  // namespace

TEST_CASE("initialize is vote proportions") {
  const auto s = make_set(2, 4, 3, {{0, 0, 0}, {0, 1, 0}, {0, 2, 1}, {0, 3, 1}, {1, 0, 2}, {1, 1, 2}});
  const auto t = ds_initialize(s);
  CHECK(t[0] == std::vector<double>{0.5, 0.5, 0.0});
  CHECK(t[1] == std::vector<double>{0.0, 0.0, 1.0});

  // Five items against a hand count.
  const auto h = make_set(5, 3, 2,
                          {{0, 0, 0}, {0, 1, 0}, {0, 2, 1}, {1, 0, 1}, {2, 1, 1}, {2, 2, 1}, {3, 0, 0},
                           {3, 1, 1}, {4, 0, 0}, {4, 1, 0}, {4, 2, 0}});
  const auto th = ds_initialize(h);
  const Matrix expect = {{2.0 / 3, 1.0 / 3}, {0, 1}, {0, 1}, {0.5, 0.5}, {1, 0}};
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 2; ++k) CHECK(th[i][k] == doctest::Approx(expect[i][k]).epsilon(1e-15));
  }
}

TEST_CASE("validation rejects items without records and duplicates") {
  auto s = make_set(2, 1, 2, {{0, 0, 0}});
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS(ds_initialize(s));
  auto d = make_set(1, 1, 2, {{0, 0, 0}, {0, 0, 1}});
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);
}

TEST_CASE("m-step agreement limit and symmetry") {
  const auto s = make_set(4, 1, 2, {{0, 0, 0}, {1, 0, 1}, {2, 0, 0}, {3, 0, 1}});
  const Matrix onehot = {{1, 0}, {0, 1}, {1, 0}, {0, 1}};
  const auto exact = ds_m_step(s, onehot, 0.0);
  CHECK(exact.confusions[0] == Matrix{{1, 0}, {0, 1}});
  const double sm = 0.01;
  const auto smoothed = ds_m_step(s, onehot, sm);
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(std::abs(smoothed.confusions[0][t][t] - 1.0) <= sm / (1.0 + 2 * sm) + 1e-15);
  }
  const Matrix uniform(4, {0.5, 0.5});
  const auto u = ds_m_step(s, uniform, 0.01);
  CHECK(u.priors[0] == doctest::Approx(0.5));
  CHECK(u.priors[1] == doctest::Approx(0.5));
}

TEST_CASE("m-step hand-weighted counts, three annotators and four items") {
  const auto s = make_set(4, 3, 2,
                          {{0, 0, 0}, {0, 1, 0}, {0, 2, 1}, {1, 0, 1}, {1, 1, 1}, {1, 2, 1}, {2, 0, 0},
                           {2, 1, 1}, {3, 0, 1}, {3, 2, 0}});
  const Matrix t = {{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}};
  const double sm = 0.5;
  const auto p = ds_m_step(s, t, sm);
  CHECK(std::abs(p.priors[0] - 2.0 / 4) <= 1e-12);
  CHECK(std::abs(p.priors[1] - 2.0 / 4) <= 1e-12);
  // Annotator 0 said 0 on items 0, 2 and 1 on items 1, 3.
  const double t0_l0 = sm + 0.9 + 0.6, t0_l1 = sm + 0.2 + 0.3;
  const double t1_l0 = sm + 0.1 + 0.4, t1_l1 = sm + 0.8 + 0.7;
  CHECK(std::abs(p.confusions[0][0][0] - t0_l0 / (t0_l0 + t0_l1)) <= 1e-12);
  CHECK(std::abs(p.confusions[0][1][1] - t1_l1 / (t1_l0 + t1_l1)) <= 1e-12);
  // Annotator 2 said 1 on items 0, 1 and 0 on item 3.
  const double a2_00 = sm + 0.3, a2_01 = sm + 0.9 + 0.2, a2_10 = sm + 0.7, a2_11 = sm + 0.1 + 0.8;
  CHECK(std::abs(p.confusions[2][0][0] - a2_00 / (a2_00 + a2_01)) <= 1e-12);
  CHECK(std::abs(p.confusions[2][1][0] - a2_10 / (a2_10 + a2_11)) <= 1e-12);
}

TEST_CASE("m-step warns on an annotator with no records") {
  testing::WarningCapture w;
  const auto s = make_set(2, 2, 2, {{0, 0, 0}, {1, 0, 1}});
  const auto p = ds_m_step(s, ds_initialize(s), 0.01);
  CHECK(w.messages.size() == 1);
  for (const auto& row : p.confusions[1]) check_stochastic({row});
}

TEST_CASE("e-step limits") {
  const auto s = make_set(3, 1, 3, {{0, 0, 2}, {1, 0, 0}, {2, 0, 1}});
  Parameters p;
  p.priors = {0.2, 0.3, 0.5};
  p.confusions = {Matrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const auto t = ds_e_step(s, p);
  CHECK(t[0] == std::vector<double>{0, 0, 1});
  CHECK(t[1] == std::vector<double>{1, 0, 0});

  Parameters u;
  u.priors = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  u.confusions = {Matrix(3, std::vector<double>(3, 1.0 / 3))};
  for (const auto& row : ds_e_step(s, u)) {
    for (double v : row) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
}

TEST_CASE("e-step matches the direct probability product") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = selftest::simulate_annotations(seed, 6, 3, 3, 0.6);
    const auto p = ds_m_step(s, ds_initialize(s), 0.1);
    const auto t = ds_e_step(s, p);
    for (std::size_t i = 0; i < s.items(); ++i) {
      std::vector<double> prod(3);
      for (std::size_t k = 0; k < 3; ++k) {
        prod[k] = p.priors[k];
        for (const auto& r : s.records) {
          if (r.item == i) prod[k] *= p.confusions[r.annotator][k][r.label];
        }
      }
      const double z = prod[0] + prod[1] + prod[2];
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(t[i][k] - prod[k] / z) <= 1e-9);
    }
  }
}

TEST_CASE("e-step all-zero row becomes uniform with a warning") {
  testing::WarningCapture w;
  const auto s = make_set(1, 2, 2, {{0, 0, 0}, {0, 1, 1}});
  Parameters p;
  p.priors = {0.5, 0.5};
  p.confusions = {Matrix{{1, 0}, {1, 0}}, Matrix{{1, 0}, {1, 0}}};
  const auto t = ds_e_step(s, p);
  CHECK(t[0] == std::vector<double>{0.5, 0.5});
  CHECK(w.messages.size() == 1);
  CHECK(std::isinf(ds_log_likelihood(s, p)));
}

TEST_CASE("log-likelihood cases") {
  const auto s = make_set(1, 1, 3, {{0, 0, 1}});
  Parameters p;
  p.priors = {0.2, 0.3, 0.5};
  p.confusions = {Matrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  CHECK(std::abs(ds_log_likelihood(s, p) - std::log(0.3)) <= 1e-15);

  const auto r = selftest::simulate_annotations(4, 8, 3, 3, 0.7);
  const auto q = ds_m_step(r, ds_initialize(r), 0.05);
  auto doubled = r;
  for (std::size_t i = 0; i < r.items(); ++i) doubled.item_ids.push_back("dup" + std::to_string(i));
  for (const auto& rec : r.records) doubled.records.push_back({rec.item + r.items(), rec.annotator, rec.label});
  CHECK(std::abs(ds_log_likelihood(doubled, q) - 2 * ds_log_likelihood(r, q)) <= 1e-9);

  double direct = 0.0;
  for (std::size_t i = 0; i < r.items(); ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      double prod = q.priors[k];
      for (const auto& rec : r.records) {
        if (rec.item == i) prod *= q.confusions[rec.annotator][k][rec.label];
      }
      sum += prod;
    }
    direct += std::log(sum);
  }
  CHECK(std::abs(ds_log_likelihood(r, q) - direct) <= 1e-9);
}

TEST_CASE("run: unanimous and single annotator") {
  std::vector<Annotation> recs;
  const std::vector<std::size_t> truth = {0, 2, 1, 1, 0, 2};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) recs.push_back({i, a, truth[i]});
  }
  const auto s = make_set(truth.size(), 3, 3, recs);

  // Without smoothing the first M-step already reproduces the votes exactly.
  RunOptions exact;
  exact.smoothing = 0.0;
  const auto sharp = ds_run(s, exact);
  CHECK(sharp.result.labels == truth);
  CHECK(sharp.result.converged);
  CHECK(sharp.result.iterations <= 2);

  // Smoothing moves the second log-likelihood by about 1e-5, so one more
  // round is needed before the change drops under the tolerance.
  const auto run = ds_run(s);
  CHECK(run.result.labels == truth);
  CHECK(run.result.converged);
  CHECK(run.result.iterations <= 3);
  for (double c : run.result.confidence) CHECK(c >= 1.0 - 3 * 0.01);

  std::vector<Annotation> one;
  for (std::size_t i = 0; i < truth.size(); ++i) one.push_back({i, 0, truth[i]});
  CHECK(ds_run(make_set(truth.size(), 1, 3, one)).result.labels == truth);
}

TEST_CASE("run keeps every row stochastic and labels are argmax") {
  const auto s = selftest::simulate_annotations(12, 40, 3, 4, 0.7);
  const auto run = ds_run(s);
  check_stochastic(run.state.posterior);
  for (const auto& c : run.state.params.confusions) check_stochastic(c);
  for (std::size_t i = 0; i < s.items(); ++i) {
    CHECK(run.result.labels[i] == argmax_row(run.state.posterior[i]));
    CHECK(run.result.confidence[i] == run.state.posterior[i][run.result.labels[i]]);
  }
  CHECK(argmax_row({0.4, 0.4, 0.2}) == 0);
}

TEST_CASE("run matches the naive EM on small instances") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t items = 3 + seed % 8, annotators = 1 + seed % 3;
    const auto s = selftest::simulate_annotations(seed, items, annotators, 3, 0.65);
    RunOptions o;
    o.tol = 1e-12;
    o.max_iter = 25;
    const auto run = ds_run(s, o);
    const auto naive = testing::naive_em(s, o.smoothing, run.result.iterations);
    for (std::size_t i = 0; i < items; ++i) {
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(run.state.posterior[i][k] - naive[i][k]) <= 1e-6);
    }
  }
}

TEST_CASE("run beats majority vote on simulated annotators") {
  std::vector<std::size_t> truth;
  const auto s = selftest::simulate_annotations(77, 200, 3, 4, 0.8, &truth);
  const double ds = agreement_rate(ds_run(s).result.labels, truth);
  const double mv = agreement_rate(majority_vote(s), truth);
  CHECK(ds >= mv);
}

TEST_CASE("missing annotations are allowed") {
  // Every item seen by two of the three annotators.
  const auto s = make_set(4, 3, 2, {{0, 0, 0}, {0, 1, 0}, {1, 1, 1}, {1, 2, 1}, {2, 2, 0}, {2, 0, 0}, {3, 0, 1}, {3, 2, 1}});
  const auto run = ds_run(s);
  CHECK(run.result.labels == std::vector<std::size_t>{0, 1, 0, 1});
  check_stochastic(run.state.posterior);
}

TEST_CASE("agreement statistics") {
  const std::set<std::string> a = {"x", "y"}, b = {"p", "q"};
  CHECK(jaccard(a, a) == 1.0);
  CHECK(jaccard(a, b) == 0.0);
  CHECK(overlap_over_mean(a, a) == 1.0);
  CHECK_THROWS(jaccard({}, {}));
  CHECK(agreement_rate({1, 2, 3}, {1, 0, 3}) == doctest::Approx(2.0 / 3));

  testing::WarningCapture w;
  const auto c = agreement_from_counts(880, 455, 492);
  CHECK(c.intersection_over_union == doctest::Approx(492.0 / 843.0).epsilon(1e-12));
  CHECK(c.intersection_over_union == doctest::Approx(0.5836).epsilon(1e-4));
  CHECK(c.intersection_over_mean == doctest::Approx(492.0 / 667.5).epsilon(1e-12));
  CHECK(w.messages.size() == 1);  // 492 > 455: not realizable as sets
}

TEST_CASE("annotation CSV round trip through the consensus writer") {
  testing::TempDir dir("consensus");
  {
    std::ofstream out(dir / "ann.csv");
    out << "item_id,annotator_id,label\nimgA,r1,1\nimgA,r2,1\nimgB,r1,0\nimgB,r2,0\nimgB,r3,1\n";
  }
  const auto s = read_annotations(dir / "ann.csv");
  CHECK(s.items() == 2);
  CHECK(s.annotators() == 3);
  CHECK(s.classes == 2);
  const auto run = ds_run(s);
  write_consensus_csv(s, run.result, dir / "out.csv");
  std::ifstream in(dir / "out.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "item_id,consensus_label,confidence");
  CHECK(first.rfind("imgA,1,", 0) == 0);
  const auto j = diagnostics_json(s, run, {});
  CHECK(j.contains("priors"));
  CHECK(j.contains("log_likelihood_trace"));

  {
    std::ofstream out(dir / "bad.csv");
    out << "item,annotator,label\n";
  }
  CHECK_THROWS(read_annotations(dir / "bad.csv"));
}
