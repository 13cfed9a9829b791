// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sonoclass/losses.hpp"
#include "sonoclass/rng.hpp"
#include "sonoclass/selftest.hpp"
#include "support.hpp"

using namespace sono;
using namespace sono::losses;
using sono::selftest::random_batch;
using sono::testing::max_abs_diff;

namespace {

LogitBatch view(const selftest::RandomBatch& b) { return {b.logits, b.classes, b.labels}; }

std::vector<double> log_softmax_row(std::span<const double> z) {
  double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  std::vector<double> out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] - m - std::log(s);
  return out;
}

std::vector<std::size_t> random_counts(std::uint64_t seed, std::size_t k) {
  SampleRng rng(seed);
  std::vector<std::size_t> c(k);
  for (auto& n : c) n = static_cast<std::size_t>(rng.uniform_int(1, 2000));
  return c;
}

std::vector<double> random_alpha(std::uint64_t seed, std::size_t k) {
  SampleRng rng(seed ^ 0x5a5a);
  std::vector<double> a(k);
  for (auto& v : a) v = rng.uniform(0.2, 2.0);
  return a;
}

LossConfig config_for(LossKind kind, std::uint64_t seed, std::size_t k) {
  LossConfig c;
  c.kind = kind;
  c.class_counts = random_counts(seed, k);
  if (seed % 2 == 1) c.focal_alpha = random_alpha(seed, k);
  c.focal_gamma = 0.5 + static_cast<double>(seed % 4);
  return c;
}

constexpr LossKind kAll[] = {LossKind::kCrossEntropy, LossKind::kLabelSmoothing, LossKind::kFocal, LossKind::kLdam,
                             LossKind::kLdamFocal};

}  // namespace

TEST_CASE("kind names round trip") {
  for (LossKind k : kAll) CHECK(parse_loss_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_loss_kind("hinge"), std::invalid_argument);
}

TEST_CASE("cross entropy examples and direct oracle") {
  for (std::size_t k : {2u, 3u, 7u}) {
    std::vector<double> z(2 * k, 0.4);
    std::vector<std::size_t> y{0, k - 1};
    CHECK(std::abs(cross_entropy({z, k, y}).loss - std::log(static_cast<double>(k))) <= 1e-12);
  }
  std::vector<double> z{60.0, 0.0, -10.0};
  std::vector<std::size_t> y{0};
  CHECK(cross_entropy({z, 3, y}).loss < 1e-20);
  CHECK(cross_entropy({z, 3, y}).loss >= 0.0);

  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto b = random_batch(s, 4, 3);
    const LossOutput out = cross_entropy(view(b));
    double expect = 0.0;
    std::vector<double> grad(12);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::span<const double> row(b.logits.data() + 3 * i, 3);
      double denom = 0.0;
      for (double v : row) denom += std::exp(v);
      expect -= std::log(std::exp(row[b.labels[i]]) / denom);
      for (std::size_t k = 0; k < 3; ++k) grad[3 * i + k] = (std::exp(row[k]) / denom - (k == b.labels[i])) / 4.0;
      CHECK(std::abs(out.per_sample[i] + std::log(std::exp(row[b.labels[i]]) / denom)) <= 1e-12);
    }
    CHECK(std::abs(out.loss - expect / 4.0) <= 1e-12);
    CHECK(max_abs_diff(out.grad_logits, grad) <= 1e-12);
  }

  std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(cross_entropy({z, 3, bad}), std::invalid_argument);
}

TEST_CASE("label smoothing: off, near-uniform target, direct oracle, range") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto b = random_batch(10 + s, 6, 5);
    CHECK(std::abs(cross_entropy_label_smoothing(view(b), 0.0).loss - cross_entropy(view(b)).loss) <= 1e-12);
    CHECK(max_abs_diff(cross_entropy_label_smoothing(view(b), 0.0).grad_logits, cross_entropy(view(b)).grad_logits) <= 1e-12);

    for (double eps : {0.1, 0.37, 0.999}) {
      double expect = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        const auto ls = log_softmax_row({b.logits.data() + 5 * i, 5});
        for (std::size_t k = 0; k < 5; ++k) {
          const double q = (k == b.labels[i] ? 1.0 - eps : 0.0) + eps / 5.0;
          expect -= q * ls[k];
        }
      }
      CHECK(std::abs(cross_entropy_label_smoothing(view(b), eps).loss - expect / 6.0) <= 1e-12);
    }

    // ε close to 1 approaches the uniform-target loss.
    double uniform = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      for (double v : log_softmax_row({b.logits.data() + 5 * i, 5})) uniform -= v / 5.0;
    }
    uniform /= 6.0;
    const double near = cross_entropy_label_smoothing(view(b), 0.999).loss;
    CHECK(std::abs(near - uniform) <= 0.001 * 10.0);
  }
  const auto b = random_batch(1, 2, 3);
  CHECK_THROWS_AS(cross_entropy_label_smoothing(view(b), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy_label_smoothing(view(b), -0.1), std::invalid_argument);
}

TEST_CASE("focal: reduces to CE, bounded by CE, hand value") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto b = random_batch(20 + s, 8, 4);
    const LossOutput ce = cross_entropy(view(b));
    const LossOutput f0 = focal_loss(view(b), 0.0);
    CHECK(std::abs(f0.loss - ce.loss) <= 1e-12);
    CHECK(max_abs_diff(f0.grad_logits, ce.grad_logits) <= 1e-12);
    for (double g : {0.5, 2.0, 5.0}) {
      const LossOutput f = focal_loss(view(b), g);
      for (std::size_t i = 0; i < 8; ++i) CHECK(f.per_sample[i] <= ce.per_sample[i] + 1e-15);
    }
  }
  // Two classes with equal logits: p_y = 0.5.
  std::vector<double> z{1.5, 1.5, -0.2, -0.2};
  std::vector<std::size_t> y{0, 1};
  const LossOutput f = focal_loss({z, 2, y}, 2.0);
  CHECK(std::abs(f.per_sample[0] - (-0.25 * std::log(0.5))) <= 1e-15);
  CHECK(f.loss == doctest::Approx(0.1733).epsilon(1e-3));

  std::vector<double> alpha{3.0, 0.5};
  const LossOutput fa = focal_loss({z, 2, y}, 2.0, alpha);
  CHECK(std::abs(fa.per_sample[0] - 3.0 * f.per_sample[0]) <= 1e-15);
  CHECK(std::abs(fa.per_sample[1] - 0.5 * f.per_sample[1]) <= 1e-15);

  CHECK_THROWS_AS(focal_loss({z, 2, y}, -1.0), std::invalid_argument);
  std::vector<double> short_alpha{1.0};
  CHECK_THROWS_AS(focal_loss({z, 2, y}, 2.0, short_alpha), std::invalid_argument);
}

TEST_CASE("ldam margins") {
  std::vector<std::size_t> counts{16, 1};
  const auto m = ldam_margins(counts, 0.5);
  CHECK(std::abs(m[0] - 0.25) <= 1e-15);
  CHECK(std::abs(m[1] - 0.5) <= 1e-15);

  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto c = random_counts(s, 6);
    const auto d = ldam_margins(c, 0.5);
    CHECK(*std::max_element(d.begin(), d.end()) == doctest::Approx(0.5).epsilon(1e-15));
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        if (c[i] >= c[j]) CHECK(d[i] <= d[j]);
  }
  std::vector<std::size_t> zero{4, 0};
  CHECK_THROWS_AS(ldam_margins(zero, 0.5), std::invalid_argument);
}

TEST_CASE("ldam with a vanishing margin and unit scale is CE") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto b = random_batch(40 + s, 5, 6);
    const auto counts = random_counts(s, 6);
    const LossOutput l = ldam_loss(view(b), counts, 1e-15, 1.0);
    const LossOutput ce = cross_entropy(view(b));
    CHECK(std::abs(l.loss - ce.loss) <= 1e-12);
    CHECK(max_abs_diff(l.grad_logits, ce.grad_logits) <= 1e-12);
  }
}

TEST_CASE("ldam against the margin-shifted scaled CE") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto b = random_batch(60 + s, 5, 4, 0.2);
    const auto counts = random_counts(s, 4);
    const auto d = ldam_margins(counts, 0.5);
    std::vector<double> shifted(b.logits);
    for (std::size_t i = 0; i < 5; ++i) shifted[4 * i + b.labels[i]] -= d[b.labels[i]];
    for (double& v : shifted) v *= 30.0;
    const double expect = cross_entropy({shifted, 4, b.labels}).loss;
    CHECK(std::abs(ldam_loss(view(b), counts, 0.5, 30.0).loss - expect) <= 1e-12);
  }
}

TEST_CASE("ldam-focal mixes") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto b = random_batch(80 + s, 7, 5, 0.15);
    const auto counts = random_counts(s, 5);
    const auto alpha = random_alpha(s, 5);
    const LossOutput f = focal_loss(view(b), 2.0, alpha);
    const LossOutput l = ldam_loss(view(b), counts, 0.5, 30.0);
    const LossOutput only_f = ldam_focal_loss(view(b), counts, 2.0, alpha, 0.5, 30.0, 1.0, 0.0);
    const LossOutput only_l = ldam_focal_loss(view(b), counts, 2.0, alpha, 0.5, 30.0, 0.0, 1.0);
    const LossOutput both = ldam_focal_loss(view(b), counts, 2.0, alpha, 0.5, 30.0, 1.0, 1.0);
    CHECK(std::abs(only_f.loss - f.loss) <= 1e-12);
    CHECK(std::abs(only_l.loss - l.loss) <= 1e-12);
    CHECK(std::abs(both.loss - (f.loss + l.loss)) <= 1e-12);
    std::vector<double> sum(f.grad_logits.size());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = f.grad_logits[i] + l.grad_logits[i];
    CHECK(max_abs_diff(both.grad_logits, sum) <= 1e-12);
  }
  const auto b = random_batch(1, 3, 3);
  std::vector<std::size_t> counts{3, 2, 1};
  CHECK_THROWS_AS(ldam_focal_loss(view(b), counts, 2.0, {}, 0.5, 30.0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("every loss gradient matches finite differences on 20 batches") {
  for (LossKind kind : kAll) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      const LossConfig cfg = config_for(kind, s, 5);
      const auto b = random_batch(1000 + s, 6, 5, selftest::logit_range(cfg));
      worst = std::max(worst, selftest::loss_gradient_error(cfg, b.logits, 5, b.labels));
    }
    INFO("loss " << to_string(kind) << " worst relative error " << worst);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("losses are nonnegative and class-permutation invariant") {
  for (LossKind kind : kAll) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const std::size_t k = 5, n = 6;
      LossConfig cfg = config_for(kind, s, k);
      cfg.focal_alpha = random_alpha(s, k);
      const auto b = random_batch(500 + s, n, k, selftest::logit_range(cfg));
      const double base = compute_loss(cfg, view(b)).loss;
      CHECK(base >= 0.0);

      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      SampleRng rng(s);
      rng.shuffle(perm);
      // Class k moves to slot perm[k].
      std::vector<double> z(b.logits.size());
      std::vector<std::size_t> y(n);
      LossConfig pc = cfg;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) z[i * k + perm[c]] = b.logits[i * k + c];
        y[i] = perm[b.labels[i]];
      }
      for (std::size_t c = 0; c < k; ++c) {
        pc.class_counts[perm[c]] = cfg.class_counts[c];
        pc.focal_alpha[perm[c]] = cfg.focal_alpha[c];
      }
      CHECK(std::abs(compute_loss(pc, {z, k, y}).loss - base) <= 1e-12);
    }
  }
}

TEST_CASE("config validation") {
  LossConfig c;
  CHECK_NOTHROW(validate(c, 3));
  c.kind = LossKind::kLdam;
  CHECK_THROWS_AS(validate(c, 3), std::invalid_argument);
  c.class_counts = {5, 4, 3};
  CHECK_NOTHROW(validate(c, 3));
  c.class_counts = {5, 4};
  CHECK_THROWS_AS(validate(c, 3), std::invalid_argument);
  c.class_counts = {5, 4, 3};
  c.ldam_scale = 0.0;
  CHECK_THROWS_AS(validate(c, 3), std::invalid_argument);

  LossConfig f;
  f.kind = LossKind::kFocal;
  f.focal_gamma = -0.5;
  CHECK_THROWS_AS(validate(f, 3), std::invalid_argument);
  f.focal_gamma = 2.0;
  f.focal_alpha = {1.0, -1.0, 1.0};
  CHECK_THROWS_AS(validate(f, 3), std::invalid_argument);

  LossConfig s;
  s.kind = LossKind::kLabelSmoothing;
  s.ls_epsilon = 1.0;
  CHECK_THROWS_AS(validate(s, 3), std::invalid_argument);

  LossConfig m;
  m.kind = LossKind::kLdamFocal;
  m.class_counts = {1, 2, 3};
  m.mix_alpha = m.mix_beta = 0.0;
  CHECK_THROWS_AS(validate(m, 3), std::invalid_argument);
  m.mix_alpha = -1.0;
  m.mix_beta = 1.0;
  CHECK_THROWS_AS(validate(m, 3), std::invalid_argument);
}
