// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <ostream>

#include "sonoclass/augment.hpp"
#include "sonoclass/config.hpp"
#include "sonoclass/grad_check.hpp"
#include "sonoclass/metrics.hpp"
#include "sonoclass/rng.hpp"
#include "sonoclass/training.hpp"

namespace sono::selftest {

double loss_gradient_error(const losses::LossConfig& config, std::span<const double> logits, std::size_t classes,
                           std::span<const std::size_t> labels, double step, double floor) {
  const losses::LossOutput base = losses::compute_loss(config, {logits, classes, labels});
  const auto batch = static_cast<double>(labels.size());
  double worst = 0.0;
  // A logit only reaches the mean through its own row, so each row is
  // differenced alone. Roundoff then scales with that row's loss rather than
  // the whole batch's, which matters where focal terms are tiny.
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::vector<double> z(logits.begin() + static_cast<std::ptrdiff_t>(r * classes),
                          logits.begin() + static_cast<std::ptrdiff_t>((r + 1) * classes));
    const std::size_t label = labels[r];
    const auto at = [&](std::size_t k, double v) {
      const double saved = z[k];
      z[k] = v;
      const double out = losses::compute_loss(config, {z, classes, std::span<const std::size_t>(&label, 1)}).loss;
      z[k] = saved;
      return out;
    };
    for (std::size_t k = 0; k < classes; ++k) {
      // Five-point central stencil: the scaled LDAM logits make the two-point
      // version too coarse at any step that stays above roundoff.
      const double x = z[k];
      const double numeric =
          (8.0 * (at(k, x + step) - at(k, x - step)) - (at(k, x + 2 * step) - at(k, x - 2 * step))) / (12.0 * step);
      const double a = base.grad_logits[r * classes + k] * batch;
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
    }
  }
  return worst;
}

double logit_range(const losses::LossConfig& config) {
  const bool scaled = config.kind == losses::LossKind::kLdam || config.kind == losses::LossKind::kLdamFocal;
  return scaled ? 3.0 / config.ldam_scale : 3.0;
}

RandomBatch random_batch(std::uint64_t seed, std::size_t batch, std::size_t classes, double scale) {
  SampleRng rng(seed);
  RandomBatch b;
  b.classes = classes;
  for (std::size_t i = 0; i < batch * classes; ++i) b.logits.push_back(rng.uniform(-scale, scale));
  for (std::size_t i = 0; i < batch; ++i) {
    b.labels.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(classes) - 1)));
  }
  return b;
}

std::vector<RasterImage> random_images(std::uint64_t seed, std::size_t count, std::size_t h, std::size_t w) {
  SampleRng rng(seed);
  std::vector<RasterImage> out;
  for (std::size_t n = 0; n < count; ++n) {
    RasterImage img(h, w, 3);
    double f[3][3];
    for (auto& row : f) {
      for (double& v : row) v = rng.uniform(0.5, 4.0);
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(w);
        const double v = static_cast<double>(y) / static_cast<double>(h);
        for (std::size_t c = 0; c < 3; ++c) {
          img.at(y, x, c) = 0.5 + 0.25 * std::sin(2 * std::numbers::pi * (f[c][0] * u + f[c][1] * v) + f[c][2]) +
                            0.2 * rng.uniform(-1.0, 1.0);
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

EnsembleGradReport ensemble_gradient_check(const model::EnsembleConfig& config, const losses::LossConfig& loss,
                                           std::uint64_t seed, std::size_t batch, std::size_t max_coords) {
  model::Ensemble net = model::Ensemble::build(config, seed);
  const auto images = random_images(mix_key(seed, 1), batch, config.detailed_h, config.detailed_w);
  SampleRng rng(mix_key(seed, 2));
  std::vector<std::size_t> labels(batch);
  for (auto& l : labels) l = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(config.classes) - 1));
  // Biases start at zero, which puts many relus right on their kink.
  for (auto& p : net.parameters()) {
    for (double& v : p.value.mutable_values()) v += rng.uniform(-0.05, 0.05);
  }

  const ad::GraphFn f = [&](ad::Tape& tape) {
    const ad::Tensor z = net.forward(tape, images);
    auto out = losses::compute_loss(loss, {z.values(), config.classes, labels});
    return ad::attach_loss(tape, z, out.loss, std::move(out.grad_logits));
  };
  auto params = net.parameter_tensors();
  ad::GradCheckOptions opts;
  opts.step = 1e-4;
  opts.floor = 1e-6;
  opts.five_point = true;
  opts.max_coords_per_param = max_coords;
  opts.seed = seed;
  const auto r = ad::grad_check(f, params, opts);
  return {r.max_rel_error, r.checked, r.skipped_kinks, r.worst};
}

consensus::AnnotationSet simulate_annotations(std::uint64_t seed, std::size_t items, std::size_t annotators,
                                              std::size_t classes, double accuracy, std::vector<std::size_t>* truth) {
  SampleRng rng(seed);
  consensus::AnnotationSet set;
  set.classes = classes;
  const auto kmax = static_cast<std::int64_t>(classes) - 1;
  for (std::size_t a = 0; a < annotators; ++a) set.annotator_ids.push_back("a" + std::to_string(a));
  if (truth) truth->clear();
  for (std::size_t i = 0; i < items; ++i) {
    set.item_ids.push_back("i" + std::to_string(i));
    const auto t = static_cast<std::size_t>(rng.uniform_int(0, kmax));
    if (truth) truth->push_back(t);
    for (std::size_t a = 0; a < annotators; ++a) {
      std::size_t label = t;
      if (!rng.bernoulli(accuracy)) {
        label = static_cast<std::size_t>(rng.uniform_int(0, kmax - 1));
        if (label >= t) ++label;
      }
      set.records.push_back({i, a, label});
    }
  }
  return set;
}

namespace {

struct Runner {
  std::ostream& out;
  Outcome outcome;

  void check(const std::string& name, const std::function<std::string()>& body) {
    std::string detail;
    try {
      detail = body();
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    if (detail.empty()) {
      ++outcome.passed;
      out << "PASS " << name << "\n";
    } else {
      ++outcome.failed;
      out << "FAIL " << name << ": " << detail << "\n";
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

losses::LossConfig loss_of(losses::LossKind kind, std::size_t classes) {
  losses::LossConfig c;
  c.kind = kind;
  for (std::size_t j = 0; j < classes; ++j) c.class_counts.push_back(10 + 40 * j);
  return c;
}

constexpr losses::LossKind kAllLosses[] = {losses::LossKind::kCrossEntropy, losses::LossKind::kLabelSmoothing,
                                           losses::LossKind::kFocal, losses::LossKind::kLdam,
                                           losses::LossKind::kLdamFocal};

}  // namespace

Outcome run(std::ostream& out) {
  Runner r{out, {}};

  for (const auto kind : kAllLosses) {
    r.check("loss gradient " + std::string(losses::to_string(kind)), [&] {
      double worst = 0.0;
      for (std::uint64_t s = 0; s < 3; ++s) {
        const auto cfg = loss_of(kind, 5);
        const auto b = random_batch(s, 4, 5, logit_range(cfg));
        worst = std::max(worst, loss_gradient_error(cfg, b.logits, 5, b.labels));
      }
      return worst <= 1e-6 ? std::string() : fmt("max rel error %.3g", worst);
    });
  }

  r.check("loss identities focal(0)=ce, ls(0)=ce", [&] {
    const auto b = random_batch(7, 6, 4);
    const losses::LogitBatch lb{b.logits, 4, b.labels};
    const double ce = losses::cross_entropy(lb).loss;
    const double d1 = std::abs(losses::focal_loss(lb, 0.0).loss - ce);
    const double d2 = std::abs(losses::cross_entropy_label_smoothing(lb, 0.0).loss - ce);
    return std::max(d1, d2) <= 1e-12 ? std::string() : fmt("difference %.3g", std::max(d1, d2));
  });

  r.check("ensemble gradient (small)", [&] {
    model::EnsembleConfig c;
    c.shallow_h = c.shallow_w = 8;
    c.detailed_h = c.detailed_w = 12;
    c.shallow.stages = {{3, 3, 2, false}};
    c.detailed.stages = {{3, 3, 2, false}, {4, 3, 1, true}};
    c.classes = 3;
    c.hidden = {5};
    const auto rep = ensemble_gradient_check(c, loss_of(losses::LossKind::kCrossEntropy, 3), 11, 2);
    if (rep.checked == 0) return std::string("no coordinate checked");
    return rep.max_rel_error <= 1e-4 ? std::string() : fmt("max rel error %.3g at ", rep.max_rel_error) + rep.worst;
  });

  r.check("dawid-skene objective nondecreasing", [&] {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto set = simulate_annotations(s, 30, 3, 3, 0.7);
      const auto run = consensus::ds_run(set);
      for (std::size_t i = 1; i < run.objective_trace.size(); ++i) {
        if (run.objective_trace[i] < run.objective_trace[i - 1] - 1e-9) return fmt("decrease at seed %g", double(s));
      }
    }
    return std::string();
  });

  r.check("dawid-skene beats majority vote", [&] {
    std::vector<std::size_t> truth;
    const auto set = simulate_annotations(3, 200, 3, 4, 0.8, &truth);
    const double ds = consensus::agreement_rate(consensus::ds_run(set).result.labels, truth);
    const double mv = consensus::agreement_rate(consensus::majority_vote(set), truth);
    return ds >= mv ? std::string() : fmt("consensus accuracy %.3f below majority vote", ds);
  });

  r.check("blur kernel normalization", [&] {
    for (const double sigma : {0.1, 0.5, 1.5, 3.0}) {
      const auto k = augment::make_blur_kernel(sigma);
      double s = 0.0;
      for (double w : k.weights) s += w;
      if (std::abs(s - 1.0) > 1e-9) return fmt("sum off at sigma %g", sigma);
    }
    return std::string();
  });

  r.check("flip involutions and gamma identity", [&] {
    const auto img = random_images(5, 1, 9, 7)[0];
    if (augment::flip_h(augment::flip_h(img)) != img) return std::string("flip_h twice differs");
    if (augment::flip_v(augment::flip_v(img)) != img) return std::string("flip_v twice differs");
    if (augment::gamma_correct(img, 1.0) != img) return std::string("gamma 1 changes pixels");
    return std::string();
  });

  r.check("augment_sample range and determinism", [&] {
    const auto img = random_images(6, 1, 40, 40)[0];
    const auto cfg = augment::AugmentationConfig::for_target(24, 24);
    SampleRng a = SampleRng::keyed(42, "x", 1), b = SampleRng::keyed(42, "x", 1);
    const auto oa = augment::augment_sample(img, cfg, a);
    const auto ob = augment::augment_sample(img, cfg, b);
    if (oa != ob) return std::string("same key, different output");
    if (oa.height != 24 || oa.width != 24) return std::string("wrong output size");
    for (double v : oa.pixels) {
      if (!(v >= 0.0 && v <= 1.0)) return fmt("pixel %g out of [0,1]", v);
    }
    return std::string();
  });

  r.check("diagonal accuracy equals recall", [&] {
    SampleRng rng(9);
    for (int t = 0; t < 20; ++t) {
      metrics::ConfusionMatrix m(4);
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) m.add(i, j, static_cast<std::uint64_t>(rng.uniform_int(0, 9)));
      }
      const auto diag = metrics::per_class_diagonal_accuracy(m);
      for (std::size_t k = 0; k < 4; ++k) {
        if (m.row_sum(k) > 0 && std::abs(diag[k] - metrics::precision_recall_f1(m, k).recall) > 1e-15) {
          return std::string("mismatch");
        }
      }
    }
    return std::string();
  });

  r.check("adam zero gradient is identity", [&] {
    std::vector<double> p = {0.5, -1.25, 3.0};
    const auto before = p;
    const std::vector<double> g(3, 0.0);
    std::vector<std::span<double>> ps = {p};
    std::vector<std::span<const double>> gs = {g};
    train::AdamState st;
    train::adam_step(ps, gs, st, AdamOptions{});
    return p == before ? std::string() : std::string("parameters moved");
  });

  r.check("adam first step", [&] {
    std::vector<double> p = {0.0};
    const std::vector<double> g = {1.0};
    std::vector<std::span<double>> ps = {p};
    std::vector<std::span<const double>> gs = {g};
    train::AdamState st;
    AdamOptions o;
    o.learning_rate = 0.1;
    train::adam_step(ps, gs, st, o);
    return std::abs(p[0] + 0.1) <= 1e-8 ? std::string() : fmt("update %.10g", p[0]);
  });

  out << r.outcome.passed << " passed, " << r.outcome.failed << " failed\n";
  return r.outcome;
}

}  // namespace sono::selftest
