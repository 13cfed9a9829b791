// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sonoclass/rng.hpp"

namespace sono::ad {

GradCheckResult grad_check(const GraphFn& f, std::vector<Tensor>& params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  for (auto& p : params) p.clear_grad();
  Tape tape;
  Tensor loss = f(tape);
  const std::uint64_t base_signature = tape.kink_signature();
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.size(), 0.0);
    }
  }

  const auto evaluate = [&](std::uint64_t& signature) {
    Tape probe(false);
    const double v = f(probe).item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite objective at perturbed point");
    signature = probe.kink_signature();
    return v;
  };

  GradCheckResult result;
  SampleRng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    auto values = p.mutable_values();
    for (std::size_t i : coords) {
      const double saved = values[i];
      const auto at = [&](double offset, bool& kink) {
        std::uint64_t sig = 0;
        values[i] = saved + offset;
        const double v = evaluate(sig);
        kink = kink || sig != base_signature;
        return v;
      };
      bool kink = false;
      const double h = options.step;
      double numeric = 0.0;
      if (options.five_point) {
        const double p1 = at(h, kink), m1 = at(-h, kink), p2 = at(2 * h, kink), m2 = at(-2 * h, kink);
        numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
      } else {
        const double plus = at(h, kink), minus = at(-h, kink);
        numeric = (plus - minus) / (2.0 * h);
      }
      values[i] = saved;
      if (options.skip_kinks && kink) {
        ++result.skipped_kinks;
        continue;
      }
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = "param" + std::to_string(pi) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace sono::ad
