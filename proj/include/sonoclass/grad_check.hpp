// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sonoclass/tensor.hpp"

namespace sono::ad {

struct GradCheckOptions {
  double step = 1e-3;
  double floor = 1e-8;
  // 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Drop coordinates whose ±step evaluation lands in a different relu
  // activation pattern; central differences are meaningless across a kink.
  bool skip_kinks = true;
  // Fourth-order stencil (f(x-2h), f(x-h), f(x+h), f(x+2h)). Allows a larger
  // step, which matters when the objective is large and the gradient small:
  // rounding noise in the difference scales like eps * |f| / h.
  bool five_point = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst;  // "param[index]" of the largest error
};

// Builds the scalar graph on the supplied tape.
using GraphFn = std::function<Tensor(Tape&)>;

// Compares reverse-mode gradients of f w.r.t. params against central
// differences (two- or four-point). Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckResult grad_check(const GraphFn& f, std::vector<Tensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace sono::ad
