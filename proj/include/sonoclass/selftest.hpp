// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Quick gradient and invariant suite behind `sonoclass selftest`, plus the
// finite-difference helpers it shares with the test binaries.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sonoclass/consensus.hpp"
#include "sonoclass/ensemble.hpp"
#include "sonoclass/losses.hpp"

namespace sono::selftest {

// Max over logits of |analytic - numeric| / max(|analytic|, |numeric|, floor),
// numeric by a five-point central difference of compute_loss, one row at a
// time (analytic values rescaled by the batch size to match).
double loss_gradient_error(const losses::LossConfig& config, std::span<const double> logits,
                           std::size_t classes, std::span<const std::size_t> labels,
                           double step = 1e-4, double floor = 1e-7);

// Random logits in [-scale, scale] and uniform labels.
struct RandomBatch {
  std::vector<double> logits;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
};
RandomBatch random_batch(std::uint64_t seed, std::size_t batch, std::size_t classes, double scale = 3.0);

// LDAM multiplies logits by its scale s before the softmax; sampling them in
// ±3/s keeps the scaled values where gradients are resolvable by finite
// differences. Other losses use ±3.
double logit_range(const losses::LossConfig& config);

// Smooth random RGB images, the same size each.
std::vector<RasterImage> random_images(std::uint64_t seed, std::size_t count, std::size_t h, std::size_t w);

// Ensemble graph (forward plus the chosen loss) gradient check over every
// parameter coordinate, or `max_coords` sampled per parameter when nonzero.
struct EnsembleGradReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst;
};
EnsembleGradReport ensemble_gradient_check(const model::EnsembleConfig& config, const losses::LossConfig& loss,
                                           std::uint64_t seed, std::size_t batch, std::size_t max_coords = 0);

// Random annotation set: items × annotators, each annotator answering every
// item correctly with probability `accuracy`, otherwise uniformly among the
// other classes. `truth` receives the hidden labels when non-null.
consensus::AnnotationSet simulate_annotations(std::uint64_t seed, std::size_t items, std::size_t annotators,
                                              std::size_t classes, double accuracy,
                                              std::vector<std::size_t>* truth = nullptr);

struct Outcome {
  std::size_t passed = 0;
  std::size_t failed = 0;
};

// One "PASS name" / "FAIL name: detail" line per check, then a summary line.
Outcome run(std::ostream& out);

}  // namespace sono::selftest
