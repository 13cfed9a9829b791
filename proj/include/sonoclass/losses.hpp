// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Imbalance-aware classification losses over a B×K logit batch. Each returns
// the batch-mean loss together with its closed-form gradient w.r.t. logits.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sono::losses {

enum class LossKind { kCrossEntropy, kLabelSmoothing, kFocal, kLdam, kLdamFocal };

std::string_view to_string(LossKind kind);
// Accepts ce, ce_ls, focal, ldam, ldam_focal.
LossKind parse_loss_kind(std::string_view name);

struct LossConfig {
  LossKind kind = LossKind::kCrossEntropy;
  double ls_epsilon = 0.1;
  double focal_gamma = 2.0;
  std::vector<double> focal_alpha;  // empty means all ones
  double ldam_max_margin = 0.5;
  double ldam_scale = 30.0;
  double mix_alpha = 1.0;
  double mix_beta = 1.0;
  std::vector<std::size_t> class_counts;  // required by ldam and ldam_focal
};

// Throws std::invalid_argument when a parameter of the selected kind is out of
// range or counts are missing.
void validate(const LossConfig& config, std::size_t classes);

struct LossOutput {
  double loss = 0.0;                // batch mean
  std::vector<double> grad_logits;  // B×K
  std::vector<double> per_sample;   // B
};

// Row-major B×K view plus labels.
struct LogitBatch {
  std::span<const double> logits;
  std::size_t classes;
  std::span<const std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

LossOutput cross_entropy(const LogitBatch& batch);
LossOutput cross_entropy_label_smoothing(const LogitBatch& batch, double epsilon);
LossOutput focal_loss(const LogitBatch& batch, double gamma, std::span<const double> alpha = {});

// Δ_j = C · n_j^(-1/4), with C chosen so that max_j Δ_j = max_margin.
std::vector<double> ldam_margins(std::span<const std::size_t> counts, double max_margin);
LossOutput ldam_loss(const LogitBatch& batch, std::span<const std::size_t> counts,
                     double max_margin, double scale);

LossOutput ldam_focal_loss(const LogitBatch& batch, std::span<const std::size_t> counts,
                           double gamma, std::span<const double> alpha, double max_margin,
                           double scale, double mix_alpha, double mix_beta);

LossOutput compute_loss(const LossConfig& config, const LogitBatch& batch);

}  // namespace sono::losses
