// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sono::losses {

namespace {

void check_batch(const LogitBatch& b) {
  if (b.classes < 2) throw std::invalid_argument("loss: need at least 2 classes");
  if (b.labels.empty()) throw std::invalid_argument("loss: empty batch");
  if (b.logits.size() != b.labels.size() * b.classes) {
    throw std::invalid_argument("loss: logits size " + std::to_string(b.logits.size()) +
                                " does not match batch " + std::to_string(b.labels.size()) + "×" +
                                std::to_string(b.classes));
  }
  for (std::size_t label : b.labels) {
    if (label >= b.classes) {
      throw std::invalid_argument("loss: label " + std::to_string(label) + " out of range for " +
                                  std::to_string(b.classes) + " classes");
    }
  }
  for (double z : b.logits) {
    if (!std::isfinite(z)) throw std::invalid_argument("loss: non-finite logit");
  }
}

// Writes log-softmax of one row into out.
void log_softmax(std::span<const double> row, std::span<double> out) {
  const double m = *std::max_element(row.begin(), row.end());
  double acc = 0.0;
  for (double z : row) acc += std::exp(z - m);
  const double lse = m + std::log(acc);
  for (std::size_t k = 0; k < row.size(); ++k) out[k] = row[k] - lse;
}

LossOutput make_output(std::size_t batch, std::size_t classes) {
  LossOutput out;
  out.grad_logits.assign(batch * classes, 0.0);
  out.per_sample.assign(batch, 0.0);
  return out;
}

void finish_mean(LossOutput& out) {
  double acc = 0.0;
  for (double l : out.per_sample) acc += l;
  out.loss = acc / static_cast<double>(out.per_sample.size());
}

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return "ce";
    case LossKind::kLabelSmoothing: return "ce_ls";
    case LossKind::kFocal: return "focal";
    case LossKind::kLdam: return "ldam";
    case LossKind::kLdamFocal: return "ldam_focal";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  for (auto k : {LossKind::kCrossEntropy, LossKind::kLabelSmoothing, LossKind::kFocal,
                 LossKind::kLdam, LossKind::kLdamFocal}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown loss kind '" + std::string(name) +
                              "' (expected ce, ce_ls, focal, ldam, ldam_focal)");
}

void validate(const LossConfig& c, std::size_t classes) {
  const auto need_counts = [&] {
    if (c.class_counts.size() != classes) {
      throw std::invalid_argument("loss: " + std::string(to_string(c.kind)) + " needs " +
                                  std::to_string(classes) + " class counts, got " +
                                  std::to_string(c.class_counts.size()));
    }
    for (auto n : c.class_counts) {
      if (n == 0) throw std::invalid_argument("loss: class counts must be positive");
    }
    if (!(c.ldam_max_margin > 0.0)) throw std::invalid_argument("loss: ldam_max_margin must be > 0");
    if (!(c.ldam_scale > 0.0)) throw std::invalid_argument("loss: ldam_scale must be > 0");
  };
  const auto need_focal = [&] {
    if (!(c.focal_gamma >= 0.0)) throw std::invalid_argument("loss: focal_gamma must be >= 0");
    if (!c.focal_alpha.empty()) {
      if (c.focal_alpha.size() != classes) throw std::invalid_argument("loss: focal_alpha needs one weight per class");
      for (double a : c.focal_alpha) {
        if (!(a > 0.0)) throw std::invalid_argument("loss: focal_alpha weights must be positive");
      }
    }
  };
  switch (c.kind) {
    case LossKind::kCrossEntropy: break;
    case LossKind::kLabelSmoothing:
      if (!(c.ls_epsilon >= 0.0 && c.ls_epsilon < 1.0)) {
        throw std::invalid_argument("loss: ls_epsilon must lie in [0, 1)");
      }
      break;
    case LossKind::kFocal: need_focal(); break;
    case LossKind::kLdam: need_counts(); break;
    case LossKind::kLdamFocal:
      need_focal();
      need_counts();
      if (c.mix_alpha < 0.0 || c.mix_beta < 0.0) throw std::invalid_argument("loss: mix weights must be >= 0");
      if (c.mix_alpha == 0.0 && c.mix_beta == 0.0) throw std::invalid_argument("loss: both mix weights are zero");
      break;
  }
}

LossOutput cross_entropy(const LogitBatch& b) {
  check_batch(b);
  const std::size_t n = b.size(), k = b.classes;
  LossOutput out = make_output(n, k);
  std::vector<double> lp(k);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax(b.logits.subspan(i * k, k), lp);
    const std::size_t y = b.labels[i];
    out.per_sample[i] = -lp[y];
    for (std::size_t j = 0; j < k; ++j) {
      out.grad_logits[i * k + j] = (std::exp(lp[j]) - (j == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  finish_mean(out);
  return out;
}

LossOutput cross_entropy_label_smoothing(const LogitBatch& b, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument("cross_entropy_label_smoothing: epsilon must lie in [0, 1)");
  }
  check_batch(b);
  const std::size_t n = b.size(), k = b.classes;
  LossOutput out = make_output(n, k);
  std::vector<double> lp(k);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double off = epsilon / static_cast<double>(k);
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax(b.logits.subspan(i * k, k), lp);
    double loss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double q = (j == b.labels[i] ? 1.0 - epsilon : 0.0) + off;
      loss -= q * lp[j];
      out.grad_logits[i * k + j] = (std::exp(lp[j]) - q) * inv_n;
    }
    out.per_sample[i] = loss;
  }
  finish_mean(out);
  return out;
}

LossOutput focal_loss(const LogitBatch& b, double gamma, std::span<const double> alpha) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  check_batch(b);
  const std::size_t n = b.size(), k = b.classes;
  if (!alpha.empty() && alpha.size() != k) {
    throw std::invalid_argument("focal_loss: alpha needs one weight per class");
  }
  LossOutput out = make_output(n, k);
  std::vector<double> lp(k);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax(b.logits.subspan(i * k, k), lp);
    const std::size_t y = b.labels[i];
    const double a = alpha.empty() ? 1.0 : alpha[y];
    const double log_q = lp[y];
    const double q = std::exp(log_q);
    const double one_minus = -std::expm1(log_q);
    const double modulator = std::pow(one_minus, gamma);
    out.per_sample[i] = -a * modulator * log_q;

    // d/dz_j = c · (δ_jy − p_j), c = −α[(1−q)^γ − γ(1−q)^(γ−1) q log q]
    double slope = 0.0;
    if (gamma != 0.0 && one_minus > 0.0) slope = gamma * std::pow(one_minus, gamma - 1.0) * q * log_q;
    const double c = -a * (modulator - slope);
    for (std::size_t j = 0; j < k; ++j) {
      out.grad_logits[i * k + j] = c * ((j == y ? 1.0 : 0.0) - std::exp(lp[j])) * inv_n;
    }
  }
  finish_mean(out);
  return out;
}

std::vector<double> ldam_margins(std::span<const std::size_t> counts, double max_margin) {
  if (counts.empty()) throw std::invalid_argument("ldam_margins: no class counts");
  std::vector<double> margins(counts.size());
  double largest = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0) throw std::invalid_argument("ldam_margins: class " + std::to_string(j) + " has zero count");
    margins[j] = 1.0 / std::sqrt(std::sqrt(static_cast<double>(counts[j])));
    largest = std::max(largest, margins[j]);
  }
  for (double& m : margins) m *= max_margin / largest;
  return margins;
}

LossOutput ldam_loss(const LogitBatch& b, std::span<const std::size_t> counts, double max_margin,
                     double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("ldam_loss: scale must be > 0");
  if (!(max_margin > 0.0)) throw std::invalid_argument("ldam_loss: max_margin must be > 0");
  check_batch(b);
  if (counts.size() != b.classes) throw std::invalid_argument("ldam_loss: need one count per class");
  const auto margins = ldam_margins(counts, max_margin);
  const std::size_t n = b.size(), k = b.classes;
  LossOutput out = make_output(n, k);
  std::vector<double> shifted(k), lp(k);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = b.labels[i];
    for (std::size_t j = 0; j < k; ++j) {
      shifted[j] = scale * (b.logits[i * k + j] - (j == y ? margins[y] : 0.0));
    }
    log_softmax(shifted, lp);
    out.per_sample[i] = -lp[y];
    for (std::size_t j = 0; j < k; ++j) {
      out.grad_logits[i * k + j] = scale * (std::exp(lp[j]) - (j == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  finish_mean(out);
  return out;
}

LossOutput ldam_focal_loss(const LogitBatch& b, std::span<const std::size_t> counts, double gamma,
                           std::span<const double> alpha, double max_margin, double scale,
                           double mix_alpha, double mix_beta) {
  if (mix_alpha < 0.0 || mix_beta < 0.0) throw std::invalid_argument("ldam_focal_loss: mix weights must be >= 0");
  if (mix_alpha == 0.0 && mix_beta == 0.0) throw std::invalid_argument("ldam_focal_loss: both mix weights are zero");
  LossOutput focal = focal_loss(b, gamma, alpha);
  LossOutput ldam = ldam_loss(b, counts, max_margin, scale);
  LossOutput out = make_output(b.size(), b.classes);
  for (std::size_t i = 0; i < out.per_sample.size(); ++i) {
    out.per_sample[i] = mix_alpha * focal.per_sample[i] + mix_beta * ldam.per_sample[i];
  }
  for (std::size_t i = 0; i < out.grad_logits.size(); ++i) {
    out.grad_logits[i] = mix_alpha * focal.grad_logits[i] + mix_beta * ldam.grad_logits[i];
  }
  out.loss = mix_alpha * focal.loss + mix_beta * ldam.loss;
  return out;
}

LossOutput compute_loss(const LossConfig& c, const LogitBatch& b) {
  switch (c.kind) {
    case LossKind::kCrossEntropy: return cross_entropy(b);
    case LossKind::kLabelSmoothing: return cross_entropy_label_smoothing(b, c.ls_epsilon);
    case LossKind::kFocal: return focal_loss(b, c.focal_gamma, c.focal_alpha);
    case LossKind::kLdam: return ldam_loss(b, c.class_counts, c.ldam_max_margin, c.ldam_scale);
    case LossKind::kLdamFocal:
      return ldam_focal_loss(b, c.class_counts, c.focal_gamma, c.focal_alpha, c.ldam_max_margin,
                             c.ldam_scale, c.mix_alpha, c.mix_beta);
  }
  throw std::invalid_argument("compute_loss: unknown kind");
}

}  // namespace sono::losses
