// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Adam, the training loop and evaluation. A run directory holds
// config.echo, train.log, matrix.csv, metrics.json, best.ckpt, final.ckpt,
// summary.json (labels for the cross-run table) and state.bin (f64 train
// state used for exact resume).

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sonoclass/config.hpp"
#include "sonoclass/dataset.hpp"
#include "sonoclass/ensemble.hpp"
#include "sonoclass/image.hpp"
#include "sonoclass/metrics.hpp"

namespace sono::train {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Moments are sized on first use. An empty grad span counts as zeros.
void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state, const AdamOptions& options);

struct LoadedSet {
  std::vector<std::string> ids;
  std::vector<RasterImage> images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return images.size(); }
};

LoadedSet load_set(const data::DatasetManifest& manifest);

// Resize-only inference; never touches augmentation state.
std::vector<std::size_t> predict_labels(const model::Ensemble& model, const LoadedSet& set,
                                        std::size_t batch_size = 64);
metrics::ConfusionMatrix confusion_of(const model::Ensemble& model, const LoadedSet& set,
                                      const std::vector<std::string>& class_names);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  bool best = false;
};

std::string format_log_line(const EpochRecord& record);

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<EpochRecord> epochs;  // every epoch of the run, resumed ones included
  metrics::MetricsReport report;    // best checkpoint on the held-out set
  std::string evaluated_on;         // "test", "test_manifest" or "val"
  std::vector<std::size_t> train_counts;
};

// eval.named_class, or the rarest training class when it is -1.
std::size_t named_class(const RunConfig& config, const std::vector<std::size_t>& train_counts);

// $SONO_RUN_ROOT/<run.name>, or runs/<run.name> when the variable is unset.
std::filesystem::path run_directory(const RunConfig& config);

// Full pipeline from config: read and split the manifest, train, select by
// validation macro-F1, evaluate the best checkpoint and write every artifact.
// Progress lines (with timings) go to `progress` when non-null; train.log
// carries no timings so repeated runs are byte-identical.
TrainResult train(const RunConfig& config, const std::filesystem::path& run_dir, std::ostream* progress = nullptr);

// Throws std::runtime_error when the checkpoint's class count differs from
// the manifest's.
metrics::MetricsReport evaluate(const std::filesystem::path& checkpoint, const data::DatasetManifest& manifest);

// Writes metrics.json, matrix.csv and the requested extra formats
// (report.csv, report.md).
void write_reports(const metrics::MetricsReport& report, const std::filesystem::path& dir,
                   const std::vector<std::string>& formats);

}  // namespace sono::train
