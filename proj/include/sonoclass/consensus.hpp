// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dawid–Skene EM over sparse multi-annotator labels, plus pairwise
// agreement statistics.

#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace sono::consensus {

struct Annotation {
  std::size_t item = 0;
  std::size_t annotator = 0;
  std::size_t label = 0;
};

struct AnnotationSet {
  std::vector<std::string> item_ids;
  std::vector<std::string> annotator_ids;
  std::size_t classes = 0;
  std::vector<Annotation> records;

  std::size_t items() const { return item_ids.size(); }
  std::size_t annotators() const { return annotator_ids.size(); }

  // Every item has a record, no (item, annotator) pair repeats, indices in
  // range. Throws std::invalid_argument.
  void validate() const;
};

// CSV with header item_id,annotator_id,label. Ids are numbered in order of
// first appearance. `classes` = 0 infers max label + 1.
AnnotationSet read_annotations(const std::filesystem::path& path, std::size_t classes = 0);

using Matrix = std::vector<std::vector<double>>;

struct Parameters {
  std::vector<double> priors;       // K
  std::vector<Matrix> confusions;  // A × K × K, [true][observed]
};

struct DawidSkeneState {
  Parameters params;
  Matrix posterior;  // I × K
  double log_likelihood = 0.0;
};

// Vote proportions per item.
Matrix ds_initialize(const AnnotationSet& set);

// Priors from posterior mass; confusion counts plus `smoothing`, rows
// renormalized. A class row with no mass at all becomes uniform.
// Annotators without records get uniform rows and a warning.
Parameters ds_m_step(const AnnotationSet& set, const Matrix& posterior, double smoothing);

// Log-space Bayes rule per item. Rows whose products all vanish become
// uniform with a warning.
Matrix ds_e_step(const AnnotationSet& set, const Parameters& params);

// Observed-data log-likelihood; -inf when some item has zero probability.
double ds_log_likelihood(const AnnotationSet& set, const Parameters& params);

// Log-likelihood plus the Dirichlet log-prior implied by additive smoothing,
// smoothing · Σ log π. This is the quantity the smoothed M-step maximizes,
// so it is the one EM keeps nondecreasing; with smoothing = 0 it equals the
// log-likelihood.
double ds_objective(const AnnotationSet& set, const Parameters& params, double smoothing);

struct RunOptions {
  double tol = 1e-6;
  std::size_t max_iter = 100;
  double smoothing = 0.01;
};

struct ConsensusResult {
  std::vector<std::size_t> labels;
  std::vector<double> confidence;
  std::size_t iterations = 0;
  bool converged = false;
};

struct RunOutput {
  ConsensusResult result;
  DawidSkeneState state;
  std::vector<double> ll_trace;         // log-likelihood of each iteration's parameters
  std::vector<double> objective_trace;  // ds_objective of the same
};

RunOutput ds_run(const AnnotationSet& set, const RunOptions& options = {});

// Plurality vote with lowest-index tie-break.
std::vector<std::size_t> majority_vote(const AnnotationSet& set);

// Lowest index wins ties.
std::size_t argmax_row(const std::vector<double>& row);

// Fraction of positions with equal labels.
double agreement_rate(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);
// |A∩B| / |A∪B|.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);
// |A∩B| / ((|A|+|B|)/2).
double overlap_over_mean(const std::set<std::string>& a, const std::set<std::string>& b);

// The same two statistics from reported counts alone. Counts need not be
// consistent as sets; a warning is issued when both > min(a, b).
struct AgreementFromCounts {
  double intersection_over_union = 0.0;
  double intersection_over_mean = 0.0;
};
AgreementFromCounts agreement_from_counts(std::size_t count_a, std::size_t count_b,
                                          std::size_t both);

void write_consensus_csv(const AnnotationSet& set, const ConsensusResult& result,
                         const std::filesystem::path& path);
nlohmann::json diagnostics_json(const AnnotationSet& set, const RunOutput& run,
                                const RunOptions& options);

}  // namespace sono::consensus
