// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "sonoclass/csv.hpp"
#include "sonoclass/log.hpp"

namespace sono::consensus {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (const double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

// log p[k] + Σ log π_a[k][l] for each k.
std::vector<double> item_log_joint(const std::vector<const Annotation*>& recs, const Parameters& params) {
  const std::size_t k = params.priors.size();
  std::vector<double> lj(k);
  for (std::size_t t = 0; t < k; ++t) {
    double s = safe_log(params.priors[t]);
    for (const Annotation* r : recs) s += safe_log(params.confusions[r->annotator][t][r->label]);
    lj[t] = s;
  }
  return lj;
}

std::vector<std::vector<const Annotation*>> records_by_item(const AnnotationSet& set) {
  std::vector<std::vector<const Annotation*>> by(set.items());
  for (const auto& r : set.records) by.at(r.item).push_back(&r);
  return by;
}

}  // namespace

void AnnotationSet::validate() const {
  if (classes < 1) throw std::invalid_argument("annotation set has no classes");
  std::vector<std::size_t> per_item(items(), 0);
  std::vector<std::vector<bool>> seen(items(), std::vector<bool>(annotators(), false));
  for (const auto& r : records) {
    if (r.item >= items() || r.annotator >= annotators()) {
      throw std::invalid_argument("annotation record references an unknown item or annotator");
    }
    if (r.label >= classes) {
      throw std::invalid_argument("label " + std::to_string(r.label) + " on item '" + item_ids[r.item] +
                                  "' exceeds class count " + std::to_string(classes));
    }
    if (seen[r.item][r.annotator]) {
      throw std::invalid_argument("duplicate annotation for item '" + item_ids[r.item] + "' by '" +
                                  annotator_ids[r.annotator] + "'");
    }
    seen[r.item][r.annotator] = true;
    ++per_item[r.item];
  }
  for (std::size_t i = 0; i < items(); ++i) {
    if (per_item[i] == 0) throw std::invalid_argument("item '" + item_ids[i] + "' has no annotations");
  }
}

AnnotationSet read_annotations(const std::filesystem::path& path, std::size_t classes) {
  const auto rows = csv::read_file(path);
  csv::expect_header(rows, {"item_id", "annotator_id", "label"}, path);
  AnnotationSet set;
  std::unordered_map<std::string, std::size_t> items, annotators;
  std::size_t max_label = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 3) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(i + 1) + " has " +
                               std::to_string(r.size()) + " fields");
    }
    std::size_t label = 0;
    try {
      std::size_t used = 0;
      label = std::stoul(r[2], &used);
      if (used != r[2].size()) throw std::invalid_argument(r[2]);
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ": bad label '" + r[2] + "' on row " + std::to_string(i + 1));
    }
    auto [it, fresh] = items.try_emplace(r[0], set.item_ids.size());
    if (fresh) set.item_ids.push_back(r[0]);
    auto [at, afresh] = annotators.try_emplace(r[1], set.annotator_ids.size());
    if (afresh) set.annotator_ids.push_back(r[1]);
    set.records.push_back({it->second, at->second, label});
    max_label = std::max(max_label, label);
  }
  set.classes = classes ? classes : max_label + 1;
  try {
    set.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return set;
}

Matrix ds_initialize(const AnnotationSet& set) {
  Matrix t(set.items(), std::vector<double>(set.classes, 0.0));
  std::vector<double> votes(set.items(), 0.0);
  for (const auto& r : set.records) {
    t.at(r.item).at(r.label) += 1.0;
    votes[r.item] += 1.0;
  }
  for (std::size_t i = 0; i < set.items(); ++i) {
    if (votes[i] == 0.0) throw std::invalid_argument("item '" + set.item_ids[i] + "' has no annotations");
    for (auto& x : t[i]) x /= votes[i];
  }
  return t;
}

Parameters ds_m_step(const AnnotationSet& set, const Matrix& posterior, double smoothing) {
  if (smoothing < 0.0) throw std::invalid_argument("smoothing must be nonnegative");
  const std::size_t k = set.classes;
  Parameters p;
  p.priors.assign(k, 0.0);
  for (const auto& row : posterior) {
    for (std::size_t t = 0; t < k; ++t) p.priors[t] += row[t];
  }
  double total = 0.0;
  for (const double x : p.priors) total += x;
  for (auto& x : p.priors) x = total > 0.0 ? x / total : 1.0 / static_cast<double>(k);

  p.confusions.assign(set.annotators(), Matrix(k, std::vector<double>(k, smoothing)));
  std::vector<std::size_t> seen(set.annotators(), 0);
  for (const auto& r : set.records) {
    ++seen[r.annotator];
    for (std::size_t t = 0; t < k; ++t) p.confusions[r.annotator][t][r.label] += posterior[r.item][t];
  }
  for (std::size_t a = 0; a < set.annotators(); ++a) {
    if (seen[a] == 0) {
      warn("annotator '" + set.annotator_ids[a] + "' has no records; excluded");
    }
    for (auto& row : p.confusions[a]) {
      double s = 0.0;
      for (const double x : row) s += x;
      for (auto& x : row) x = (seen[a] > 0 && s > 0.0) ? x / s : 1.0 / static_cast<double>(k);
    }
  }
  return p;
}

Matrix ds_e_step(const AnnotationSet& set, const Parameters& params) {
  const auto by_item = records_by_item(set);
  Matrix t(set.items());
  for (std::size_t i = 0; i < set.items(); ++i) {
    const auto lj = item_log_joint(by_item[i], params);
    const double z = log_sum_exp(lj);
    auto& row = t[i];
    row.resize(set.classes);
    if (z == kNegInf) {
      warn("item '" + set.item_ids[i] + "' has zero probability under every class; posterior set uniform");
      std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(set.classes));
      continue;
    }
    double s = 0.0;
    for (std::size_t c = 0; c < set.classes; ++c) s += row[c] = std::exp(lj[c] - z);
    for (auto& x : row) x /= s;
  }
  return t;
}

double ds_log_likelihood(const AnnotationSet& set, const Parameters& params) {
  const auto by_item = records_by_item(set);
  double ll = 0.0;
  for (std::size_t i = 0; i < set.items(); ++i) {
    const double z = log_sum_exp(item_log_joint(by_item[i], params));
    if (z == kNegInf) return kNegInf;
    ll += z;
  }
  return ll;
}

double ds_objective(const AnnotationSet& set, const Parameters& params, double smoothing) {
  double obj = ds_log_likelihood(set, params);
  if (smoothing == 0.0) return obj;
  std::vector<bool> active(set.annotators(), false);
  for (const auto& r : set.records) active[r.annotator] = true;
  for (std::size_t a = 0; a < set.annotators(); ++a) {
    if (!active[a]) continue;
    for (const auto& row : params.confusions[a]) {
      for (const double x : row) obj += smoothing * safe_log(x);
    }
  }
  return obj;
}

std::size_t argmax_row(const std::vector<double>& row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

RunOutput ds_run(const AnnotationSet& set, const RunOptions& options) {
  if (!(options.tol > 0.0)) throw std::invalid_argument("tol must be positive");
  if (options.max_iter < 1) throw std::invalid_argument("max_iter must be at least 1");
  set.validate();

  RunOutput out;
  Matrix posterior = ds_initialize(set);
  Parameters params;
  for (std::size_t it = 1; it <= options.max_iter; ++it) {
    params = ds_m_step(set, posterior, options.smoothing);
    const double ll = ds_log_likelihood(set, params);
    out.ll_trace.push_back(ll);
    out.objective_trace.push_back(ds_objective(set, params, options.smoothing));
    posterior = ds_e_step(set, params);
    out.result.iterations = it;
    if (it > 1) {
      const double prev = out.ll_trace[it - 2];
      if (std::abs(ll - prev) < options.tol || (ll == kNegInf && prev == kNegInf)) {
        out.result.converged = true;
        break;
      }
    }
  }

  out.state.params = params;
  out.state.posterior = posterior;
  out.state.log_likelihood = out.ll_trace.back();
  for (const auto& row : posterior) {
    const std::size_t best = argmax_row(row);
    out.result.labels.push_back(best);
    out.result.confidence.push_back(row[best]);
  }
  return out;
}

std::vector<std::size_t> majority_vote(const AnnotationSet& set) {
  std::vector<std::size_t> labels;
  for (const auto& row : ds_initialize(set)) labels.push_back(argmax_row(row));
  return labels;
}

double agreement_rate(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("agreement_rate: label lists differ in length");
  if (a.empty()) throw std::invalid_argument("agreement_rate: empty label lists");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

namespace {

std::size_t intersection_size(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t n = 0;
  for (const auto& x : a) n += b.count(x);
  return n;
}

}  // namespace

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  const std::size_t both = intersection_size(a, b);
  const std::size_t uni = a.size() + b.size() - both;
  if (uni == 0) throw std::invalid_argument("jaccard: empty union");
  return static_cast<double>(both) / static_cast<double>(uni);
}

double overlap_over_mean(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) throw std::invalid_argument("overlap_over_mean: empty union");
  return 2.0 * static_cast<double>(intersection_size(a, b)) / static_cast<double>(a.size() + b.size());
}

AgreementFromCounts agreement_from_counts(std::size_t count_a, std::size_t count_b, std::size_t both) {
  if (count_a + count_b <= both) throw std::invalid_argument("agreement_from_counts: empty union");
  if (both > std::min(count_a, count_b)) {
    warn("overlap " + std::to_string(both) + " exceeds the smaller set (" +
         std::to_string(std::min(count_a, count_b)) + "); counts are not consistent as sets");
  }
  AgreementFromCounts r;
  r.intersection_over_union = static_cast<double>(both) / static_cast<double>(count_a + count_b - both);
  r.intersection_over_mean = 2.0 * static_cast<double>(both) / static_cast<double>(count_a + count_b);
  return r;
}

void write_consensus_csv(const AnnotationSet& set, const ConsensusResult& result,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "item_id,consensus_label,confidence\n";
  char buf[32];
  for (std::size_t i = 0; i < set.items(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", result.confidence[i]);
    out << csv::join({set.item_ids[i], std::to_string(result.labels[i]), buf}) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

nlohmann::json diagnostics_json(const AnnotationSet& set, const RunOutput& run, const RunOptions& options) {
  nlohmann::json j;
  j["items"] = set.items();
  j["annotators"] = set.annotators();
  j["classes"] = set.classes;
  j["smoothing"] = options.smoothing;
  j["tol"] = options.tol;
  j["max_iter"] = options.max_iter;
  j["iterations"] = run.result.iterations;
  j["converged"] = run.result.converged;
  j["priors"] = run.state.params.priors;
  nlohmann::json conf = nlohmann::json::object();
  for (std::size_t a = 0; a < set.annotators(); ++a) conf[set.annotator_ids[a]] = run.state.params.confusions[a];
  j["confusions"] = conf;
  j["log_likelihood_trace"] = run.ll_trace;
  j["objective_trace"] = run.objective_trace;
  return j;
}

}  // namespace sono::consensus
