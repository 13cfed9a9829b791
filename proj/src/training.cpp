// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sonoclass/augment.hpp"
#include "sonoclass/losses.hpp"
#include "sonoclass/rng.hpp"
#include "sonoclass/tensor.hpp"

namespace sono::train {

namespace fs = std::filesystem;

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state, const AdamOptions& o) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params and grads differ in count");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state has a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size() || (!grads[i].empty() && grads[i].size() != params[i].size())) {
      throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto p = params[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
      p[j] -= o.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + o.eps);
    }
  }
}

LoadedSet load_set(const data::DatasetManifest& manifest) {
  LoadedSet s;
  for (const auto& e : manifest.entries) {
    s.ids.push_back(e.image_id);
    s.images.push_back(data::load_image(manifest, e));
    s.labels.push_back(e.label);
  }
  return s;
}

std::vector<std::size_t> predict_labels(const model::Ensemble& model, const LoadedSet& set, std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(set.size());
  for (std::size_t b = 0; b < set.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, set.size() - b);
    ad::Tape tape(false);
    const ad::Tensor z = model.forward(tape, std::span<const RasterImage>(set.images.data() + b, n));
    const std::size_t k = z.dim(1);
    for (std::size_t i = 0; i < n; ++i) out.push_back(model::argmax(z.values().subspan(i * k, k)));
  }
  return out;
}

metrics::ConfusionMatrix confusion_of(const model::Ensemble& model, const LoadedSet& set,
                                      const std::vector<std::string>& class_names) {
  const auto pred = predict_labels(model, set);
  return metrics::confusion_accumulate(pred, set.labels, model.config().classes, class_names);
}

std::string format_log_line(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %zu train_loss %.10f val_accuracy %.6f val_macro_f1 %.6f best %d", r.epoch,
                r.train_loss, r.val_accuracy, r.val_macro_f1, r.best ? 1 : 0);
  return buf;
}

fs::path run_directory(const RunConfig& config) {
  const char* env = std::getenv("SONO_RUN_ROOT");
  const fs::path root = (env && *env) ? fs::path(env) : fs::path("runs");
  return root / config.run_name();
}

void write_reports(const metrics::MetricsReport& report, const fs::path& dir, const std::vector<std::string>& formats) {
  fs::create_directories(dir);
  const auto write = [&](const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
  };
  write(dir / "metrics.json", metrics::report_emit(report, metrics::Format::kJson));
  write(dir / "matrix.csv", metrics::matrix_csv(report.matrix));
  for (const auto& f : formats) {
    if (f == "csv") write(dir / "report.csv", metrics::report_emit(report, metrics::Format::kCsv));
    if (f == "markdown") write(dir / "report.md", metrics::report_emit(report, metrics::Format::kMarkdown));
  }
}

metrics::MetricsReport evaluate(const fs::path& checkpoint, const data::DatasetManifest& manifest) {
  const model::Ensemble m = model::load_checkpoint(checkpoint);
  if (m.config().classes != manifest.classes()) {
    throw std::runtime_error("checkpoint " + checkpoint.string() + " has " + std::to_string(m.config().classes) +
                             " classes but the manifest has " + std::to_string(manifest.classes()));
  }
  const LoadedSet set = load_set(manifest);
  return metrics::overall_metrics(confusion_of(m, set, manifest.class_names));
}

std::size_t named_class(const RunConfig& config, const std::vector<std::size_t>& train_counts) {
  const std::int64_t k = config.get_int("eval.named_class");
  if (k >= 0) {
    if (static_cast<std::size_t>(k) >= train_counts.size()) throw ConfigError("eval.named_class: out of range");
    return static_cast<std::size_t>(k);
  }
  // Rarest class; the later index wins ties so the default lands on the tail.
  std::size_t best = 0;
  for (std::size_t j = 1; j < train_counts.size(); ++j) {
    if (train_counts[j] <= train_counts[best]) best = j;
  }
  return best;
}

namespace {

std::vector<std::string> split_formats(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Train state: parameters and moments in f64, plus scalars.
void save_state(const fs::path& path, const model::Ensemble& m, const AdamState& adam, std::size_t epoch,
                double best_f1) {
  std::vector<model::NamedArray> arrays;
  arrays.push_back({"state.scalars", {3}, {static_cast<double>(epoch), static_cast<double>(adam.step), best_f1}});
  const auto& ps = m.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps[i];
    arrays.push_back({"param." + p.name, p.value.shape(), {p.value.values().begin(), p.value.values().end()}});
    arrays.push_back({"adam.m." + p.name, p.value.shape(), adam.m.empty() ? std::vector<double>(p.value.size()) : adam.m[i]});
    arrays.push_back({"adam.v." + p.name, p.value.shape(), adam.v.empty() ? std::vector<double>(p.value.size()) : adam.v[i]});
  }
  const fs::path tmp = path.string() + ".tmp";
  model::write_array_file(tmp, model::kTrainStateMagic, arrays, model::Precision::kF64);
  fs::rename(tmp, path);
}

void load_state(const fs::path& path, model::Ensemble& m, AdamState& adam, std::size_t& epoch, double& best_f1) {
  const auto arrays = model::read_array_file(path, model::kTrainStateMagic, model::Precision::kF64);
  const auto find = [&](const std::string& name) -> const model::NamedArray& {
    for (const auto& a : arrays) {
      if (a.name == name) return a;
    }
    throw model::CheckpointError(model::CheckpointError::Kind::kMalformed, "train state lacks " + name);
  };
  const auto& sc = find("state.scalars");
  if (sc.data.size() != 3) throw model::CheckpointError(model::CheckpointError::Kind::kMalformed, "bad state.scalars");
  epoch = static_cast<std::size_t>(sc.data[0]);
  adam.step = static_cast<std::uint64_t>(sc.data[1]);
  best_f1 = sc.data[2];
  adam.m.clear();
  adam.v.clear();
  for (auto& p : m.parameters()) {
    const auto& v = find("param." + p.name);
    if (v.shape != p.value.shape()) {
      throw model::CheckpointError(model::CheckpointError::Kind::kMalformed, "train state shape mismatch for " + p.name);
    }
    std::copy(v.data.begin(), v.data.end(), p.value.mutable_values().begin());
    adam.m.push_back(find("adam.m." + p.name).data);
    adam.v.push_back(find("adam.v." + p.name).data);
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

EpochRecord parse_log_line(const std::string& line) {
  EpochRecord r;
  int best = 0;
  if (std::sscanf(line.c_str(), "epoch %zu train_loss %lf val_accuracy %lf val_macro_f1 %lf best %d", &r.epoch,
                  &r.train_loss, &r.val_accuracy, &r.val_macro_f1, &best) != 5) {
    throw std::runtime_error("unparseable train.log line: " + line);
  }
  r.best = best != 0;
  return r;
}

}  // namespace

TrainResult train(const RunConfig& config, const fs::path& run_dir, std::ostream* progress) {
  using clock = std::chrono::steady_clock;
  const fs::path manifest_path = config.manifest();
  if (manifest_path.empty()) throw std::runtime_error("data.manifest is not set");
  if (!fs::exists(manifest_path)) throw std::runtime_error("manifest not found: " + manifest_path.string());
  const data::DatasetManifest manifest = data::read_manifest(manifest_path);
  const std::size_t k = manifest.classes();
  config.validate(k);

  const std::uint64_t seed = config.seed();
  const data::Split split = data::stratified_split(manifest, config.split_ratios(), seed);
  data::DatasetManifest held_out = split.test;
  std::string held_out_name = "test";
  if (const auto tm = config.get_string("data.test_manifest"); !tm.empty()) {
    if (!fs::exists(tm)) throw std::runtime_error("test manifest not found: " + tm);
    held_out = data::read_manifest(tm);
    held_out_name = "test_manifest";
    if (held_out.classes() != k) throw std::runtime_error("test manifest class count differs from data.manifest");
  }
  if (held_out.entries.empty()) {
    held_out = split.val;
    held_out_name = "val";
  }

  TrainResult result;
  result.run_dir = run_dir;
  result.evaluated_on = held_out_name;
  result.train_counts = data::class_counts(split.train);
  if (split.train.entries.empty()) throw std::runtime_error("training split is empty");

  const auto aug = config.augmentation();
  const bool aug_on = config.augmentation_enabled();
  const auto loss_cfg = config.loss(result.train_counts);
  const auto adam_opts = config.adam();
  const std::size_t epochs = config.epochs();
  const std::size_t batch_size = config.batch_size();
  const bool parallel = config.parallel_batches();
  const auto formats = split_formats(config.get_string("eval.formats"));

  const LoadedSet train_set = load_set(split.train);
  const LoadedSet val_set = load_set(split.val.entries.empty() ? split.train : split.val);

  fs::create_directories(run_dir);
  {
    std::ofstream echo(run_dir / "config.echo", std::ios::binary | std::ios::trunc);
    echo << config.echo();
  }

  model::Ensemble net = model::Ensemble::build(config.ensemble(k), mix_key(seed, hash_string("init")));
  AdamState adam;
  std::size_t start_epoch = 0;
  double best_f1 = -1.0;
  const fs::path state_path = run_dir / "state.bin";
  const fs::path log_path = run_dir / "train.log";
  if (config.get_bool("optim.resume") && fs::exists(state_path)) {
    load_state(state_path, net, adam, start_epoch, best_f1);
    auto lines = read_lines(log_path);
    if (lines.size() < start_epoch) throw std::runtime_error("train.log is shorter than the saved train state");
    lines.resize(start_epoch);
    for (const auto& l : lines) result.epochs.push_back(parse_log_line(l));
    std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
    for (const auto& l : lines) log << l << '\n';
    if (progress) *progress << "resuming " << run_dir.string() << " after epoch " << start_epoch << "\n";
  } else {
    std::ofstream(log_path, std::ios::binary | std::ios::trunc);
  }

  std::vector<std::span<double>> param_spans;
  for (auto& p : net.parameters()) param_spans.push_back(p.value.mutable_values());

  const std::uint64_t shuffle_key = mix_key(seed, hash_string("shuffle"));
  std::size_t step = adam.step;
  for (std::size_t epoch = start_epoch + 1; epoch <= epochs; ++epoch) {
    const auto t0 = clock::now();
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    SampleRng shuffler(mix_key(shuffle_key, epoch));
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::size_t n = std::min(batch_size, order.size() - b);
      std::vector<RasterImage> batch(n);
      std::vector<std::size_t> labels(n);
      const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) if (parallel)
      for (std::ptrdiff_t i = 0; i < count; ++i) {
        const std::size_t idx = order[b + static_cast<std::size_t>(i)];
        if (aug_on) {
          SampleRng rng = SampleRng::keyed(seed, train_set.ids[idx], epoch);
          batch[static_cast<std::size_t>(i)] = augment::augment_sample(train_set.images[idx], aug, rng);
        } else {
          batch[static_cast<std::size_t>(i)] = train_set.images[idx];
        }
      }
      for (std::size_t i = 0; i < n; ++i) labels[i] = train_set.labels[order[b + i]];

      ad::Tape tape;
      const ad::Tensor logits = net.forward(tape, batch);
      const losses::LossOutput out = losses::compute_loss(loss_cfg, {logits.values(), k, labels});
      ++step;
      if (!std::isfinite(out.loss)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                                 " (loss " + std::string(losses::to_string(loss_cfg.kind)) + ")");
      }
      const ad::Tensor l = ad::attach_loss(tape, logits, out.loss, out.grad_logits);
      tape.backward(l);
      std::vector<std::span<const double>> grads;
      for (const auto& p : net.parameters()) grads.push_back(p.value.grad());
      adam_step(param_spans, grads, adam, adam_opts);
      for (const auto& p : net.parameters()) p.value.clear_grad();
      loss_sum += out.loss * static_cast<double>(n);
    }

    const auto val_report = metrics::overall_metrics(confusion_of(net, val_set, manifest.class_names));
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train_set.size()), val_report.overall_accuracy,
                    val_report.macro_f1, false};
    if (rec.val_macro_f1 > best_f1) {
      best_f1 = rec.val_macro_f1;
      rec.best = true;
      model::save_checkpoint(net, run_dir / "best.ckpt");
    }
    result.epochs.push_back(rec);
    {
      std::ofstream log(log_path, std::ios::binary | std::ios::app);
      log << format_log_line(rec) << '\n';
    }
    save_state(state_path, net, adam, epoch, best_f1);
    if (progress) {
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      char buf[32];
      std::snprintf(buf, sizeof buf, " (%.1fs)", secs);
      *progress << format_log_line(rec) << buf << std::endl;
    }
  }
  model::save_checkpoint(net, run_dir / "final.ckpt");

  const model::Ensemble best = model::load_checkpoint(run_dir / "best.ckpt");
  const LoadedSet eval_set = load_set(held_out);
  result.report = metrics::overall_metrics(confusion_of(best, eval_set, manifest.class_names));
  write_reports(result.report, run_dir, formats);

  nlohmann::json summary;
  summary["architecture"] = config.get_string("eval.architecture");
  summary["loss"] = std::string(losses::to_string(loss_cfg.kind));
  summary["named_class"] = named_class(config, result.train_counts);
  summary["train_counts"] = result.train_counts;
  summary["evaluated_on"] = held_out_name;
  std::ofstream(run_dir / "summary.json", std::ios::binary | std::ios::trunc) << summary.dump(2) << '\n';
  return result;
}

}  // namespace sono::train
