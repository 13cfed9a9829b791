// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sonoclass/augment.hpp"
#include "sonoclass/config.hpp"
#include "sonoclass/consensus.hpp"
#include "sonoclass/dataset.hpp"
#include "sonoclass/image.hpp"
#include "sonoclass/metrics.hpp"
#include "sonoclass/rng.hpp"
#include "sonoclass/selftest.hpp"
#include "sonoclass/training.hpp"

namespace sono {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// --- synth ---------------------------------------------------------------

struct SynthArgs {
  std::string profile = "table1";
  std::size_t classes = 6;
  std::size_t total = 1600;
  std::size_t per_class = 100;
  std::uint64_t seed = 1;
  std::size_t size = 64;
  double speckle = 0.25;
  std::string out;
  std::size_t annotators = 0;
  double annotator_accuracy = 0.8;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  data::SynthSpec spec = a.profile == "table1" ? data::table1_profile(a.classes, a.total, a.seed)
                                               : data::balanced_profile(a.classes, a.per_class, a.seed);
  spec.height = spec.width = a.size;
  spec.speckle = a.speckle;
  const auto manifest = data::synth_generate(spec, a.out);
  out << "wrote " << manifest.size() << " images in " << manifest.classes() << " classes to " << a.out << "\n";

  if (a.annotators > 0) {
    // Simulated raters per image: correct with the given accuracy, otherwise
    // a uniformly wrong class.
    std::string csv = "item_id,annotator_id,label\n";
    const auto kmax = static_cast<std::int64_t>(manifest.classes()) - 1;
    for (const auto& e : manifest.entries) {
      for (std::size_t r = 0; r < a.annotators; ++r) {
        SampleRng rng(mix_key(mix_key(a.seed, hash_string(e.image_id)), r + 1));
        std::size_t label = e.label;
        if (!rng.bernoulli(a.annotator_accuracy)) {
          label = static_cast<std::size_t>(rng.uniform_int(0, kmax - 1));
          if (label >= e.label) ++label;
        }
        csv += e.image_id + ",rater" + std::to_string(r + 1) + "," + std::to_string(label) + "\n";
      }
    }
    write_text(fs::path(a.out) / "annotations.csv", csv);
    out << "wrote " << manifest.size() * a.annotators << " annotations to "
        << (fs::path(a.out) / "annotations.csv").string() << "\n";
  }
  return kExitOk;
}

// --- consensus -------------------------------------------------------------

struct ConsensusArgs {
  std::string annotations;
  std::string out = "consensus.csv";
  std::string diagnostics;
  std::string manifest;
  std::string out_manifest;
  std::size_t classes = 0;
  double tol = 1e-6;
  std::size_t max_iter = 100;
  double smoothing = 0.01;
};

int run_consensus(const ConsensusArgs& a, std::ostream& out) {
  std::size_t classes = a.classes;
  data::DatasetManifest manifest;
  if (!a.manifest.empty()) {
    manifest = data::read_manifest(a.manifest);
    if (classes == 0) classes = manifest.classes();
  }
  const auto set = consensus::read_annotations(a.annotations, classes);
  consensus::RunOptions opts{a.tol, a.max_iter, a.smoothing};
  const auto run = consensus::ds_run(set, opts);
  consensus::write_consensus_csv(set, run.result, a.out);
  if (!a.diagnostics.empty()) write_text(a.diagnostics, consensus::diagnostics_json(set, run, opts).dump(2) + "\n");

  const auto mv = consensus::majority_vote(set);
  out << "items " << set.items() << ", annotators " << set.annotators() << ", iterations " << run.result.iterations
      << (run.result.converged ? " (converged)" : " (not converged)") << ", agreement with majority vote "
      << consensus::agreement_rate(run.result.labels, mv) << "\n";

  if (!a.out_manifest.empty()) {
    if (a.manifest.empty()) throw std::runtime_error("--out-manifest needs --manifest");
    std::map<std::string, std::size_t> label_of;
    for (std::size_t i = 0; i < set.items(); ++i) label_of[set.item_ids[i]] = run.result.labels[i];
    data::DatasetManifest relabeled = manifest;
    std::size_t changed = 0;
    for (auto& e : relabeled.entries) {
      const auto it = label_of.find(e.image_id);
      if (it == label_of.end()) continue;
      changed += it->second != e.label;
      e.label = it->second;
    }
    // Keep paths valid relative to the new manifest location.
    const fs::path dst_dir = fs::absolute(fs::path(a.out_manifest)).parent_path();
    for (auto& e : relabeled.entries) e.path = fs::relative(fs::absolute(manifest.resolve(e)), dst_dir).string();
    relabeled.root = dst_dir;
    data::write_manifest(relabeled, a.out_manifest);
    out << "relabeled " << changed << " of " << relabeled.size() << " manifest entries into " << a.out_manifest
        << "\n";
  }
  return kExitOk;
}

// --- augment ---------------------------------------------------------------

struct AugmentArgs {
  std::string manifest;
  std::string image;
  std::string out = "augment_preview";
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 42;
  std::size_t variants = 4;
  std::size_t limit = 0;
  std::string ext = "png";
};

int run_augment(const AugmentArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.empty() ? RunConfig() : RunConfig::load(a.config);
  for (const auto& o : a.overrides) cfg.apply_override(o);
  const auto aug = cfg.augmentation();

  // (id, path) pairs from either a manifest or a single image.
  std::vector<std::pair<std::string, fs::path>> sources;
  if (!a.manifest.empty()) {
    const auto m = data::read_manifest(a.manifest);
    for (const auto& e : m.entries) {
      if (a.limit != 0 && sources.size() == a.limit) break;
      sources.emplace_back(e.image_id, m.resolve(e));
    }
  } else {
    sources.emplace_back(fs::path(a.image).stem().string(), a.image);
  }

  // Variant v of an image uses the training key (seed, id, epoch = v).
  nlohmann::json items = nlohmann::json::array();
  for (const auto& [id, path] : sources) {
    const RasterImage img = decode_image(path);
    const fs::path dir = fs::path(a.out) / data::class_dir_name(id);
    fs::create_directories(dir);
    nlohmann::json outputs = nlohmann::json::array();
    for (std::size_t v = 1; v <= a.variants; ++v) {
      SampleRng rng = SampleRng::keyed(a.seed, id, v);
      const RasterImage o = augment::augment_sample(img, aug, rng);
      char name[64];
      std::snprintf(name, sizeof name, "v%03zu.%s", v, a.ext.c_str());
      encode_image(o, dir / name);
      char key[24];
      std::snprintf(key, sizeof key, "%016llx",
                    static_cast<unsigned long long>(mix_key(mix_key(a.seed, hash_string(id)), v)));
      outputs.push_back({{"file", (fs::path(data::class_dir_name(id)) / name).generic_string()}, {"epoch", v}, {"rng_key", key}});
    }
    items.push_back({{"image_id", id}, {"source", path.generic_string()}, {"variants", outputs}});
  }

  nlohmann::json record;
  record["seed"] = a.seed;
  record["variants_per_image"] = a.variants;
  record["key_derivation"] = "mix(mix(seed, fnv1a(image_id)), epoch)";
  record["config"] = augment::to_json(aug);
  record["items"] = items;
  write_text(fs::path(a.out) / "augmentation.json", record.dump(2) + "\n");
  out << "wrote " << a.variants << " variants of " << sources.size() << " image(s) to " << a.out << "\n";
  return kExitOk;
}

// --- train / evaluate ------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string manifest;
  std::string run_dir;
  std::int64_t seed = -1;
  std::int64_t epochs = -1;
  bool resume = false;
  bool quiet = false;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.empty() ? RunConfig() : RunConfig::load(a.config);
  if (!a.manifest.empty()) cfg.set("data.manifest", a.manifest);
  if (a.seed >= 0) cfg.set("run.seed", std::to_string(a.seed));
  if (a.epochs >= 0) cfg.set("optim.epochs", std::to_string(a.epochs));
  if (a.resume) cfg.set("optim.resume", "true");
  for (const auto& o : a.overrides) cfg.apply_override(o);
  const fs::path dir = a.run_dir.empty() ? train::run_directory(cfg) : fs::path(a.run_dir);
  const auto result = train::train(cfg, dir, a.quiet ? nullptr : &out);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: accuracy %.4f, macro F1 %.4f (%s)\n", dir.string().c_str(),
                result.report.overall_accuracy, result.report.macro_f1, result.evaluated_on.c_str());
  out << buf;
  return kExitOk;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::string formats = "json,csv,markdown";
  std::string print = "markdown";
};

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (!fs::exists(a.manifest)) throw std::runtime_error("manifest not found: " + a.manifest);
  const auto manifest = data::read_manifest(a.manifest);
  const auto report = train::evaluate(a.checkpoint, manifest);
  if (!a.out.empty()) train::write_reports(report, a.out, split_commas(a.formats));
  out << metrics::report_emit(report, metrics::parse_format(a.print));
  return kExitOk;
}

// --- report ----------------------------------------------------------------

struct ReportArgs {
  std::string metrics;
  std::string format = "markdown";
  bool per_class = false;
  std::vector<std::string> summary_runs;
  std::string class_label;
  std::string out;
};

int run_report(const ReportArgs& a, std::ostream& out) {
  std::string text;
  if (!a.summary_runs.empty()) {
    std::vector<metrics::SummaryRow> rows;
    std::string label = a.class_label;
    for (const auto& dir : a.summary_runs) {
      const auto report = metrics::report_from_json(nlohmann::json::parse(read_text(fs::path(dir) / "metrics.json")));
      const auto summary = nlohmann::json::parse(read_text(fs::path(dir) / "summary.json"));
      const auto k = summary.at("named_class").get<std::size_t>();
      if (k >= report.per_class.size()) throw std::runtime_error(dir + ": named class out of range");
      if (label.empty()) label = report.per_class[k].name;
      rows.push_back({summary.at("architecture").get<std::string>(), summary.at("loss").get<std::string>(),
                      report.overall_accuracy, report.macro_f1, report.per_class[k].diagonal_accuracy});
    }
    text = metrics::render_run_summary(rows, label);
  } else {
    if (a.metrics.empty()) throw CLI::RequiredError("--metrics or --runs");
    const auto report = metrics::report_from_json(nlohmann::json::parse(read_text(a.metrics)));
    text = a.per_class ? metrics::render_per_class_table(report) : metrics::report_emit(report, metrics::parse_format(a.format));
  }
  if (a.out.empty()) {
    out << text;
  } else {
    write_text(a.out, text);
  }
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sonoclass: imbalanced ultrasound-plane classification toolkit", "sonoclass"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic labelled image set");
  s->add_option("--profile", synth.profile, "table1 (imbalanced) or balanced")
      ->check(CLI::IsMember({"table1", "balanced"}));
  s->add_option("--classes", synth.classes, "number of classes")->check(CLI::Range(2, 16));
  s->add_option("--total", synth.total, "image count for the table1 profile");
  s->add_option("--per-class", synth.per_class, "images per class for the balanced profile");
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_option("--size", synth.size, "image side in pixels")->check(CLI::Range(8, 1024));
  s->add_option("--speckle", synth.speckle, "multiplicative speckle amplitude")->check(CLI::Range(0.0, 1.0));
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--annotators", synth.annotators, "also write annotations.csv from this many simulated raters");
  s->add_option("--annotator-accuracy", synth.annotator_accuracy, "simulated rater accuracy")
      ->check(CLI::Range(0.0, 1.0));

  ConsensusArgs cons;
  auto* c = app.add_subcommand("consensus", "Dawid-Skene consensus over redundant annotations");
  c->add_option("--annotations", cons.annotations, "CSV with item_id,annotator_id,label")
      ->required()
      ->check(CLI::ExistingFile);
  c->add_option("--out", cons.out, "consensus CSV");
  c->add_option("--diagnostics", cons.diagnostics, "optional JSON with priors, confusions and traces");
  c->add_option("--manifest", cons.manifest, "manifest whose class count and entries apply");
  c->add_option("--out-manifest", cons.out_manifest, "write the manifest relabeled by consensus");
  c->add_option("--classes", cons.classes, "class count (default: manifest or max label + 1)");
  c->add_option("--tol", cons.tol, "log-likelihood convergence tolerance");
  c->add_option("--max-iter", cons.max_iter, "iteration cap");
  c->add_option("--smoothing", cons.smoothing, "pseudo-count added to confusion rows");

  AugmentArgs aug;
  auto* g = app.add_subcommand("augment", "export augmented variants of manifest images plus a seed record");
  auto* gm = g->add_option("--manifest", aug.manifest, "manifest.csv whose images are augmented")->check(CLI::ExistingFile);
  auto* gi = g->add_option("--image", aug.image, "a single image instead of a manifest")->check(CLI::ExistingFile);
  gm->excludes(gi);
  g->add_option("--out", aug.out, "output directory");
  g->add_option("--config", aug.config, "run config supplying the [augment] section");
  g->add_option("--set", aug.overrides, "key=value config override (repeatable)");
  g->add_option("--seed", aug.seed, "global seed");
  g->add_option("--variants", aug.variants, "variants per image, keyed as epochs 1..N")->check(CLI::PositiveNumber);
  g->add_option("--limit", aug.limit, "augment only the first N manifest entries (0 = all)");
  g->add_option("--ext", aug.ext, "png or ppm")->check(CLI::IsMember({"png", "ppm"}));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train an ensemble from a run config");
  t->add_option("--config", tr.config, "run config file");
  t->add_option("--set", tr.overrides, "key=value config override (repeatable)");
  t->add_option("--manifest", tr.manifest, "shorthand for data.manifest");
  t->add_option("--seed", tr.seed, "shorthand for run.seed");
  t->add_option("--epochs", tr.epochs, "shorthand for optim.epochs");
  t->add_option("--run-dir", tr.run_dir, "run directory (default: $SONO_RUN_ROOT or runs/, then run.name)");
  t->add_flag("--resume", tr.resume, "continue from state.bin in the run directory");
  t->add_flag("--quiet", tr.quiet, "no per-epoch progress");
  std::ostringstream keys;
  for (const auto& [k, d] : RunConfig::schema_help()) keys << "  " << k << ": " << d << "\n";
  t->footer("Config keys:\n" + keys.str());

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "evaluate a checkpoint on a manifest (no augmentation)");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--manifest", ev.manifest, "manifest CSV")->required();
  e->add_option("--out", ev.out, "directory for metrics.json, matrix.csv and reports");
  e->add_option("--formats", ev.formats, "formats written to --out");
  e->add_option("--print", ev.print, "format printed to stdout")->check(CLI::IsMember({"json", "csv", "markdown"}));

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "re-render a metrics JSON, or tabulate several runs");
  r->add_option("--metrics", rep.metrics, "metrics.json");
  r->add_option("--format", rep.format, "json, csv or markdown")->check(CLI::IsMember({"json", "csv", "markdown"}));
  r->add_flag("--per-class", rep.per_class, "per-class accuracy table");
  r->add_option("--runs", rep.summary_runs, "run directories for the architecture/loss summary table");
  r->add_option("--class-label", rep.class_label, "column label for the named class");
  r->add_option("--out", rep.out, "write to this file instead of stdout");

  auto* st = app.add_subcommand("selftest", "gradient checks and invariants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (s->parsed()) return run_synth(synth, out);
    if (c->parsed()) return run_consensus(cons, out);
    if (g->parsed()) {
      if (aug.manifest.empty() && aug.image.empty()) {
        err << "augment: one of --manifest or --image is required\n" << g->help();
        return kExitUsage;
      }
      return run_augment(aug, out);
    }
    if (t->parsed()) return run_train(tr, out);
    if (e->parsed()) return run_evaluate(ev, out);
    if (r->parsed()) return run_report(rep, out);
    if (st->parsed()) return selftest::run(out).failed == 0 ? kExitOk : kExitRuntime;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout, std::cerr); }

}  // namespace sono
