// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "sonoclass/csv.hpp"
#include "sonoclass/log.hpp"
#include "sonoclass/rng.hpp"

namespace sono::data {

namespace fs = std::filesystem;

fs::path DatasetManifest::resolve(const ManifestEntry& entry) const {
  const fs::path p(entry.path);
  return p.is_absolute() ? p : root / p;
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.image_id).second) {
      throw std::invalid_argument("duplicate image_id '" + e.image_id + "'");
    }
    if (e.label >= classes()) {
      throw std::invalid_argument("image '" + e.image_id + "' has label " + std::to_string(e.label) +
                                  " but only " + std::to_string(classes()) + " classes");
    }
  }
}

DatasetManifest read_manifest(const fs::path& path) {
  const auto rows = csv::read_file(path);
  csv::expect_header(rows, {"image_id", "path", "label"}, path);
  DatasetManifest m;
  m.root = path.parent_path();
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
      throw std::runtime_error(path.string() + ": bad label '" + r[2] + "' on row " +
                               std::to_string(i + 1));
    }
    max_label = std::max(max_label, label);
    m.entries.push_back({r[0], r[1], label});
  }

  const fs::path sidecar = m.root / "classes.txt";
  if (fs::exists(sidecar)) {
    std::ifstream in(sidecar);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) m.class_names.push_back(line);
    }
  } else {
    const std::size_t k = m.entries.empty() ? 0 : max_label + 1;
    for (std::size_t j = 0; j < k; ++j) m.class_names.push_back("class" + std::to_string(j));
  }
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "image_id,path,label\n";
  for (const auto& e : manifest.entries) {
    out << csv::join({e.image_id, e.path, std::to_string(e.label)}) << '\n';
  }
  std::ofstream names(path.parent_path() / "classes.txt", std::ios::binary);
  for (const auto& n : manifest.class_names) names << n << '\n';
  if (!out || !names) throw std::runtime_error("write failed for " + path.string());
}

std::vector<std::size_t> class_counts(const DatasetManifest& manifest) {
  std::vector<std::size_t> counts(manifest.classes(), 0);
  for (const auto& e : manifest.entries) {
    if (e.label >= counts.size()) counts.resize(e.label + 1, 0);
    ++counts[e.label];
  }
  return counts;
}

RasterImage load_image(const DatasetManifest& manifest, const ManifestEntry& entry) {
  return decode_image(manifest.resolve(entry));
}

std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || !(sum > 0.0)) throw std::invalid_argument("apportion: weights must sum > 0");
  std::vector<std::size_t> out(weights.size());
  std::vector<double> rem(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[order[i % order.size()]];
  return out;
}

Split stratified_split(const DatasetManifest& manifest, const std::array<double, 3>& ratios,
                       std::uint64_t seed) {
  for (const double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must sum to 1");
  }

  std::vector<std::vector<std::size_t>> by_class(manifest.classes());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    by_class.at(manifest.entries[i].label).push_back(i);
  }

  // 0 = train, 1 = val, 2 = test, per manifest index.
  std::vector<int> assign(manifest.entries.size(), 0);
  const std::vector<double> w(ratios.begin(), ratios.end());
  for (std::size_t j = 0; j < by_class.size(); ++j) {
    auto& idx = by_class[j];
    if (idx.empty()) continue;
    if (idx.size() < ratios.size()) {
      warn("class '" + manifest.class_names[j] + "' has " + std::to_string(idx.size()) +
           " items, fewer than 3 splits; all go to train");
      continue;
    }
    SampleRng rng(mix_key(seed, j));
    rng.shuffle(idx);
    const auto sizes = apportion(w, idx.size());
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t n = 0; n < sizes[static_cast<std::size_t>(s)]; ++n) assign[idx[pos++]] = s;
    }
  }

  Split out;
  for (DatasetManifest* m : {&out.train, &out.val, &out.test}) {
    m->class_names = manifest.class_names;
    m->root = manifest.root;
  }
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    DatasetManifest& m = assign[i] == 0 ? out.train : assign[i] == 1 ? out.val : out.test;
    m.entries.push_back(manifest.entries[i]);
  }
  return out;
}

const std::vector<std::string>& table1_class_names() {
  static const std::vector<std::string> names = {
      "Other",
      "Head (PPP, quadrigeminal plate)",
      "Four-chamber heart section",
      "Section through three vessels",
      "Kidneys",
      "Stomach",
      "Head (sagittal)",
      "Head (cerebellum)",
      "Umbilical cord (placenta)",
      "Spine",
      "Femur",
      "Nasolabial triangle",
      "Humerus",
      "Umbilical cord (anterior abdominal wall)",
      "Cervix",
      "Bladder (CDC)",
  };
  return names;
}

const std::vector<std::size_t>& table1_counts() {
  static const std::vector<std::size_t> counts = {1798, 534, 181, 272, 294, 272, 276, 260,
                                                  249,  192, 208, 170, 173, 149, 143, 138};
  return counts;
}

ShapeKind SynthSpec::shape_of(std::size_t label) {
  if (label == 0) return ShapeKind::kTexture;
  return static_cast<ShapeKind>(1 + (label - 1) % 8);
}

void SynthSpec::validate() const {
  if (counts.size() < 2) throw std::invalid_argument("synth spec needs at least 2 classes");
  if (class_names.size() != counts.size()) {
    throw std::invalid_argument("synth spec: class_names and counts differ in length");
  }
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0) throw std::invalid_argument("synth spec: class " + std::to_string(j) + " has zero images");
  }
  if (height < 8 || width < 8) throw std::invalid_argument("synth spec: image must be at least 8×8");
  if (!(speckle >= 0.0 && speckle <= 1.0)) throw std::invalid_argument("synth spec: speckle must be in [0,1]");
}

namespace {

// Indices into the table, ordered by descending count (stable), at evenly
// spaced ranks.
std::vector<std::size_t> table1_picks(std::size_t classes) {
  const auto& counts = table1_counts();
  if (classes < 2 || classes > counts.size()) {
    throw std::invalid_argument("table1 profile supports 2.." + std::to_string(counts.size()) + " classes");
  }
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  std::vector<std::size_t> picks;
  const std::size_t last = counts.size() - 1;
  for (std::size_t i = 0; i < classes; ++i) {
    picks.push_back(order[(i * last * 2 + (classes - 1)) / (2 * (classes - 1))]);
  }
  return picks;
}

}  // namespace

SynthSpec table1_profile(std::size_t classes, std::size_t total, std::uint64_t seed) {
  const auto picks = table1_picks(classes);
  SynthSpec spec;
  spec.seed = seed;
  std::vector<double> w;
  for (const auto p : picks) {
    spec.class_names.push_back(table1_class_names()[p]);
    w.push_back(static_cast<double>(table1_counts()[p]));
  }
  if (total < classes) throw std::invalid_argument("table1 profile: total below class count");
  spec.counts = apportion(w, total);
  for (auto& c : spec.counts) c = std::max<std::size_t>(c, 1);
  return spec;
}

SynthSpec balanced_profile(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw std::invalid_argument("balanced profile: per_class must be positive");
  SynthSpec spec;
  spec.seed = seed;
  for (const auto p : table1_picks(classes)) spec.class_names.push_back(table1_class_names()[p]);
  spec.counts.assign(classes, per_class);
  return spec;
}

std::string synth_image_id(std::size_t label, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%02zu_%05zu", label, index);
  return buf;
}

RasterImage synth_render(const SynthSpec& spec, std::size_t label, std::size_t index) {
  SampleRng rng = SampleRng::keyed(spec.seed, synth_image_id(label, index), 0);
  const std::size_t h = spec.height, w = spec.width;
  const double side = static_cast<double>(std::min(h, w));
  const ShapeKind kind = SynthSpec::shape_of(label);

  // Smooth background: a few random plane waves around a dark base level.
  const double base = rng.uniform(0.18, 0.32);
  const int waves = kind == ShapeKind::kTexture ? 6 : 3;
  const double wave_amp = kind == ShapeKind::kTexture ? 0.07 : 0.04;
  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> field;
  for (int i = 0; i < waves; ++i) {
    field.push_back({rng.uniform(-4.0, 4.0) / static_cast<double>(w), rng.uniform(-4.0, 4.0) / static_cast<double>(h),
                     rng.uniform(0.0, 2.0 * std::numbers::pi), wave_amp * rng.uniform(0.5, 1.0)});
  }

  const bool large = ((label == 0 ? 0 : label - 1) / 8) % 2 == 0;
  const double s = side * (large ? rng.uniform(0.26, 0.34) : rng.uniform(0.14, 0.20));
  const double cx = static_cast<double>(w) * (0.5 + rng.uniform(-0.12, 0.12));
  const double cy = static_cast<double>(h) * (0.5 + rng.uniform(-0.12, 0.12));
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double fg = rng.uniform(0.65, 0.85);
  const double cb = 0.5 + rng.uniform(-0.03, 0.03);
  const double cr = 0.5 + rng.uniform(-0.03, 0.03);

  auto inside = [&](double u, double v) {
    const double r = std::hypot(u, v);
    switch (kind) {
      case ShapeKind::kTexture: return false;
      case ShapeKind::kEllipse: return (u * u) / (s * s) + (v * v) / (0.36 * s * s) <= 1.0;
      case ShapeKind::kRectangle: return std::abs(u) <= s && std::abs(v) <= 0.6 * s;
      case ShapeKind::kCross:
        return (std::abs(u) <= s && std::abs(v) <= 0.2 * s) || (std::abs(v) <= s && std::abs(u) <= 0.2 * s);
      case ShapeKind::kRing: return r >= 0.6 * s && r <= s;
      case ShapeKind::kBar: return std::abs(u) <= 1.3 * s && std::abs(v) <= 0.15 * s;
      case ShapeKind::kTwoBlob:
        return std::hypot(u - 0.7 * s, v) <= 0.45 * s || std::hypot(u + 0.7 * s, v) <= 0.45 * s;
      case ShapeKind::kArc: return r >= 0.7 * s && r <= s && v >= 0.0;
      case ShapeKind::kSpeckleDisc: return r <= s;
    }
    return false;
  };

  RasterImage ycc(h, w, 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double lum = base;
      for (const auto& f : field) {
        lum += f.amp * std::sin(2.0 * std::numbers::pi * (f.fx * px + f.fy * py) + f.phase);
      }
      const double dx = px - cx, dy = py - cy;
      const double u = ct * dx + st * dy, v = -st * dx + ct * dy;
      if (inside(u, v)) {
        // The speckle disc is a random half of its pixels lit.
        const bool lit = kind != ShapeKind::kSpeckleDisc || rng.bernoulli(0.5);
        if (lit) lum = fg;
      }
      ycc.at(y, x, 0) = std::clamp(lum, 0.0, 1.0);
      ycc.at(y, x, 1) = cb;
      ycc.at(y, x, 2) = cr;
    }
  }

  RasterImage rgb = ycbcr_to_rgb(ycc);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double g = 1.0 + spec.speckle * rng.uniform(-1.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) rgb.at(y, x, c) = std::clamp(rgb.at(y, x, c) * g, 0.0, 1.0);
    }
  }
  return rgb;
}

std::string class_dir_name(const std::string& class_name) {
  std::string out;
  for (const char ch : class_name) {
    const bool keep = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-';
    out += keep ? ch : '_';
  }
  return out;
}

DatasetManifest synth_generate(const SynthSpec& spec, const fs::path& root) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("cannot create " + root.string() + ": " + ec.message());

  DatasetManifest m;
  m.class_names = spec.class_names;
  m.root = root;
  for (std::size_t j = 0; j < spec.counts.size(); ++j) {
    const std::string dir = class_dir_name(spec.class_names[j]);
    fs::create_directories(root / dir, ec);
    if (ec) throw std::runtime_error("cannot create " + (root / dir).string() + ": " + ec.message());
    for (std::size_t i = 0; i < spec.counts[j]; ++i) {
      const std::string id = synth_image_id(j, i);
      const std::string rel = dir + "/" + id + ".ppm";
      encode_image(synth_render(spec, j, i), root / rel);
      m.entries.push_back({id, rel, j});
    }
  }
  write_manifest(m, root / "manifest.csv");
  return m;
}

}  // namespace sono::data
