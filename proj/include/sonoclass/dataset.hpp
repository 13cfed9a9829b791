// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image manifests, stratified splitting and the synthetic imbalanced
// dataset generator.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sonoclass/image.hpp"

namespace sono::data {

struct ManifestEntry {
  std::string image_id;
  std::string path;  // relative paths resolve against DatasetManifest::root
  std::size_t label = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  std::filesystem::path root;

  std::size_t classes() const { return class_names.size(); }
  std::size_t size() const { return entries.size(); }
  std::filesystem::path resolve(const ManifestEntry& entry) const;

  // Throws std::invalid_argument on duplicate ids or labels >= classes().
  void validate() const;
};

// `manifest.csv` with header image_id,path,label. Class names come from a
// `classes.txt` sidecar (one per line) when present, else "class<j>".
DatasetManifest read_manifest(const std::filesystem::path& path);
// Writes the CSV and the sidecar next to it.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

std::vector<std::size_t> class_counts(const DatasetManifest& manifest);

RasterImage load_image(const DatasetManifest& manifest, const ManifestEntry& entry);

struct Split {
  DatasetManifest train, val, test;
};

// Per class, split sizes are the largest-remainder rounding of n·ratio, so
// each differs from the exact proportion by less than one item. A class
// with fewer items than splits goes entirely to train, with a warning.
// Entries keep their manifest order inside each split.
Split stratified_split(const DatasetManifest& manifest, const std::array<double, 3>& ratios,
                       std::uint64_t seed);

// Largest-remainder apportionment of `total` over `weights` (ties go to the
// lower index).
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total);

const std::vector<std::string>& table1_class_names();
const std::vector<std::size_t>& table1_counts();

enum class ShapeKind { kTexture, kEllipse, kRectangle, kCross, kRing, kBar, kTwoBlob, kArc, kSpeckleDisc };

struct SynthSpec {
  std::vector<std::string> class_names;
  std::vector<std::size_t> counts;
  std::size_t height = 64;
  std::size_t width = 64;
  double speckle = 0.25;  // multiplicative amplitude a in p·(1 + a·u)
  std::uint64_t seed = 1;

  // Class 0 is structureless texture; later classes cycle through the
  // shape kinds, alternating a large and a small variant on each lap.
  static ShapeKind shape_of(std::size_t label);
  void validate() const;
};

// Long-tailed profile: K classes at evenly spaced ranks of the descending
// reference counts (K = 16 takes all of them), rescaled to `total` images.
SynthSpec table1_profile(std::size_t classes, std::size_t total, std::uint64_t seed);
// Every class gets `per_class` images; names follow table1_profile(K).
SynthSpec balanced_profile(std::size_t classes, std::size_t per_class, std::uint64_t seed);

std::string synth_image_id(std::size_t label, std::size_t index);
// Pure function of (spec, label, index).
RasterImage synth_render(const SynthSpec& spec, std::size_t label, std::size_t index);

// Writes <root>/<class dir>/<image_id>.ppm, <root>/manifest.csv and
// <root>/classes.txt. Class directories are the names with every character
// outside [A-Za-z0-9-] replaced by '_'.
DatasetManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& root);

std::string class_dir_name(const std::string& class_name);

}  // namespace sono::data
