// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat `key = value` text file. `[section]` headers
// prefix the keys that follow ("[loss]\nkind = focal" is "loss.kind");
// `#` starts a comment. Every key is checked against a fixed schema.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sonoclass/augment.hpp"
#include "sonoclass/ensemble.hpp"
#include "sonoclass/losses.hpp"

namespace sono {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class RunConfig {
 public:
  // All schema defaults.
  RunConfig();

  static RunConfig parse(std::string_view text, std::string_view origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  // "key=value"; the key must be in the schema and the value must parse.
  void set(std::string_view key, std::string_view value);
  void apply_override(std::string_view assignment);

  const std::string& raw(std::string_view key) const;
  std::string get_string(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::vector<double> get_doubles(std::string_view key) const;
  std::vector<std::size_t> get_sizes(std::string_view key) const;

  // Sorted "key = value" lines, one per schema key.
  std::string echo() const;

  // Typed views. Each validates its section and throws ConfigError naming
  // the key.
  std::string run_name() const;
  std::uint64_t seed() const;
  std::filesystem::path manifest() const;
  std::array<double, 3> split_ratios() const;
  augment::AugmentationConfig augmentation() const;
  bool augmentation_enabled() const;
  // classes = 0 takes model.classes.
  model::EnsembleConfig ensemble(std::size_t classes) const;
  losses::LossConfig loss(std::vector<std::size_t> class_counts) const;
  AdamOptions adam() const;
  std::size_t epochs() const;
  std::size_t batch_size() const;
  bool parallel_batches() const;

  // Every typed view at once; run before any work starts.
  void validate(std::size_t classes) const;

  // Key → description, for --help output.
  static std::vector<std::pair<std::string, std::string>> schema_help();

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace sono
