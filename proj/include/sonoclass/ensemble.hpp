// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-scale ensemble classifier. The input image is resized twice; a shallow
// backbone sees the low-resolution copy and a deeper backbone the
// high-resolution one. Each feature map is globally average-pooled, the two
// vectors are concatenated, and dense layers produce K logits.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonoclass/image.hpp"
#include "sonoclass/tensor.hpp"

namespace sono::model {

struct StageSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool pool = false;  // 2×2 average pool after the activation

  bool operator==(const StageSpec&) const = default;
};

struct BackboneSpec {
  std::size_t in_channels = 3;
  std::vector<StageSpec> stages;

  std::size_t out_channels() const { return stages.empty() ? 0 : stages.back().out_channels; }
  bool operator==(const BackboneSpec&) const = default;
};

enum class ResizeMode { kFixed, kScale };

struct EnsembleConfig {
  std::size_t shallow_h = 32, shallow_w = 32;
  std::size_t detailed_h = 64, detailed_w = 64;
  BackboneSpec shallow;
  BackboneSpec detailed;
  std::size_t classes = 2;
  std::vector<std::size_t> hidden;  // classifier hidden widths, may be empty
  ResizeMode resize_mode = ResizeMode::kFixed;
  // Used when resize_mode == kScale: branch input = round(source extent · scale).
  double shallow_scale = 0.5;
  double detailed_scale = 1.0;

  // 32×32 shallow branch (8→16→32), 64×64 detailed branch (8→16→32→64→64),
  // every stage a stride-2 3×3 convolution, single dense head.
  static EnsembleConfig desk_default(std::size_t classes);

  std::size_t fused_width() const { return shallow.out_channels() + detailed.out_channels(); }

  // Throws std::invalid_argument naming the offending branch and stage.
  void validate() const;

  bool operator==(const EnsembleConfig&) const = default;
};

nlohmann::json to_json(const EnsembleConfig& config);
EnsembleConfig ensemble_config_from_json(const nlohmann::json& j);

struct Parameter {
  std::string name;
  ad::Tensor value;
};

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

std::vector<double> softmax(std::span<const double> logits);
// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

class Ensemble {
 public:
  Ensemble(EnsembleConfig config, std::vector<Parameter> params);

  // Fan-in uniform weights (bound sqrt(6 / fan_in)) from a seeded stream,
  // zero biases.
  static Ensemble build(const EnsembleConfig& config, std::uint64_t seed);

  const EnsembleConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<ad::Tensor> parameter_tensors() const;
  const ad::Tensor& parameter(const std::string& name) const;

  // N×K logits for a batch of images sharing one source size (scale mode) or
  // any sizes (fixed mode).
  ad::Tensor forward(ad::Tape& tape, std::span<const RasterImage> batch) const;

  // Branch inputs as tensors, exposed for inspection and tests.
  ad::Tensor branch_input(std::span<const RasterImage> batch, bool detailed) const;
  ad::Tensor forward_tensors(ad::Tape& tape, const ad::Tensor& shallow_in,
                             const ad::Tensor& detailed_in) const;

  std::vector<double> logits(const RasterImage& image) const;
  Prediction predict(const RasterImage& image) const;

 private:
  ad::Tensor run_backbone(ad::Tape& tape, const ad::Tensor& x, bool detailed) const;

  EnsembleConfig config_;
  std::vector<Parameter> params_;
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kTruncated, kMalformed };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> data;
};

enum class Precision { kF32, kF64 };

// Layout: 4-byte magic, u32 version, u32 array count, then per array
// u16 name length, name bytes, u8 rank, u32 extents, row-major data; all
// little-endian. "ENSM" files hold f32 data, "ENST" files f64.
void write_array_file(const std::filesystem::path& path, const char (&magic)[5],
                      const std::vector<NamedArray>& arrays, Precision precision);
std::vector<NamedArray> read_array_file(const std::filesystem::path& path, const char (&magic)[5],
                                        Precision precision);

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[5] = "ENSM";
inline constexpr char kTrainStateMagic[5] = "ENST";

// Parameters plus a "meta.config" array carrying the config JSON bytes.
void save_checkpoint(const Ensemble& model, const std::filesystem::path& path,
                     const std::vector<NamedArray>& extras = {});
Ensemble load_checkpoint(const std::filesystem::path& path);

}  // namespace sono::model
