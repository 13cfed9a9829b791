// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/ensemble.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sonoclass/rng.hpp"

namespace sono::model {

namespace {

const char* branch_name(bool detailed) { return detailed ? "detailed" : "shallow"; }

std::string stage_prefix(bool detailed, std::size_t i) {
  return std::string(branch_name(detailed)) + ".stage" + std::to_string(i);
}

void validate_branch(const BackboneSpec& spec, std::size_t h, std::size_t w, bool detailed) {
  const std::string branch = branch_name(detailed);
  if (spec.in_channels == 0) throw std::invalid_argument(branch + ": in_channels must be positive");
  if (spec.stages.empty()) throw std::invalid_argument(branch + ": backbone needs at least one stage");
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& s = spec.stages[i];
    const std::string where = branch + " stage " + std::to_string(i);
    if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) {
      throw std::invalid_argument(where + ": extents must be positive");
    }
    const std::size_t pad = s.kernel / 2;
    if (s.kernel > h + 2 * pad || s.kernel > w + 2 * pad) {
      throw std::invalid_argument(where + ": kernel exceeds " + std::to_string(h) + "×" + std::to_string(w) + " input");
    }
    h = (h + 2 * pad - s.kernel) / s.stride + 1;
    w = (w + 2 * pad - s.kernel) / s.stride + 1;
    if (s.pool) {
      h /= 2;
      w /= 2;
    }
    if (h == 0 || w == 0) throw std::invalid_argument(where + ": spatial extent collapses to zero");
  }
}

std::size_t scaled_extent(std::size_t extent, double scale) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(extent) * scale)));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

  std::uint64_t uint(std::size_t bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += bytes;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::kTruncated, "truncated array file " + path_.string());
    }
  }
  const std::string& buf_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

EnsembleConfig EnsembleConfig::desk_default(std::size_t classes) {
  EnsembleConfig c;
  c.classes = classes;
  for (std::size_t ch : {8, 16, 32}) c.shallow.stages.push_back({ch, 3, 2, false});
  for (std::size_t ch : {8, 16, 32, 64, 64}) c.detailed.stages.push_back({ch, 3, 2, false});
  return c;
}

void EnsembleConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("ensemble: need at least 2 classes");
  if (resize_mode == ResizeMode::kFixed) {
    if (shallow_h == 0 || shallow_w == 0 || detailed_h == 0 || detailed_w == 0) {
      throw std::invalid_argument("ensemble: branch input extents must be positive");
    }
    if (detailed_h * detailed_w <= shallow_h * shallow_w) {
      throw std::invalid_argument("ensemble: detailed input must have strictly more pixels than shallow input");
    }
    validate_branch(shallow, shallow_h, shallow_w, false);
    validate_branch(detailed, detailed_h, detailed_w, true);
  } else {
    if (!(shallow_scale > 0.0) || !(detailed_scale > shallow_scale)) {
      throw std::invalid_argument("ensemble: need 0 < shallow_scale < detailed_scale");
    }
    validate_branch(shallow, 1u << 20, 1u << 20, false);
    validate_branch(detailed, 1u << 20, 1u << 20, true);
  }
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == 0) throw std::invalid_argument("ensemble: hidden layer " + std::to_string(i) + " has zero width");
  }
}

nlohmann::json to_json(const EnsembleConfig& c) {
  const auto backbone = [](const BackboneSpec& b) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : b.stages) {
      stages.push_back({{"out_channels", s.out_channels}, {"kernel", s.kernel}, {"stride", s.stride}, {"pool", s.pool}});
    }
    return nlohmann::json{{"in_channels", b.in_channels}, {"stages", stages}};
  };
  return {
      {"shallow_input", {c.shallow_h, c.shallow_w}},
      {"detailed_input", {c.detailed_h, c.detailed_w}},
      {"shallow", backbone(c.shallow)},
      {"detailed", backbone(c.detailed)},
      {"classes", c.classes},
      {"hidden", c.hidden},
      {"resize_mode", c.resize_mode == ResizeMode::kFixed ? "fixed" : "scale"},
      {"shallow_scale", c.shallow_scale},
      {"detailed_scale", c.detailed_scale},
  };
}

EnsembleConfig ensemble_config_from_json(const nlohmann::json& j) {
  const auto backbone = [](const nlohmann::json& b) {
    BackboneSpec spec;
    spec.in_channels = b.at("in_channels").get<std::size_t>();
    for (const auto& s : b.at("stages")) {
      spec.stages.push_back({s.at("out_channels").get<std::size_t>(), s.at("kernel").get<std::size_t>(),
                             s.at("stride").get<std::size_t>(), s.at("pool").get<bool>()});
    }
    return spec;
  };
  EnsembleConfig c;
  c.shallow_h = j.at("shallow_input").at(0).get<std::size_t>();
  c.shallow_w = j.at("shallow_input").at(1).get<std::size_t>();
  c.detailed_h = j.at("detailed_input").at(0).get<std::size_t>();
  c.detailed_w = j.at("detailed_input").at(1).get<std::size_t>();
  c.shallow = backbone(j.at("shallow"));
  c.detailed = backbone(j.at("detailed"));
  c.classes = j.at("classes").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.resize_mode = j.at("resize_mode").get<std::string>() == "scale" ? ResizeMode::kScale : ResizeMode::kFixed;
  c.shallow_scale = j.at("shallow_scale").get<double>();
  c.detailed_scale = j.at("detailed_scale").get<double>();
  return c;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] = std::exp(logits[i] - m));
  for (double& v : p) v /= acc;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Ensemble::Ensemble(EnsembleConfig config, std::vector<Parameter> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

Ensemble Ensemble::build(const EnsembleConfig& config, std::uint64_t seed) {
  config.validate();
  SampleRng rng(seed);
  std::vector<Parameter> params;
  const auto uniform_tensor = [&](ad::Shape shape, std::size_t fan_in) {
    ad::Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.mutable_values()) v = rng.uniform(-bound, bound);
    return t;
  };
  for (bool detailed : {false, true}) {
    const auto& spec = detailed ? config.detailed : config.shallow;
    std::size_t in = spec.in_channels;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
      const auto& s = spec.stages[i];
      const std::string prefix = stage_prefix(detailed, i);
      params.push_back({prefix + ".weight", uniform_tensor({s.out_channels, in, s.kernel, s.kernel}, in * s.kernel * s.kernel)});
      params.push_back({prefix + ".bias", ad::Tensor(ad::Shape{s.out_channels})});
      in = s.out_channels;
    }
  }
  std::size_t width = config.fused_width();
  std::vector<std::size_t> layers = config.hidden;
  layers.push_back(config.classes);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "head.dense" + std::to_string(i);
    params.push_back({prefix + ".weight", uniform_tensor({layers[i], width}, width)});
    params.push_back({prefix + ".bias", ad::Tensor(ad::Shape{layers[i]})});
    width = layers[i];
  }
  return Ensemble(config, std::move(params));
}

std::vector<ad::Tensor> Ensemble::parameter_tensors() const {
  std::vector<ad::Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

const ad::Tensor& Ensemble::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw std::out_of_range("ensemble: no parameter named " + name);
}

ad::Tensor Ensemble::branch_input(std::span<const RasterImage> batch, bool detailed) const {
  if (batch.empty()) throw std::invalid_argument("ensemble: empty batch");
  const auto& spec = detailed ? config_.detailed : config_.shallow;
  std::size_t th = detailed ? config_.detailed_h : config_.shallow_h;
  std::size_t tw = detailed ? config_.detailed_w : config_.shallow_w;
  if (config_.resize_mode == ResizeMode::kScale) {
    const double s = detailed ? config_.detailed_scale : config_.shallow_scale;
    th = scaled_extent(batch[0].height, s);
    tw = scaled_extent(batch[0].width, s);
  }
  const std::size_t c = spec.in_channels;
  ad::Tensor t(ad::Shape{batch.size(), c, th, tw});
  t.set_requires_grad(false);
  auto v = t.mutable_values();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& img = batch[n];
    if (img.channels != c && img.channels != 1) {
      throw std::invalid_argument("ensemble: image has " + std::to_string(img.channels) + " channels, " +
                                  branch_name(detailed) + " branch expects " + std::to_string(c));
    }
    if (config_.resize_mode == ResizeMode::kScale && (img.height != batch[0].height || img.width != batch[0].width)) {
      throw std::invalid_argument("ensemble: scale mode needs equal-size images within a batch");
    }
    const RasterImage r = (img.height == th && img.width == tw) ? img : resize_bilinear(img, th, tw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t src_c = r.channels == 1 ? 0 : ch;
      double* dst = v.data() + (n * c + ch) * th * tw;
      for (std::size_t i = 0; i < th * tw; ++i) dst[i] = r.pixels[i * r.channels + src_c];
    }
  }
  return t;
}

ad::Tensor Ensemble::run_backbone(ad::Tape& tape, const ad::Tensor& x, bool detailed) const {
  const auto& spec = detailed ? config_.detailed : config_.shallow;
  ad::Tensor h = x;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& s = spec.stages[i];
    const std::string prefix = stage_prefix(detailed, i);
    h = ad::conv2d(tape, h, parameter(prefix + ".weight"), parameter(prefix + ".bias"),
                   static_cast<int>(s.stride), static_cast<int>(s.kernel / 2));
    h = ad::relu(tape, h);
    if (s.pool) h = ad::avg_pool2(tape, h);
  }
  return h;
}

ad::Tensor Ensemble::forward_tensors(ad::Tape& tape, const ad::Tensor& shallow_in,
                                     const ad::Tensor& detailed_in) const {
  const ad::Tensor fs = ad::global_average_pool(tape, run_backbone(tape, shallow_in, false));
  const ad::Tensor fd = ad::global_average_pool(tape, run_backbone(tape, detailed_in, true));
  ad::Tensor h = ad::concat_channels(tape, fs, fd);
  const std::size_t layers = config_.hidden.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string prefix = "head.dense" + std::to_string(i);
    h = ad::dense(tape, h, parameter(prefix + ".weight"), parameter(prefix + ".bias"));
    if (i + 1 < layers) h = ad::relu(tape, h);
  }
  return h;
}

ad::Tensor Ensemble::forward(ad::Tape& tape, std::span<const RasterImage> batch) const {
  return forward_tensors(tape, branch_input(batch, false), branch_input(batch, true));
}

std::vector<double> Ensemble::logits(const RasterImage& image) const {
  ad::Tape tape(false);
  const ad::Tensor out = forward(tape, std::span<const RasterImage>(&image, 1));
  return {out.values().begin(), out.values().end()};
}

Prediction Ensemble::predict(const RasterImage& image) const {
  const auto z = logits(image);
  Prediction p;
  p.probabilities = softmax(z);
  p.label = argmax(z);
  return p;
}

void write_array_file(const std::filesystem::path& path, const char (&magic)[5],
                      const std::vector<NamedArray>& arrays, Precision precision) {
  std::string out(magic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (std::size_t a = 0; a < arrays.size(); ++a) {
    const auto& arr = arrays[a];
    for (std::size_t b = 0; b < a; ++b) {
      if (arrays[b].name == arr.name) throw std::invalid_argument("array file: duplicate name " + arr.name);
    }
    if (arr.name.size() > 0xffff || arr.shape.size() > 0xff) throw std::invalid_argument("array file: name or rank too large");
    if (ad::shape_numel(arr.shape) != arr.data.size()) throw std::invalid_argument("array file: shape/data mismatch for " + arr.name);
    out.push_back(static_cast<char>(arr.name.size() & 0xff));
    out.push_back(static_cast<char>(arr.name.size() >> 8));
    out += arr.name;
    out.push_back(static_cast<char>(arr.shape.size()));
    for (auto e : arr.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : arr.data) {
      if (precision == Precision::kF32) {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        put_u64(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw CheckpointError(CheckpointError::Kind::kIo, "short write to " + path.string());
}

std::vector<NamedArray> read_array_file(const std::filesystem::path& path, const char (&magic)[5],
                                        Precision precision) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open " + path.string());
  const std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  Reader r(buf, path);
  // A short file that starts like the magic was cut off rather than foreign.
  if (buf.size() < 4 && buf.compare(0, buf.size(), magic, buf.size()) == 0) {
    throw CheckpointError(CheckpointError::Kind::kTruncated, "truncated array file " + path.string());
  }
  if (buf.size() < 4 || buf.compare(0, 4, magic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::kBadMagic, "bad magic in " + path.string());
  }
  r.bytes(4);
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::kBadVersion,
                          "unsupported version " + std::to_string(version) + " in " + path.string());
  }
  const auto count = r.uint(4);
  std::vector<NamedArray> arrays;
  for (std::uint64_t a = 0; a < count; ++a) {
    NamedArray arr;
    arr.name = r.bytes(r.uint(2));
    const auto rank = r.uint(1);
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      arr.shape.push_back(r.uint(4));
      numel *= arr.shape.back();
    }
    const std::size_t width = precision == Precision::kF32 ? 4 : 8;
    if (numel > buf.size() / width) {
      throw CheckpointError(CheckpointError::Kind::kTruncated, "truncated array " + arr.name + " in " + path.string());
    }
    arr.data.resize(numel);
    for (auto& v : arr.data) {
      v = precision == Precision::kF32
              ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4))))
              : std::bit_cast<double>(r.uint(8));
    }
    for (const auto& prev : arrays) {
      if (prev.name == arr.name) throw CheckpointError(CheckpointError::Kind::kMalformed, "duplicate array " + arr.name);
    }
    arrays.push_back(std::move(arr));
  }
  if (!r.done()) throw CheckpointError(CheckpointError::Kind::kMalformed, "trailing bytes in " + path.string());
  return arrays;
}

void save_checkpoint(const Ensemble& model, const std::filesystem::path& path,
                     const std::vector<NamedArray>& extras) {
  std::vector<NamedArray> arrays;
  const std::string meta = to_json(model.config()).dump();
  arrays.push_back({"meta.config", {meta.size()}, std::vector<double>(meta.begin(), meta.end())});
  for (const auto& p : model.parameters()) {
    arrays.push_back({p.name, p.value.shape(), {p.value.values().begin(), p.value.values().end()}});
  }
  arrays.insert(arrays.end(), extras.begin(), extras.end());
  write_array_file(path, kCheckpointMagic, arrays, Precision::kF32);
}

Ensemble load_checkpoint(const std::filesystem::path& path) {
  auto arrays = read_array_file(path, kCheckpointMagic, Precision::kF32);
  const auto meta = std::find_if(arrays.begin(), arrays.end(), [](const auto& a) { return a.name == "meta.config"; });
  if (meta == arrays.end()) throw CheckpointError(CheckpointError::Kind::kMalformed, "no meta.config in " + path.string());
  EnsembleConfig config;
  try {
    std::string text;
    for (double b : meta->data) text.push_back(static_cast<char>(static_cast<int>(b)));
    config = ensemble_config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kMalformed, "bad meta.config in " + path.string() + ": " + e.what());
  }
  // Shapes and names come from a fresh build; values from the file.
  Ensemble model = Ensemble::build(config, 0);
  for (auto& p : model.parameters()) {
    const auto it = std::find_if(arrays.begin(), arrays.end(), [&](const auto& a) { return a.name == p.name; });
    if (it == arrays.end()) throw CheckpointError(CheckpointError::Kind::kMalformed, "missing parameter " + p.name);
    if (it->shape != p.value.shape()) {
      throw CheckpointError(CheckpointError::Kind::kMalformed, "shape mismatch for " + p.name + ": file " +
                                                                    ad::shape_str(it->shape) + ", config " +
                                                                    ad::shape_str(p.value.shape()));
    }
    std::copy(it->data.begin(), it->data.end(), p.value.mutable_values().begin());
  }
  return model;
}

}  // namespace sono::model
