// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sono {

namespace {

enum class Type { kString, kInt, kDouble, kBool, kDoubles, kSizes, kExtent };

struct Key {
  const char* name;
  Type type;
  const char* fallback;
  const char* help;
};

// clang-format off
constexpr Key kSchema[] = {
    {"run.name", Type::kString, "run", "run directory name under the run root"},
    {"run.seed", Type::kInt, "1", "global seed for splits, init, shuffling and augmentation"},
    {"data.manifest", Type::kString, "", "manifest.csv to train on"},
    {"data.split", Type::kDoubles, "0.7,0.15,0.15", "train,val,test ratios"},
    {"data.test_manifest", Type::kString, "", "separate held-out manifest; replaces the test split"},
    {"augment.enabled", Type::kBool, "true", "apply augmentation to training samples"},
    {"augment.gamma", Type::kDoubles, "0.7,1.5", "gamma exponent range"},
    {"augment.crop_scale", Type::kDoubles, "0.7,1.0", "crop area fraction range"},
    {"augment.crop_aspect", Type::kDoubles, "0.9,1.1", "crop aspect (w/h) range"},
    {"augment.flip_h_prob", Type::kDouble, "0.5", "horizontal flip probability"},
    {"augment.flip_v_prob", Type::kDouble, "0.2", "vertical flip probability"},
    {"augment.jitter_prob", Type::kDouble, "1.0", "color jitter probability"},
    {"augment.brightness", Type::kDoubles, "0.8,1.2", "brightness factor range"},
    {"augment.contrast", Type::kDoubles, "0.8,1.2", "contrast factor range"},
    {"augment.saturation", Type::kDoubles, "0.8,1.2", "saturation factor range"},
    {"augment.hue", Type::kDoubles, "-0.05,0.05", "hue shift range in turns"},
    {"augment.grayscale_prob", Type::kDouble, "0.1", "grayscale probability"},
    {"augment.blur_prob", Type::kDouble, "0.3", "gaussian blur probability"},
    {"augment.blur_sigma", Type::kDoubles, "0.1,1.5", "blur sigma range"},
    {"augment.translate_prob", Type::kDouble, "1.0", "translation probability"},
    {"augment.translate_fraction", Type::kDouble, "0.1", "max shift as a fraction of each target extent"},
    {"augment.target", Type::kExtent, "64x64", "augmented image size HxW"},
    {"model.classes", Type::kInt, "0", "class count; 0 takes it from the manifest"},
    {"model.shallow_input", Type::kExtent, "32x32", "shallow branch input HxW"},
    {"model.detailed_input", Type::kExtent, "64x64", "detailed branch input HxW"},
    {"model.backbone.shallow", Type::kSizes, "8,16,32", "shallow stage widths"},
    {"model.backbone.detailed", Type::kSizes, "8,16,32,64,64", "detailed stage widths"},
    {"model.backbone.kernel", Type::kInt, "3", "conv kernel size for every stage"},
    {"model.backbone.stride", Type::kInt, "2", "conv stride for every stage"},
    {"model.backbone.pool", Type::kBool, "false", "2x2 average pool after every stage"},
    {"model.hidden", Type::kSizes, "", "classifier hidden widths"},
    {"model.resize_mode", Type::kString, "fixed", "fixed or scale"},
    {"model.shallow_scale", Type::kDouble, "0.5", "shallow input scale in scale mode"},
    {"model.detailed_scale", Type::kDouble, "1.0", "detailed input scale in scale mode"},
    {"loss.kind", Type::kString, "ce", "ce, ce_ls, focal, ldam or ldam_focal"},
    {"loss.ls_epsilon", Type::kDouble, "0.1", "label smoothing epsilon"},
    {"loss.focal_gamma", Type::kDouble, "2.0", "focal gamma"},
    {"loss.focal_alpha", Type::kDoubles, "", "per-class focal weights; empty means all ones"},
    {"loss.ldam_max_margin", Type::kDouble, "0.5", "largest LDAM margin"},
    {"loss.ldam_scale", Type::kDouble, "30.0", "LDAM logit scale"},
    {"loss.mix_alpha", Type::kDouble, "1.0", "focal weight in ldam_focal"},
    {"loss.mix_beta", Type::kDouble, "1.0", "LDAM weight in ldam_focal"},
    {"optim.epochs", Type::kInt, "30", "training epochs"},
    {"optim.batch_size", Type::kInt, "32", "mini-batch size"},
    {"optim.learning_rate", Type::kDouble, "0.001", "Adam learning rate"},
    {"optim.beta1", Type::kDouble, "0.9", "Adam beta1"},
    {"optim.beta2", Type::kDouble, "0.999", "Adam beta2"},
    {"optim.eps", Type::kDouble, "1e-08", "Adam epsilon"},
    {"optim.parallel_batches", Type::kBool, "false", "augment batch samples in parallel"},
    {"optim.resume", Type::kBool, "false", "continue from the run's saved train state"},
    {"eval.formats", Type::kString, "json,csv,markdown", "report formats written after training"},
    {"eval.named_class", Type::kInt, "-1", "class shown in the summary row; -1 picks the rarest"},
    {"eval.architecture", Type::kString, "shallow+detailed", "architecture label for the summary row"},
};
// clang-format on

const Key* find_key(std::string_view name) {
  for (const auto& k : kSchema) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_int(std::string_view s, std::int64_t& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size() && !s.empty();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  in >> out;
  return !in.fail() && in.peek() == std::char_traits<char>::eof() && std::isfinite(out);
}

bool parse_bool(std::string_view s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
  return false;
}

void check_value(const Key& key, const std::string& value) {
  bool ok = true;
  switch (key.type) {
    case Type::kString:
      break;
    case Type::kInt: {
      std::int64_t v;
      ok = parse_int(value, v);
      break;
    }
    case Type::kDouble: {
      double v;
      ok = parse_double(value, v);
      break;
    }
    case Type::kBool: {
      bool v;
      ok = parse_bool(value, v);
      break;
    }
    case Type::kDoubles:
      for (const auto& p : split(value, ',')) {
        double v;
        ok = ok && parse_double(p, v);
      }
      break;
    case Type::kSizes:
      for (const auto& p : split(value, ',')) {
        std::int64_t v;
        ok = ok && parse_int(p, v) && v > 0;
      }
      break;
    case Type::kExtent: {
      const auto parts = split(value, 'x');
      std::int64_t v;
      ok = parts.size() == 2 && parse_int(parts[0], v) && v > 0 && parse_int(parts[1], v) && v > 0;
      break;
    }
  }
  if (!ok) throw ConfigError("config key '" + std::string(key.name) + "': cannot parse '" + value + "'");
}

std::array<std::size_t, 2> extent(const RunConfig& c, std::string_view key) {
  const auto parts = split(c.raw(key), 'x');
  return {std::stoul(parts[0]), std::stoul(parts[1])};
}

augment::Range range(const RunConfig& c, std::string_view key) {
  const auto v = c.get_doubles(key);
  if (v.size() != 2) throw ConfigError("config key '" + std::string(key) + "': expected lo,hi");
  return {v[0], v[1]};
}

template <typename F>
auto rethrow_as_config(std::string_view section, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kSchema) values_.emplace(k.name, k.fallback);
}

RunConfig RunConfig::parse(std::string_view text, std::string_view origin) {
  RunConfig c;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto where = std::string(origin) + ":" + std::to_string(number) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      c.set(full, trim(std::string_view(t).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + std::string(key) + "'");
  const std::string v = trim(value);
  check_value(*k, v);
  values_[k->name] = v;
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& RunConfig::raw(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::string RunConfig::get_string(std::string_view key) const { return raw(key); }

std::int64_t RunConfig::get_int(std::string_view key) const {
  std::int64_t v = 0;
  parse_int(raw(key), v);
  return v;
}

double RunConfig::get_double(std::string_view key) const {
  double v = 0.0;
  parse_double(raw(key), v);
  return v;
}

bool RunConfig::get_bool(std::string_view key) const {
  bool v = false;
  parse_bool(raw(key), v);
  return v;
}

std::vector<double> RunConfig::get_doubles(std::string_view key) const {
  std::vector<double> out;
  for (const auto& p : split(raw(key), ',')) {
    double v = 0.0;
    parse_double(p, v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::size_t> RunConfig::get_sizes(std::string_view key) const {
  std::vector<std::size_t> out;
  for (const auto& p : split(raw(key), ',')) out.push_back(std::stoul(p));
  return out;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::run_name() const {
  const auto& n = raw("run.name");
  if (n.empty() || n.find_first_of("/\\") != std::string::npos || n == "." || n == "..") {
    throw ConfigError("run.name must be a plain directory name");
  }
  return n;
}

std::uint64_t RunConfig::seed() const {
  const auto s = get_int("run.seed");
  if (s < 0) throw ConfigError("run.seed must be nonnegative");
  return static_cast<std::uint64_t>(s);
}

std::filesystem::path RunConfig::manifest() const { return raw("data.manifest"); }

std::array<double, 3> RunConfig::split_ratios() const {
  const auto v = get_doubles("data.split");
  if (v.size() != 3) throw ConfigError("data.split: expected train,val,test");
  if (v[0] <= 0.0 || v[1] <= 0.0 || v[2] <= 0.0 || std::abs(v[0] + v[1] + v[2] - 1.0) > 1e-9) {
    throw ConfigError("data.split: ratios must be positive and sum to 1");
  }
  return {v[0], v[1], v[2]};
}

augment::AugmentationConfig RunConfig::augmentation() const {
  const auto t = extent(*this, "augment.target");
  augment::AugmentationConfig a = augment::AugmentationConfig::for_target(t[0], t[1]);
  a.gamma = range(*this, "augment.gamma");
  a.crop_scale = range(*this, "augment.crop_scale");
  a.crop_aspect = range(*this, "augment.crop_aspect");
  a.flip_h_prob = get_double("augment.flip_h_prob");
  a.flip_v_prob = get_double("augment.flip_v_prob");
  a.jitter_prob = get_double("augment.jitter_prob");
  a.brightness = range(*this, "augment.brightness");
  a.contrast = range(*this, "augment.contrast");
  a.saturation = range(*this, "augment.saturation");
  a.hue = range(*this, "augment.hue");
  a.grayscale_prob = get_double("augment.grayscale_prob");
  a.blur_prob = get_double("augment.blur_prob");
  a.blur_sigma = range(*this, "augment.blur_sigma");
  a.translate_prob = get_double("augment.translate_prob");
  const double frac = get_double("augment.translate_fraction");
  if (!(frac >= 0.0 && frac <= 1.0)) throw ConfigError("augment.translate_fraction must be in [0,1]");
  a.translate_max_x = static_cast<std::size_t>(std::floor(frac * static_cast<double>(t[1])));
  a.translate_max_y = static_cast<std::size_t>(std::floor(frac * static_cast<double>(t[0])));
  rethrow_as_config("augment", [&] { a.validate(); });
  return a;
}

bool RunConfig::augmentation_enabled() const { return get_bool("augment.enabled"); }

model::EnsembleConfig RunConfig::ensemble(std::size_t classes) const {
  model::EnsembleConfig m;
  const auto k = get_int("model.classes");
  if (k < 0) throw ConfigError("model.classes must be nonnegative");
  m.classes = classes ? classes : static_cast<std::size_t>(k);
  if (k > 0 && classes && static_cast<std::size_t>(k) != classes) {
    throw ConfigError("model.classes = " + std::to_string(k) + " but the data has " + std::to_string(classes));
  }
  const auto s = extent(*this, "model.shallow_input");
  const auto d = extent(*this, "model.detailed_input");
  m.shallow_h = s[0], m.shallow_w = s[1];
  m.detailed_h = d[0], m.detailed_w = d[1];
  const auto kernel = get_int("model.backbone.kernel");
  const auto stride = get_int("model.backbone.stride");
  if (kernel < 1 || stride < 1) throw ConfigError("model.backbone.kernel and stride must be positive");
  const bool pool = get_bool("model.backbone.pool");
  for (const auto w : get_sizes("model.backbone.shallow")) {
    m.shallow.stages.push_back({w, static_cast<std::size_t>(kernel), static_cast<std::size_t>(stride), pool});
  }
  for (const auto w : get_sizes("model.backbone.detailed")) {
    m.detailed.stages.push_back({w, static_cast<std::size_t>(kernel), static_cast<std::size_t>(stride), pool});
  }
  m.hidden = get_sizes("model.hidden");
  const auto& mode = raw("model.resize_mode");
  if (mode == "fixed") {
    m.resize_mode = model::ResizeMode::kFixed;
  } else if (mode == "scale") {
    m.resize_mode = model::ResizeMode::kScale;
  } else {
    throw ConfigError("model.resize_mode must be fixed or scale");
  }
  m.shallow_scale = get_double("model.shallow_scale");
  m.detailed_scale = get_double("model.detailed_scale");
  rethrow_as_config("model", [&] { m.validate(); });
  return m;
}

losses::LossConfig RunConfig::loss(std::vector<std::size_t> class_counts) const {
  losses::LossConfig l;
  rethrow_as_config("loss.kind", [&] { l.kind = losses::parse_loss_kind(raw("loss.kind")); });
  l.ls_epsilon = get_double("loss.ls_epsilon");
  l.focal_gamma = get_double("loss.focal_gamma");
  l.focal_alpha = get_doubles("loss.focal_alpha");
  l.ldam_max_margin = get_double("loss.ldam_max_margin");
  l.ldam_scale = get_double("loss.ldam_scale");
  l.mix_alpha = get_double("loss.mix_alpha");
  l.mix_beta = get_double("loss.mix_beta");
  const std::size_t k = class_counts.size();
  l.class_counts = std::move(class_counts);
  rethrow_as_config("loss", [&] { losses::validate(l, k); });
  return l;
}

AdamOptions RunConfig::adam() const {
  AdamOptions a{get_double("optim.learning_rate"), get_double("optim.beta1"), get_double("optim.beta2"),
                get_double("optim.eps")};
  if (!(a.learning_rate > 0.0)) throw ConfigError("optim.learning_rate must be positive");
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0)) {
    throw ConfigError("optim.beta1 and optim.beta2 must be in [0,1)");
  }
  if (!(a.eps > 0.0)) throw ConfigError("optim.eps must be positive");
  return a;
}

std::size_t RunConfig::epochs() const {
  const auto e = get_int("optim.epochs");
  if (e < 1) throw ConfigError("optim.epochs must be at least 1");
  return static_cast<std::size_t>(e);
}

std::size_t RunConfig::batch_size() const {
  const auto b = get_int("optim.batch_size");
  if (b < 1) throw ConfigError("optim.batch_size must be at least 1");
  return static_cast<std::size_t>(b);
}

bool RunConfig::parallel_batches() const { return get_bool("optim.parallel_batches"); }

void RunConfig::validate(std::size_t classes) const {
  run_name();
  seed();
  split_ratios();
  augmentation();
  ensemble(classes);
  // Counts only need the right length and positive entries here.
  loss(std::vector<std::size_t>(classes ? classes : ensemble(0).classes, 1));
  adam();
  epochs();
  batch_size();
  for (const auto& f : split(raw("eval.formats"), ',')) {
    if (f != "json" && f != "csv" && f != "markdown") throw ConfigError("eval.formats: unknown format '" + f + "'");
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::schema_help() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : kSchema) {
    out.emplace_back(k.name, std::string(k.help) + " (default '" + k.fallback + "')");
  }
  return out;
}

}  // namespace sono
