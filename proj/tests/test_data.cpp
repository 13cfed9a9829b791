// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sonoclass/csv.hpp"
#include "sonoclass/dataset.hpp"
#include "sonoclass/image.hpp"
#include "sonoclass/rng.hpp"
#include "support.hpp"

using namespace sono;
using testing::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

data::DatasetManifest manifest_with_labels(const std::vector<std::size_t>& labels, std::size_t k) {
  data::DatasetManifest m;
  for (std::size_t j = 0; j < k; ++j) m.class_names.push_back("c" + std::to_string(j));
  for (std::size_t i = 0; i < labels.size(); ++i) m.entries.push_back({"id" + std::to_string(i), "x.ppm", labels[i]});
  return m;
}

}  // namespace

TEST_CASE("rng keyed streams are reproducible and distinct") {
  SampleRng a = SampleRng::keyed(42, "img", 3), b = SampleRng::keyed(42, "img", 3);
  SampleRng c = SampleRng::keyed(42, "img", 4), d = SampleRng::keyed(42, "img2", 3);
  const auto x = a.next_u64();
  CHECK(x == b.next_u64());
  CHECK(x != c.next_u64());
  CHECK(x != d.next_u64());
  SampleRng r(1);
  CHECK(r.uniform(0.5, 0.5) == 0.5);
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.uniform_int(-2, 2);
    CHECK((v >= -2 && v <= 2));
  }
}

TEST_CASE("decode P6 and P5") {
  TempDir dir("decode");
  write_bytes(dir / "red.ppm", std::string("P6\n1 1\n255\n") + std::string("\xff\x00\x00", 3));
  const auto red = decode_image(dir / "red.ppm");
  CHECK(red.channels == 3);
  CHECK(red.pixels == std::vector<double>{1.0, 0.0, 0.0});

  write_bytes(dir / "g.pgm", std::string("P5\n1 1\n255\n") + std::string("\x80", 1));
  const auto g = decode_image(dir / "g.pgm");
  CHECK(g.channels == 1);
  CHECK(g.pixels[0] == 128.0 / 255.0);
}

TEST_CASE("encode/decode round trip is bit-exact for 8-bit data") {
  TempDir dir("roundtrip");
  SampleRng rng(3);
  for (const std::size_t ch : {1u, 3u}) {
    RasterImage img(5, 7, ch);
    for (double& p : img.pixels) p = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
    for (const char* ext : {".png", ".ppm"}) {
      std::string name = std::string("img") + std::to_string(ch) + ext;
      if (ch == 1 && std::string(ext) == ".ppm") name = "img1.pgm";
      encode_image(img, dir / name);
      CHECK(decode_image(dir / name) == img);
    }
  }
}

TEST_CASE("decode errors") {
  TempDir dir("decerr");
  try {
    decode_image(dir / "missing.ppm");
    FAIL("expected error");
  } catch (const ImageError& e) {
    CHECK(e.kind() == ImageError::Kind::kIo);
    CHECK(std::string(e.what()).find("missing.ppm") != std::string::npos);
  }
  write_bytes(dir / "short.ppm", "P6\n4 4\n255\nabc");
  try {
    decode_image(dir / "short.ppm");
    FAIL("expected error");
  } catch (const ImageError& e) {
    CHECK(e.kind() == ImageError::Kind::kTruncated);
  }
  write_bytes(dir / "weird.ppm", "GIF89a....");
  try {
    decode_image(dir / "weird.ppm");
    FAIL("expected error");
  } catch (const ImageError& e) {
    CHECK(e.kind() == ImageError::Kind::kUnsupported);
  }
}

TEST_CASE("ycbcr to rgb") {
  RasterImage n(1, 1, 3);
  n.pixels = {0.5, 0.5, 0.5};
  CHECK(ycbcr_to_rgb(n).pixels == std::vector<double>{0.5, 0.5, 0.5});
  n.pixels = {1.0, 0.5, 0.5};
  CHECK(ycbcr_to_rgb(n).pixels == std::vector<double>{1.0, 1.0, 1.0});

  SampleRng rng(8);
  for (int t = 0; t < 100; ++t) {
    // Keep Y central so the unclamped result stays in range.
    const double y = rng.uniform(0.4, 0.6), cb = rng.uniform(0.4, 0.6), cr = rng.uniform(0.4, 0.6);
    const double m[3][3] = {{1, 0, 1.402}, {1, -0.344136, -0.714136}, {1, 1.772, 0}};
    const double v[3] = {y, cb - 0.5, cr - 0.5};
    RasterImage img(1, 1, 3);
    img.pixels = {y, cb, cr};
    const auto out = ycbcr_to_rgb(img);
    for (int r = 0; r < 3; ++r) {
      const double expect = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2];
      CHECK(std::abs(out.pixels[r] - expect) <= 1e-9);
    }
  }
  CHECK_THROWS(ycbcr_to_rgb(RasterImage(2, 2, 1)));
}

TEST_CASE("csv quoting") {
  CHECK(csv::split_line("a,\"b,c\",\"d\"\"e\"") == csv::Row{"a", "b,c", "d\"e"});
  CHECK(csv::join({"x", "y,z", "q\"r"}) == "x,\"y,z\",\"q\"\"r\"");
  CHECK_THROWS(csv::split_line("a,\"open"));
}

TEST_CASE("manifest read/write round trip and validation") {
  TempDir dir("manifest");
  data::DatasetManifest m = manifest_with_labels({0, 1, 1}, 2);
  m.class_names = {"Femur", "Head (PPP, quadrigeminal plate)"};
  data::write_manifest(m, dir / "manifest.csv");
  CHECK(slurp(dir / "manifest.csv").rfind("image_id,path,label\n", 0) == 0);
  const auto back = data::read_manifest(dir / "manifest.csv");
  CHECK(back.entries == m.entries);
  CHECK(back.class_names == m.class_names);
  CHECK(back.root == dir.path());

  auto dup = m;
  dup.entries.push_back(dup.entries[0]);
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
  auto bad = m;
  bad.entries[0].label = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  write_bytes(dir / "wrong.csv", "id,file,label\nx,y,0\n");
  try {
    data::read_manifest(dir / "wrong.csv");
    FAIL("expected error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("wrong.csv") != std::string::npos);
  }
}

TEST_CASE("class counts") {
  CHECK(data::class_counts(manifest_with_labels({}, 3)) == std::vector<std::size_t>{0, 0, 0});
  CHECK(data::class_counts(manifest_with_labels({0, 0, 1}, 2)) == std::vector<std::size_t>{2, 1});

  // Full table fixture: one entry per counted image.
  std::vector<std::size_t> labels;
  const auto& counts = data::table1_counts();
  for (std::size_t j = 0; j < counts.size(); ++j) labels.insert(labels.end(), counts[j], j);
  const auto m = manifest_with_labels(labels, counts.size());
  CHECK(data::class_counts(m) ==
        std::vector<std::size_t>{1798, 534, 181, 272, 294, 272, 276, 260, 249, 192, 208, 170, 173, 149, 143, 138});
  std::size_t total = 0;
  for (auto c : data::class_counts(m)) total += c;
  CHECK(total == m.size());
  CHECK(data::table1_class_names().size() == 16);
}

TEST_CASE("stratified split exact proportions") {
  const auto m = manifest_with_labels(std::vector<std::size_t>(10, 0), 1);
  const auto s = data::stratified_split(m, {0.8, 0.1, 0.1}, 5);
  CHECK(s.train.size() == 8);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 1);

  const auto s2 = data::stratified_split(m, {0.8, 0.1, 0.1}, 5);
  CHECK(s2.train.entries == s.train.entries);
  CHECK(s2.val.entries == s.val.entries);

  CHECK_THROWS(data::stratified_split(m, {0.5, 0.3, 0.1}, 1));
  CHECK_THROWS(data::stratified_split(m, {1.0, 0.0, 0.0}, 1));
}

TEST_CASE("stratified split small class warns and goes to train") {
  testing::WarningCapture warnings;
  const auto m = manifest_with_labels({0, 0, 0, 0, 0, 0, 1, 1}, 2);
  const auto s = data::stratified_split(m, {0.6, 0.2, 0.2}, 2);
  CHECK(data::class_counts(s.train)[1] == 2);
  CHECK(warnings.messages.size() == 1);
}

TEST_CASE("stratified split on the long-tailed profile: disjoint, covering, within one item") {
  const auto spec = data::table1_profile(16, 5309, 1);
  std::vector<std::size_t> labels;
  for (std::size_t j = 0; j < spec.counts.size(); ++j) labels.insert(labels.end(), spec.counts[j], j);
  const auto m = manifest_with_labels(labels, spec.counts.size());
  const std::array<double, 3> ratios = {0.7, 0.15, 0.15};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto s = data::stratified_split(m, ratios, seed);
    std::multiset<std::string> seen;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (const auto& e : part->entries) seen.insert(e.image_id);
    }
    CHECK(seen.size() == m.size());
    CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == m.size());
    const auto counts = data::class_counts(m);
    const data::DatasetManifest* parts[3] = {&s.train, &s.val, &s.test};
    for (int p = 0; p < 3; ++p) {
      const auto got = data::class_counts(*parts[p]);
      for (std::size_t j = 0; j < counts.size(); ++j) {
        CHECK(std::abs(static_cast<double>(got[j]) - ratios[p] * static_cast<double>(counts[j])) <= 1.0);
      }
    }
  }
}

TEST_CASE("apportion is largest remainder") {
  CHECK(data::apportion({0.5, 0.5}, 3) == std::vector<std::size_t>{2, 1});
  CHECK(data::apportion({0.7, 0.15, 0.15}, 10) == std::vector<std::size_t>{7, 2, 1});
}

TEST_CASE("long-tailed profile shape") {
  const auto full = data::table1_profile(16, 5309, 1);
  // Classes come out largest first.
  auto expect = data::table1_counts();
  std::sort(expect.begin(), expect.end(), std::greater<>());
  CHECK(full.counts == expect);
  const auto six = data::table1_profile(6, 1600, 1);
  std::size_t total = 0;
  for (auto c : six.counts) total += c;
  CHECK(total == 1600);
  const double ratio = static_cast<double>(six.counts.front()) / static_cast<double>(six.counts.back());
  CHECK(ratio == doctest::Approx(1798.0 / 138.0).epsilon(0.02));
  CHECK(six.class_names.front() == "Other");
}

TEST_CASE("synth_generate counts, purity and pixel range") {
  TempDir a("synth_a"), b("synth_b");
  data::SynthSpec spec;
  spec.class_names = {"Other", "Femur"};
  spec.counts = {3, 5};
  spec.height = spec.width = 24;
  spec.seed = 9;
  const auto m = data::synth_generate(spec, a.path());
  CHECK(m.size() == 8);
  std::vector<std::size_t> labels;
  for (const auto& e : m.entries) labels.push_back(e.label);
  CHECK(labels == std::vector<std::size_t>{0, 0, 0, 1, 1, 1, 1, 1});
  data::synth_generate(spec, b.path());
  for (const auto& e : m.entries) {
    CHECK(std::filesystem::exists(a.path() / data::class_dir_name(m.class_names[e.label]) / (e.image_id + ".ppm")));
    CHECK(slurp(m.resolve(e)) == slurp(b.path() / e.path));
    const auto img = data::load_image(m, e);
    CHECK(pixels_in_unit_range(img));
  }
  const auto back = data::read_manifest(a / "manifest.csv");
  CHECK(back.entries == m.entries);
  CHECK(back.class_names == spec.class_names);
}

TEST_CASE("synth classes differ visibly from the texture class") {
  data::SynthSpec spec = data::table1_profile(6, 60, 4);
  // Center-vs-border contrast separates a drawn shape from flat texture.
  const auto contrast = [&](std::size_t label) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      const auto img = data::synth_render(spec, label, i);
      double hi = 0.0;
      for (double p : img.pixels) hi = std::max(hi, p);
      acc += hi;
    }
    return acc / 5.0;
  };
  for (std::size_t j = 1; j < 6; ++j) CHECK(contrast(j) > contrast(0));
}

TEST_CASE("synth spec validation") {
  data::SynthSpec s;
  s.class_names = {"a"};
  s.counts = {1};
  CHECK_THROWS(s.validate());
  s.class_names = {"a", "b"};
  s.counts = {1, 0};
  CHECK_THROWS(s.validate());
}

TEST_CASE("synth into an unwritable location fails") {
  TempDir dir("unwritable");
  write_bytes(dir / "file", "x");
  data::SynthSpec spec = data::balanced_profile(2, 1, 1);
  CHECK_THROWS(data::synth_generate(spec, dir / "file"));
}
