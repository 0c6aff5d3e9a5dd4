#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "glad/debias.hpp"
#include "glad/error.hpp"
#include "glad/gapmetrics.hpp"
#include "glad/synthdata.hpp"
#include "json.hpp"

using namespace glad;
using namespace glad::synth;
namespace fs = std::filesystem;

namespace {

DomainSpec small_source(std::size_t n = 24) {
  auto s = DomainSpec::default_source();
  s.n_videos = n;
  return s;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("glad_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

ErrorCode read_error(const fs::path& dir) {
  try {
    read_dataset(dir);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("read_dataset accepted a damaged dataset");
  return ErrorCode::invalid_argument;
}

}  // namespace

TEST_CASE("render_video: no noise and no blob reproduce the background") {
  std::vector<float> bg(64);
  for (std::size_t i = 0; i < bg.size(); ++i) bg[i] = static_cast<float>(i) / 128.0f;
  MotionParams m;
  m.path = class_paths(8, 8, 2)[3];
  m.amplitude = 0.0;
  std::mt19937_64 rng(1);
  const auto v = render_video(3, 10, bg, m, rng);
  for (std::size_t t = 0; t < v.length; ++t)
    for (std::size_t p = 0; p < 64; ++p) CHECK(v.frame(t)[p] == bg[p]);
}

TEST_CASE("render_video is deterministic and stays in [0, 1]") {
  const std::vector<float> bg(64, 0.9f);
  MotionParams m;
  m.path = class_paths(8, 8, 2)[0];
  m.noise_std = 0.2;
  std::mt19937_64 a(5), b(5);
  const auto v1 = render_video(0, 30, bg, m, a);
  const auto v2 = render_video(0, 30, bg, m, b);
  CHECK(v1.frames == v2.frames);
  for (float x : v1.frames) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
}

TEST_CASE("render_video rejects bad inputs") {
  MotionParams m;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(render_video(0, 0, std::vector<float>(64, 0.1f), m, rng), Error);
  CHECK_THROWS_AS(render_video(0, 10, std::vector<float>(63, 0.1f), m, rng), Error);
  m.blob_size = 9;
  CHECK_THROWS_AS(render_video(0, 10, std::vector<float>(64, 0.1f), m, rng), Error);
  auto spec = DomainSpec::default_source();
  spec.blob_size = 9;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = DomainSpec::default_source();
  spec.blob_size = 4;  // 16 of 64 pixels reaches the 25% limit
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = DomainSpec::default_source();
  spec.length_min = 7;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = DomainSpec::default_source();
  spec.bias = 1.5;
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("blob covers under a quarter of the pixels and no pixel half the frames") {
  for (const auto& spec : {DomainSpec::default_source(), DomainSpec::default_target()}) {
    auto s = spec;
    s.n_videos = 36;
    const auto ds = generate_domain(s);
    const auto paths = class_paths(s.height, s.width, s.blob_size);
    for (const auto& v : ds.videos) {
      MotionParams m;
      m.path = paths[v.label];
      std::vector<std::size_t> hits(v.dim, 0);
      for (std::size_t t = 0; t < v.length; ++t) {
        const auto mask = blob_mask(m, v.length, t);
        std::size_t on = 0;
        for (std::size_t p = 0; p < v.dim; ++p) {
          on += mask[p];
          hits[p] += mask[p];
        }
        CHECK(on * 4 < v.dim);
      }
      for (auto h : hits) CHECK(2 * h < v.length);
    }
  }
}

TEST_CASE("generate_domain respects the spec") {
  auto t = DomainSpec::default_target();
  t.n_videos = 60;
  const auto target = generate_domain(t);
  CHECK(target.videos.size() == 60);
  for (const auto& e : target.manifest.entries) {
    CHECK(e.length >= 8);
    CHECK(e.length <= 24);
  }
  const auto source = generate_domain(small_source(60));
  for (const auto& v : source.videos) {
    CHECK(v.background_index == v.label);
    CHECK(v.length >= 48);
    CHECK(v.length <= 96);
    CHECK(v.domain == Domain::source);
  }
  // Balanced labels.
  std::vector<int> counts(12, 0);
  for (const auto& v : source.videos) ++counts[v.label];
  for (int c : counts) CHECK(c == 5);
}

TEST_CASE("rho = 0 spreads backgrounds over the bank") {
  auto s = small_source(240);
  s.bias = 0.0;
  const auto ds = generate_domain(s);
  std::size_t own = 0;
  for (const auto& v : ds.videos) own += v.background_index == v.label;
  CHECK(own < 60);
}

TEST_CASE("checkerboard target: every TMF background is identical") {
  auto t = DomainSpec::default_target();
  t.n_videos = 40;
  t.noise_std = 0.0;
  const auto ds = generate_domain(t);
  const auto first = debias::extract_background_tmf(ds.videos[0]);
  for (const auto& v : ds.videos) CHECK(debias::extract_background_tmf(v) == first);
  CHECK(first == checkerboard(8, 8, t.background_max));
}

TEST_CASE("generate_domain is a pure function of the spec") {
  const auto a = generate_domain(small_source());
  const auto b = generate_domain(small_source());
  CHECK(a.videos == b.videos);
  auto other = small_source();
  other.seed = 99;
  CHECK(generate_domain(other).videos != a.videos);
  // Train and test splits share the bank but not the videos.
  auto test = small_source();
  test.split = "test";
  const auto c = generate_domain(test);
  CHECK(c.videos[0].frames != a.videos[0].frames);
  CHECK(background_bank(test) == background_bank(small_source()));
}

TEST_CASE("planted duration shift exceeds 24 frames of EMD") {
  const auto s = generate_domain(DomainSpec::default_source());
  const auto t = generate_domain(DomainSpec::default_target());
  const double emd = metrics::temporal_distance(metrics::video_lengths(s.videos), metrics::video_lengths(t.videos));
  CHECK(emd >= 24.0);
  CHECK(emd == doctest::Approx(56.0).epsilon(0.05));
}

TEST_CASE("dataset round trip is lossless") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 4; ++trial) {
    auto s = trial % 2 ? DomainSpec::default_target() : DomainSpec::default_source();
    s.n_videos = 5 + rng() % 10;
    s.seed = rng();
    const auto ds = generate_domain(s);
    const auto dir = scratch("rt" + std::to_string(trial));
    write_dataset(ds, dir);
    const auto back = read_dataset(dir);
    CHECK(back.videos == ds.videos);
    CHECK(back.manifest.entries == ds.manifest.entries);
    CHECK(to_json(back.manifest.spec) == to_json(ds.manifest.spec));
  }
}

TEST_CASE("damaged datasets map to distinct error codes") {
  const auto ds = generate_domain(small_source(6));
  const auto dir = scratch("damage");
  const auto reset = [&] { write_dataset(ds, dir); };

  reset();
  fs::resize_file(dir / "frames.bin", fs::file_size(dir / "frames.bin") - 4);
  CHECK(read_error(dir) == ErrorCode::truncated_frame_data);

  reset();
  {
    std::ofstream f(dir / "frames.bin", std::ios::app | std::ios::binary);
    f.write("xxxx", 4);
  }
  CHECK(read_error(dir) == ErrorCode::manifest_mismatch);

  reset();
  {
    std::ofstream f(dir / "manifest.json");
    f << "{\"format\": ";
  }
  CHECK(read_error(dir) == ErrorCode::corrupted_header);

  reset();
  {
    auto doc = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    doc["entries"][2]["length"] = doc["entries"][2]["length"].get<int>() + 1;
    std::ofstream(dir / "manifest.json") << doc.dump();
  }
  CHECK(read_error(dir) == ErrorCode::manifest_mismatch);

  reset();
  {
    auto doc = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    doc["entries"].erase(doc["entries"].begin());
    std::ofstream(dir / "manifest.json") << doc.dump();
  }
  CHECK(read_error(dir) == ErrorCode::manifest_mismatch);

  reset();
  fs::remove(dir / "frames.bin");
  CHECK(read_error(dir) == ErrorCode::io_error);
  CHECK(read_error(scratch("missing")) == ErrorCode::io_error);
}

TEST_CASE("domain spec JSON round trip and field-path errors") {
  const auto spec = DomainSpec::default_target();
  config::FieldErrors errors;
  const auto back = domain_spec_from_json(to_json(spec), "target", DomainSpec::default_source(), errors);
  CHECK(errors.empty());
  CHECK(to_json(back) == to_json(spec));

  config::FieldErrors bad;
  domain_spec_from_json(nlohmann::json{{"n_videos", "many"}, {"colour", 1}}, "source", spec, bad);
  REQUIRE(bad.messages().size() == 2);
  CHECK(bad.messages()[0].find("source.") == 0);
}
