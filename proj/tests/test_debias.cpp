#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "glad/debias.hpp"
#include "glad/error.hpp"
#include "glad/synthdata.hpp"

using namespace glad;
using namespace glad::debias;
using synth::VideoSample;

namespace {

VideoSample trace_video(const std::vector<float>& trace) {
  VideoSample v;
  v.video_id = "trace";
  v.length = trace.size();
  v.dim = 1;
  v.frames = trace;
  return v;
}

VideoSample constant_video(std::size_t length, std::size_t dim, float value, synth::Domain domain) {
  VideoSample v;
  v.length = length;
  v.dim = dim;
  v.frames.assign(length * dim, value);
  v.domain = domain;
  return v;
}

BackgroundBank small_bank() {
  BackgroundBank bank;
  bank.dim = 4;
  bank.backgrounds = {{0.0f, 0.0f, 0.0f, 0.0f}, {1.0f, 0.5f, 0.25f, 0.0f}, {0.2f, 0.2f, 0.2f, 0.2f}};
  bank.source_video_ids = {"a", "b", "c"};
  return bank;
}

}  // namespace

TEST_CASE("TMF examples") {
  CHECK(extract_background_tmf(trace_video({1, 9, 5})) == std::vector<float>{5});
  CHECK(extract_background_tmf(trace_video({1, 3, 7, 9})) == std::vector<float>{5});
  CHECK(extract_background_tmf(trace_video({9, 7, 3, 1})) == std::vector<float>{5});
  const auto c = constant_video(5, 3, 0.3f, synth::Domain::source);
  CHECK(extract_background_tmf(c) == std::vector<float>(3, 0.3f));
  VideoSample empty;
  empty.dim = 3;
  CHECK_THROWS_AS(extract_background_tmf(empty), Error);
}

TEST_CASE("TMF recovers the planted background on noise-free generated videos") {
  auto spec = synth::DomainSpec::default_source();
  spec.noise_std = 0.0;
  spec.n_videos = 60;
  const auto ds = synth::generate_domain(spec);
  const auto bank = synth::background_bank(spec);
  std::size_t odd = 0;
  for (const auto& v : ds.videos) {
    if (v.length % 2 == 0) continue;
    ++odd;
    CHECK(extract_background_tmf(v) == bank[v.background_index]);
  }
  CHECK(odd > 10);
}

TEST_CASE("bank has one entry per video, in order") {
  auto spec = synth::DomainSpec::default_target();
  spec.n_videos = 9;
  const auto ds = synth::generate_domain(spec);
  const auto bank = build_background_bank(ds.videos);
  REQUIRE(bank.size() == 9);
  CHECK(bank.dim == 64);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(bank.source_video_ids[i] == ds.videos[i].video_id);
    CHECK(bank.backgrounds[i] == extract_background_tmf(ds.videos[i]));
  }
  CHECK(build_background_bank(ds.videos).backgrounds == bank.backgrounds);
  CHECK_THROWS_AS(build_background_bank(std::span<const VideoSample>()), Error);
}

TEST_CASE("mix_background examples") {
  const auto v = constant_video(4, 4, 0.4f, synth::Domain::source);
  const std::vector<float> zero(4, 0.0f);
  const auto mixed = mix_background(v, zero, 0.75);
  for (float x : mixed.frames) CHECK(x == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(mixed.length == v.length);
  CHECK(mixed.label == v.label);
  CHECK(mix_background(v, zero, 0.0).frames == v.frames);
  const std::vector<float> b{0.1f, 0.2f, 0.3f, 0.4f};
  const auto full = mix_background(v, b, 1.0);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t p = 0; p < 4; ++p) CHECK(full.frame(t)[p] == b[p]);
  CHECK_THROWS_AS(mix_background(v, std::vector<float>(3, 0.0f), 0.5), Error);
  CHECK_THROWS_AS(mix_background(v, zero, 1.5), Error);
}

TEST_CASE("augmentation policy: probability 0 leaves the batch unchanged") {
  std::vector<VideoSample> batch{constant_video(6, 4, 0.7f, synth::Domain::source),
                                 constant_video(6, 4, 0.3f, synth::Domain::target)};
  AugmentationPolicy policy;
  policy.probability = 0.0;
  std::mt19937_64 rng(1);
  CHECK(apply_augmentation_policy(batch, small_bank(), policy, rng) == batch);
}

TEST_CASE("augmentation policy: probability 1, lambda 1 makes source frames constant in t") {
  std::vector<VideoSample> batch;
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int i = 0; i < 8; ++i) {
    auto v = constant_video(5, 4, 0.0f, i % 2 ? synth::Domain::target : synth::Domain::source);
    for (auto& x : v.frames) x = u(gen);
    batch.push_back(v);
  }
  AugmentationPolicy policy;
  policy.probability = 1.0;
  policy.lambda = 1.0;
  std::mt19937_64 rng(2);
  const auto out = apply_augmentation_policy(batch, small_bank(), policy, rng);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].domain == synth::Domain::target) {
      CHECK(out[i] == batch[i]);  // default policy never touches the target
      continue;
    }
    for (std::size_t t = 1; t < out[i].length; ++t)
      for (std::size_t p = 0; p < 4; ++p) CHECK(out[i].frame(t)[p] == out[i].frame(0)[p]);
  }
}

TEST_CASE("augmentation rate and background choice are uniform") {
  AugmentationPolicy policy;
  std::mt19937_64 rng(8);
  std::vector<int> picks(3, 0);
  int applied = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto d = draw_augmentation(synth::Domain::source, policy, 3, rng);
    if (!d.apply) continue;
    ++applied;
    CHECK(d.lambda == 0.75);
    ++picks[d.background];
  }
  CHECK(applied == doctest::Approx(n * 0.25).epsilon(0.05));
  for (int p : picks) CHECK(p == doctest::Approx(applied / 3.0).epsilon(0.08));

  policy.lambda_mode = LambdaMode::uniform;
  policy.probability = 1.0;
  for (int i = 0; i < 200; ++i) {
    const auto d = draw_augmentation(synth::Domain::source, policy, 3, rng);
    CHECK(d.lambda >= 0.0);
    CHECK(d.lambda <= 1.0);
  }
}

TEST_CASE("draws consume the stream the same way for either domain") {
  AugmentationPolicy policy;
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 50; ++i) {
    draw_augmentation(synth::Domain::source, policy, 3, a);
    draw_augmentation(synth::Domain::target, policy, 3, b);
  }
  CHECK(a() == b());
  std::mt19937_64 c(5);
  CHECK_FALSE(draw_augmentation(synth::Domain::target, policy, 3, c).apply);
}

TEST_CASE("empty bank is rejected") {
  std::vector<VideoSample> batch{constant_video(6, 4, 0.7f, synth::Domain::source)};
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(apply_augmentation_policy(batch, BackgroundBank{}, AugmentationPolicy{}, rng), Error);
}

TEST_CASE("bank round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "glad_bank_rt";
  std::filesystem::remove_all(dir);
  const auto bank = small_bank();
  write_bank(bank, dir);
  const auto back = read_bank(dir);
  CHECK(back.dim == bank.dim);
  CHECK(back.backgrounds == bank.backgrounds);
  CHECK(back.source_video_ids == bank.source_video_ids);

  std::filesystem::resize_file(dir / "backgrounds.bin", 8);
  try {
    read_bank(dir);
    FAIL("truncated bank accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::truncated_frame_data);
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_bank(dir), Error);
}
