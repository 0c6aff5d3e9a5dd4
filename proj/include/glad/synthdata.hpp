#pragma once

// Two-domain synthetic video benchmark. Each video is a bright square blob
// travelling along a class-specific straight path over a static background.
// The source domain ties backgrounds to classes and has long videos; the
// target domain shares one checkerboard background and has short videos.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "glad/config.hpp"

namespace glad::synth {

enum class Domain { source, target };

const char* to_string(Domain d);
Domain domain_from_string(const std::string& name);

// One video: `length` frames of `dim` pixels, row-major, values in [0, 1].
struct VideoSample {
  std::string video_id;
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<float> frames;
  std::size_t label = 0;
  Domain domain = Domain::source;
  std::size_t background_index = 0;

  std::span<const float> frame(std::size_t t) const {
    return std::span<const float>(frames).subspan(t * dim, dim);
  }
  std::span<float> frame(std::size_t t) { return std::span<float>(frames).subspan(t * dim, dim); }

  bool operator==(const VideoSample&) const = default;
};

enum class BackgroundMode { class_correlated, fixed_checkerboard };

struct DomainSpec {
  Domain domain = Domain::source;
  std::string split = "train";
  std::size_t n_classes = 12;
  std::size_t n_videos = 600;
  std::size_t length_min = 48;
  std::size_t length_max = 96;
  BackgroundMode background_mode = BackgroundMode::class_correlated;
  double bias = 1.0;            // rho: probability of the class's own bank entry
  std::size_t bank_size = 12;
  double speed_min = 1.0;       // fraction of the path traversed per video
  double speed_max = 1.0;
  double noise_std = 0.03;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t blob_size = 2;
  double blob_amplitude = 0.6;
  double background_max = 0.4;  // background pixels lie in [0, background_max]
  std::uint64_t seed = 1;

  std::size_t frame_dim() const { return height * width; }
  // Throws Error(invalid_argument) naming the offending field.
  void validate() const;

  static DomainSpec default_source();
  static DomainSpec default_target();
};

config::Json to_json(const DomainSpec& spec);
// Fields absent from `object` keep their value from `base`.
DomainSpec domain_spec_from_json(const config::Json& object, const std::string& path,
                                 const DomainSpec& base, config::FieldErrors& errors);

// Start and end of the blob's top-left corner, in (row, col) pixels.
struct MotionPath {
  double row0 = 0, col0 = 0, row1 = 0, col1 = 0;
};

struct MotionParams {
  MotionPath path;
  double speed = 1.0;   // fraction of the path covered over the video
  double offset = 0.0;  // starting fraction along the path
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t blob_size = 2;
  double amplitude = 0.5;
  double noise_std = 0.0;
};

// The class paths for a canvas; at most 12 classes are supported.
std::vector<MotionPath> class_paths(std::size_t height, std::size_t width, std::size_t blob_size);

// Whether pixel p is covered by the blob in frame t.
std::vector<std::uint8_t> blob_mask(const MotionParams& motion, std::size_t length, std::size_t t);

VideoSample render_video(std::size_t class_id, std::size_t length, std::span<const float> background,
                         const MotionParams& motion, std::mt19937_64& rng);

// Random textures for the class-correlated bank, seeded from spec.seed only,
// so train and test splits of one domain share their bank.
std::vector<std::vector<float>> background_bank(const DomainSpec& spec);
std::vector<float> checkerboard(std::size_t height, std::size_t width, double background_max);

struct ManifestEntry {
  std::string video_id;
  std::size_t label = 0;
  std::size_t length = 0;
  std::uint64_t offset = 0;  // byte offset into frames.bin
  std::size_t background_index = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DomainManifest {
  DomainSpec spec;
  std::size_t frame_dim = 0;
  std::vector<ManifestEntry> entries;
};

struct Dataset {
  DomainManifest manifest;
  std::vector<VideoSample> videos;

  std::size_t size() const { return videos.size(); }
};

// Pure function of `spec`. Videos are seeded per index, so rendering order
// does not matter.
Dataset generate_domain(const DomainSpec& spec);

// manifest.json + frames.bin in `directory` (created if missing).
void write_dataset(const Dataset& dataset, const std::filesystem::path& directory);
// Throws Error with corrupted_header, truncated_frame_data or
// manifest_mismatch for damaged inputs, io_error for missing files.
Dataset read_dataset(const std::filesystem::path& directory);

}  // namespace glad::synth
