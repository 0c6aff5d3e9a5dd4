#include "glad/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "binary_io.hpp"
#include "glad/error.hpp"

namespace glad::synth {

namespace {

constexpr const char* kFormat = "glad-video-dataset";
constexpr int kVersion = 1;

std::uint64_t split_tag(const std::string& split) {
  // FNV-1a: stable across platforms, unlike std::hash.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : split) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::mt19937_64 video_rng(const DomainSpec& spec, std::size_t index) {
  const std::uint64_t tag = split_tag(spec.split);
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(spec.domain == Domain::source ? 1 : 2),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

const char* mode_name(BackgroundMode m) {
  return m == BackgroundMode::class_correlated ? "class_correlated" : "fixed_checkerboard";
}

}  // namespace

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& name) {
  if (name == "source") return Domain::source;
  if (name == "target") return Domain::target;
  throw Error(ErrorCode::invalid_argument, "unknown domain '" + name + "'");
}

void DomainSpec::validate() const {
  auto reject = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::invalid_argument, "domain spec " + field + ": " + why);
  };
  if (n_classes == 0 || n_classes > 12) reject("n_classes", "must be in [1, 12]");
  if (length_min < 8) reject("length_min", "must be >= 8");
  if (length_max < length_min) reject("length_max", "must be >= length_min");
  if (!(bias >= 0.0 && bias <= 1.0)) reject("bias", "must be in [0, 1]");
  if (background_mode == BackgroundMode::class_correlated && bank_size == 0)
    reject("bank_size", "must be >= 1");
  if (!(speed_min > 0.0 && speed_min <= speed_max && speed_max <= 1.0))
    reject("speed_range", "need 0 < speed_min <= speed_max <= 1");
  if (!(noise_std >= 0.0)) reject("noise_std", "must be >= 0");
  if (height == 0 || width == 0) reject("canvas", "height and width must be positive");
  if (blob_size == 0 || blob_size > height || blob_size > width)
    reject("blob_size", "blob larger than canvas");
  if (4 * blob_size * blob_size >= height * width)
    reject("blob_size", "blob must cover less than 25% of the canvas");
  if (!(blob_amplitude >= 0.0)) reject("blob_amplitude", "must be >= 0");
  if (!(background_max >= 0.0 && background_max <= 1.0))
    reject("background_max", "must be in [0, 1]");
}

DomainSpec DomainSpec::default_source() {
  DomainSpec spec;
  spec.domain = Domain::source;
  spec.n_videos = 600;
  spec.length_min = 48;
  spec.length_max = 96;
  spec.background_mode = BackgroundMode::class_correlated;
  spec.bias = 1.0;
  spec.seed = 1;
  return spec;
}

DomainSpec DomainSpec::default_target() {
  DomainSpec spec;
  spec.domain = Domain::target;
  spec.n_videos = 300;
  spec.length_min = 8;
  spec.length_max = 24;
  spec.background_mode = BackgroundMode::fixed_checkerboard;
  spec.bias = 0.0;
  spec.seed = 2;
  return spec;
}

config::Json to_json(const DomainSpec& spec) {
  return config::Json{{"domain", to_string(spec.domain)},
                      {"split", spec.split},
                      {"n_classes", spec.n_classes},
                      {"n_videos", spec.n_videos},
                      {"length_range", {spec.length_min, spec.length_max}},
                      {"background_mode", mode_name(spec.background_mode)},
                      {"bias", spec.bias},
                      {"bank_size", spec.bank_size},
                      {"blob_speed_range", {spec.speed_min, spec.speed_max}},
                      {"noise_std", spec.noise_std},
                      {"height", spec.height},
                      {"width", spec.width},
                      {"blob_size", spec.blob_size},
                      {"blob_amplitude", spec.blob_amplitude},
                      {"background_max", spec.background_max},
                      {"seed", spec.seed}};
}

DomainSpec domain_spec_from_json(const config::Json& object, const std::string& path,
                                 const DomainSpec& base, config::FieldErrors& errors) {
  DomainSpec spec = base;
  config::reject_unknown(object,
                         {"domain", "split", "n_classes", "n_videos", "length_range",
                          "background_mode", "bias", "bank_size", "blob_speed_range", "noise_std",
                          "height", "width", "blob_size", "blob_amplitude", "background_max",
                          "seed"},
                         path, errors);
  if (!object.is_object()) return spec;
  std::string domain = to_string(spec.domain);
  config::read(object, "domain", path, domain, errors);
  if (domain == "source" || domain == "target")
    spec.domain = domain_from_string(domain);
  else
    errors.add(config::join_path(path, "domain"), "must be \"source\" or \"target\"");
  config::read(object, "split", path, spec.split, errors);
  config::read(object, "n_classes", path, spec.n_classes, errors);
  config::read(object, "n_videos", path, spec.n_videos, errors);
  std::vector<std::size_t> lengths{spec.length_min, spec.length_max};
  config::read(object, "length_range", path, lengths, errors);
  if (lengths.size() == 2) {
    spec.length_min = lengths[0];
    spec.length_max = lengths[1];
  } else {
    errors.add(config::join_path(path, "length_range"), "expected [min, max]");
  }
  std::string mode = mode_name(spec.background_mode);
  config::read(object, "background_mode", path, mode, errors);
  if (mode == "class_correlated")
    spec.background_mode = BackgroundMode::class_correlated;
  else if (mode == "fixed_checkerboard")
    spec.background_mode = BackgroundMode::fixed_checkerboard;
  else
    errors.add(config::join_path(path, "background_mode"),
               "must be \"class_correlated\" or \"fixed_checkerboard\"");
  config::read(object, "bias", path, spec.bias, errors);
  config::read(object, "bank_size", path, spec.bank_size, errors);
  std::vector<double> speeds{spec.speed_min, spec.speed_max};
  config::read(object, "blob_speed_range", path, speeds, errors);
  if (speeds.size() == 2) {
    spec.speed_min = speeds[0];
    spec.speed_max = speeds[1];
  } else {
    errors.add(config::join_path(path, "blob_speed_range"), "expected [min, max]");
  }
  config::read(object, "noise_std", path, spec.noise_std, errors);
  config::read(object, "height", path, spec.height, errors);
  config::read(object, "width", path, spec.width, errors);
  config::read(object, "blob_size", path, spec.blob_size, errors);
  config::read(object, "blob_amplitude", path, spec.blob_amplitude, errors);
  config::read(object, "background_max", path, spec.background_max, errors);
  config::read(object, "seed", path, spec.seed, errors);
  if (errors.empty()) {
    try {
      spec.validate();
    } catch (const Error& e) {
      errors.add(path, e.what());
    }
  }
  return spec;
}

std::vector<MotionPath> class_paths(std::size_t height, std::size_t width, std::size_t blob_size) {
  const double r = static_cast<double>(height - blob_size);
  const double c = static_cast<double>(width - blob_size);
  const double rm = std::floor(r / 2.0);
  const double cm = std::floor(c / 2.0);
  return {
      {0, 0, 0, c},   {rm, 0, rm, c}, {r, 0, r, c},    // horizontal lanes
      {0, 0, r, 0},   {0, cm, r, cm}, {0, c, r, c},    // vertical lanes
      {0, 0, r, c},   {0, c, r, 0},                    // diagonals
      {rm, 0, 0, c},  {rm, 0, r, c},                   // shallow slopes
      {0, cm, r, 0},  {0, cm, r, c},                   // steep slopes
  };
}

namespace {

// Top-left corner of the blob at frame t.
std::pair<std::size_t, std::size_t> blob_corner(const MotionParams& m, std::size_t length,
                                                std::size_t t) {
  const double progress = length > 1 ? static_cast<double>(t) / static_cast<double>(length - 1) : 0.0;
  const double s = std::clamp(m.offset + m.speed * progress, 0.0, 1.0);
  const double row = std::round(m.path.row0 + (m.path.row1 - m.path.row0) * s);
  const double col = std::round(m.path.col0 + (m.path.col1 - m.path.col0) * s);
  const double max_row = static_cast<double>(m.height - m.blob_size);
  const double max_col = static_cast<double>(m.width - m.blob_size);
  return {static_cast<std::size_t>(std::clamp(row, 0.0, max_row)),
          static_cast<std::size_t>(std::clamp(col, 0.0, max_col))};
}

}  // namespace

std::vector<std::uint8_t> blob_mask(const MotionParams& motion, std::size_t length, std::size_t t) {
  std::vector<std::uint8_t> mask(motion.height * motion.width, 0);
  const auto [row, col] = blob_corner(motion, length, t);
  for (std::size_t dr = 0; dr < motion.blob_size; ++dr)
    for (std::size_t dc = 0; dc < motion.blob_size; ++dc)
      mask[(row + dr) * motion.width + (col + dc)] = 1;
  return mask;
}

VideoSample render_video(std::size_t class_id, std::size_t length, std::span<const float> background,
                         const MotionParams& motion, std::mt19937_64& rng) {
  const std::size_t dim = motion.height * motion.width;
  if (length == 0) throw Error(ErrorCode::invalid_argument, "video length must be >= 1");
  if (motion.blob_size == 0 || motion.blob_size > motion.height || motion.blob_size > motion.width)
    throw Error(ErrorCode::invalid_argument, "blob larger than canvas");
  if (background.size() != dim)
    throw Error(ErrorCode::shape_mismatch, "background has " + std::to_string(background.size()) +
                                               " pixels, canvas has " + std::to_string(dim));
  for (float v : background)
    if (!(v >= 0.0f && v <= 1.0f))
      throw Error(ErrorCode::invalid_argument, "background values must lie in [0, 1]");

  VideoSample video;
  video.length = length;
  video.dim = dim;
  video.label = class_id;
  video.frames.resize(length * dim);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < length; ++t) {
    const auto mask = blob_mask(motion, length, t);
    auto out = video.frame(t);
    for (std::size_t p = 0; p < dim; ++p) {
      double v = static_cast<double>(background[p]);
      if (mask[p]) v += motion.amplitude;
      if (motion.noise_std > 0.0) v += motion.noise_std * noise(rng);
      out[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return video;
}

std::vector<std::vector<float>> background_bank(const DomainSpec& spec) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    0xBAC6u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> level(0.0, spec.background_max);
  std::vector<std::vector<float>> bank(spec.bank_size, std::vector<float>(spec.frame_dim()));
  for (auto& bg : bank)
    for (auto& v : bg) v = static_cast<float>(level(rng));
  return bank;
}

std::vector<float> checkerboard(std::size_t height, std::size_t width, double background_max) {
  std::vector<float> bg(height * width);
  const auto dark = static_cast<float>(0.2 * background_max);
  const auto light = static_cast<float>(0.8 * background_max);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) bg[r * width + c] = ((r / 2 + c / 2) % 2) ? light : dark;
  return bg;
}

Dataset generate_domain(const DomainSpec& spec) {
  spec.validate();
  const auto paths = class_paths(spec.height, spec.width, spec.blob_size);
  std::vector<std::vector<float>> bank;
  if (spec.background_mode == BackgroundMode::class_correlated)
    bank = background_bank(spec);
  else
    bank = {checkerboard(spec.height, spec.width, spec.background_max)};

  Dataset out;
  out.manifest.spec = spec;
  out.manifest.frame_dim = spec.frame_dim();
  out.videos.reserve(spec.n_videos);
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < spec.n_videos; ++i) {
    auto rng = video_rng(spec, i);
    const std::size_t label = i % spec.n_classes;
    std::uniform_int_distribution<std::size_t> length_dist(spec.length_min, spec.length_max);
    const std::size_t length = length_dist(rng);

    std::size_t bg_index = 0;
    if (spec.background_mode == BackgroundMode::class_correlated) {
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      std::uniform_int_distribution<std::size_t> any(0, bank.size() - 1);
      const double u = coin(rng);
      const std::size_t other = any(rng);
      bg_index = u < spec.bias ? label % bank.size() : other;
    }

    MotionParams motion;
    motion.path = paths[label];
    std::uniform_real_distribution<double> speed_dist(spec.speed_min, spec.speed_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    motion.speed = speed_dist(rng);
    motion.offset = (1.0 - motion.speed) * unit(rng);
    motion.height = spec.height;
    motion.width = spec.width;
    motion.blob_size = spec.blob_size;
    motion.amplitude = spec.blob_amplitude;
    motion.noise_std = spec.noise_std;

    VideoSample video = render_video(label, length, bank[bg_index], motion, rng);
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%s_%05zu", to_string(spec.domain), spec.split.c_str(), i);
    video.video_id = id;
    video.domain = spec.domain;
    video.background_index = bg_index;

    out.manifest.entries.push_back({video.video_id, label, length, offset, bg_index});
    offset += static_cast<std::uint64_t>(length * spec.frame_dim() * 4);
    out.videos.push_back(std::move(video));
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + directory.string() + ": " + ec.message());

  config::Json entries = config::Json::array();
  std::vector<char> blob;
  std::uint64_t offset = 0;
  for (const auto& video : dataset.videos) {
    entries.push_back({{"video_id", video.video_id},
                       {"label", video.label},
                       {"length", video.length},
                       {"offset", offset},
                       {"background_index", video.background_index}});
    for (float v : video.frames) detail::put_f32(blob, v);
    offset += video.frames.size() * 4;
  }
  const config::Json manifest{{"format", kFormat},
                              {"version", kVersion},
                              {"spec", to_json(dataset.manifest.spec)},
                              {"frame_dim", dataset.manifest.frame_dim},
                              {"videos", dataset.videos.size()},
                              {"entries", entries}};
  detail::write_text(directory / "manifest.json", manifest.dump(1) + "\n");
  detail::write_file(directory / "frames.bin", blob);
}

Dataset read_dataset(const std::filesystem::path& directory) {
  const auto manifest_path = directory / "manifest.json";
  const auto frames_path = directory / "frames.bin";
  if (!std::filesystem::exists(manifest_path))
    throw Error(ErrorCode::io_error, "missing " + manifest_path.string());
  if (!std::filesystem::exists(frames_path))
    throw Error(ErrorCode::io_error, "missing " + frames_path.string());

  Dataset out;
  try {
    const auto doc = config::Json::parse(detail::read_text(manifest_path));
    if (doc.at("format").get<std::string>() != kFormat || doc.at("version").get<int>() != kVersion)
      throw Error(ErrorCode::corrupted_header, manifest_path.string() + ": unrecognised format");
    config::FieldErrors errors;
    out.manifest.spec = domain_spec_from_json(doc.at("spec"), "spec", DomainSpec{}, errors);
    if (!errors.empty())
      throw Error(ErrorCode::corrupted_header, manifest_path.string() + ": " + errors.messages().front());
    out.manifest.frame_dim = doc.at("frame_dim").get<std::size_t>();
    const auto declared = doc.at("videos").get<std::size_t>();
    for (const auto& e : doc.at("entries")) {
      out.manifest.entries.push_back({e.at("video_id").get<std::string>(), e.at("label").get<std::size_t>(),
                                      e.at("length").get<std::size_t>(), e.at("offset").get<std::uint64_t>(),
                                      e.at("background_index").get<std::size_t>()});
    }
    if (declared != out.manifest.entries.size() || declared != out.manifest.spec.n_videos)
      throw Error(ErrorCode::manifest_mismatch,
                  "manifest declares " + std::to_string(declared) + " videos, spec " +
                      std::to_string(out.manifest.spec.n_videos) + ", entries " +
                      std::to_string(out.manifest.entries.size()));
  } catch (const config::Json::exception& e) {
    throw Error(ErrorCode::corrupted_header, manifest_path.string() + ": " + e.what());
  }

  const auto& spec = out.manifest.spec;
  const std::size_t dim = out.manifest.frame_dim;
  if (dim != spec.frame_dim())
    throw Error(ErrorCode::manifest_mismatch, "frame_dim disagrees with the canvas size");
  std::uint64_t expected = 0;
  for (const auto& e : out.manifest.entries) {
    if (e.offset != expected)
      throw Error(ErrorCode::manifest_mismatch,
                  e.video_id + ": offset " + std::to_string(e.offset) + " does not follow the previous video (" +
                      std::to_string(expected) + ")");
    if (e.label >= spec.n_classes)
      throw Error(ErrorCode::manifest_mismatch, e.video_id + ": label out of range");
    if (e.length < spec.length_min || e.length > spec.length_max)
      throw Error(ErrorCode::manifest_mismatch, e.video_id + ": length outside the spec's range");
    expected += static_cast<std::uint64_t>(e.length * dim * 4);
  }

  const auto blob = detail::read_file(frames_path);
  if (blob.size() < expected)
    throw Error(ErrorCode::truncated_frame_data, frames_path.string() + " holds " +
                                                     std::to_string(blob.size()) + " bytes, manifest needs " +
                                                     std::to_string(expected));
  if (blob.size() > expected)
    throw Error(ErrorCode::manifest_mismatch, frames_path.string() + " has " +
                                                  std::to_string(blob.size() - expected) +
                                                  " bytes not covered by the manifest");

  out.videos.reserve(out.manifest.entries.size());
  for (const auto& e : out.manifest.entries) {
    VideoSample video;
    video.video_id = e.video_id;
    video.length = e.length;
    video.dim = dim;
    video.label = e.label;
    video.domain = spec.domain;
    video.background_index = e.background_index;
    video.frames.resize(e.length * dim);
    const char* p = blob.data() + e.offset;
    for (auto& v : video.frames) {
      v = detail::get_f32(p);
      p += 4;
    }
    out.videos.push_back(std::move(video));
  }
  return out;
}

}  // namespace glad::synth
