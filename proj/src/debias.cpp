#include "glad/debias.hpp"

#include <algorithm>

#include "binary_io.hpp"
#include "glad/config.hpp"
#include "glad/error.hpp"

namespace glad::debias {

std::vector<float> extract_background_tmf(const synth::VideoSample& video) {
  if (video.length == 0) throw Error(ErrorCode::invalid_argument, "TMF needs at least one frame");
  std::vector<float> background(video.dim);
  std::vector<float> trace(video.length);
  const std::size_t mid = video.length / 2;
  for (std::size_t p = 0; p < video.dim; ++p) {
    for (std::size_t t = 0; t < video.length; ++t) trace[t] = video.frames[t * video.dim + p];
    std::nth_element(trace.begin(), trace.begin() + static_cast<std::ptrdiff_t>(mid), trace.end());
    const float upper = trace[mid];
    if (video.length % 2 == 1) {
      background[p] = upper;
    } else {
      const float lower = *std::max_element(trace.begin(), trace.begin() + static_cast<std::ptrdiff_t>(mid));
      background[p] = static_cast<float>(0.5 * (static_cast<double>(lower) + static_cast<double>(upper)));
    }
  }
  return background;
}

BackgroundBank build_background_bank(std::span<const synth::VideoSample> videos) {
  if (videos.empty()) throw Error(ErrorCode::invalid_argument, "cannot build a bank from no videos");
  BackgroundBank bank;
  bank.dim = videos.front().dim;
  bank.backgrounds.reserve(videos.size());
  for (const auto& v : videos) {
    if (v.dim != bank.dim) throw Error(ErrorCode::shape_mismatch, "videos differ in frame size");
    bank.backgrounds.push_back(extract_background_tmf(v));
    bank.source_video_ids.push_back(v.video_id);
  }
  return bank;
}

synth::VideoSample mix_background(const synth::VideoSample& video, std::span<const float> background,
                                  double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw Error(ErrorCode::invalid_argument, "mix ratio must lie in [0, 1]");
  if (background.size() != video.dim)
    throw Error(ErrorCode::shape_mismatch, "background has " + std::to_string(background.size()) +
                                               " pixels, video frames have " + std::to_string(video.dim));
  synth::VideoSample out = video;
  for (std::size_t t = 0; t < video.length; ++t) {
    auto frame = out.frame(t);
    for (std::size_t p = 0; p < video.dim; ++p) {
      const double mixed = (1.0 - lambda) * static_cast<double>(frame[p]) +
                           lambda * static_cast<double>(background[p]);
      frame[p] = static_cast<float>(std::clamp(mixed, 0.0, 1.0));
    }
  }
  return out;
}

AugmentationDraw draw_augmentation(synth::Domain domain, const AugmentationPolicy& policy,
                                   std::size_t bank_size, std::mt19937_64& rng) {
  if (bank_size == 0) throw Error(ErrorCode::invalid_argument, "background bank is empty");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, bank_size - 1);
  const double coin = unit(rng);
  const std::size_t background = pick(rng);
  const double lambda_draw = unit(rng);
  AugmentationDraw draw;
  draw.apply = policy.eligible(domain) && coin < policy.probability;
  draw.background = background;
  draw.lambda = policy.lambda_mode == LambdaMode::fixed ? policy.lambda : lambda_draw;
  return draw;
}

std::vector<synth::VideoSample> apply_augmentation_policy(std::span<const synth::VideoSample> batch,
                                                          const BackgroundBank& bank,
                                                          const AugmentationPolicy& policy,
                                                          std::mt19937_64& rng) {
  std::vector<synth::VideoSample> out;
  out.reserve(batch.size());
  for (const auto& video : batch) {
    const auto draw = draw_augmentation(video.domain, policy, bank.size(), rng);
    if (draw.apply)
      out.push_back(mix_background(video, bank.backgrounds[draw.background], draw.lambda));
    else
      out.push_back(video);
  }
  return out;
}

void write_bank(const BackgroundBank& bank, const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + directory.string());
  std::vector<char> blob;
  for (const auto& bg : bank.backgrounds)
    for (float v : bg) detail::put_f32(blob, v);
  const config::Json doc{{"dim", bank.dim}, {"count", bank.size()}, {"video_ids", bank.source_video_ids}};
  detail::write_text(directory / "backgrounds.json", doc.dump(1) + "\n");
  detail::write_file(directory / "backgrounds.bin", blob);
}

BackgroundBank read_bank(const std::filesystem::path& directory) {
  BackgroundBank bank;
  std::size_t count = 0;
  try {
    const auto doc = config::Json::parse(detail::read_text(directory / "backgrounds.json"));
    bank.dim = doc.at("dim").get<std::size_t>();
    count = doc.at("count").get<std::size_t>();
    bank.source_video_ids = doc.at("video_ids").get<std::vector<std::string>>();
  } catch (const config::Json::exception& e) {
    throw Error(ErrorCode::corrupted_header, "backgrounds.json: " + std::string(e.what()));
  }
  const auto blob = detail::read_file(directory / "backgrounds.bin");
  if (blob.size() < count * bank.dim * 4)
    throw Error(ErrorCode::truncated_frame_data, "backgrounds.bin is shorter than declared");
  if (blob.size() != count * bank.dim * 4 || bank.source_video_ids.size() != count)
    throw Error(ErrorCode::manifest_mismatch, "backgrounds.bin disagrees with backgrounds.json");
  const char* p = blob.data();
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<float> bg(bank.dim);
    for (auto& v : bg) {
      v = detail::get_f32(p);
      p += 4;
    }
    bank.backgrounds.push_back(std::move(bg));
  }
  return bank;
}

}  // namespace glad::debias
