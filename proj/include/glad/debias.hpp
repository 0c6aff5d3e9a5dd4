#pragma once

// Background debiasing: temporal-median background extraction and background
// mixup, x~(t) = (1 - lambda) x(t) + lambda b.

#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "glad/synthdata.hpp"

namespace glad::debias {

struct BackgroundBank {
  std::size_t dim = 0;
  std::vector<std::vector<float>> backgrounds;
  std::vector<std::string> source_video_ids;

  std::size_t size() const { return backgrounds.size(); }
  bool empty() const { return backgrounds.empty(); }
};

// Per-pixel median over frames; even lengths average the two middle values.
std::vector<float> extract_background_tmf(const synth::VideoSample& video);

// One background per video, in input order.
BackgroundBank build_background_bank(std::span<const synth::VideoSample> videos);

synth::VideoSample mix_background(const synth::VideoSample& video, std::span<const float> background,
                                  double lambda);

enum class LambdaMode { fixed, uniform };

struct AugmentationPolicy {
  double probability = 0.25;
  LambdaMode lambda_mode = LambdaMode::fixed;
  double lambda = 0.75;  // used by LambdaMode::fixed
  bool augment_source = true;
  bool augment_target = false;

  bool eligible(synth::Domain d) const {
    return d == synth::Domain::source ? augment_source : augment_target;
  }
};

struct AugmentationDraw {
  bool apply = false;
  std::size_t background = 0;
  double lambda = 0.0;
};

// Draws are consumed the same way for every sample, eligible or not, so the
// random stream does not depend on the batch's domain mix.
AugmentationDraw draw_augmentation(synth::Domain domain, const AugmentationPolicy& policy,
                                   std::size_t bank_size, std::mt19937_64& rng);

std::vector<synth::VideoSample> apply_augmentation_policy(std::span<const synth::VideoSample> batch,
                                                          const BackgroundBank& bank,
                                                          const AugmentationPolicy& policy,
                                                          std::mt19937_64& rng);

// backgrounds.json (dim, ids) + backgrounds.bin (float32, bank order).
void write_bank(const BackgroundBank& bank, const std::filesystem::path& directory);
BackgroundBank read_bank(const std::filesystem::path& directory);

}  // namespace glad::debias
