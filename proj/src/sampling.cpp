#include "glad/sampling.hpp"

#include <algorithm>

namespace glad::sampling {

namespace {

std::size_t uniform_index(std::size_t lo, std::size_t hi_inclusive, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(lo, hi_inclusive);
  return dist(rng);
}

void require_clip_args(std::size_t length, std::size_t n_frames) {
  if (length == 0) throw Error(ErrorCode::invalid_argument, "video length must be >= 1");
  if (n_frames == 0) throw Error(ErrorCode::invalid_argument, "clip needs at least one frame");
}

}  // namespace

ClipIndices sample_global_clip(std::size_t length, std::size_t n_frames, std::mt19937_64* rng) {
  require_clip_args(length, n_frames);
  ClipIndices clip;
  clip.view = View::global;
  clip.indices.reserve(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k) {
    const std::size_t lo = std::min(k * length / n_frames, length - 1);
    const std::size_t hi = std::max((k + 1) * length / n_frames, lo + 1);
    const std::size_t pick = rng ? uniform_index(lo, hi - 1, *rng) : (lo + hi - 1) / 2;
    clip.indices.push_back(std::min(pick, length - 1));
  }
  return clip;
}

ClipIndices local_clip_at(std::size_t length, std::size_t n_frames, std::size_t stride,
                          std::size_t start) {
  require_clip_args(length, n_frames);
  if (stride == 0) throw Error(ErrorCode::invalid_argument, "stride must be >= 1");
  ClipIndices clip;
  clip.view = View::local;
  clip.indices.reserve(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k)
    clip.indices.push_back(std::min(start + stride * k, length - 1));
  return clip;
}

ClipIndices sample_local_clip(std::size_t length, std::size_t n_frames, std::size_t stride,
                              std::mt19937_64* rng) {
  require_clip_args(length, n_frames);
  if (stride == 0) throw Error(ErrorCode::invalid_argument, "stride must be >= 1");
  const std::size_t span = stride * (n_frames - 1);
  std::size_t start = 0;
  if (length > span + 1) {
    const std::size_t last_start = length - 1 - span;
    start = rng ? uniform_index(0, last_start, *rng) : last_start / 2;
  }
  return local_clip_at(length, n_frames, stride, start);
}

std::vector<ClipIndices> eval_local_clips(std::size_t length, std::size_t n_frames,
                                          std::size_t stride, std::size_t count) {
  require_clip_args(length, n_frames);
  const std::size_t span = stride * (n_frames - 1);
  const std::size_t room = length > span + 1 ? length - 1 - span : 0;
  std::vector<ClipIndices> clips;
  for (std::size_t k = 0; k < count; ++k)
    clips.push_back(local_clip_at(length, n_frames, stride, (k + 1) * room / (count + 1)));
  return clips;
}

std::vector<ClipIndices> sample_ordered_local_clips(std::size_t length, std::size_t n_frames,
                                                    std::size_t stride, std::size_t count,
                                                    std::mt19937_64* rng) {
  require_clip_args(length, n_frames);
  std::vector<ClipIndices> clips;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t lo = std::min(k * length / count, length - 1);
    const std::size_t hi = std::max((k + 1) * length / count, lo + 1);
    const std::size_t start = rng ? uniform_index(lo, hi - 1, *rng) : (lo + hi - 1) / 2;
    clips.push_back(local_clip_at(length, n_frames, stride, start));
  }
  return clips;
}

std::size_t factorial(std::size_t n) {
  std::size_t out = 1;
  for (std::size_t k = 2; k <= n; ++k) out *= k;
  return out;
}

bool is_permutation(std::span<const std::size_t> perm) {
  std::vector<bool> seen(perm.size(), false);
  for (auto v : perm) {
    if (v >= perm.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

std::size_t permutation_encode(std::span<const std::size_t> perm) {
  if (!is_permutation(perm)) throw Error(ErrorCode::invalid_argument, "input is not a bijection");
  const std::size_t n = perm.size();
  std::size_t index = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t smaller_after = 0;
    for (std::size_t j = i + 1; j < n; ++j)
      if (perm[j] < perm[i]) ++smaller_after;
    index += smaller_after * factorial(n - 1 - i);
  }
  return index;
}

std::vector<std::size_t> permutation_decode(std::size_t index, std::size_t n) {
  if (index >= factorial(n))
    throw Error(ErrorCode::invalid_argument,
                "permutation index " + std::to_string(index) + " out of range for n=" + std::to_string(n));
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> perm;
  perm.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t block = factorial(n - 1 - i);
    const std::size_t digit = index / block;
    index %= block;
    perm.push_back(pool[digit]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(digit));
  }
  return perm;
}

PermutationLabel random_permutation(std::size_t n, std::mt19937_64& rng) {
  PermutationLabel label;
  label.n = n;
  label.index = uniform_index(0, factorial(n) - 1, rng);
  label.perm = permutation_decode(label.index, n);
  return label;
}

}  // namespace glad::sampling
