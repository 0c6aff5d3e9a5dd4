#pragma once

// Frame-index sampling for global (uniform) and local (dense) clips, and the
// permutation machinery behind clip-order prediction.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "glad/error.hpp"

namespace glad::sampling {

enum class View { global, local };

struct ClipIndices {
  std::vector<std::size_t> indices;
  View view = View::global;
};

// Passing a null rng selects the deterministic evaluation placement.

// One frame from each of n_frames equal segments [floor(kT/n), floor((k+1)T/n)).
// Eval picks the segment centre. Empty segments (T < n) reuse their lower bound.
ClipIndices sample_global_clip(std::size_t length, std::size_t n_frames, std::mt19937_64* rng);

// Strided run from `start`, clamped to the last frame.
ClipIndices local_clip_at(std::size_t length, std::size_t n_frames, std::size_t stride,
                          std::size_t start);

// Start uniform in [0, T-1-span] (0 when the span does not fit); eval uses the
// centred start max(0, floor((T-1-span)/2)).
ClipIndices sample_local_clip(std::size_t length, std::size_t n_frames, std::size_t stride,
                              std::mt19937_64* rng);

// `count` deterministic local clips with starts evenly spread over the valid
// range; count == 1 reproduces the centred eval clip.
std::vector<ClipIndices> eval_local_clips(std::size_t length, std::size_t n_frames,
                                          std::size_t stride, std::size_t count);

// `count` local clips in temporal order: clip k starts inside the k-th of
// `count` equal segments of the video. Used for clip-order prediction.
std::vector<ClipIndices> sample_ordered_local_clips(std::size_t length, std::size_t n_frames,
                                                    std::size_t stride, std::size_t count,
                                                    std::mt19937_64* rng);

std::size_t factorial(std::size_t n);

struct PermutationLabel {
  std::size_t n = 0;
  std::vector<std::size_t> perm;
  std::size_t index = 0;
};

// Lexicographic rank of a permutation of {0..n-1}; identity is 0.
std::size_t permutation_encode(std::span<const std::size_t> perm);
std::vector<std::size_t> permutation_decode(std::size_t index, std::size_t n);
bool is_permutation(std::span<const std::size_t> perm);

PermutationLabel random_permutation(std::size_t n, std::mt19937_64& rng);

// out[j] = items[perm[j]].
template <class T>
std::vector<T> apply_permutation(std::span<const T> items, std::span<const std::size_t> perm) {
  if (items.size() != perm.size() || !is_permutation(perm))
    throw Error(ErrorCode::invalid_argument, "apply_permutation: not a permutation of the items");
  std::vector<T> out;
  out.reserve(items.size());
  for (std::size_t j = 0; j < perm.size(); ++j) out.push_back(items[perm[j]]);
  return out;
}

template <class T>
struct Shuffled {
  std::vector<T> items;
  PermutationLabel label;
};

template <class T>
Shuffled<T> shuffle_clips(std::span<const T> items, std::mt19937_64& rng) {
  if (items.size() < 2) throw Error(ErrorCode::invalid_argument, "shuffle_clips needs N >= 2");
  Shuffled<T> out;
  out.label = random_permutation(items.size(), rng);
  out.items = apply_permutation(items, std::span<const std::size_t>(out.label.perm));
  return out;
}

}  // namespace glad::sampling
