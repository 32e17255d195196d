#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bglab/compositing.hpp"
#include "bglab/image.hpp"
#include "bglab/manifest.hpp"
#include "bglab/rng.hpp"

namespace bglab {

/// Stratified split: items of each class are shuffled with a per-class
/// stream and the first floor(n * fraction) go to training.
inline std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& manifest,
                                                                   double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw std::invalid_argument("split_train_val: fraction must be in (0, 1)");
  if (manifest.items.empty()) throw std::invalid_argument("split_train_val: empty manifest");
  std::map<std::string, std::vector<ManifestItem>> by_class;
  for (const auto& item : manifest.items) by_class[item.human_class].push_back(item);
  DatasetManifest train, val;
  train.classes = val.classes = manifest.classes;
  for (auto& [label, items] : by_class) {
    std::sort(items.begin(), items.end(),
              [](const ManifestItem& a, const ManifestItem& b) { return a.video_id < b.video_id; });
    Rng rng(derive_seed(seed, "split/" + label));
    rng.shuffle(items);
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(items.size()) * fraction));
    for (std::size_t i = 0; i < items.size(); ++i) (i < n_train ? train : val).items.push_back(items[i]);
  }
  train.sort_items();
  val.sort_items();
  return {std::move(train), std::move(val)};
}

struct ActionSwapSet {
  DatasetManifest manifest;
  std::vector<SwapJob> jobs;
};

/// Pairs each mask-bearing item's human with a background drawn uniformly
/// from items of a different class. Without a target the output has one swap
/// per mask-bearing item; with a target, humans are cycled in id order until
/// the target is reached.
inline ActionSwapSet build_mini_action_swap(const DatasetManifest& manifest, std::uint64_t seed,
                                            std::optional<std::size_t> target = std::nullopt,
                                            const std::string& output_dir = "swaps") {
  std::vector<const ManifestItem*> humans;
  std::vector<const ManifestItem*> all;
  for (const auto& item : manifest.items) {
    all.push_back(&item);
    if (item.masks_dir) humans.push_back(&item);
  }
  auto by_id = [](const ManifestItem* a, const ManifestItem* b) { return a->video_id < b->video_id; };
  std::sort(humans.begin(), humans.end(), by_id);
  std::sort(all.begin(), all.end(), by_id);
  std::map<std::string, int> human_classes;
  for (const auto* h : humans) human_classes[h->human_class]++;
  if (human_classes.size() < 2) {
    throw std::invalid_argument("build_mini_action_swap: need mask-bearing items from at least two classes");
  }

  ActionSwapSet out;
  out.manifest.classes = manifest.classes;
  const std::size_t count = target.value_or(humans.size());
  for (std::size_t k = 0; k < count; ++k) {
    const ManifestItem* human = humans[k % humans.size()];
    std::vector<const ManifestItem*> candidates;
    for (const auto* item : all)
      if (item->human_class != human->human_class) candidates.push_back(item);
    Rng rng(derive_seed(seed, "swap/" + std::to_string(k) + "/" + human->video_id));
    const ManifestItem* bg = candidates[rng.uniform_index(candidates.size())];
    char id[32];
    std::snprintf(id, sizeof id, "swap_%06zu", k);
    ManifestItem item;
    item.video_id = id;
    item.human_class = human->human_class;
    item.background_class = bg->human_class;
    item.frames_dir = output_dir + "/" + item.video_id;
    item.masks_dir = human->masks_dir;
    out.manifest.items.push_back(item);
    out.jobs.push_back({item.video_id, human->video_id, bg->video_id});
  }
  return out;
}

/// Center-of-strata indices floor(i*T/n) + floor(T/(2n)), clamped to T-1.
inline std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n) {
  if (total == 0) throw std::invalid_argument("sample_frames: empty video");
  if (n == 0) throw std::invalid_argument("sample_frames: n must be at least 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = std::min(i * total / n + total / (2 * n), total - 1);
  return idx;
}

inline FrameSequence sample_frames(const FrameSequence& video, std::size_t n = 8) {
  const auto idx = sample_indices(video.frames, n);
  FrameSequence out = FrameSequence::blank(n, video.height, video.width);
  out.fps = video.fps;
  const std::size_t bytes = video.frame_bytes();
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(video.pixels.begin() + static_cast<std::ptrdiff_t>(idx[i] * bytes), bytes,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(i * bytes));
  return out;
}

inline MaskSequence sample_masks(const MaskSequence& masks, std::size_t n = 8) {
  const auto idx = sample_indices(masks.frames, n);
  MaskSequence out = MaskSequence::filled(n, masks.height, masks.width, 0);
  const std::size_t plane = masks.height * masks.width;
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(masks.values.begin() + static_cast<std::ptrdiff_t>(idx[i] * plane), plane,
                out.values.begin() + static_cast<std::ptrdiff_t>(i * plane));
  return out;
}

}  // namespace bglab
