#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bglab/image.hpp"
#include "bglab/manifest.hpp"
#include "bglab/rng.hpp"

namespace bglab {

struct DetectionRecord {
  std::size_t frame = 0;
  std::string label;
  double confidence = 0;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

/// Thrown when a detection list carries no person box; callers skip the video.
class NoHumanFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks box ordering, confidence range and, when dimensions are given,
/// that the box lies inside the frame.
inline void validate_detection(const DetectionRecord& d, std::optional<std::size_t> width = std::nullopt,
                               std::optional<std::size_t> height = std::nullopt) {
  if (!(d.confidence >= 0 && d.confidence <= 1))
    throw std::invalid_argument("detection: confidence outside [0, 1]");
  if (!(d.x0 < d.x1) || !(d.y0 < d.y1)) throw std::invalid_argument("detection: degenerate box");
  if (d.x0 < 0 || d.y0 < 0) throw std::invalid_argument("detection: box starts outside the frame");
  if (width && d.x1 > static_cast<double>(*width)) throw std::invalid_argument("detection: box exceeds frame width");
  if (height && d.y1 > static_cast<double>(*height)) throw std::invalid_argument("detection: box exceeds frame height");
}

/// Highest-confidence "person" box; ties go to the earliest frame, then the smallest x0.
inline DetectionRecord select_person_box(const std::vector<DetectionRecord>& detections) {
  if (detections.empty()) throw std::invalid_argument("select_person_box: empty detection list");
  const DetectionRecord* best = nullptr;
  for (const auto& d : detections) {
    if (d.label != "person") continue;
    if (!best || d.confidence > best->confidence ||
        (d.confidence == best->confidence &&
         (d.frame < best->frame || (d.frame == best->frame && d.x0 < best->x0)))) {
      best = &d;
    }
  }
  if (!best) throw NoHumanFound("select_person_box: no person detection");
  return *best;
}

/// Detection file: JSON list of {frame, label, confidence, box: [x0, y0, x1, y1]}.
inline std::vector<DetectionRecord> load_detections(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open detections " + path.string());
  const auto j = nlohmann::json::parse(is);
  std::vector<DetectionRecord> out;
  for (const auto& jd : j) {
    DetectionRecord d;
    d.frame = jd.at("frame").get<std::size_t>();
    d.label = jd.at("label").get<std::string>();
    d.confidence = jd.at("confidence").get<double>();
    const auto box = jd.at("box").get<std::vector<double>>();
    if (box.size() != 4) throw std::invalid_argument("detection: box needs four coordinates");
    d.x0 = box[0];
    d.y0 = box[1];
    d.x1 = box[2];
    d.y1 = box[3];
    validate_detection(d);
    out.push_back(d);
  }
  return out;
}

/// Zeroes every pixel whose mask value is 0.
inline FrameSequence apply_mask(const FrameSequence& frames, const MaskSequence& masks) {
  require_same_geometry(frames, masks, "apply_mask");
  FrameSequence out = frames;
  for (std::size_t i = 0; i < masks.values.size(); ++i) {
    if (!masks.values[i]) {
      out.pixels[3 * i] = 0;
      out.pixels[3 * i + 1] = 0;
      out.pixels[3 * i + 2] = 0;
    }
  }
  return out;
}

/// Background resized (nearest neighbour) to the target geometry, then looped
/// or truncated from frame 0 to `frames` frames.
inline FrameSequence normalize_background(const FrameSequence& background, std::size_t frames,
                                          std::size_t height, std::size_t width) {
  if (background.empty()) throw std::invalid_argument("composite_swap: empty background");
  const FrameSequence resized = resize_nearest(background, height, width);
  FrameSequence out = FrameSequence::blank(frames, height, width);
  out.fps = background.fps;
  const std::size_t bytes = resized.frame_bytes();
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t src = t % resized.frames;
    std::copy_n(resized.pixels.begin() + static_cast<std::ptrdiff_t>(src * bytes), bytes,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(t * bytes));
  }
  return out;
}

/// Pastes the masked human onto the normalized background: out = mask ? human : background.
inline FrameSequence composite_swap(const FrameSequence& human, const MaskSequence& masks,
                                    const FrameSequence& background) {
  require_same_geometry(human, masks, "composite_swap");
  FrameSequence out = normalize_background(background, human.frames, human.height, human.width);
  out.fps = human.fps;
  for (std::size_t i = 0; i < masks.values.size(); ++i) {
    if (masks.values[i]) std::copy_n(&human.pixels[3 * i], 3, &out.pixels[3 * i]);
  }
  return out;
}

/// A counterfactual video to be rendered: the human of one item over the
/// background of another.
struct SwapJob {
  std::string video_id;
  std::string human_item;
  std::string background_item;
};

struct AugmentedSet {
  DatasetManifest manifest;
  std::vector<SwapJob> jobs;
  std::vector<std::string> skipped;  // items without masks
};

/// Doubles a training manifest: each item with a mask keeps its original
/// entry and gains one copy whose background is drawn uniformly from the
/// pool. Items without masks are excluded from both halves.
/// `output_dir` is the directory (relative to the output manifest) that the
/// rendered swaps will be written under.
inline AugmentedSet build_augmented_set(const DatasetManifest& dataset, const DatasetManifest& pool,
                                        std::uint64_t seed, const std::string& output_dir = "augmented") {
  AugmentedSet result;
  result.manifest.classes = dataset.classes;
  std::vector<const ManifestItem*> eligible;
  for (const auto& item : dataset.items) {
    if (item.masks_dir) {
      eligible.push_back(&item);
    } else {
      result.skipped.push_back(item.video_id);
    }
  }
  if (!eligible.empty() && pool.items.empty()) {
    throw std::invalid_argument("build_augmented_set: background pool is empty");
  }
  std::sort(eligible.begin(), eligible.end(),
            [](const ManifestItem* a, const ManifestItem* b) { return a->video_id < b->video_id; });
  std::vector<const ManifestItem*> backgrounds;
  for (const auto& item : pool.items) backgrounds.push_back(&item);
  std::sort(backgrounds.begin(), backgrounds.end(),
            [](const ManifestItem* a, const ManifestItem* b) { return a->video_id < b->video_id; });

  for (const ManifestItem* item : eligible) {
    Rng rng(derive_seed(seed, "augment/" + item->video_id));
    const ManifestItem* bg = backgrounds[rng.uniform_index(backgrounds.size())];
    result.manifest.items.push_back(*item);
    ManifestItem swapped = *item;
    swapped.video_id = item->video_id + "__aug";
    swapped.background_class = bg->background_class ? bg->background_class : bg->human_class;
    swapped.frames_dir = output_dir + "/" + swapped.video_id;
    swapped.background_dir.reset();
    result.manifest.items.push_back(std::move(swapped));
    result.jobs.push_back({item->video_id + "__aug", item->video_id, bg->video_id});
  }
  result.manifest.sort_items();
  return result;
}

/// Background pixels for an item: its plate when present, else its frames.
inline const FrameSequence& background_source(const VideoClip& clip) {
  return clip.background ? *clip.background : clip.frames;
}

/// Renders one swap job from in-memory clips.
inline FrameSequence render_swap(const SwapJob& job, const ClipStore& humans, const ClipStore& backgrounds) {
  const auto h = humans.find(job.human_item);
  if (h == humans.end()) throw std::invalid_argument("render_swap: unknown human item " + job.human_item);
  if (!h->second.masks) throw std::invalid_argument("render_swap: item " + job.human_item + " has no mask");
  const auto b = backgrounds.find(job.background_item);
  if (b == backgrounds.end())
    throw std::invalid_argument("render_swap: unknown background item " + job.background_item);
  return composite_swap(h->second.frames, *h->second.masks, background_source(b->second));
}

}  // namespace bglab
