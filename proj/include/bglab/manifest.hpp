#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bglab/image.hpp"

namespace bglab {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One video entry. Directory fields are stored as written in the JSON file
/// and resolved against the manifest's own directory when loading pixels.
struct ManifestItem {
  std::string video_id;
  std::string human_class;
  std::optional<std::string> background_class;
  std::string frames_dir;
  std::optional<std::string> masks_dir;
  // Optional human-free background plate (for example an inpainted video).
  std::optional<std::string> background_dir;

  friend bool operator==(const ManifestItem&, const ManifestItem&) = default;
};

struct DatasetManifest {
  std::vector<std::string> classes;  // ordered vocabulary of human_class labels
  std::vector<ManifestItem> items;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;

  std::size_t class_index(const std::string& label) const {
    const auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) throw ManifestError("label '" + label + "' is not in the vocabulary");
    return static_cast<std::size_t>(it - classes.begin());
  }

  const ManifestItem& find(const std::string& video_id) const {
    for (const auto& item : items)
      if (item.video_id == video_id) return item;
    throw ManifestError("no item with video_id '" + video_id + "'");
  }

  void sort_items() {
    std::sort(items.begin(), items.end(),
              [](const ManifestItem& a, const ManifestItem& b) { return a.video_id < b.video_id; });
  }

  /// Unique ids; every human_class is in the vocabulary. background_class may
  /// name a scene label from another vocabulary and is not checked.
  void validate() const {
    std::set<std::string> ids;
    const std::set<std::string> vocab(classes.begin(), classes.end());
    if (vocab.size() != classes.size()) throw ManifestError("manifest: duplicate class in vocabulary");
    for (const auto& item : items) {
      if (item.video_id.empty()) throw ManifestError("manifest: empty video_id");
      if (!ids.insert(item.video_id).second) {
        throw ManifestError("manifest: duplicate video_id '" + item.video_id + "'");
      }
      if (!vocab.count(item.human_class)) {
        throw ManifestError("manifest: item '" + item.video_id + "' has label '" + item.human_class +
                            "' outside the vocabulary");
      }
    }
  }
};

inline nlohmann::json to_json(const ManifestItem& item) {
  nlohmann::json j;
  j["video_id"] = item.video_id;
  j["human_class"] = item.human_class;
  j["background_class"] = item.background_class ? nlohmann::json(*item.background_class) : nlohmann::json();
  j["frames_dir"] = item.frames_dir;
  j["masks_dir"] = item.masks_dir ? nlohmann::json(*item.masks_dir) : nlohmann::json();
  if (item.background_dir) j["background_dir"] = *item.background_dir;
  return j;
}

inline nlohmann::json to_json(const DatasetManifest& manifest) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : manifest.items) items.push_back(to_json(item));
  return {{"classes", manifest.classes}, {"items", items}};
}

namespace detail {

inline std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    if (!j.contains("items")) throw ManifestError("manifest: missing 'items'");
    for (const auto& ji : j.at("items")) {
      ManifestItem item;
      item.video_id = ji.at("video_id").get<std::string>();
      item.human_class = ji.at("human_class").get<std::string>();
      item.background_class = detail::optional_string(ji, "background_class");
      item.frames_dir = ji.at("frames_dir").get<std::string>();
      item.masks_dir = detail::optional_string(ji, "masks_dir");
      item.background_dir = detail::optional_string(ji, "background_dir");
      m.items.push_back(std::move(item));
    }
    if (j.contains("classes")) {
      m.classes = j.at("classes").get<std::vector<std::string>>();
    } else {
      // vocabulary in first-seen order when the file does not carry one
      for (const auto& item : m.items)
        if (std::find(m.classes.begin(), m.classes.end(), item.human_class) == m.classes.end())
          m.classes.push_back(item.human_class);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ManifestError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

/// Writes items sorted by video_id so the output is independent of assembly order.
inline void save_manifest(const std::filesystem::path& path, DatasetManifest manifest) {
  manifest.sort_items();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw ManifestError("cannot open " + path.string() + " for writing");
  os << to_json(manifest).dump(2) << '\n';
  if (!os) throw ManifestError("write failed for " + path.string());
}

/// Resolves a manifest directory entry against the manifest's own location.
inline std::filesystem::path resolve_dir(const std::filesystem::path& manifest_dir, const std::string& entry) {
  const std::filesystem::path p(entry);
  return p.is_absolute() ? p : (manifest_dir / p).lexically_normal();
}

/// Expresses `target` relative to `base` when possible, for portable manifests.
inline std::string relative_entry(const std::filesystem::path& target, const std::filesystem::path& base) {
  const auto rel = std::filesystem::absolute(target).lexically_normal().lexically_relative(
      std::filesystem::absolute(base).lexically_normal());
  return rel.empty() ? target.generic_string() : rel.generic_string();
}

/// Pixels of one manifest item.
struct VideoClip {
  FrameSequence frames;
  std::optional<MaskSequence> masks;
  std::optional<FrameSequence> background;
};

using ClipStore = std::map<std::string, VideoClip>;

inline VideoClip load_clip(const std::filesystem::path& manifest_dir, const ManifestItem& item) {
  VideoClip clip;
  clip.frames = load_frames(resolve_dir(manifest_dir, item.frames_dir));
  if (item.masks_dir) {
    clip.masks = load_masks(resolve_dir(manifest_dir, *item.masks_dir));
    require_same_geometry(clip.frames, *clip.masks, "load_clip");
  }
  if (item.background_dir) clip.background = load_frames(resolve_dir(manifest_dir, *item.background_dir));
  return clip;
}

inline ClipStore load_clips(const std::filesystem::path& manifest_dir, const DatasetManifest& manifest) {
  ClipStore store;
  for (const auto& item : manifest.items) store.emplace(item.video_id, load_clip(manifest_dir, item));
  return store;
}

}  // namespace bglab
