#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bglab/image.hpp"
#include "bglab/manifest.hpp"
#include "bglab/rng.hpp"

namespace bglab {

/// Procedural bias sandbox: every class owns a sprite shape, a motion
/// pattern and a canonical background texture. With probability `rho` a
/// video uses its own class's texture, otherwise one of the other classes'
/// textures chosen uniformly, so rho = 1 is fully biased and rho = 1/classes
/// is unbiased.
struct SandboxConfig {
  std::size_t num_classes = 4;
  std::size_t frames = 8;
  std::size_t size = 32;
  double rho = 1.0;
  std::size_t sprite_size = 7;
  int pixel_noise = 12;  // uniform +- amplitude added to texture pixels

  friend bool operator==(const SandboxConfig&, const SandboxConfig&) = default;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("sandbox: class count must be at least 2");
    if (!(rho >= 0 && rho <= 1)) throw std::invalid_argument("sandbox: rho must be in [0, 1]");
    if (frames == 0) throw std::invalid_argument("sandbox: frames must be positive");
    if (sprite_size < 3 || sprite_size * 2 > size)
      throw std::invalid_argument("sandbox: sprite size must be >= 3 and at most half the frame");
    if (pixel_noise < 0 || pixel_noise > 64) throw std::invalid_argument("sandbox: pixel_noise out of range");
  }
};

inline nlohmann::json to_json(const SandboxConfig& c) {
  return {{"num_classes", c.num_classes}, {"frames", c.frames},           {"size", c.size},
          {"rho", c.rho},                 {"sprite_size", c.sprite_size}, {"pixel_noise", c.pixel_noise}};
}

inline SandboxConfig sandbox_config_from_json(const nlohmann::json& j) {
  SandboxConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "num_classes") c.num_classes = value.get<std::size_t>();
    else if (key == "frames") c.frames = value.get<std::size_t>();
    else if (key == "size") c.size = value.get<std::size_t>();
    else if (key == "rho") c.rho = value.get<double>();
    else if (key == "sprite_size") c.sprite_size = value.get<std::size_t>();
    else if (key == "pixel_noise") c.pixel_noise = value.get<int>();
    else throw std::invalid_argument("sandbox: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

inline std::string sandbox_class_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "action_%02zu", k);
  return buf;
}

namespace sandbox_detail {

inline constexpr std::size_t kShapes = 8;
inline constexpr std::size_t kMotions = 8;
inline constexpr std::size_t kTextures = 6;
inline constexpr std::array<std::uint8_t, 3> kSpriteColor{250, 214, 170};

inline constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{40, 90, 170},
                                                                      {30, 130, 60},
                                                                      {150, 60, 40},
                                                                      {110, 50, 140},
                                                                      {20, 120, 130},
                                                                      {140, 120, 30},
                                                                      {70, 70, 70},
                                                                      {160, 40, 100}}};

inline bool shape_pixel(std::size_t shape, long dy, long dx, long r) {
  const long ay = std::labs(dy), ax = std::labs(dx);
  switch (shape % kShapes) {
    case 0: return true;                                   // block
    case 1: return ay <= r / 3 || ax <= r / 3;             // plus
    case 2: return ay + ax <= r;                           // diamond
    case 3: return std::labs(ay - ax) <= 1;                // X
    case 4: return std::max(ay, ax) >= r - 1;              // ring
    case 5: return dy <= -r + 1 || ax <= r / 3;            // T
    case 6: return ax <= r / 2;                            // vertical bar
    default: return ay <= r / 2;                           // horizontal bar
  }
}

// Sprite centre at frame t for a motion family; coordinates are clamped by the caller.
inline std::array<double, 2> motion_center(std::size_t motion, double t, double frames, double size,
                                           double phase_y, double phase_x) {
  const double c = size / 2;
  const double span = size / 2 - 5;
  const double u = frames > 1 ? t / (frames - 1) : 0.0;  // 0..1 across the clip
  const double kPi = 3.14159265358979323846;
  switch (motion % kMotions) {
    case 0: return {c + phase_y, c - span + 2 * span * u};                   // left to right
    case 1: return {c - span + 2 * span * u, c + phase_x};                   // top to bottom
    case 2: return {c + phase_y, c + span * std::sin(2 * kPi * u * 2)};      // horizontal oscillation
    case 3: return {c + span * std::sin(2 * kPi * u * 2), c + phase_x};      // vertical oscillation
    case 4: return {c + span * 0.8 * std::sin(2 * kPi * u), c + span * 0.8 * std::cos(2 * kPi * u)};
    case 5: return {c - span + 2 * span * u, c + span * (std::fmod(u * 4, 2.0) < 1 ? 1 : -1) * 0.6};
    case 6: return {c + phase_y + ((static_cast<long>(t) % 2) ? 1.5 : -1.5), c + phase_x};  // jitter
    default: return {c + span - 2 * span * u, c + span - 2 * span * u};      // diagonal up-left
  }
}

inline std::array<std::uint8_t, 3> texture_pixel(std::size_t texture_class, std::size_t y, std::size_t x,
                                                 double offset) {
  const auto& a = kPalette[texture_class % kPalette.size()];
  const auto& b = kPalette[(texture_class + 3) % kPalette.size()];
  const double fy = static_cast<double>(y) + offset, fx = static_cast<double>(x) + offset;
  bool first = false;
  switch (texture_class % kTextures) {
    case 0: first = static_cast<long>(std::floor(fy / 3)) % 2 == 0; break;             // horizontal stripes
    case 1: first = static_cast<long>(std::floor(fx / 3)) % 2 == 0; break;             // vertical stripes
    case 2: first = (static_cast<long>(fy / 4) + static_cast<long>(fx / 4)) % 2 == 0; break;  // checks
    case 3: first = static_cast<long>(std::floor((fx + fy) / 4)) % 2 == 0; break;      // diagonal
    case 4: first = std::sin(fx * 0.45) * std::sin(fy * 0.45) > 0; break;              // blobs
    default: first = static_cast<long>(std::sqrt((fx - 16) * (fx - 16) + (fy - 16) * (fy - 16)) / 3) % 2 == 0;
  }
  const auto& c = first ? a : b;
  return c;
}

}  // namespace sandbox_detail

struct SandboxVideoSpec {
  std::string video_id;
  std::size_t human_class = 0;
  std::size_t texture_class = 0;
};

/// Renders one sandbox video with its exact sprite mask and a sprite-free plate.
inline VideoClip render_sandbox_video(const SandboxConfig& cfg, std::size_t human_class,
                                      std::size_t texture_class, Rng& rng) {
  using namespace sandbox_detail;
  const std::size_t t_len = cfg.frames, s = cfg.size;
  VideoClip clip;
  clip.background = FrameSequence::blank(t_len, s, s);
  const double offset = rng.uniform(0, 6);
  FrameSequence plate = FrameSequence::blank(1, s, s);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const auto px = texture_pixel(texture_class, y, x, offset);
      for (int ch = 0; ch < 3; ++ch) {
        const long noise = cfg.pixel_noise
                               ? static_cast<long>(rng.uniform_index(2 * cfg.pixel_noise + 1)) - cfg.pixel_noise
                               : 0;
        plate.at(0, y, x)[ch] = static_cast<std::uint8_t>(std::clamp<long>(px[ch] + noise, 0, 255));
      }
    }
  for (std::size_t t = 0; t < t_len; ++t)
    std::copy_n(plate.pixels.begin(), plate.frame_bytes(),
                clip.background->pixels.begin() + static_cast<std::ptrdiff_t>(t * plate.frame_bytes()));

  clip.frames = *clip.background;
  clip.masks = MaskSequence::filled(t_len, s, s, 0);
  const double phase_y = rng.uniform(-4, 4), phase_x = rng.uniform(-4, 4);
  const long r = static_cast<long>(cfg.sprite_size / 2);
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto ctr = motion_center(human_class % kMotions, static_cast<double>(t), static_cast<double>(t_len),
                                   static_cast<double>(s), phase_y, phase_x);
    const long cy = std::clamp<long>(std::lround(ctr[0]), r, static_cast<long>(s) - 1 - r);
    const long cx = std::clamp<long>(std::lround(ctr[1]), r, static_cast<long>(s) - 1 - r);
    for (long dy = -r; dy <= r; ++dy)
      for (long dx = -r; dx <= r; ++dx) {
        if (!shape_pixel(human_class, dy, dx, r)) continue;
        const auto y = static_cast<std::size_t>(cy + dy), x = static_cast<std::size_t>(cx + dx);
        std::copy(kSpriteColor.begin(), kSpriteColor.end(), clip.frames.at(t, y, x));
        clip.masks->values[clip.masks->offset(t, y, x)] = 1;
      }
  }
  return clip;
}

struct SandboxData {
  DatasetManifest manifest;
  ClipStore clips;
  std::vector<SandboxVideoSpec> specs;
};

/// Generates `per_class` videos for every class. Item directories are laid
/// out as videos/<id>/{frames,masks,background} relative to the manifest.
inline SandboxData generate_synthetic_sandbox(const SandboxConfig& cfg, std::size_t per_class, std::uint64_t seed,
                                              const std::string& prefix = "sb") {
  cfg.validate();
  SandboxData data;
  for (std::size_t k = 0; k < cfg.num_classes; ++k) data.manifest.classes.push_back(sandbox_class_name(k));
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_c%02zu_%05zu", prefix.c_str(), k, i);
      Rng rng(derive_seed(seed, std::string("sandbox/") + id));
      std::size_t texture = k;
      if (!rng.bernoulli(cfg.rho)) {
        texture = rng.uniform_index(cfg.num_classes - 1);
        if (texture >= k) ++texture;
      }
      data.clips.emplace(id, render_sandbox_video(cfg, k, texture, rng));
      ManifestItem item;
      item.video_id = id;
      item.human_class = sandbox_class_name(k);
      item.background_class = sandbox_class_name(texture);
      const std::string dir = std::string("videos/") + id;
      item.frames_dir = dir + "/frames";
      item.masks_dir = dir + "/masks";
      item.background_dir = dir + "/background";
      data.manifest.items.push_back(std::move(item));
      data.specs.push_back({id, k, texture});
    }
  }
  data.manifest.sort_items();
  return data;
}

/// Writes clips under `root` following each item's directory entries.
inline void write_clips(const std::filesystem::path& root, const DatasetManifest& manifest, const ClipStore& clips) {
  for (const auto& item : manifest.items) {
    const auto it = clips.find(item.video_id);
    if (it == clips.end()) throw std::invalid_argument("write_clips: no pixels for " + item.video_id);
    save_frames(resolve_dir(root, item.frames_dir), it->second.frames);
    if (item.masks_dir && it->second.masks) save_masks(resolve_dir(root, *item.masks_dir), *it->second.masks);
    if (item.background_dir && it->second.background)
      save_frames(resolve_dir(root, *item.background_dir), *it->second.background);
  }
}

}  // namespace bglab
