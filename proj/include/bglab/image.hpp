#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bglab {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// T frames of H x W x 3 8-bit RGB, stored frame-major then row-major.
struct FrameSequence {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
  double fps = 0;  // 0 when unknown

  static FrameSequence blank(std::size_t t, std::size_t h, std::size_t w) {
    return {t, h, w, std::vector<std::uint8_t>(t * h * w * 3, 0), 0};
  }

  bool empty() const { return frames == 0 || height == 0 || width == 0; }
  std::size_t frame_bytes() const { return height * width * 3; }
  std::size_t offset(std::size_t t, std::size_t y, std::size_t x) const {
    return ((t * height + y) * width + x) * 3;
  }
  std::uint8_t* at(std::size_t t, std::size_t y, std::size_t x) { return &pixels[offset(t, y, x)]; }
  const std::uint8_t* at(std::size_t t, std::size_t y, std::size_t x) const {
    return &pixels[offset(t, y, x)];
  }

  friend bool operator==(const FrameSequence& a, const FrameSequence& b) {
    return a.frames == b.frames && a.height == b.height && a.width == b.width &&
           a.pixels == b.pixels;
  }
};

/// T binary H x W masks; 1 = human, 0 = background.
struct MaskSequence {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  static MaskSequence filled(std::size_t t, std::size_t h, std::size_t w, std::uint8_t v) {
    return {t, h, w, std::vector<std::uint8_t>(t * h * w, v)};
  }

  std::size_t offset(std::size_t t, std::size_t y, std::size_t x) const {
    return (t * height + y) * width + x;
  }
  std::uint8_t at(std::size_t t, std::size_t y, std::size_t x) const { return values[offset(t, y, x)]; }

  bool is_binary() const {
    return std::all_of(values.begin(), values.end(), [](auto v) { return v <= 1; });
  }

  friend bool operator==(const MaskSequence&, const MaskSequence&) = default;
};

inline void require_same_geometry(const FrameSequence& f, const MaskSequence& m, const char* op) {
  if (f.frames != m.frames || f.height != m.height || f.width != m.width) {
    std::ostringstream os;
    os << op << ": frames are " << f.frames << "x" << f.height << "x" << f.width
       << " but masks are " << m.frames << "x" << m.height << "x" << m.width;
    throw std::invalid_argument(os.str());
  }
}

/// Nearest-neighbour resize of every frame; sample position floor(i * src / dst).
inline FrameSequence resize_nearest(const FrameSequence& in, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("resize_nearest: zero-size target");
  if (in.height == height && in.width == width) return in;
  FrameSequence out = FrameSequence::blank(in.frames, height, width);
  out.fps = in.fps;
  for (std::size_t t = 0; t < in.frames; ++t)
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy = y * in.height / height;
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t sx = x * in.width / width;
        std::copy_n(in.at(t, sy, sx), 3, out.at(t, y, x));
      }
    }
  return out;
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageIoError("cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageIoError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw ImageIoError("write failed for " + path.string());
}

// Parses a binary netpbm header; returns the offset of the first raster byte.
inline std::size_t parse_netpbm_header(const std::string& bytes, const char* magic,
                                       std::size_t& width, std::size_t& height,
                                       const std::filesystem::path& path) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw ImageIoError(path.string() + ": expected " + magic + " header");
  }
  std::size_t pos = 2;
  std::size_t fields[3];
  for (auto& field : fields) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
      any = true;
    }
    if (!any) throw ImageIoError(path.string() + ": malformed header");
    field = value;
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ImageIoError(path.string() + ": malformed header");
  }
  ++pos;
  if (fields[2] != 255) throw ImageIoError(path.string() + ": only maxval 255 is supported");
  width = fields[0];
  height = fields[1];
  return pos;
}

}  // namespace detail

inline std::string frame_file_name(std::size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.%s", index, ext);
  return buf;
}

/// Reads one P6 image as a single-frame sequence.
inline FrameSequence read_ppm(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t w = 0, h = 0;
  const std::size_t pos = detail::parse_netpbm_header(bytes, "P6", w, h, path);
  if (bytes.size() - pos < w * h * 3) throw ImageIoError(path.string() + ": truncated raster");
  FrameSequence out = FrameSequence::blank(1, h, w);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), w * h * 3, out.pixels.begin());
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const FrameSequence& seq, std::size_t t) {
  std::string bytes = "P6\n" + std::to_string(seq.width) + " " + std::to_string(seq.height) + "\n255\n";
  const auto* first = seq.at(t, 0, 0);
  bytes.append(reinterpret_cast<const char*>(first), seq.frame_bytes());
  detail::write_file(path, bytes);
}

/// Reads a P5 mask stored as 0/255 into a single-frame {0,1} sequence.
inline MaskSequence read_pgm_mask(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t w = 0, h = 0;
  const std::size_t pos = detail::parse_netpbm_header(bytes, "P5", w, h, path);
  if (bytes.size() - pos < w * h) throw ImageIoError(path.string() + ": truncated raster");
  MaskSequence out = MaskSequence::filled(1, h, w, 0);
  for (std::size_t i = 0; i < w * h; ++i) {
    const auto v = static_cast<std::uint8_t>(bytes[pos + i]);
    if (v != 0 && v != 255) {
      throw ImageIoError(path.string() + ": mask value " + std::to_string(v) + " is not 0 or 255");
    }
    out.values[i] = v ? 1 : 0;
  }
  return out;
}

inline void write_pgm_mask(const std::filesystem::path& path, const MaskSequence& seq, std::size_t t) {
  std::string bytes = "P5\n" + std::to_string(seq.width) + " " + std::to_string(seq.height) + "\n255\n";
  const std::size_t plane = seq.height * seq.width;
  for (std::size_t i = 0; i < plane; ++i) bytes.push_back(seq.values[t * plane + i] ? '\xff' : '\0');
  detail::write_file(path, bytes);
}

namespace detail {

inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir, const char* ext) {
  if (!std::filesystem::is_directory(dir)) throw ImageIoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && entry.path().extension() == std::string(".") + ext) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

/// Loads frame_%05d.ppm files from a directory in name order.
inline FrameSequence load_frames(const std::filesystem::path& dir) {
  const auto files = detail::list_frames(dir, "ppm");
  if (files.empty()) throw ImageIoError("no frame_*.ppm files in " + dir.string());
  FrameSequence out;
  for (const auto& f : files) {
    const FrameSequence one = read_ppm(f);
    if (out.frames == 0) {
      out.height = one.height;
      out.width = one.width;
    } else if (one.height != out.height || one.width != out.width) {
      throw ImageIoError(f.string() + ": frame size differs from the first frame");
    }
    out.pixels.insert(out.pixels.end(), one.pixels.begin(), one.pixels.end());
    ++out.frames;
  }
  return out;
}

inline void save_frames(const std::filesystem::path& dir, const FrameSequence& seq) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames; ++t) write_ppm(dir / frame_file_name(t, "ppm"), seq, t);
}

inline MaskSequence load_masks(const std::filesystem::path& dir) {
  const auto files = detail::list_frames(dir, "pgm");
  if (files.empty()) throw ImageIoError("no frame_*.pgm files in " + dir.string());
  MaskSequence out;
  for (const auto& f : files) {
    const MaskSequence one = read_pgm_mask(f);
    if (out.frames == 0) {
      out.height = one.height;
      out.width = one.width;
    } else if (one.height != out.height || one.width != out.width) {
      throw ImageIoError(f.string() + ": mask size differs from the first mask");
    }
    out.values.insert(out.values.end(), one.values.begin(), one.values.end());
    ++out.frames;
  }
  return out;
}

inline void save_masks(const std::filesystem::path& dir, const MaskSequence& seq) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames; ++t) write_pgm_mask(dir / frame_file_name(t, "pgm"), seq, t);
}

}  // namespace bglab
