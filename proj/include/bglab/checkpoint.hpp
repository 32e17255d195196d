#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bglab/gradcheck.hpp"
#include "bglab/tensor.hpp"

namespace bglab {

// Layout: "BLAB1", u64 parameter count, then per parameter: u64 name length,
// name bytes, u64 rank, u64 dims..., f64 values. All little-endian.
inline constexpr std::array<char, 5> kCheckpointMagic{'B', 'L', 'A', 'B', '1'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw CheckpointError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& params) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u64(os, params.size());
  for (const auto& p : params) {
    detail::put_u64(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u64(os, p.tensor.rank());
    for (const auto d : p.tensor.shape()) detail::put_u64(os, d);
    for (const double v : p.tensor.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  std::array<char, 5> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw CheckpointError("checkpoint: bad magic, expected BLAB1");
  }
  const auto count = detail::get_u64(is);
  std::vector<NamedTensor> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = detail::get_u64(is);
    if (name_len > (1u << 16)) throw CheckpointError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw CheckpointError("checkpoint: truncated file");
    const auto rank = detail::get_u64(is);
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(is);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(detail::get_u64(is));
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
  if (!os) throw CheckpointError("checkpoint: write failed for " + path.string());
}

inline std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

/// Copies checkpoint values into `params` by name. Every parameter must be
/// present with a matching shape.
inline void assign_checkpoint(const std::vector<NamedTensor>& params,
                              const std::vector<NamedTensor>& saved) {
  for (const auto& p : params) {
    const NamedTensor* match = nullptr;
    for (const auto& s : saved)
      if (s.name == p.name) match = &s;
    if (!match) throw CheckpointError("checkpoint: missing parameter '" + p.name + "'");
    if (match->tensor.shape() != p.tensor.shape()) {
      throw CheckpointError("checkpoint: parameter '" + p.name + "' has shape " +
                            shape_str(match->tensor.shape()) + ", model expects " +
                            shape_str(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    const auto src = match->tensor.data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

}  // namespace bglab
