#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "hoflow/core/params.hpp"

// Checkpoint container: magic "HOFT", version u32, entry count u32, then per
// entry: name length u32, UTF-8 name, rank u32, dims (u32 each), raw f32
// payload. All integers and floats little-endian. Round-trips bit-exactly.

namespace hoflow {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {
inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline uint32_t read_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error("checkpoint: truncated file " + path);
  return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write("HOFT", 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params.items()) {
    detail::write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int d : t.shape()) detail::write_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * 4));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

// Reads a checkpoint into a fresh ParamSet (entries in file order).
inline ParamSet read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "HOFT", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = detail::read_u32(is, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " in " + path);
  const uint32_t count = detail::read_u32(is, path);
  ParamSet out;
  for (uint32_t e = 0; e < count; ++e) {
    const uint32_t nlen = detail::read_u32(is, path);
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw std::runtime_error("checkpoint: truncated " + path);
    const uint32_t rank = detail::read_u32(is, path);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i)
      shape[i] = static_cast<int>(detail::read_u32(is, path));
    std::vector<float> data(static_cast<size_t>(numel(shape)));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * 4)))
      throw std::runtime_error("checkpoint: truncated payload in " + path);
    out.add(name, std::move(shape), std::move(data));
  }
  return out;
}

// Copies values from a checkpoint into existing parameters by name.
// Every name in `params` must be present with an identical shape.
inline void load_checkpoint(const std::string& path, ParamSet& params) {
  ParamSet file = read_checkpoint(path);
  for (auto& [name, t] : params.items()) {
    Tensor* src = file.find(name);
    if (!src) throw std::runtime_error("checkpoint: missing parameter '" + name + "' in " + path);
    if (src->shape() != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(src->shape()) + " vs model " + shape_str(t.shape()));
    std::copy(src->data(), src->data() + src->size(), t.data());
  }
}

}  // namespace hoflow
