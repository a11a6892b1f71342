#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "befunet/nn.hpp"
#include "befunet/tensor.hpp"

namespace befunet {

// Checkpoint wire format (little-endian):
//   magic "BEFU" | version u32 = 1 | tensor count u32
//   per tensor: name len u16 | name bytes | dtype u8 (0=f32, 1=f64)
//               | rank u8 | dims u32 each | raw row-major payload
inline constexpr char kCheckpointMagic[4] = {'B', 'E', 'F', 'U'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void write_pod(std::ofstream& f, U v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::ifstream& f, const std::string& what) {
  U v;
  f.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!f) throw IoError("checkpoint truncated while reading " + what);
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else return 1;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const ParamList<T>& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, 4);
  detail::write_pod<std::uint32_t>(f, kCheckpointVersion);
  detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > 0xffff) throw IoError("parameter name too long: " + p.name);
    detail::write_pod<std::uint16_t>(f, static_cast<std::uint16_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_pod<std::uint8_t>(f, detail::dtype_code<T>());
    detail::write_pod<std::uint8_t>(f, static_cast<std::uint8_t>(p.tensor.rank()));
    for (int i = 0; i < p.tensor.rank(); ++i)
      detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(p.tensor.dim(i)));
    f.write(reinterpret_cast<const char*>(p.tensor.value().data()),
            static_cast<std::streamsize>(p.tensor.numel() * sizeof(T)));
  }
  if (!f) throw IoError("write failed: " + path);
}

template <typename T>
struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;
};

template <typename T>
std::vector<CheckpointEntry<T>> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(f, "version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint32_t>(f, "tensor count");
  std::vector<CheckpointEntry<T>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint16_t>(f, "name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw IoError("checkpoint truncated while reading name");
    const auto dtype = detail::read_pod<std::uint8_t>(f, "dtype");
    if (dtype != detail::dtype_code<T>())
      throw FormatError("checkpoint dtype mismatch for tensor " + name);
    const auto rank = detail::read_pod<std::uint8_t>(f, "rank");
    std::vector<int> shape;
    std::size_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      const auto d = detail::read_pod<std::uint32_t>(f, "dim");
      shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    std::vector<T> data(numel);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(numel * sizeof(T)));
    if (!f) throw IoError("checkpoint truncated while reading payload of " + name);
    out.push_back({std::move(name), std::move(shape), std::move(data)});
  }
  return out;
}

// Fill a model's parameters from a checkpoint; every parameter must be
// present with a matching shape.
template <typename T>
void load_checkpoint_into(ParamList<T> params, const std::string& path) {
  auto entries = load_checkpoint<T>(path);
  if (entries.size() != params.size())
    throw FormatError("checkpoint holds " + std::to_string(entries.size()) +
                      " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& e = entries[i];
    if (e.name != p.name)
      throw FormatError("checkpoint tensor '" + e.name + "' does not match model '" +
                        p.name + "'");
    if (e.shape != p.tensor.shape())
      throw FormatError("shape mismatch for " + e.name);
    p.tensor.value() = e.data;
  }
}

}  // namespace befunet
