/*
 * Copyright 2026 The saekit authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "saekit/models.hpp"

namespace saekit {

// Checkpoint layout: magic "SAEKIT1", u64 tensor count, then per tensor:
// u64 name length, name bytes, u64 rank, u64 extents, f32 values. All
// integers 64-bit little-endian, values 32-bit little-endian floats.
inline constexpr char kCheckpointMagic[] = {'S', 'A', 'E', 'K', 'I', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}

inline uint64_t read_u64(std::istream& is, const std::string& what) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8))
    throw FormatError("checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace detail

struct NamedTensorF {
  std::string name;
  TensorF value;
};

inline void write_checkpoint(const std::string& path,
                             const std::vector<NamedTensorF>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_u64(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail::write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u64(os, static_cast<uint64_t>(t.rank()));
    for (int64_t d = 0; d < t.rank(); ++d)
      detail::write_u64(os, static_cast<uint64_t>(t.extent(d)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * 4));
  }
  if (!os) throw FormatError("checkpoint: write to '" + path + "' failed");
}

inline std::vector<NamedTensorF> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw FormatError("checkpoint '" + path + "': bad magic");
  const uint64_t count = detail::read_u64(is, "tensor count");
  std::vector<NamedTensorF> out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t name_len = detail::read_u64(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw FormatError("checkpoint: truncated tensor name");
    const uint64_t rank = detail::read_u64(is, "rank of '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape)
      e = static_cast<int64_t>(detail::read_u64(is, "extent of '" + name + "'"));
    TensorF t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * 4)))
      throw FormatError("checkpoint: truncated values of '" + name + "'");
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

/// Saves every named tensor (parameters and running buffers) in the
/// instance's stable order.
template <typename S>
void save_checkpoint(const ModelInstance<S>& m, const std::string& path) {
  std::vector<NamedTensorF> tensors;
  tensors.reserve(m.names().size());
  for (const auto& name : m.names())
    tensors.push_back({name, m.entry(name).value.template cast<float>()});
  write_checkpoint(path, tensors);
}

/// Restores tensors by name into an already-built instance; every name and
/// shape must match, in both directions.
template <typename S>
void load_checkpoint(ModelInstance<S>& m, const std::string& path) {
  auto tensors = read_checkpoint(path);
  if (tensors.size() != m.names().size())
    throw FormatError("checkpoint '" + path + "' holds " +
                      std::to_string(tensors.size()) + " tensors, model expects " +
                      std::to_string(m.names().size()) +
                      " (arch mismatch?)");
  for (auto& [name, value] : tensors) {
    if (!m.has(name))
      throw FormatError("checkpoint tensor '" + name +
                        "' does not exist in this model (arch mismatch?)");
    auto& e = m.entry(name);
    if (e.value.shape() != value.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(value.shape()) + ", model expects " +
                        shape_str(e.value.shape()));
    e.value = value.template cast<S>();
  }
}

}  // namespace saekit
