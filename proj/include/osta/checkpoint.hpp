#pragma once

#include "mci.hpp"
#include "model.hpp"
#include "optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace osta {

/// One pruning event: at pause `pause` (1-based) IC `index` was removed with `score`.
struct Elimination {
  int pause = 0;
  std::uint64_t index = 0;
  double score = 0.0;

  friend bool operator==(const Elimination&, const Elimination&) = default;
};

/// Everything needed to resume a run bit-for-bit. Random streams are
/// counter-based, so (seed, iteration) is the complete generator state.
struct Checkpoint {
  ModelParams<float> params;
  OptimizerState optimizer;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::vector<std::uint64_t> remaining; // surviving IC indices, empty for single-combination runs
  std::vector<Elimination> eliminated;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/*
    OSTK layout, little-endian:

      "OSTK" | version u16 | arch-hash u64 | tensor count u32
      per tensor: name length u32 | name bytes | rank u32 | dims u32[rank] | float32 data
      optimizer:  momentum f32 | weight decay f32 | per tensor float32 velocity (same shapes)
      rng:        seed u64 | iteration u64
      pruning:    remaining count u32 | u64[count] | eliminated count u32 | (pause u32, index u64, score f64)[count]
 */
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  using detail::put_le;
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'O', 'S', 'T', 'K'});
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, arch_hash(c.params));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.params.tensors.size()));
  for (const auto& t : c.params.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_le<std::uint32_t>(out, d);
    for (float v : t.data) put_le<float>(out, v);
  }
  put_le<float>(out, c.optimizer.momentum);
  put_le<float>(out, c.optimizer.weight_decay);
  if (c.optimizer.velocity.size() != c.params.tensors.size()) {
    throw std::invalid_argument("optimizer state does not match parameters");
  }
  for (std::size_t t = 0; t < c.params.tensors.size(); ++t) {
    if (c.optimizer.velocity[t].size() != c.params.tensors[t].size()) {
      throw std::invalid_argument("optimizer buffer shape mismatch");
    }
    for (float v : c.optimizer.velocity[t]) put_le<float>(out, v);
  }
  put_le<std::uint64_t>(out, c.seed);
  put_le<std::uint64_t>(out, c.iteration);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.remaining.size()));
  for (auto r : c.remaining) put_le<std::uint64_t>(out, r);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.eliminated.size()));
  for (const auto& e : c.eliminated) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.pause));
    put_le<std::uint64_t>(out, e.index);
    put_le<double>(out, e.score);
  }
  return out;
}

/// Decodes a checkpoint. If `expected_arch` is given, a different architecture
/// hash is refused.
inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                    std::optional<std::uint64_t> expected_arch = std::nullopt) {
  detail::ByteReader r(bytes);
  const auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), "OSTK", 4) != 0) throw FormatError("bad magic, expected OSTK", 0);
  const auto version_at = r.position();
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const auto hash_at = r.position();
  const auto stored_hash = r.get<std::uint64_t>("arch hash");
  if (expected_arch && *expected_arch != stored_hash) {
    throw FormatError("checkpoint architecture does not match the model", hash_at);
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != 6) throw FormatError("expected 6 tensors, found " + std::to_string(count), hash_at + 8);

  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor<float> t;
    const auto len = r.get<std::uint32_t>("name length");
    const auto name = r.bytes(len, "tensor name");
    t.name.assign(name.begin(), name.end());
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw FormatError("bad tensor rank", r.position());
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.get<std::uint32_t>("dims"));
      n *= t.dims.back();
    }
    r.require(n * 4, "tensor data");
    t.data.resize(n);
    for (auto& v : t.data) v = r.get<float>("tensor data");
    c.params.tensors.push_back(std::move(t));
  }
  const auto& w1 = c.params.tensors[0].dims;
  const auto& head = c.params.tensors[4].dims;
  if (w1.size() != 4 || head.size() != 2) throw FormatError("unexpected tensor layout", r.position());
  c.params.k_in = static_cast<int>(w1[1]);
  c.params.n_classes = static_cast<int>(head[0]);
  if (arch_hash(c.params) != stored_hash ||
      arch_hash(zero_params<float>(c.params.k_in, c.params.n_classes)) != stored_hash) {
    throw FormatError("architecture hash does not match tensor shapes", hash_at);
  }

  c.optimizer.momentum = r.get<float>("momentum");
  c.optimizer.weight_decay = r.get<float>("weight decay");
  for (const auto& t : c.params.tensors) {
    std::vector<float> v(t.size());
    for (auto& x : v) x = r.get<float>("velocity");
    c.optimizer.velocity.push_back(std::move(v));
  }
  c.seed = r.get<std::uint64_t>("seed");
  c.iteration = r.get<std::uint64_t>("iteration");
  const auto n_remaining = r.get<std::uint32_t>("remaining count");
  r.require(std::uint64_t{n_remaining} * 8, "remaining");
  for (std::uint32_t i = 0; i < n_remaining; ++i) c.remaining.push_back(r.get<std::uint64_t>("remaining"));
  const auto n_elim = r.get<std::uint32_t>("eliminated count");
  r.require(std::uint64_t{n_elim} * 20, "eliminated");
  for (std::uint32_t i = 0; i < n_elim; ++i) {
    Elimination e;
    e.pause = static_cast<int>(r.get<std::uint32_t>("pause"));
    e.index = r.get<std::uint64_t>("index");
    e.score = r.get<double>("score");
    c.eliminated.push_back(e);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.position());
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  detail::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_arch = std::nullopt) {
  const auto bytes = detail::read_file(path);
  return decode_checkpoint(bytes, expected_arch);
}

} // namespace osta
