#pragma once

#include "combinatorics.hpp"
#include "error.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace osta {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Channel-planar multichannel raster with per-pixel labels.
struct McSample {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;        // [channel][row][col]
  std::vector<std::uint8_t> labels; // [row][col], 255 = ignore

  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::span<float> plane(int c) { return {values.data() + c * plane_size(), plane_size()}; }
  std::span<const float> plane(int c) const { return {values.data() + c * plane_size(), plane_size()}; }

  bool well_formed() const noexcept {
    return height > 0 && width > 0 && channels > 0 &&
           values.size() == plane_size() * static_cast<std::size_t>(channels) &&
           labels.size() == plane_size();
  }

  friend bool operator==(const McSample&, const McSample&) = default;
};

/// Throws if any label is neither ignore nor below n_classes.
inline void check_labels(const McSample& s, int n_classes) {
  for (std::uint8_t l : s.labels) {
    if (l != kIgnoreLabel && l >= n_classes) {
      throw std::invalid_argument("label " + std::to_string(l) + " out of range for " +
                                  std::to_string(n_classes) + " classes");
    }
  }
}

// ---------------------------------------------------------------------------
// MCI1 codec
//
//   "MCI1" | version u16 | H u32 | W u32 | C u16 | H*W*C float32 | H*W u8
//
// All integers and floats little-endian; values channel-planar.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kMciVersion = 1;
inline constexpr std::size_t kMciHeaderSize = 4 + 2 + 4 + 4 + 2;

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  out.insert(out.end(), std::begin(bytes), std::end(bytes));
}

/// Bounds-checked little-endian reader over a byte buffer.
class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  template <typename T>
  T get(const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    require(sizeof(T), what);
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(std::begin(bytes), std::end(bytes));
    }
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    require(n, what);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void require(std::size_t n, const char* what) const {
    if (n > data_.size() - pos_) {
      throw FormatError(std::string("truncated payload while reading ") + what, pos_);
    }
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("short write to " + path.string());
  }
}

} // namespace detail

inline std::vector<std::uint8_t> encode_sample(const McSample& s) {
  if (!s.well_formed() || s.channels > 0xFFFF) {
    throw std::invalid_argument("cannot encode malformed sample");
  }
  std::vector<std::uint8_t> out = {'M', 'C', 'I', '1'};
  out.reserve(kMciHeaderSize + s.values.size() * 4 + s.labels.size());
  detail::put_le<std::uint16_t>(out, kMciVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.height));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.width));
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.channels));
  for (float v : s.values) {
    detail::put_le<float>(out, v);
  }
  out.insert(out.end(), s.labels.begin(), s.labels.end());
  return out;
}

inline McSample decode_sample(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), "MCI1", 4) != 0) {
    throw FormatError("bad magic, expected MCI1", 0);
  }
  const auto version_at = r.position();
  const auto version = r.get<std::uint16_t>("version");
  if (version != kMciVersion) {
    throw FormatError("unsupported MCI version " + std::to_string(version), version_at);
  }
  McSample s;
  const auto h = r.get<std::uint32_t>("height");
  const auto w = r.get<std::uint32_t>("width");
  const auto c = r.get<std::uint16_t>("channels");
  if (h == 0 || w == 0 || c == 0) {
    throw FormatError("zero dimension in header", r.position());
  }
  const std::uint64_t pixels = std::uint64_t{h} * w;
  const std::uint64_t payload = pixels * c * 4 + pixels;
  if (payload > r.remaining()) {
    throw FormatError("truncated payload: header declares " + std::to_string(payload) + " bytes, " +
                          std::to_string(r.remaining()) + " present",
                      r.position());
  }
  s.height = static_cast<int>(h);
  s.width = static_cast<int>(w);
  s.channels = c;
  s.values.resize(pixels * c);
  for (auto& v : s.values) {
    v = r.get<float>("values");
  }
  const auto labels = r.bytes(pixels, "labels");
  s.labels.assign(labels.begin(), labels.end());
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after label plane", r.position());
  }
  return s;
}

inline void write_sample(const std::filesystem::path& path, const McSample& s) {
  detail::write_file(path, encode_sample(s));
}

inline McSample read_sample(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return decode_sample(bytes);
}

// ---------------------------------------------------------------------------
// Spatial and spectral slicing
// ---------------------------------------------------------------------------

/// Copy of the window [top, top+h) x [left, left+w).
inline McSample crop(const McSample& s, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || h <= 0 || w <= 0 || top + h > s.height || left + w > s.width) {
    throw std::invalid_argument("crop window outside sample");
  }
  McSample out;
  out.height = h;
  out.width = w;
  out.channels = s.channels;
  out.values.resize(static_cast<std::size_t>(h) * w * s.channels);
  out.labels.resize(static_cast<std::size_t>(h) * w);
  for (int c = 0; c < s.channels; ++c) {
    const float* src = s.values.data() + c * s.plane_size();
    float* dst = out.values.data() + c * out.plane_size();
    for (int y = 0; y < h; ++y) {
      std::memcpy(dst + static_cast<std::size_t>(y) * w,
                  src + static_cast<std::size_t>(top + y) * s.width + left, sizeof(float) * w);
    }
  }
  for (int y = 0; y < h; ++y) {
    std::memcpy(out.labels.data() + static_cast<std::size_t>(y) * w,
                s.labels.data() + static_cast<std::size_t>(top + y) * s.width + left, w);
  }
  return out;
}

/// Non-overlapping row-major tiling; remainder rows/columns are dropped.
inline std::vector<McSample> crop_patches(const McSample& s, int patch_h, int patch_w) {
  if (patch_h <= 0 || patch_w <= 0 || patch_h > s.height || patch_w > s.width) {
    throw std::invalid_argument("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                                " does not fit sample " + std::to_string(s.height) + "x" +
                                std::to_string(s.width));
  }
  std::vector<McSample> out;
  for (int top = 0; top + patch_h <= s.height; top += patch_h) {
    for (int left = 0; left + patch_w <= s.width; left += patch_w) {
      out.push_back(crop(s, top, left, patch_h, patch_w));
    }
  }
  return out;
}

/// Output channel j is input channel channels[j] (1-based ordinals).
inline McSample select_channels(const McSample& s, std::span<const int> channels) {
  if (channels.empty()) {
    throw std::invalid_argument("empty channel selection");
  }
  McSample out;
  out.height = s.height;
  out.width = s.width;
  out.channels = static_cast<int>(channels.size());
  out.values.resize(s.plane_size() * channels.size());
  for (std::size_t j = 0; j < channels.size(); ++j) {
    const int c = channels[j];
    if (c < 1 || c > s.channels) {
      throw std::invalid_argument("channel ordinal " + std::to_string(c) + " outside [1, " +
                                  std::to_string(s.channels) + "]");
    }
    auto src = s.plane(c - 1);
    std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(j * s.plane_size()));
  }
  out.labels = s.labels;
  return out;
}

inline McSample select_channels(const McSample& s, const ChannelCombination& comb) {
  return select_channels(s, std::span<const int>(comb.channels));
}

} // namespace osta
