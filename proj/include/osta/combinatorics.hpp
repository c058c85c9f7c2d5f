#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osta {

/// Binomial coefficient C(n, k) by the multiplicative formula. Valid for n <= 64.
inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || n < 0 || k > n) {
    return 0;
  }
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (int i = 0; i < k; ++i) {
    r = r * static_cast<unsigned>(n - i) / static_cast<unsigned>(i + 1);
  }
  return static_cast<std::uint64_t>(r);
}

/// A sorted k-subset of 1-based channel ordinals drawn from n channels, with its
/// 1-based lexicographic index among all k-subsets.
struct ChannelCombination {
  std::vector<int> channels;
  int universe = 0;
  std::uint64_t index = 0;

  int size() const noexcept { return static_cast<int>(channels.size()); }

  friend bool operator==(const ChannelCombination&, const ChannelCombination&) = default;
};

namespace detail {

inline void check_shape(int n, int k) {
  if (n < 1 || n > 64) {
    throw std::invalid_argument("channel count must be in [1, 64], got " + std::to_string(n));
  }
  if (k < 1 || k > n) {
    throw std::invalid_argument("subset size must be in [1, " + std::to_string(n) + "], got " +
                                std::to_string(k));
  }
}

inline void check_channels(const std::vector<int>& channels, int n) {
  detail::check_shape(n, static_cast<int>(channels.size()));
  int prev = 0;
  for (int c : channels) {
    if (c <= prev || c > n) {
      throw std::invalid_argument("channels must be strictly increasing ordinals in [1, n]");
    }
    prev = c;
  }
}

} // namespace detail

/// Lexicographic rank (1-based) of a sorted channel list, via the combinatorial
/// number system: count the subsets skipped at every position.
inline std::uint64_t combination_index(const std::vector<int>& channels, int n) {
  detail::check_channels(channels, n);
  const int k = static_cast<int>(channels.size());
  std::uint64_t rank = 1;
  int prev = 0;
  for (int i = 0; i < k; ++i) {
    for (int v = prev + 1; v < channels[i]; ++v) {
      rank += binomial(n - v, k - i - 1);
    }
    prev = channels[i];
  }
  return rank;
}

/// Rank of a combination; a stored index (when non-zero) must agree with it.
inline std::uint64_t combination_index(const ChannelCombination& comb) {
  const auto rank = combination_index(comb.channels, comb.universe);
  if (comb.index != 0 && comb.index != rank) {
    throw std::invalid_argument("stored index " + std::to_string(comb.index) + " disagrees with rank " +
                                std::to_string(rank));
  }
  return rank;
}

inline ChannelCombination combination_from_index(int n, int k, std::uint64_t idx) {
  detail::check_shape(n, k);
  const std::uint64_t total = binomial(n, k);
  if (idx < 1 || idx > total) {
    throw std::invalid_argument("combination index " + std::to_string(idx) + " outside [1, " +
                                std::to_string(total) + "]");
  }
  ChannelCombination out{{}, n, idx};
  out.channels.reserve(static_cast<std::size_t>(k));
  std::uint64_t remaining = idx - 1;
  int v = 1;
  for (int i = 0; i < k; ++i) {
    for (;; ++v) {
      const std::uint64_t block = binomial(n - v, k - i - 1);
      if (remaining < block) {
        break;
      }
      remaining -= block;
    }
    out.channels.push_back(v++);
  }
  return out;
}

inline ChannelCombination make_combination(std::vector<int> channels, int n) {
  const std::uint64_t idx = combination_index(channels, n);
  return ChannelCombination{std::move(channels), n, idx};
}

/// All C(n, k) combinations in ascending lexicographic order; element i has index i + 1.
inline std::vector<ChannelCombination> enumerate_combinations(int n, int k) {
  detail::check_shape(n, k);
  const std::uint64_t total = binomial(n, k);
  std::vector<ChannelCombination> out;
  out.reserve(total);
  std::vector<int> cur(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    cur[i] = i + 1;
  }
  for (std::uint64_t idx = 1; idx <= total; ++idx) {
    out.push_back(ChannelCombination{cur, n, idx});
    int i = k - 1;
    while (i >= 0 && cur[i] == n - k + i + 1) {
      --i;
    }
    if (i < 0) {
      break;
    }
    ++cur[i];
    for (int j = i + 1; j < k; ++j) {
      cur[j] = cur[j - 1] + 1;
    }
  }
  return out;
}

/// Identity combination {1..n}.
inline ChannelCombination all_channels(int n) {
  std::vector<int> ch(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ch[i] = i + 1;
  }
  return ChannelCombination{std::move(ch), n, 1};
}

/// `index,ch1,ch2,...` row used in reports.
inline std::string to_csv_row(const ChannelCombination& comb) {
  std::string row = std::to_string(comb.index);
  for (int c : comb.channels) {
    row += ',' + std::to_string(c);
  }
  return row;
}

inline std::string channel_label(const ChannelCombination& comb, const std::vector<std::string>& names) {
  std::string out;
  for (int c : comb.channels) {
    if (!out.empty()) {
      out += ' ';
    }
    out += (c >= 1 && c <= static_cast<int>(names.size())) ? names[c - 1] : std::to_string(c);
  }
  return out;
}

} // namespace osta
