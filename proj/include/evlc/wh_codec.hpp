#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evlc {

// Bipolar chip level: +1 (LED on) or -1 (LED off). Observations made through
// an event camera are tri-valued, with 0 meaning "no event in this slot".
using Chip = std::int8_t;
using ChipSeq = std::vector<Chip>;
using Bits = std::vector<std::uint8_t>;

inline constexpr std::size_t kCodeLength = 16;
inline constexpr std::size_t kCodebookSize = 16;
inline constexpr std::size_t kBitsPerSymbol = 4;

using HadamardMatrix = std::vector<ChipSeq>;

/// Sylvester construction of an order x order Hadamard matrix.
/// Supported orders are the powers of two from 2 to 32.
inline HadamardMatrix build_hadamard(std::size_t order) {
  if (order < 2 || order > 32 || (order & (order - 1)) != 0)
    throw std::invalid_argument("hadamard order must be a power of two in [2, 32], got " +
                                std::to_string(order));
  HadamardMatrix h{{1}};
  for (std::size_t n = 1; n < order; n *= 2) {
    HadamardMatrix next(2 * n, ChipSeq(2 * n));
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        next[r][c] = h[r][c];
        next[r][c + n] = h[r][c];
        next[r + n][c] = h[r][c];
        next[r + n][c + n] = static_cast<Chip>(-h[r][c]);
      }
    }
    h = std::move(next);
  }
  return h;
}

inline int count_transitions(std::span<const Chip> chips) {
  int n = 0;
  for (std::size_t j = 1; j < chips.size(); ++j) n += chips[j] != chips[j - 1];
  return n;
}

inline int inner_product(std::span<const Chip> a, std::span<const Chip> b) {
  int s = 0;
  const auto n = std::min(a.size(), b.size());
  for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
  return s;
}

class Codeword {
public:
  Codeword() = default;
  Codeword(std::size_t index, const std::array<Chip, kCodeLength>& chips)
    : index_(index), chips_(chips), transitions_(count_transitions(chips_)) {}

  std::size_t index() const { return index_; }
  const std::array<Chip, kCodeLength>& chips() const { return chips_; }
  int transitions() const { return transitions_; }

  // Sign of the first difference, i.e. the polarity an event camera reports
  // for each chip slot. Slot 0 has no preceding chip in isolation and is 0.
  std::array<Chip, kCodeLength> transition_template() const {
    std::array<Chip, kCodeLength> t{};
    for (std::size_t j = 1; j < kCodeLength; ++j) {
      const int d = chips_[j] - chips_[j - 1];
      t[j] = static_cast<Chip>((d > 0) - (d < 0));
    }
    return t;
  }

  friend bool operator==(const Codeword&, const Codeword&) = default;

private:
  std::size_t index_ = 0;
  std::array<Chip, kCodeLength> chips_{};
  int transitions_ = 0;
};

struct DecodeResult {
  std::size_t symbol = 0;
  int score = 0;
};

// The 16-entry codebook: the eight Sylvester-16 rows with the most sign
// changes (descending, ties by row index) followed by their negations.
class Codebook {
public:
  Codebook() {
    const auto h = build_hadamard(kCodeLength);
    std::vector<std::size_t> rows(kCodeLength);
    std::iota(rows.begin(), rows.end(), 0);
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return count_transitions(h[a]) > count_transitions(h[b]);
    });
    constexpr std::size_t half = kCodebookSize / 2;
    for (std::size_t i = 0; i < half; ++i) {
      std::array<Chip, kCodeLength> c{};
      std::copy(h[rows[i]].begin(), h[rows[i]].end(), c.begin());
      entries_[i] = Codeword(i, c);
      source_rows_[i] = rows[i];
      for (auto& v : c) v = static_cast<Chip>(-v);
      entries_[i + half] = Codeword(i + half, c);
      source_rows_[i + half] = rows[i];
    }
    for (std::size_t i = 0; i < kCodebookSize; ++i) templates_[i] = entries_[i].transition_template();
  }

  const std::array<Codeword, kCodebookSize>& entries() const { return entries_; }
  const Codeword& operator[](std::size_t i) const { return entries_.at(i); }
  // Sylvester row each entry was taken from.
  std::size_t source_row(std::size_t i) const { return source_rows_.at(i); }
  const std::array<Chip, kCodeLength>& template_of(std::size_t i) const { return templates_.at(i); }

  const Codeword& encode_symbol(unsigned sym) const {
    if (sym >= kCodebookSize)
      throw std::invalid_argument("symbol out of range: " + std::to_string(sym));
    return entries_[sym];
  }

  /// Maps bits (MSB first per nibble) to chips at four chips per bit.
  /// A trailing partial nibble is padded with zero bits.
  ChipSeq encode_bits(std::span<const std::uint8_t> bits) const {
    ChipSeq out;
    out.reserve((bits.size() + 3) / 4 * kCodeLength);
    for (std::size_t i = 0; i < bits.size(); i += kBitsPerSymbol) {
      unsigned sym = 0;
      for (std::size_t b = 0; b < kBitsPerSymbol; ++b) {
        const bool bit = i + b < bits.size() && bits[i + b] != 0;
        sym = (sym << 1) | static_cast<unsigned>(bit);
      }
      const auto& c = entries_[sym].chips();
      out.insert(out.end(), c.begin(), c.end());
    }
    return out;
  }

  // Maximum inner product against the transition templates; lowest index
  // wins ties. An all-zero observation decodes to 0 with score 0.
  DecodeResult decode_codeword(std::span<const Chip> observed) const {
    if (observed.size() != kCodeLength)
      throw std::invalid_argument("observation must have 16 elements, got " +
                                  std::to_string(observed.size()));
    DecodeResult best{0, inner_product(observed, templates_[0])};
    for (std::size_t s = 1; s < kCodebookSize; ++s) {
      const int score = inner_product(observed, templates_[s]);
      if (score > best.score) best = {s, score};
    }
    return best;
  }

private:
  std::array<Codeword, kCodebookSize> entries_;
  std::array<std::size_t, kCodebookSize> source_rows_{};
  std::array<std::array<Chip, kCodeLength>, kCodebookSize> templates_{};
};

inline void append_symbol_bits(Bits& out, std::size_t sym) {
  for (int b = static_cast<int>(kBitsPerSymbol) - 1; b >= 0; --b)
    out.push_back(static_cast<std::uint8_t>((sym >> b) & 1U));
}

} // namespace evlc
