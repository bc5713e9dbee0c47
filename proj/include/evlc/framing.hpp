#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "evlc/wh_codec.hpp"

namespace evlc {

// Packet layout, in chips:
//   sync  = Barker-13, bipolar spread (26)
//   frame = pilot (32) + info (96, six codewords)   x 3
inline constexpr double kChipRateHz = 10'000.0;
inline constexpr std::uint64_t kChipUs = 100;
inline constexpr std::size_t kPilotCodes = 32;
inline constexpr std::size_t kSyncChips = 26;
inline constexpr std::size_t kPilotChips = 32;
inline constexpr std::size_t kInfoCodewords = 6;
inline constexpr std::size_t kInfoChips = kInfoCodewords * kCodeLength;
inline constexpr std::size_t kFrameChips = kPilotChips + kInfoChips;
inline constexpr std::size_t kFramesPerPacket = 3;
inline constexpr std::size_t kPacketChips = kSyncChips + kFramesPerPacket * kFrameChips;
inline constexpr std::size_t kBitsPerFrame = kInfoCodewords * kBitsPerSymbol;
inline constexpr std::size_t kBitsPerClusterPacket = kFramesPerPacket * kBitsPerFrame;
inline constexpr std::size_t kMaxClusters = kPilotCodes;

inline constexpr std::array<Chip, 13> kBarker13{1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1};

/// out[2m] = -code[m], out[2m+1] = +code[m]
inline ChipSeq spread_bipolar(std::span<const Chip> code) {
  if (code.empty()) throw std::invalid_argument("spread_bipolar: empty code");
  ChipSeq out(code.size() * 2);
  for (std::size_t m = 0; m < code.size(); ++m) {
    out[2 * m] = static_cast<Chip>(-code[m]);
    out[2 * m + 1] = code[m];
  }
  return out;
}

// Keeps the elements that were multiplied by +1 when spreading.
inline ChipSeq reconstruct_even(std::span<const Chip> received) {
  if (received.size() % 2 != 0)
    throw std::invalid_argument("reconstruct_even: odd length " + std::to_string(received.size()));
  ChipSeq out(received.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = received[2 * i + 1];
  return out;
}

// Fills erased elements of the reconstruction from the sign-inverted partner
// chip. When both elements of a pair are erased the result stays 0.
inline ChipSeq complement_missing(std::span<const Chip> received, std::span<const Chip> reconstructed) {
  if (received.size() != 2 * reconstructed.size())
    throw std::invalid_argument("complement_missing: received must be twice the reconstruction length");
  ChipSeq out(reconstructed.begin(), reconstructed.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] == 0) out[i] = static_cast<Chip>(-received[2 * i]);
  return out;
}

struct PilotSequence {
  std::size_t cluster_id = 0;
  std::array<Chip, kCodeLength> wh_code{};
  std::array<Chip, 2 * kCodeLength> spread{};
};

using PilotCodebook = std::vector<PilotSequence>;

// Sylvester-16 rows 0-15 followed by their negations, each spread to 32 chips.
inline PilotCodebook build_pilot_codebook() {
  const auto h = build_hadamard(kCodeLength);
  PilotCodebook book(kPilotCodes);
  for (std::size_t i = 0; i < kPilotCodes; ++i) {
    auto& p = book[i];
    p.cluster_id = i;
    const auto& row = h[i % kCodeLength];
    for (std::size_t m = 0; m < kCodeLength; ++m)
      p.wh_code[m] = static_cast<Chip>(i < kCodeLength ? row[m] : -row[m]);
    const auto s = spread_bipolar(p.wh_code);
    std::copy(s.begin(), s.end(), p.spread.begin());
  }
  return book;
}

inline ChipSeq sync_chips() { return spread_bipolar(kBarker13); }

struct Frame {
  std::array<Chip, kPilotChips> pilot{};
  std::array<Chip, kInfoChips> info{};
};

struct PacketHeader {
  double chip_rate_hz = kChipRateHz;
  std::size_t n_clusters = 0;
  std::size_t frames_per_packet = kFramesPerPacket;
  std::size_t payload_bit_len = 0;
  std::size_t n_packets = 1;
};

inline void to_json(nlohmann::json& j, const PacketHeader& h) {
  j = nlohmann::json{{"chip_rate_hz", h.chip_rate_hz},
                     {"n_clusters", h.n_clusters},
                     {"frames_per_packet", h.frames_per_packet},
                     {"payload_bit_len", h.payload_bit_len},
                     {"n_packets", h.n_packets}};
}

inline void from_json(const nlohmann::json& j, PacketHeader& h) {
  h.chip_rate_hz = j.at("chip_rate_hz").get<double>();
  h.n_clusters = j.at("n_clusters").get<std::size_t>();
  h.frames_per_packet = j.at("frames_per_packet").get<std::size_t>();
  h.payload_bit_len = j.at("payload_bit_len").get<std::size_t>();
  h.n_packets = j.value("n_packets", std::size_t{1});
}

// One cluster's packet as bipolar chips.
struct Packet {
  ChipSeq sync;
  std::vector<Frame> frames;
  std::size_t payload_bit_len = 0;

  ChipSeq chips() const {
    ChipSeq out(sync);
    for (const auto& f : frames) {
      out.insert(out.end(), f.pilot.begin(), f.pilot.end());
      out.insert(out.end(), f.info.begin(), f.info.end());
    }
    return out;
  }
};

// OOK levels for one cluster. Bipolar +1 maps to LED on.
struct ChipTimeline {
  std::size_t cluster_id = 0;
  std::vector<std::uint8_t> levels;
  double chip_rate_hz = kChipRateHz;
};

inline std::vector<std::uint8_t> to_levels(std::span<const Chip> chips) {
  std::vector<std::uint8_t> out(chips.size());
  for (std::size_t i = 0; i < chips.size(); ++i) out[i] = static_cast<std::uint8_t>((chips[i] + 1) / 2);
  return out;
}

inline Packet build_cluster_packet(std::span<const std::uint8_t> cluster_bits, const PilotSequence& pilot,
                                   const Codebook& book) {
  if (cluster_bits.size() > kBitsPerClusterPacket)
    throw std::invalid_argument("cluster payload exceeds one packet");
  Packet pkt;
  pkt.sync = sync_chips();
  pkt.payload_bit_len = cluster_bits.size();
  Bits padded(cluster_bits.begin(), cluster_bits.end());
  padded.resize(kBitsPerClusterPacket, 0);
  const auto info = book.encode_bits(padded);
  pkt.frames.resize(kFramesPerPacket);
  for (std::size_t f = 0; f < kFramesPerPacket; ++f) {
    std::copy(pilot.spread.begin(), pilot.spread.end(), pkt.frames[f].pilot.begin());
    std::copy_n(info.begin() + static_cast<std::ptrdiff_t>(f * kInfoChips), kInfoChips, pkt.frames[f].info.begin());
  }
  return pkt;
}

struct Transmission {
  PacketHeader header;
  std::vector<ChipTimeline> timelines;
};

inline std::size_t packet_capacity_bits(std::size_t n_clusters) { return n_clusters * kBitsPerClusterPacket; }

/// Splits the payload into consecutive packets of n_clusters x 72 bits;
/// within a packet, cluster k carries bits [72k, 72k + 72). The last packet
/// is zero padded. Every cluster shares the same sync and frame boundaries.
inline Transmission build_transmission(std::span<const std::uint8_t> payload, std::size_t n_clusters,
                                       const Codebook& book, const PilotCodebook& pilots,
                                       std::size_t min_packets = 1) {
  if (n_clusters == 0 || n_clusters > kMaxClusters)
    throw std::invalid_argument("n_clusters must be in [1, 32], got " + std::to_string(n_clusters));
  if (pilots.size() < n_clusters) throw std::invalid_argument("pilot codebook too small");
  const std::size_t cap = packet_capacity_bits(n_clusters);
  std::size_t n_packets = (payload.size() + cap - 1) / cap;
  n_packets = std::max(n_packets, min_packets);

  Transmission tx;
  tx.header.n_clusters = n_clusters;
  tx.header.payload_bit_len = payload.size();
  tx.header.n_packets = n_packets;
  tx.timelines.resize(n_clusters);
  for (std::size_t k = 0; k < n_clusters; ++k) {
    tx.timelines[k].cluster_id = k;
    tx.timelines[k].levels.reserve(n_packets * kPacketChips);
  }
  Bits cluster_bits;
  for (std::size_t p = 0; p < n_packets; ++p) {
    for (std::size_t k = 0; k < n_clusters; ++k) {
      cluster_bits.clear();
      const std::size_t begin = p * cap + k * kBitsPerClusterPacket;
      for (std::size_t b = begin; b < begin + kBitsPerClusterPacket && b < payload.size(); ++b)
        cluster_bits.push_back(payload[b]);
      const auto lv = to_levels(build_cluster_packet(cluster_bits, pilots[k], book).chips());
      tx.timelines[k].levels.insert(tx.timelines[k].levels.end(), lv.begin(), lv.end());
    }
  }
  return tx;
}

// Single packet; the payload must fit in n_clusters x 72 bits.
inline Transmission build_packet(std::span<const std::uint8_t> payload, std::size_t n_clusters,
                                 const Codebook& book, const PilotCodebook& pilots) {
  if (n_clusters > kMaxClusters)
    throw std::invalid_argument("n_clusters must be <= 32, got " + std::to_string(n_clusters));
  if (payload.size() > packet_capacity_bits(n_clusters))
    throw std::invalid_argument("payload does not fit in one packet");
  return build_transmission(payload, n_clusters, book, pilots, 1);
}

inline double throughput_bps(std::size_t n_clusters) {
  const double packet_s = static_cast<double>(kPacketChips) / kChipRateHz;
  return static_cast<double>(n_clusters * kBitsPerClusterPacket) / packet_s;
}

// CSV: cluster_id,chip_index,level
inline void write_timeline_csv(std::ostream& os, const std::vector<ChipTimeline>& timelines) {
  os << "cluster_id,chip_index,level\n";
  for (const auto& tl : timelines)
    for (std::size_t i = 0; i < tl.levels.size(); ++i)
      os << tl.cluster_id << ',' << i << ',' << static_cast<int>(tl.levels[i]) << '\n';
}

} // namespace evlc
