#pragma once

#include <optional>
#include <ostream>
#include <span>

#include <json.hpp>

#include "evlc/receiver.hpp"

namespace evlc {

inline nlohmann::json decode_report_json(const DecodeReport& rep, std::optional<std::span<const std::uint8_t>> reference = {}) {
  nlohmann::json j;
  j["n_clusters"] = rep.n_clusters;
  j["n_packets"] = rep.n_packets;
  j["sync"] = {{"packet_start_us", rep.sync.packet_start_us}, {"peak", rep.sync.peak}, {"margin", rep.sync.margin},
               {"polarity", rep.sync.polarity}, {"chip_phase_us", rep.sync.clock.phase_us}};
  j["bar_box"] = {rep.box.x0, rep.box.y0, rep.box.x1, rep.box.y1};

  nlohmann::json clusters = nlohmann::json::array();
  for (std::size_t k = 0; k < rep.cluster_bits.size(); ++k) {
    nlohmann::json c{{"cluster", k}, {"bits_recovered", rep.cluster_bits[k].size()}};
    if (reference) {
      // Cluster k's share of every packet.
      Bits ref, dec;
      const std::size_t cap = packet_capacity_bits(rep.n_clusters);
      for (std::size_t p = 0; p * cap < reference->size(); ++p)
        for (std::size_t b = 0; b < kBitsPerClusterPacket; ++b) {
          const std::size_t i = p * cap + k * kBitsPerClusterPacket + b;
          if (i >= reference->size()) break;
          ref.push_back((*reference)[i]);
          dec.push_back(i < rep.payload.size() ? rep.payload[i] : 0);
        }
      const auto be = count_bit_errors(ref, dec);
      c["bits_compared"] = be.bits;
      c["errors"] = be.errors;
      c["ber"] = be.ber();
    }
    clusters.push_back(c);
  }
  j["clusters"] = clusters;

  if (reference) {
    const auto be = count_bit_errors(*reference, rep.payload);
    j["bits_compared"] = be.bits;
    j["errors"] = be.errors;
    j["ber"] = be.ber();
  }

  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : rep.frames) {
    nlohmann::json fj{{"packet", f.packet}, {"frame", f.frame}, {"start_us", f.start_us},
                      {"delta_prev", {f.delta_prev.x, f.delta_prev.y}}, {"delta_next", {f.delta_next.x, f.delta_next.y}},
                      {"lost_clusters", f.lost_clusters}, {"grids_per_cluster", f.grids_per_cluster},
                      {"max_weight", f.max_weight}};
    fj["centroid"] = f.centroid ? nlohmann::json{f.centroid->x, f.centroid->y} : nlohmann::json(nullptr);
    frames.push_back(fj);
  }
  j["frames"] = frames;
  return j;
}

// CSV: packet,frame,gx,gy,cluster,weight (non-zero weights only)
inline void write_weight_map_csv(std::ostream& os, const DecodeReport& rep) {
  os << "packet,frame,gx,gy,cluster,weight\n";
  for (const auto& f : rep.frames) {
    const auto& m = f.weights;
    for (std::size_t g = 0; g < m.grids.size(); ++g)
      for (std::size_t k = 0; k < m.n_clusters; ++k)
        if (m.w[g][k] > 0.0)
          os << f.packet << ',' << f.frame << ',' << m.grids[g].gx << ',' << m.grids[g].gy << ',' << k << ','
             << m.w[g][k] << '\n';
  }
}

} // namespace evlc
