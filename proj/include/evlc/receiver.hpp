#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <tuple>
#include <string>
#include <unordered_map>
#include <vector>

#include "evlc/channel_sim.hpp"
#include "evlc/errors.hpp"
#include "evlc/framing.hpp"
#include "evlc/wh_codec.hpp"

namespace evlc {

struct ReceiverConfig {
  int grid_px = 4;
  // theta = theta_rel * (largest weight over all grids and clusters), unless
  // theta_abs is non-negative, in which case it is used directly.
  double theta_rel = 0.5;
  double theta_abs = -1.0;
  std::uint64_t filter_window_us = 1000;
  unsigned filter_min_count = 3;
  double sync_margin = 1.2;
  double centroid_sigma_px = 2.0;
  double centroid_threshold_rel = 0.5;
  bool correct_vibration = true;
  // 0 decodes every packet that fits in the stream.
  std::size_t max_packets = 0;
};

// ---------------------------------------------------------------------------
// Alternation number filter

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1; // inclusive

  bool empty() const { return x1 < x0 || y1 < y0; }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  void extend(int x, int y) {
    if (empty()) {
      x0 = x1 = x;
      y0 = y1 = y;
      return;
    }
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
};

struct FilterResult {
  std::vector<Event> events;
  BoundingBox box;
};

/// Keeps an event only if its pixel produced at least min_count events in
/// the window of length window_us centred on it. LED pixels blink at the
/// chip rate; background pixels fire rarely. Centring the window keeps the
/// first and last chips of a stream.
inline FilterResult alternation_filter(std::span<const Event> events, std::uint64_t window_us, unsigned min_count) {
  if (window_us == 0) throw std::invalid_argument("alternation_filter: window must be positive");
  FilterResult out;
  // Bucket event indices by pixel; time order is kept inside a bucket.
  const std::size_t npix = static_cast<std::size_t>(kSensorWidth) * kSensorHeight;
  std::vector<std::uint32_t> head(npix + 1, 0);
  const auto pix = [](const Event& e) { return static_cast<std::size_t>(e.y) * kSensorWidth + e.x; };
  for (const auto& e : events) ++head[pix(e) + 1];
  for (std::size_t p = 0; p < npix; ++p) head[p + 1] += head[p];
  std::vector<std::uint32_t> order(events.size());
  {
    std::vector<std::uint32_t> fill(head.begin(), head.end() - 1);
    for (std::size_t i = 0; i < events.size(); ++i) order[fill[pix(events[i])]++] = static_cast<std::uint32_t>(i);
  }
  std::vector<char> keep(events.size(), 0);
  const std::uint64_t half = window_us / 2;
  for (std::size_t p = 0; p < npix; ++p) {
    const std::uint32_t b = head[p], e = head[p + 1];
    if (e - b < min_count) continue;
    std::uint32_t lo = b, hi = b;
    for (std::uint32_t k = b; k < e; ++k) {
      const std::uint64_t t = events[order[k]].t;
      while (events[order[lo]].t + half < t) ++lo;
      while (hi < e && events[order[hi]].t < t + (window_us - half)) ++hi;
      if (hi - lo >= min_count) keep[order[k]] = 1;
    }
  }
  for (std::size_t i = 0; i < events.size(); ++i)
    if (keep[i]) {
      out.events.push_back(events[i]);
      out.box.extend(events[i].x, events[i].y);
    }
  if (out.events.empty()) throw NoSignalError("alternation filter left no pixels");
  return out;
}

// ---------------------------------------------------------------------------
// Chip slot timing

// Chip boundaries sit at phase_us + n * 100 us. Slot n collects events
// within half a chip of boundary n.
struct ChipClock {
  double phase_us = 0.0;

  std::int64_t slot(std::uint64_t t) const {
    return static_cast<std::int64_t>(std::floor((static_cast<double>(t) - phase_us) / kChipUs + 0.5));
  }
  double boundary(std::int64_t n) const { return phase_us + static_cast<double>(n) * kChipUs; }
};

// Circular mean of event times modulo one chip.
inline ChipClock estimate_chip_clock(std::span<const Event> events) {
  double sx = 0.0, sy = 0.0;
  for (const auto& e : events) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(e.t % kChipUs) / kChipUs;
    sx += std::cos(a);
    sy += std::sin(a);
  }
  double ph = std::atan2(sy, sx) / (2.0 * std::numbers::pi) * kChipUs;
  if (ph < 0) ph += kChipUs;
  return ChipClock{ph};
}

// Polarity an event camera reports in each slot of a chip sequence whose
// first element has no known predecessor.
inline ChipSeq transition_template(std::span<const Chip> chips) {
  ChipSeq t(chips.size(), 0);
  for (std::size_t j = 1; j < chips.size(); ++j)
    if (chips[j] != chips[j - 1]) t[j] = chips[j];
  return t;
}

// ---------------------------------------------------------------------------
// Synchronization

struct SyncResult {
  std::uint64_t packet_start_us = 0;
  double peak = 0.0;
  double margin = 0.0;
  int polarity = 1;
  ChipClock clock;
  std::int64_t start_slot = 0;
};

/// Sums event polarities per chip slot and slides the spread Barker
/// transition template across one packet period, starting at the first
/// event. The packet start is the boundary of the best-matching slot.
inline SyncResult detect_sync(std::span<const Event> events, double min_margin = 1.2,
                              std::size_t search_chips = kPacketChips) {
  if (events.empty()) throw SyncNotFoundError("no events to synchronize on", 0.0);
  const ChipClock clock = estimate_chip_clock(events);
  const std::int64_t first = clock.slot(events.front().t);
  const std::int64_t last = clock.slot(events.back().t);
  const auto tmpl = transition_template(sync_chips());
  const auto len = static_cast<std::int64_t>(tmpl.size());
  std::vector<double> s(static_cast<std::size_t>(last - first + 1 + len), 0.0);
  for (const auto& e : events) s[static_cast<std::size_t>(clock.slot(e.t) - first)] += e.p;

  // The first sync chip never produces an event when it follows darkness,
  // so its packet may start one slot before the first event. Exactly one
  // packet period is searched so later syncs cannot compete.
  const std::int64_t lo = -2;
  const std::int64_t hi = std::min<std::int64_t>(lo + static_cast<std::int64_t>(search_chips), last - first + 1);
  std::vector<double> corr;
  for (std::int64_t n0 = lo; n0 < hi; ++n0) {
    double c = 0.0;
    for (std::int64_t j = 0; j < len; ++j) {
      const std::int64_t k = n0 + j;
      if (k >= 0 && k < static_cast<std::int64_t>(s.size())) c += tmpl[static_cast<std::size_t>(j)] * s[static_cast<std::size_t>(k)];
    }
    corr.push_back(c);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < corr.size(); ++i)
    if (std::abs(corr[i]) > std::abs(corr[best])) best = i;
  double second = 0.0;
  for (std::size_t i = 0; i < corr.size(); ++i)
    if (i + 1 < best || i > best + 1) second = std::max(second, std::abs(corr[i]));

  SyncResult r;
  r.clock = clock;
  r.peak = std::abs(corr.empty() ? 0.0 : corr[best]);
  r.polarity = corr.empty() || corr[best] >= 0 ? 1 : -1;
  r.margin = second > 0 ? r.peak / second : (r.peak > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  r.start_slot = first + lo + static_cast<std::int64_t>(best);
  const double start = clock.boundary(r.start_slot);
  r.packet_start_us = start > 0 ? static_cast<std::uint64_t>(std::llround(start)) : 0;
  if (!(r.peak > 0) || r.margin <= min_margin)
    throw SyncNotFoundError("sync correlation margin " + std::to_string(r.margin) + " below threshold", r.margin);
  return r;
}

// ---------------------------------------------------------------------------
// Centroid tracking

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Event-count image, Gaussian smoothed; pixels above threshold_rel of the
/// smoothed maximum are kept and their count-weighted centroid returned.
inline Point2 estimate_centroid(std::span<const Event> pilot_events, double sigma_px = 2.0, double threshold_rel = 0.5) {
  if (pilot_events.empty()) throw TrackingLostError("no events in pilot window");
  BoundingBox bb;
  for (const auto& e : pilot_events) bb.extend(e.x, e.y);
  const int pad = static_cast<int>(std::ceil(3.0 * sigma_px));
  const int x0 = bb.x0 - pad, y0 = bb.y0 - pad;
  const int w = bb.x1 - bb.x0 + 1 + 2 * pad, h = bb.y1 - bb.y0 + 1 + 2 * pad;
  std::vector<double> img(static_cast<std::size_t>(w) * h, 0.0);
  for (const auto& e : pilot_events) img[static_cast<std::size_t>(e.y - y0) * w + (e.x - x0)] += 1.0;

  std::vector<double> kernel(static_cast<std::size_t>(2 * pad + 1));
  double ksum = 0.0;
  for (int i = -pad; i <= pad; ++i) {
    const double v = sigma_px > 0 ? std::exp(-0.5 * i * i / (sigma_px * sigma_px)) : (i == 0 ? 1.0 : 0.0);
    kernel[static_cast<std::size_t>(i + pad)] = v;
    ksum += v;
  }
  for (auto& v : kernel) v /= ksum;
  std::vector<double> tmp(img.size(), 0.0), smooth(img.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -pad; k <= pad; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w) acc += kernel[static_cast<std::size_t>(k + pad)] * img[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -pad; k <= pad; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h) acc += kernel[static_cast<std::size_t>(k + pad)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      smooth[static_cast<std::size_t>(y) * w + x] = acc;
    }
  const double thr = threshold_rel * *std::max_element(smooth.begin(), smooth.end());
  double sx = 0.0, sy = 0.0, sw = 0.0, fx = 0.0, fy = 0.0, fw = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      if (smooth[i] < thr) continue;
      sx += img[i] * (x + x0);
      sy += img[i] * (y + y0);
      sw += img[i];
      fx += smooth[i] * (x + x0);
      fy += smooth[i] * (y + y0);
      fw += smooth[i];
    }
  if (sw > 0) return {sx / sw, sy / sw};
  return {fx / fw, fy / fw};
}

// Centroids of the pilots of consecutive frames; unset where tracking was lost.
struct CentroidTrack {
  std::vector<std::optional<Point2>> centroids;

  // Displacement from frame k to k + 1.
  std::optional<Point2> delta(std::size_t k) const {
    if (k + 1 >= centroids.size() || !centroids[k] || !centroids[k + 1]) return std::nullopt;
    return Point2{centroids[k + 1]->x - centroids[k]->x, centroids[k + 1]->y - centroids[k]->y};
  }

  // Displacements (i-1 -> i, i -> i+1) used to correct frame i. A missing
  // side reuses the other one; with neither, the frame is left alone.
  std::pair<Point2, Point2> around(std::size_t i) const {
    auto prev = i > 0 ? delta(i - 1) : std::nullopt;
    auto next = delta(i);
    if (!prev && next) prev = next;
    if (!next && prev) next = prev;
    return {prev.value_or(Point2{}), next.value_or(Point2{})};
  }
};

// ---------------------------------------------------------------------------
// Vibration correction

struct ShiftedEvent {
  std::uint64_t t = 0;
  double x = 0.0;
  double y = 0.0;
  std::int8_t p = 1;
};

struct FrameBounds {
  double start_us = 0.0;
  double end_us = 0.0;

  double mid() const { return 0.5 * (start_us + end_us); }
  // Linear correction factor; +1/2 at the frame start, -1/2 at the end.
  double alpha(double t) const { return (mid() - t) / (end_us - start_us); }
};

/// Moves every event to where the bar would have been at mid-frame,
/// interpolating the pilot-to-pilot displacement: the first half of the
/// frame uses the displacement from the previous frame, the second half the
/// one towards the next.
inline std::vector<ShiftedEvent> correct_vibration(std::span<const Event> events, const FrameBounds& frame,
                                                   const Point2& delta_prev, const Point2& delta_next) {
  std::vector<ShiftedEvent> out;
  out.reserve(events.size());
  const double tm = frame.mid();
  for (const auto& e : events) {
    const double t = static_cast<double>(e.t);
    const double a = frame.alpha(t);
    const Point2& d = t < tm ? delta_prev : delta_next;
    out.push_back({e.t, std::clamp(e.x + a * d.x, 0.0, kSensorWidth - 1.0),
                   std::clamp(e.y + a * d.y, 0.0, kSensorHeight - 1.0), e.p});
  }
  return out;
}

inline std::vector<ShiftedEvent> unshifted(std::span<const Event> events) {
  std::vector<ShiftedEvent> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back({e.t, static_cast<double>(e.x), static_cast<double>(e.y), e.p});
  return out;
}

// ---------------------------------------------------------------------------
// Grid signals and pilot correlation

struct GridKey {
  int gx = 0;
  int gy = 0;
  friend bool operator==(const GridKey&, const GridKey&) = default;
};

struct GridSignal {
  GridKey key;
  ChipSeq i_xy; // sign of summed polarities per chip slot
};

/// Pools events into grid_px x grid_px cells (sensor-aligned) and takes the
/// sign of the summed polarity per chip slot of one frame.
inline std::vector<GridSignal> build_grid_signals(std::span<const ShiftedEvent> events, const ChipClock& clock,
                                                  std::int64_t first_slot, std::size_t n_slots, int grid_px) {
  if (grid_px <= 0) throw std::invalid_argument("grid_px must be positive");
  std::unordered_map<std::int64_t, std::size_t> index;
  std::vector<GridKey> keys;
  std::vector<std::vector<int>> sums;
  for (const auto& e : events) {
    const std::int64_t s = clock.slot(e.t) - first_slot;
    if (s < 0 || s >= static_cast<std::int64_t>(n_slots)) continue;
    const GridKey k{static_cast<int>(std::floor(e.x / grid_px)), static_cast<int>(std::floor(e.y / grid_px))};
    const std::int64_t id = static_cast<std::int64_t>(k.gy) * 100000 + k.gx;
    auto [it, fresh] = index.try_emplace(id, keys.size());
    if (fresh) {
      keys.push_back(k);
      sums.emplace_back(n_slots, 0);
    }
    sums[it->second][static_cast<std::size_t>(s)] += e.p;
  }
  std::vector<std::size_t> order(keys.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(keys[a].gy, keys[a].gx) < std::tie(keys[b].gy, keys[b].gx);
  });
  std::vector<GridSignal> out;
  out.reserve(keys.size());
  for (auto i : order) {
    GridSignal g{keys[i], ChipSeq(n_slots, 0)};
    for (std::size_t s = 0; s < n_slots; ++s) g.i_xy[s] = static_cast<Chip>((sums[i][s] > 0) - (sums[i][s] < 0));
    out.push_back(std::move(g));
  }
  return out;
}

struct ClusterWeightMap {
  std::vector<GridKey> grids;
  // raw[g][k]: inner product of grid g's reconstructed pilot with cluster k's code.
  std::vector<std::vector<int>> raw;
  // w[g][k]: raw weight, or 0 where it does not exceed theta.
  std::vector<std::vector<double>> w;
  double theta = 0.0;
  std::size_t n_clusters = 0;

  std::vector<std::size_t> lost_clusters() const {
    std::vector<std::size_t> lost;
    for (std::size_t k = 0; k < n_clusters; ++k) {
      bool any = false;
      for (const auto& row : w) any |= row[k] > 0.0;
      if (!any) lost.push_back(k);
    }
    return lost;
  }
};

class ClusterLostError : public Error {
public:
  ClusterLostError(std::vector<std::size_t> clusters, ClusterWeightMap partial)
    : Error(describe(clusters)), clusters_(std::move(clusters)), partial_(std::move(partial)) {}
  const std::vector<std::size_t>& clusters() const { return clusters_; }
  const ClusterWeightMap& partial() const { return partial_; }

private:
  static std::string describe(const std::vector<std::size_t>& c) {
    std::string s = "cluster lost:";
    for (auto k : c) s += " " + std::to_string(k);
    return s;
  }
  std::vector<std::size_t> clusters_;
  ClusterWeightMap partial_;
};

// Recovers the 16-chip pilot code seen by a grid from its 32 pilot slots.
inline ChipSeq reconstruct_pilot(std::span<const Chip> pilot_slots) {
  const auto b1 = reconstruct_even(pilot_slots);
  return complement_missing(pilot_slots, b1);
}

/// Per grid: reconstruct the pilot, take its inner product with every
/// cluster's code as that cluster's weight, then zero weights <= theta.
/// Throws ClusterLostError (carrying the map) when a cluster keeps no grid.
inline ClusterWeightMap grid_correlate(std::span<const GridSignal> grids, const PilotCodebook& pilots,
                                       std::size_t n_clusters, double theta_rel = 0.5, double theta_abs = -1.0) {
  if (n_clusters == 0 || n_clusters > pilots.size()) throw std::invalid_argument("grid_correlate: bad cluster count");
  ClusterWeightMap m;
  m.n_clusters = n_clusters;
  int best = 0;
  for (const auto& g : grids) {
    if (g.i_xy.size() < kPilotChips) throw std::invalid_argument("grid signal shorter than a pilot");
    const auto code = reconstruct_pilot(std::span<const Chip>(g.i_xy).first(kPilotChips));
    std::vector<int> raw(n_clusters);
    for (std::size_t k = 0; k < n_clusters; ++k) {
      raw[k] = inner_product(code, pilots[k].wh_code);
      best = std::max(best, raw[k]);
    }
    m.grids.push_back(g.key);
    m.raw.push_back(std::move(raw));
  }
  m.theta = theta_abs >= 0.0 ? theta_abs : theta_rel * best;
  for (const auto& raw : m.raw) {
    std::vector<double> w(n_clusters, 0.0);
    for (std::size_t k = 0; k < n_clusters; ++k)
      if (raw[k] > m.theta) w[k] = raw[k];
    m.w.push_back(std::move(w));
  }
  if (auto lost = m.lost_clusters(); !lost.empty()) throw ClusterLostError(std::move(lost), std::move(m));
  return m;
}

struct ClusterDecode {
  Bits bits;
  std::vector<int> scores; // one per codeword
};

/// Weighted combination of the info slots of every grid, per cluster, then
/// codeword decoding on the sign of the combined signal. Grids must be in
/// the same order as the weight map.
inline std::vector<ClusterDecode> separate_and_decode(std::span<const GridSignal> grids, const ClusterWeightMap& weights,
                                                      const Codebook& book) {
  if (grids.size() != weights.grids.size()) throw std::invalid_argument("grid/weight map mismatch");
  const std::size_t n_slots = grids.empty() ? kFrameChips : grids.front().i_xy.size();
  if (n_slots < kPilotChips + kCodeLength) throw std::invalid_argument("frame too short");
  const std::size_t n_words = (n_slots - kPilotChips) / kCodeLength;
  std::vector<ClusterDecode> out(weights.n_clusters);
  std::vector<double> combined(n_slots - kPilotChips);
  ChipSeq q(kCodeLength);
  for (std::size_t k = 0; k < weights.n_clusters; ++k) {
    std::fill(combined.begin(), combined.end(), 0.0);
    for (std::size_t g = 0; g < grids.size(); ++g) {
      const double wk = weights.w[g][k];
      if (wk <= 0.0) continue;
      for (std::size_t s = 0; s < combined.size(); ++s) combined[s] += wk * grids[g].i_xy[kPilotChips + s];
    }
    for (std::size_t c = 0; c < n_words; ++c) {
      for (std::size_t j = 0; j < kCodeLength; ++j) {
        const double v = combined[c * kCodeLength + j];
        q[j] = static_cast<Chip>((v > 0) - (v < 0));
      }
      const auto d = book.decode_codeword(q);
      append_symbol_bits(out[k].bits, d.symbol);
      out[k].scores.push_back(d.score);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full pipeline

struct FrameReport {
  std::size_t packet = 0;
  std::size_t frame = 0;
  double start_us = 0.0;
  std::optional<Point2> centroid;
  Point2 delta_prev, delta_next;
  std::vector<std::size_t> lost_clusters;
  std::vector<std::size_t> grids_per_cluster;
  std::vector<double> max_weight;
  std::vector<std::vector<int>> scores; // [cluster][codeword]
  ClusterWeightMap weights;             // kept only on request
};

struct DecodeReport {
  std::size_t n_clusters = 0;
  SyncResult sync;
  BoundingBox box;
  std::size_t n_packets = 0;
  std::vector<Bits> cluster_bits; // concatenated over packets
  Bits payload;                   // interleaved back into transmit order
  std::vector<FrameReport> frames;
  CentroidTrack track;
};

struct DecodeOptions {
  bool keep_weight_maps = false;
};

/// Filter, synchronize, track, correct, separate and decode a whole stream
/// of back-to-back packets.
inline DecodeReport decode_stream(std::span<const Event> raw, std::size_t n_clusters, const ReceiverConfig& cfg,
                                  const Codebook& book, const PilotCodebook& pilots, const DecodeOptions& opt = {}) {
  if (n_clusters == 0 || n_clusters > kMaxClusters) throw std::invalid_argument("n_clusters must be in [1, 32]");
  DecodeReport rep;
  rep.n_clusters = n_clusters;
  auto filt = alternation_filter(raw, cfg.filter_window_us, cfg.filter_min_count);
  rep.box = filt.box;
  auto& ev = filt.events;
  rep.sync = detect_sync(ev, cfg.sync_margin);
  if (rep.sync.polarity < 0)
    for (auto& e : ev) e.p = static_cast<std::int8_t>(-e.p);

  const ChipClock& clock = rep.sync.clock;
  const std::int64_t last_slot = clock.slot(ev.back().t);
  std::size_t n_packets = 0;
  while (rep.sync.start_slot + static_cast<std::int64_t>((n_packets + 1) * kPacketChips - kFrameChips / 2) <= last_slot)
    ++n_packets;
  if (cfg.max_packets) n_packets = std::min(n_packets, cfg.max_packets);
  if (n_packets == 0) throw SyncNotFoundError("stream ends before the first packet completes", rep.sync.margin);
  rep.n_packets = n_packets;

  auto first_slot_of = [&](std::size_t p, std::size_t f) {
    return rep.sync.start_slot + static_cast<std::int64_t>(p * kPacketChips + kSyncChips + f * kFrameChips);
  };
  // Events in slots [a, b) of the chip clock.
  auto slice = [&](std::int64_t a, std::int64_t b) {
    const double ta = clock.boundary(a) - kChipUs / 2.0, tb = clock.boundary(b) - kChipUs / 2.0;
    auto lo = std::lower_bound(ev.begin(), ev.end(), ta, [](const Event& e, double t) { return static_cast<double>(e.t) < t; });
    auto hi = std::lower_bound(lo, ev.end(), tb, [](const Event& e, double t) { return static_cast<double>(e.t) < t; });
    return std::span<const Event>(&*ev.begin() + (lo - ev.begin()), static_cast<std::size_t>(hi - lo));
  };

  const std::size_t n_frames = n_packets * kFramesPerPacket;
  rep.track.centroids.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    const auto a = first_slot_of(i / kFramesPerPacket, i % kFramesPerPacket);
    try {
      rep.track.centroids[i] = estimate_centroid(slice(a, a + kPilotChips), cfg.centroid_sigma_px, cfg.centroid_threshold_rel);
    } catch (const TrackingLostError&) {
    }
  }

  rep.cluster_bits.assign(n_clusters, {});
  for (std::size_t i = 0; i < n_frames; ++i) {
    FrameReport fr;
    fr.packet = i / kFramesPerPacket;
    fr.frame = i % kFramesPerPacket;
    const auto a = first_slot_of(fr.packet, fr.frame);
    fr.start_us = clock.boundary(a);
    fr.centroid = rep.track.centroids[i];
    const auto frame_events = slice(a, a + static_cast<std::int64_t>(kFrameChips));
    std::vector<ShiftedEvent> shifted;
    if (cfg.correct_vibration) {
      std::tie(fr.delta_prev, fr.delta_next) = rep.track.around(i);
      const FrameBounds fb{clock.boundary(a), clock.boundary(a + static_cast<std::int64_t>(kFrameChips))};
      shifted = correct_vibration(frame_events, fb, fr.delta_prev, fr.delta_next);
    } else {
      shifted = unshifted(frame_events);
    }
    const auto grids = build_grid_signals(shifted, clock, a, kFrameChips, cfg.grid_px);
    ClusterWeightMap wm;
    try {
      wm = grid_correlate(grids, pilots, n_clusters, cfg.theta_rel, cfg.theta_abs);
    } catch (const ClusterLostError& e) {
      wm = e.partial();
      fr.lost_clusters = e.clusters();
    }
    if (wm.n_clusters == 0) wm.n_clusters = n_clusters;
    auto decoded = separate_and_decode(grids, wm, book);
    fr.grids_per_cluster.assign(n_clusters, 0);
    fr.max_weight.assign(n_clusters, 0.0);
    for (std::size_t k = 0; k < n_clusters; ++k) {
      for (const auto& row : wm.w)
        if (row[k] > 0) {
          ++fr.grids_per_cluster[k];
          fr.max_weight[k] = std::max(fr.max_weight[k], row[k]);
        }
      auto& bits = rep.cluster_bits[k];
      bits.insert(bits.end(), decoded[k].bits.begin(), decoded[k].bits.end());
      fr.scores.push_back(std::move(decoded[k].scores));
    }
    if (opt.keep_weight_maps) fr.weights = std::move(wm);
    rep.frames.push_back(std::move(fr));
  }

  rep.payload.reserve(n_packets * packet_capacity_bits(n_clusters));
  for (std::size_t p = 0; p < n_packets; ++p)
    for (std::size_t k = 0; k < n_clusters; ++k) {
      const auto& b = rep.cluster_bits[k];
      rep.payload.insert(rep.payload.end(), b.begin() + static_cast<std::ptrdiff_t>(p * kBitsPerClusterPacket),
                         b.begin() + static_cast<std::ptrdiff_t>((p + 1) * kBitsPerClusterPacket));
    }
  return rep;
}

struct BitErrors {
  std::size_t errors = 0;
  std::size_t bits = 0;
  double ber() const { return bits ? static_cast<double>(errors) / static_cast<double>(bits) : 0.0; }
};

// Bits the decoder did not produce are compared as zeros.
inline BitErrors count_bit_errors(std::span<const std::uint8_t> reference, std::span<const std::uint8_t> decoded) {
  BitErrors r;
  r.bits = reference.size();
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const std::uint8_t d = i < decoded.size() ? decoded[i] : 0;
    r.errors += (d != 0) != (reference[i] != 0);
  }
  return r;
}

} // namespace evlc
