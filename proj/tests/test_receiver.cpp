#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "evlc/channel_sim.hpp"
#include "evlc/receiver.hpp"

using namespace evlc;

namespace {

struct Link {
  Codebook book;
  PilotCodebook pilots = build_pilot_codebook();
  Bits payload;
  Transmission tx;

  Link(std::size_t n_clusters, std::size_t packets, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    payload.resize(packets * packet_capacity_bits(n_clusters));
    for (auto& b : payload) b = rng() & 1;
    tx = build_transmission(payload, n_clusters, book, pilots, packets);
  }
};

SceneConfig scene_for(std::size_t n_clusters) {
  SceneConfig s;
  s.leds_per_cluster = 96 / static_cast<int>(n_clusters);
  return s;
}

// Ideal event-domain observation of chips preceded by `prev`.
ChipSeq observed(std::span<const Chip> chips, Chip prev) {
  ChipSeq out(chips.size(), 0);
  Chip last = prev;
  for (std::size_t j = 0; j < chips.size(); ++j) {
    if (chips[j] != last) out[j] = chips[j];
    last = chips[j];
  }
  return out;
}

ChipSeq observed_pilot(const PilotSequence& p) { return observed(p.spread, -1); }

ClusterWeightMap correlate_partial(std::span<const GridSignal> grids, const PilotCodebook& pilots, std::size_t n,
                                   double theta_rel = 0.5, double theta_abs = -1.0) {
  try {
    return grid_correlate(grids, pilots, n, theta_rel, theta_abs);
  } catch (const ClusterLostError& e) {
    return e.partial();
  }
}

} // namespace

// ---------------------------------------------------------------------------
// Alternation filter

TEST(Filter, PureBackgroundIsNoSignal) {
  std::vector<Event> ev;
  std::mt19937_64 rng(1);
  // 10 Hz/px for 20 ms over the full sensor
  const std::size_t n = static_cast<std::size_t>(10.0 * 1280 * 720 * 0.02);
  for (std::size_t i = 0; i < n; ++i)
    ev.push_back({rng() % 20000, static_cast<std::uint16_t>(rng() % 1280), static_cast<std::uint16_t>(rng() % 720),
                  static_cast<std::int8_t>(rng() & 1 ? 1 : -1)});
  sort_events(ev);
  // 5 per ms is half what a 10 kHz LED pixel gives; chance triples at 3 do occur
  EXPECT_THROW(alternation_filter(ev, 1000, 5), NoSignalError);
}

TEST(Filter, NoiselessKeepsEverything) {
  Link link(16, 1, 2);
  const auto sc = scene_for(16);
  const Trajectory traj(20.0, {}, 1.0);
  const auto ev = generate_events(link.tx.timelines, sc, traj, {}, 1);
  const auto f = alternation_filter(ev, 1000, 3);
  EXPECT_EQ(f.events, ev);
  BoundingBox truth;
  for (const auto& e : ev) truth.extend(e.x, e.y);
  EXPECT_EQ(f.box.x0, truth.x0);
  EXPECT_EQ(f.box.x1, truth.x1);
  EXPECT_EQ(f.box.y0, truth.y0);
  EXPECT_EQ(f.box.y1, truth.y1);
  // the box sits on the projected bar
  const auto bar = project_bar(sc, traj, 0.0);
  EXPECT_NEAR(0.5 * (f.box.y0 + f.box.y1), bar.centroid_y, 1.0);
}

TEST(Filter, MixedStreamRetainsOnlyLedPixels) {
  Link link(16, 1, 3);
  const auto sc = scene_for(16);
  const Trajectory traj(40.0, {}, 1.0);
  const auto clean = generate_events(link.tx.timelines, sc, traj, {}, 7);
  const auto noisy = generate_events(link.tx.timelines, sc, traj, {0.0, 0.0, 1.0, 0.0}, 7);
  ASSERT_GT(noisy.size(), clean.size() + 30000);
  std::set<std::uint32_t> truth, kept;
  for (const auto& e : clean) truth.insert(e.y * kSensorWidth + e.x);
  for (const auto& e : alternation_filter(noisy, 1000, 3).events) kept.insert(e.y * kSensorWidth + e.x);
  EXPECT_EQ(kept, truth);
}

// ---------------------------------------------------------------------------
// Chip clock and sync

TEST(Sync, IdealChannelFindsStart) {
  Link link(16, 2, 4);
  for (std::uint64_t start : {1000u, 1337u, 2050u, 777u}) {
    EmissionWindow win;
    win.start_us = start;
    const auto ev = generate_events(link.tx.timelines, scene_for(16), Trajectory(20.0, {}, 1.0), {}, 1, win);
    const auto f = alternation_filter(ev, 1000, 3);
    const auto s = detect_sync(f.events);
    EXPECT_NEAR(static_cast<double>(s.packet_start_us), static_cast<double>(start), 100.0) << start;
    EXPECT_GT(s.margin, 1.2);
    EXPECT_EQ(s.polarity, 1);
    EXPECT_NEAR(s.clock.phase_us, static_cast<double>(start % 100), 1.0);
  }
}

TEST(Sync, SlotRounding) {
  const ChipClock c{30.0};
  EXPECT_EQ(c.slot(30), 0);
  EXPECT_EQ(c.slot(79), 0);
  EXPECT_EQ(c.slot(81), 1);
  EXPECT_EQ(c.slot(130), 1);
  EXPECT_DOUBLE_EQ(c.boundary(3), 330.0);
}

TEST(Sync, NoSyncPresent) {
  // A steady 10 kHz square wave has no Barker structure.
  std::vector<ChipTimeline> tl(1);
  for (int i = 0; i < 400; ++i) tl[0].levels.push_back(static_cast<std::uint8_t>(i % 2));
  SceneConfig sc;
  sc.leds_per_cluster = 96;
  const auto ev = generate_events(tl, sc, Trajectory(20.0, {}, 1.0), {}, 1);
  EXPECT_THROW(detect_sync(alternation_filter(ev, 1000, 3).events), SyncNotFoundError);
  EXPECT_THROW(detect_sync(std::vector<Event>{}), SyncNotFoundError);
}

TEST(Sync, TenPercentDrop) {
  Link link(16, 1, 5);
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EmissionWindow win;
    win.start_us = 600 + seed * 37;
    const auto ev = generate_events(link.tx.timelines, scene_for(16), Trajectory(30.0, {}, 1.0), {0.1, 10.0, 0.5, 50.0}, seed, win);
    const auto s = detect_sync(alternation_filter(ev, 1000, 3).events);
    ok += std::abs(static_cast<double>(s.packet_start_us) - static_cast<double>(win.start_us)) <= 100.0;
  }
  EXPECT_EQ(ok, 10);
}

TEST(Sync, InvertedPolarityDetected) {
  Link link(16, 1, 6);
  auto ev = generate_events(link.tx.timelines, scene_for(16), Trajectory(20.0, {}, 1.0), {}, 1);
  for (auto& e : ev) e.p = static_cast<std::int8_t>(-e.p);
  const auto s = detect_sync(alternation_filter(ev, 1000, 3).events);
  EXPECT_EQ(s.polarity, -1);
}

// ---------------------------------------------------------------------------
// Centroid

TEST(Centroid, SymmetricFootprint) {
  std::vector<Event> ev;
  for (int y = 300; y <= 320; ++y)
    for (int x = 638; x <= 642; ++x)
      for (int k = 0; k < 3; ++k) ev.push_back({static_cast<std::uint64_t>(k), static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), 1});
  const auto c = estimate_centroid(ev);
  EXPECT_NEAR(c.x, 640.0, 0.25);
  EXPECT_NEAR(c.y, 310.0, 0.25);
}

TEST(Centroid, ThreePixelShift) {
  Link link(16, 1, 7);
  const auto sc = scene_for(16);
  const Trajectory traj(30.0, {}, 1.0);
  auto pilot_events = [&](double cy) {
    SceneConfig s = sc;
    s.center_y_px = cy;
    const auto ev = generate_events(link.tx.timelines, s, traj, {}, 1);
    std::vector<Event> out;
    const std::uint64_t a = 1000 + kSyncChips * kChipUs - kChipUs / 2, b = a + kPilotChips * kChipUs;
    for (const auto& e : ev)
      if (e.t >= a && e.t < b) out.push_back(e);
    return out;
  };
  const auto c0 = estimate_centroid(pilot_events(360.0));
  const auto c1 = estimate_centroid(pilot_events(363.0));
  EXPECT_NEAR(c1.y - c0.y, 3.0, 0.5);
  EXPECT_NEAR(c1.x - c0.x, 0.0, 0.5);
}

TEST(Centroid, IsolatedNoisePixelRejected) {
  std::vector<Event> ev;
  for (int y = 300; y <= 320; ++y)
    for (int x = 639; x <= 641; ++x)
      for (int k = 0; k < 4; ++k) ev.push_back({static_cast<std::uint64_t>(k), static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), 1});
  const auto base = estimate_centroid(ev);
  ev.push_back({5, 100, 600, 1});
  const auto with = estimate_centroid(ev);
  EXPECT_LT(std::hypot(with.x - base.x, with.y - base.y), 0.5);
}

TEST(Centroid, EmptyIsTrackingLost) { EXPECT_THROW(estimate_centroid(std::vector<Event>{}), TrackingLostError); }

TEST(Centroid, TrackDeltasAndEdges) {
  CentroidTrack t;
  t.centroids = {Point2{0, 10}, Point2{1, 13}, Point2{1, 12}};
  EXPECT_DOUBLE_EQ(t.delta(0)->y, 3.0);
  EXPECT_DOUBLE_EQ(t.delta(1)->y, -1.0);
  EXPECT_FALSE(t.delta(2));
  auto [p0, n0] = t.around(0);
  EXPECT_DOUBLE_EQ(p0.y, 3.0); // reused
  EXPECT_DOUBLE_EQ(n0.y, 3.0);
  auto [p2, n2] = t.around(2);
  EXPECT_DOUBLE_EQ(p2.y, -1.0);
  EXPECT_DOUBLE_EQ(n2.y, -1.0);
  t.centroids[1].reset();
  auto [p1, n1] = t.around(1);
  EXPECT_DOUBLE_EQ(p1.y, 0.0);
  EXPECT_DOUBLE_EQ(n1.y, 0.0);
}

// ---------------------------------------------------------------------------
// Vibration correction

TEST(Vibration, AlphaAndIdentity) {
  const FrameBounds fb{1000.0, 13800.0};
  EXPECT_DOUBLE_EQ(fb.alpha(fb.mid()), 0.0);
  EXPECT_DOUBLE_EQ(fb.alpha(1000.0), 0.5);
  EXPECT_DOUBLE_EQ(fb.alpha(13800.0), -0.5);
  std::vector<Event> ev{{1000, 10, 20, 1}, {7400, 11, 21, -1}, {13000, 12, 22, 1}};
  const auto same = correct_vibration(ev, fb, {}, {});
  for (std::size_t i = 0; i < ev.size(); ++i) {
    EXPECT_DOUBLE_EQ(same[i].x, ev[i].x);
    EXPECT_DOUBLE_EQ(same[i].y, ev[i].y);
  }
  const auto mid = correct_vibration(std::vector<Event>{{7400, 11, 21, 1}}, fb, {5, 5}, {5, 5});
  EXPECT_DOUBLE_EQ(mid[0].y, 21.0);
}

TEST(Vibration, LinearMotionExact) {
  // Bar drifts at v px/us; the frame-to-frame displacement is v * T.
  const double T = 12800.0, v = 8.0 / T;
  const FrameBounds fb{0.0, T};
  const Point2 d{0.0, v * T};
  for (std::uint64_t t = 0; t < 12800; t += 100) {
    const double y_true = 300.0 + v * static_cast<double>(t);
    const Event e{t, 50, static_cast<std::uint16_t>(std::lround(y_true)), 1};
    const auto s = correct_vibration(std::vector<Event>{e}, fb, d, d);
    // residual only from pixel quantization
    EXPECT_NEAR(s[0].y, 300.0 + v * fb.mid(), 0.5 + 1e-9) << t;
  }
}

TEST(Vibration, DriftingPilotSpreadShrinks) {
  // Events of a point source drifting 8 px across one frame.
  const double T = 12800.0;
  const FrameBounds fb{0.0, T};
  std::vector<Event> ev;
  for (std::uint64_t t = 0; t < 12800; t += 100)
    ev.push_back({t, 100, static_cast<std::uint16_t>(std::lround(400.0 + 8.0 * static_cast<double>(t) / T)), 1});
  double lo = 1e9, hi = -1e9;
  for (const auto& e : correct_vibration(ev, fb, {0, 8.0}, {0, 8.0})) {
    lo = std::min(lo, e.y);
    hi = std::max(hi, e.y);
  }
  EXPECT_LT(hi - lo, 1.0);
  EXPECT_GE(ev.back().y - ev.front().y, 7);
}

TEST(Vibration, ClampedToSensor) {
  const FrameBounds fb{0.0, 1000.0};
  const auto s = correct_vibration(std::vector<Event>{{0, 0, 719, 1}}, fb, {-100, 100}, {-100, 100});
  EXPECT_DOUBLE_EQ(s[0].x, 0.0);
  EXPECT_DOUBLE_EQ(s[0].y, 719.0);
}

// ---------------------------------------------------------------------------
// Grid correlation and decoding

TEST(Grid, SignalsFromEvents) {
  const ChipClock clock{0.0};
  std::vector<ShiftedEvent> ev{{100, 4.2, 8.9, 1}, {100, 5.0, 9.0, 1}, {100, 6.0, 9.0, -1}, {200, 5.5, 9.5, -1}, {300, 12.0, 0.0, 1}};
  const auto g = build_grid_signals(ev, clock, 1, 3, 4);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].key, (GridKey{3, 0}));
  EXPECT_EQ(g[0].i_xy, (ChipSeq{0, 0, 1}));
  EXPECT_EQ(g[1].key, (GridKey{1, 2}));
  EXPECT_EQ(g[1].i_xy, (ChipSeq{1, -1, 0}));
}

TEST(Grid, SingleClusterGridGetsSixteen) {
  const auto pilots = build_pilot_codebook();
  std::vector<GridSignal> grids;
  for (std::size_t j = 0; j < 16; ++j) grids.push_back({GridKey{0, static_cast<int>(j)}, observed_pilot(pilots[j])});
  const auto m = grid_correlate(grids, pilots, 16);
  for (std::size_t g = 0; g < 16; ++g)
    for (std::size_t k = 0; k < 16; ++k) {
      EXPECT_EQ(m.raw[g][k], g == k ? 16 : 0);
      EXPECT_EQ(m.w[g][k], g == k ? 16.0 : 0.0);
    }
}

TEST(Grid, BackgroundGridHasNoWeight) {
  const auto pilots = build_pilot_codebook();
  std::vector<GridSignal> grids{{GridKey{0, 0}, observed_pilot(pilots[2])}, {GridKey{0, 1}, ChipSeq(kFrameChips, 0)}};
  grids[0].i_xy.resize(kFrameChips, 0);
  try {
    grid_correlate(grids, pilots, 4);
    FAIL();
  } catch (const ClusterLostError& e) {
    EXPECT_EQ(e.clusters(), (std::vector<std::size_t>{0, 1, 3}));
    for (double w : e.partial().w[1]) EXPECT_EQ(w, 0.0);
    EXPECT_EQ(e.partial().w[0][2], 16.0);
  }
}

TEST(Grid, StraddlingGridSplitsWeight) {
  // Two clusters summed in one grid: chips where they disagree cancel.
  const auto pilots = build_pilot_codebook();
  const auto a = observed_pilot(pilots[3]), b = observed_pilot(pilots[5]);
  ChipSeq both(kPilotChips);
  for (std::size_t j = 0; j < kPilotChips; ++j) {
    const int s = a[j] + b[j];
    both[j] = static_cast<Chip>((s > 0) - (s < 0));
  }
  const std::vector<GridSignal> grids{{GridKey{0, 0}, both}};
  const auto m = correlate_partial(grids, pilots, 16);
  EXPECT_GT(m.w[0][3], 0.0);
  EXPECT_GT(m.w[0][5], 0.0);
  EXPECT_LT(m.w[0][3], 16.0);
  EXPECT_LT(m.w[0][5], 16.0);
  for (std::size_t k = 0; k < 16; ++k)
    if (k != 3 && k != 5) EXPECT_EQ(m.w[0][k], 0.0) << k;
}

TEST(Grid, ThresholdIsStrict) {
  const auto pilots = build_pilot_codebook();
  std::vector<GridSignal> grids{{GridKey{0, 0}, observed_pilot(pilots[0])}, {GridKey{0, 1}, observed_pilot(pilots[1])}};
  // half of grid 1's pilot erased in both pair elements: raw weight 8
  for (std::size_t j = 0; j < 16; ++j) grids[1].i_xy[j] = 0;
  try {
    grid_correlate(grids, pilots, 2, 0.5);
    FAIL();
  } catch (const ClusterLostError& e) {
    EXPECT_DOUBLE_EQ(e.partial().theta, 8.0);
    EXPECT_EQ(e.partial().raw[1][1], 8);
    EXPECT_EQ(e.partial().w[1][1], 0.0);
    EXPECT_EQ(e.clusters(), (std::vector<std::size_t>{1}));
  }
  const auto m = grid_correlate(grids, pilots, 2, 0.5, 7.0);
  EXPECT_EQ(m.w[1][1], 8.0);
}

namespace {

// One grid seeing a single cluster's ideal frame: pilot then info codewords.
GridSignal ideal_frame_grid(GridKey key, const PilotSequence& p, const ChipSeq& info) {
  ChipSeq chips(p.spread.begin(), p.spread.end());
  chips.insert(chips.end(), info.begin(), info.end());
  return {key, observed(chips, -1)};
}

} // namespace

TEST(Separate, SingleClusterScaleInvariance) {
  const Codebook book;
  const auto pilots = build_pilot_codebook();
  const Bits bits{0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0};
  const std::vector<GridSignal> grids{ideal_frame_grid({0, 0}, pilots[0], book.encode_bits(bits)),
                                      ideal_frame_grid({0, 1}, pilots[0], book.encode_bits(bits))};
  const auto m = grid_correlate(grids, pilots, 1);
  const auto base = separate_and_decode(grids, m, book);
  EXPECT_EQ(base[0].bits, bits);
  for (double s : {0.01, 3.5, 1000.0}) {
    auto scaled = m;
    for (auto& row : scaled.w) row[0] *= s;
    EXPECT_EQ(separate_and_decode(grids, scaled, book)[0].bits, bits) << s;
  }
}

TEST(Separate, MajorityOfGrids) {
  const Codebook book;
  const auto pilots = build_pilot_codebook();
  const Bits bits{1, 0, 1, 0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 0, 0, 1};
  const auto info = book.encode_bits(bits);
  std::vector<GridSignal> grids{ideal_frame_grid({0, 0}, pilots[4], info), ideal_frame_grid({0, 1}, pilots[4], info),
                                ideal_frame_grid({0, 2}, pilots[4], info)};
  // grid 3 sees the inverse info
  for (std::size_t j = kPilotChips; j < grids[2].i_xy.size(); ++j) grids[2].i_xy[j] = static_cast<Chip>(-grids[2].i_xy[j]);
  const auto wm = correlate_partial(grids, pilots, 5);
  EXPECT_EQ(separate_and_decode(grids, wm, book)[4].bits, bits);
}

TEST(Separate, TwoClustersDisjointGrids) {
  const Codebook book;
  const auto pilots = build_pilot_codebook();
  const Bits b0(24, 1), b1{0, 0, 1, 1, 0, 1, 0, 1, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 0, 1, 0};
  const std::vector<GridSignal> grids{ideal_frame_grid({0, 0}, pilots[0], book.encode_bits(b0)),
                                      ideal_frame_grid({0, 5}, pilots[1], book.encode_bits(b1))};
  const auto wm = grid_correlate(grids, pilots, 2);
  const auto d = separate_and_decode(grids, wm, book);
  EXPECT_EQ(d[0].bits, b0);
  EXPECT_EQ(d[1].bits, b1);
}

TEST(Decode, IdealSixteenClusters) {
  Link link(16, 2, 8);
  const auto ev = generate_events(link.tx.timelines, scene_for(16), Trajectory(20.0, {}, 1.0), {}, 1);
  ReceiverConfig rc;
  const auto rep = decode_stream(ev, 16, rc, link.book, link.pilots);
  EXPECT_EQ(rep.n_packets, 2u);
  EXPECT_EQ(rep.payload, link.payload);
  for (const auto& f : rep.frames) EXPECT_TRUE(f.lost_clusters.empty());
}

TEST(Decode, SingleClusterAndThirtyTwo) {
  {
    Link link(1, 1, 9);
    const auto ev = generate_events(link.tx.timelines, scene_for(1), Trajectory(20.0, {}, 1.0), {}, 1);
    EXPECT_EQ(decode_stream(ev, 1, {}, link.book, link.pilots).payload, link.payload);
  }
  {
    // three LEDs per cluster need the sharper outdoor optics
    Link link(32, 1, 10);
    SceneConfig sc = scene_for(32);
    sc.led_gain = 3.5;
    sc.blob_sigma_px = 1.0;
    sc.contrast_threshold = 0.2;
    ReceiverConfig rc;
    rc.grid_px = 2;
    const auto ev = generate_events(link.tx.timelines, sc, Trajectory(20.0, {}, 1.0), {}, 1);
    EXPECT_EQ(decode_stream(ev, 32, rc, link.book, link.pilots).payload, link.payload);
  }
}

TEST(Decode, DeterministicPipeline) {
  Link link(16, 1, 11);
  const auto ev = generate_events(link.tx.timelines, scene_for(16), Trajectory(35.0, {}, 1.0), {0.1, 10, 1, 50}, 3);
  ReceiverConfig rc;
  rc.grid_px = 2;
  const auto a = decode_stream(ev, 16, rc, link.book, link.pilots);
  const auto b = decode_stream(ev, 16, rc, link.book, link.pilots);
  EXPECT_EQ(a.payload, b.payload);
  EXPECT_EQ(a.sync.packet_start_us, b.sync.packet_start_us);
}

TEST(Decode, BitErrorsCountMissingAsZero) {
  const Bits ref{1, 0, 1, 1};
  const auto be = count_bit_errors(ref, Bits{1, 0});
  EXPECT_EQ(be.bits, 4u);
  EXPECT_EQ(be.errors, 2u);
  EXPECT_DOUBLE_EQ(be.ber(), 0.5);
}

TEST(Decode, MonotonicDegradationInNoise) {
  // Same seeds at each level; BER must not fall as noise rises.
  auto ber_at = [](double p_drop, double bg) {
    std::size_t err = 0, bits = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Link link(16, 1, 100 + seed);
      SceneConfig sc = scene_for(16);
      sc.led_gain = 3.5;
      const auto ev = generate_events(link.tx.timelines, sc, Trajectory(57.0, {}, 1.0), {p_drop, 10.0, bg, 50.0}, seed);
      ReceiverConfig rc;
      rc.grid_px = 2;
      Bits dec;
      try {
        dec = decode_stream(ev, 16, rc, link.book, link.pilots).payload;
      } catch (const Error&) {
      }
      const auto be = count_bit_errors(link.payload, dec);
      err += be.errors;
      bits += be.bits;
    }
    return static_cast<double>(err) / static_cast<double>(bits);
  };
  const double d0 = ber_at(0.0, 1.0), d1 = ber_at(0.2, 1.0), d2 = ber_at(0.4, 1.0);
  EXPECT_LE(d0, d1);
  EXPECT_LE(d1, d2);
  EXPECT_GT(d2, d0);
  const double b0 = ber_at(0.1, 0.0), b1 = ber_at(0.1, 30.0), b2 = ber_at(0.1, 100.0);
  EXPECT_LE(b0, b1);
  EXPECT_LE(b1, b2);
  EXPECT_GT(b2, b0);
}
