#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "evlc/errors.hpp"
#include "evlc/framing.hpp"
#include "evlc/rng.hpp"

namespace evlc {

inline constexpr int kSensorWidth = 1280;
inline constexpr int kSensorHeight = 720;

struct Event {
  std::uint64_t t = 0; // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

// Stream order: time, then row, then column.
inline bool event_before(const Event& a, const Event& b) {
  return std::tie(a.t, a.y, a.x, a.p) < std::tie(b.t, b.y, b.x, b.p);
}

inline void sort_events(std::vector<Event>& ev) { std::stable_sort(ev.begin(), ev.end(), event_before); }

struct SceneConfig {
  int n_leds = 96;
  int leds_per_cluster = 6;
  double led_pitch_m = 0.0125;
  double distance_m = 10.0;
  double focal_px = 5144.0;
  double blob_sigma_px = 1.0;
  // Peak pixel irradiance of one LED at gain_ref_distance_m, in units of
  // the ambient level. Falls off with the square of the distance.
  double led_gain = 40.0;
  double gain_ref_distance_m = 10.0;
  double ambient = 1.0;
  // Log-intensity change needed for a pixel to fire.
  double contrast_threshold = 0.2;
  double center_x_px = 640.0;
  double center_y_px = 360.0;

  int n_clusters() const { return leds_per_cluster > 0 ? n_leds / leds_per_cluster : 0; }
};

struct TrajectoryConfig {
  double speed_mps = 0.0;
  double vib_amp_px = 0.0;
  double vib_freq_hz = 0.0;
  double vib_phase_rad = 0.0;
  // Standard deviation of the vertical random walk after one second.
  double walk_sigma_px = 0.0;
  std::uint64_t seed = 1;
};

struct NoiseModel {
  double p_drop = 0.0;
  double jitter_sigma_us = 0.0;
  double bg_rate_hz_per_px = 0.0;
  double refractory_us = 50.0;
};

// Longitudinal approach plus vertical image-plane shake. Time is seconds
// since the start of the approach; the random walk is generated on 1 ms
// knots up to the horizon and linearly interpolated.
class Trajectory {
public:
  Trajectory(double start_distance_m, const TrajectoryConfig& cfg, double horizon_s)
    : start_distance_m_(start_distance_m), cfg_(cfg), horizon_s_(horizon_s) {
    if (cfg_.walk_sigma_px > 0.0) {
      const auto n = static_cast<std::size_t>(std::ceil(horizon_s / kKnotS)) + 2;
      walk_.resize(n, 0.0);
      Rng rng(derive_seed(cfg_.seed, {0x77616c6bULL}));
      std::normal_distribution<double> step(0.0, cfg_.walk_sigma_px * std::sqrt(kKnotS));
      for (std::size_t i = 1; i < n; ++i) walk_[i] = walk_[i - 1] + step(rng);
    }
  }

  double horizon_s() const { return horizon_s_; }
  const TrajectoryConfig& config() const { return cfg_; }

  double distance(double t) const { return start_distance_m_ - cfg_.speed_mps * t; }

  double vertical_offset(double t) const {
    double off = cfg_.vib_amp_px * std::sin(2.0 * std::numbers::pi * cfg_.vib_freq_hz * t + cfg_.vib_phase_rad);
    if (!walk_.empty()) {
      const double k = std::clamp(t / kKnotS, 0.0, static_cast<double>(walk_.size() - 1));
      const auto i = std::min(static_cast<std::size_t>(k), walk_.size() - 2);
      const double f = k - static_cast<double>(i);
      off += walk_[i] * (1.0 - f) + walk_[i + 1] * f;
    }
    return off;
  }

private:
  static constexpr double kKnotS = 1e-3;
  double start_distance_m_;
  TrajectoryConfig cfg_;
  double horizon_s_;
  std::vector<double> walk_;
};

struct LedSpot {
  double x = 0.0;
  double y = 0.0;
  int cluster = 0;
};

struct BarProjection {
  std::vector<LedSpot> leds;
  // Pixel indices (y * width + x) inside the blur disc of any LED of each cluster.
  std::vector<std::vector<std::uint32_t>> footprints;
  double centroid_x = 0.0;
  double centroid_y = 0.0;
  double led_spacing_px = 0.0;
  double peak_amplitude = 0.0;
};

inline BarProjection project_bar(const SceneConfig& scene, const Trajectory& traj, double t) {
  const double d = traj.distance(t);
  if (!(d > 0.0))
    throw HorizonError("bar distance is non-positive at t=" + std::to_string(t) + " s");
  BarProjection bp;
  bp.led_spacing_px = scene.focal_px * scene.led_pitch_m / d;
  bp.centroid_x = scene.center_x_px;
  bp.centroid_y = scene.center_y_px + traj.vertical_offset(t);
  const double ratio = scene.gain_ref_distance_m / d;
  bp.peak_amplitude = scene.led_gain * ratio * ratio;
  const int nc = scene.n_clusters();
  bp.footprints.assign(static_cast<std::size_t>(nc), {});
  const double mid = (scene.n_leds - 1) / 2.0;
  const double r = 2.0 * scene.blob_sigma_px;
  for (int i = 0; i < scene.n_leds; ++i) {
    LedSpot s{bp.centroid_x, bp.centroid_y + (i - mid) * bp.led_spacing_px, i / scene.leds_per_cluster};
    bp.leds.push_back(s);
    auto& fp = bp.footprints[static_cast<std::size_t>(s.cluster)];
    for (int py = static_cast<int>(std::ceil(s.y - r)); py <= static_cast<int>(std::floor(s.y + r)); ++py) {
      if (py < 0 || py >= kSensorHeight) continue;
      for (int px = static_cast<int>(std::ceil(s.x - r)); px <= static_cast<int>(std::floor(s.x + r)); ++px) {
        if (px < 0 || px >= kSensorWidth) continue;
        const double dx = px - s.x, dy = py - s.y;
        if (dx * dx + dy * dy <= r * r) fp.push_back(static_cast<std::uint32_t>(py * kSensorWidth + px));
      }
    }
  }
  for (auto& fp : bp.footprints) {
    std::sort(fp.begin(), fp.end());
    fp.erase(std::unique(fp.begin(), fp.end()), fp.end());
  }
  return bp;
}

namespace detail {

// Per-pixel, per-cluster irradiance contributed by the bar at one instant.
struct IrradianceMap {
  std::vector<std::uint32_t> pixels;
  std::vector<float> amp; // pixels.size() x n_clusters, row major
  int n_clusters = 0;
};

inline IrradianceMap irradiance(const SceneConfig& scene, const BarProjection& bp) {
  IrradianceMap m;
  m.n_clusters = scene.n_clusters();
  std::unordered_map<std::uint32_t, std::size_t> slot;
  const double r = 2.0 * scene.blob_sigma_px;
  const double inv2s2 = 1.0 / (2.0 * scene.blob_sigma_px * scene.blob_sigma_px);
  for (const auto& s : bp.leds) {
    for (int py = static_cast<int>(std::ceil(s.y - r)); py <= static_cast<int>(std::floor(s.y + r)); ++py) {
      if (py < 0 || py >= kSensorHeight) continue;
      for (int px = static_cast<int>(std::ceil(s.x - r)); px <= static_cast<int>(std::floor(s.x + r)); ++px) {
        if (px < 0 || px >= kSensorWidth) continue;
        const double dx = px - s.x, dy = py - s.y, rr = dx * dx + dy * dy;
        if (rr > r * r) continue;
        const auto idx = static_cast<std::uint32_t>(py * kSensorWidth + px);
        auto [it, fresh] = slot.try_emplace(idx, m.pixels.size());
        if (fresh) {
          m.pixels.push_back(idx);
          m.amp.resize(m.amp.size() + static_cast<std::size_t>(m.n_clusters), 0.0f);
        }
        m.amp[it->second * static_cast<std::size_t>(m.n_clusters) + static_cast<std::size_t>(s.cluster)] +=
          static_cast<float>(bp.peak_amplitude * std::exp(-rr * inv2s2));
      }
    }
  }
  return m;
}

inline std::uint64_t jittered(std::uint64_t t, double sigma, Rng& rng) {
  if (sigma <= 0.0) return t;
  std::normal_distribution<double> n(0.0, sigma);
  const double v = std::round(static_cast<double>(t) + n(rng));
  return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
}

inline void apply_refractory(std::vector<Event>& ev, double refractory_us) {
  if (refractory_us <= 0.0 || ev.empty()) return;
  constexpr std::uint64_t kNever = ~std::uint64_t{0};
  std::vector<std::uint64_t> last(static_cast<std::size_t>(kSensorWidth) * kSensorHeight, kNever);
  std::size_t out = 0;
  for (const auto& e : ev) {
    auto& l = last[static_cast<std::size_t>(e.y) * kSensorWidth + e.x];
    if (l != kNever && static_cast<double>(e.t - l) < refractory_us) continue;
    l = e.t;
    ev[out++] = e;
  }
  ev.resize(out);
}

} // namespace detail

// When the first chip is emitted and how long the bar stays dark afterwards.
struct EmissionWindow {
  std::uint64_t start_us = 1000;
  std::uint64_t tail_us = 1000;
  // Seconds since the start of the trajectory at which this window begins.
  double trajectory_offset_s = 0.0;
};

inline std::uint64_t emission_end_us(const std::vector<ChipTimeline>& timelines, const EmissionWindow& win) {
  const std::size_t n = timelines.empty() ? 0 : timelines.front().levels.size();
  return win.start_us + n * kChipUs + win.tail_us;
}

/// Transition-driven event camera model. At every chip boundary where some
/// cluster changes level, each lit pixel compares the log irradiance before
/// and after; a change of at least the contrast threshold yields one event
/// whose polarity is the sign of the change. The bar is dark before the
/// first chip and after the last. Drops, timestamp jitter, Poisson
/// background and per-pixel refractory suppression follow.
///
/// Randomness is drawn from per-boundary and per-10ms-window child seeds,
/// so any partition of the work reproduces the same stream.
inline std::vector<Event> generate_events(const std::vector<ChipTimeline>& timelines, const SceneConfig& scene,
                                          const Trajectory& traj, const NoiseModel& noise, std::uint64_t seed,
                                          const EmissionWindow& win = {}) {
  const int nc = scene.n_clusters();
  if (nc <= 0 || scene.n_leds != nc * scene.leds_per_cluster)
    throw std::invalid_argument("n_leds must be a multiple of leds_per_cluster");
  if (timelines.size() != static_cast<std::size_t>(nc))
    throw std::invalid_argument("need one timeline per cluster: " + std::to_string(nc) + " expected, " +
                                std::to_string(timelines.size()) + " given");
  const std::size_t n_chips = timelines.front().levels.size();
  for (const auto& tl : timelines)
    if (tl.levels.size() != n_chips) throw std::invalid_argument("timelines differ in length");

  std::vector<Event> ev;
  std::vector<std::uint8_t> before(static_cast<std::size_t>(nc), 0), after(static_cast<std::size_t>(nc), 0);
  const double log_thr = scene.contrast_threshold;
  std::bernoulli_distribution drop(std::clamp(noise.p_drop, 0.0, 1.0));

  // Boundary j is the switch into chip j; boundary n_chips returns to dark.
  for (std::size_t j = 0; j <= n_chips; ++j) {
    bool changed = false;
    for (std::size_t c = 0; c < static_cast<std::size_t>(nc); ++c) {
      before[c] = j == 0 ? 0 : timelines[c].levels[j - 1];
      after[c] = j == n_chips ? 0 : timelines[c].levels[j];
      changed |= before[c] != after[c];
    }
    if (!changed) continue;
    const std::uint64_t tb = win.start_us + j * kChipUs;
    const double t_traj = win.trajectory_offset_s + static_cast<double>(tb) * 1e-6;
    const auto bp = project_bar(scene, traj, t_traj);
    const auto irr = detail::irradiance(scene, bp);
    Rng rng(derive_seed(seed, {1, j}));
    for (std::size_t i = 0; i < irr.pixels.size(); ++i) {
      double ib = scene.ambient, ia = scene.ambient;
      const float* a = &irr.amp[i * static_cast<std::size_t>(nc)];
      for (std::size_t c = 0; c < static_cast<std::size_t>(nc); ++c) {
        ib += before[c] * a[c];
        ia += after[c] * a[c];
      }
      const double dl = std::log(ia) - std::log(ib);
      if (std::abs(dl) < log_thr) continue;
      if (noise.p_drop > 0.0 && drop(rng)) continue;
      const auto pix = irr.pixels[i];
      ev.push_back(Event{detail::jittered(tb, noise.jitter_sigma_us, rng),
                         static_cast<std::uint16_t>(pix % kSensorWidth),
                         static_cast<std::uint16_t>(pix / kSensorWidth), static_cast<std::int8_t>(dl > 0 ? 1 : -1)});
    }
  }

  if (noise.bg_rate_hz_per_px > 0.0) {
    constexpr std::uint64_t kWindowUs = 10'000;
    const std::uint64_t end = emission_end_us(timelines, win);
    const double px = static_cast<double>(kSensorWidth) * kSensorHeight;
    for (std::uint64_t w = 0; w * kWindowUs < end; ++w) {
      const std::uint64_t w0 = w * kWindowUs, w1 = std::min(end, w0 + kWindowUs);
      Rng rng(derive_seed(seed, {2, w}));
      std::poisson_distribution<std::uint64_t> count(noise.bg_rate_hz_per_px * px * static_cast<double>(w1 - w0) * 1e-6);
      std::uniform_int_distribution<std::uint64_t> ut(w0, w1 - 1);
      std::uniform_int_distribution<int> ux(0, kSensorWidth - 1), uy(0, kSensorHeight - 1), up(0, 1);
      const auto n = count(rng);
      for (std::uint64_t i = 0; i < n; ++i) {
        Event e;
        e.t = ut(rng);
        e.x = static_cast<std::uint16_t>(ux(rng));
        e.y = static_cast<std::uint16_t>(uy(rng));
        e.p = static_cast<std::int8_t>(up(rng) ? 1 : -1);
        ev.push_back(e);
      }
    }
  }

  sort_events(ev);
  detail::apply_refractory(ev, noise.refractory_us);
  return ev;
}

} // namespace evlc
