#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "evlc/config.hpp"
#include "evlc/framing.hpp"
#include "evlc/receiver.hpp"
#include "evlc/rng.hpp"

namespace evlc {

inline constexpr double kPlotFloor = 1e-5;

// Runs job(i) for i in [0, n) on up to `threads` workers. Each job writes
// only to its own slot, so results do not depend on scheduling.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& job) {
  unsigned w = threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency());
  w = static_cast<unsigned>(std::min<std::size_t>(w, n));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errs(w);
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < w; ++k)
    pool.emplace_back([&, k] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) job(i);
      } catch (...) {
        errs[k] = std::current_exception();
        next = n;
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// One simulated capture

struct TrialSpec {
  std::size_t n_clusters = 16;
  std::size_t packets = 3;
  double start_distance_m = 10.0;
  SceneConfig scene;
  TrajectoryConfig trajectory; // seed and phase are filled from `seed`
  NoiseModel noise;
  ReceiverConfig receiver;
  std::uint64_t seed = 1;
  bool also_uncorrected = false;
};

struct TrialDecode {
  Bits payload;
  bool failed = false;       // no signal / no sync
  bool cluster_lost = false; // some frame lost a cluster
  std::string failure;
};

struct TrialOutcome {
  Bits reference;
  std::vector<double> packet_mid_distance_m;
  TrialDecode corrected;
  std::optional<TrialDecode> uncorrected;
  std::size_t n_events = 0;
};

inline TrialDecode decode_trial(std::span<const Event> ev, std::size_t n_clusters, const ReceiverConfig& rc,
                                const Codebook& book, const PilotCodebook& pilots) {
  TrialDecode d;
  try {
    auto rep = decode_stream(ev, n_clusters, rc, book, pilots);
    d.payload = std::move(rep.payload);
    for (const auto& f : rep.frames) d.cluster_lost |= !f.lost_clusters.empty();
  } catch (const Error& e) {
    d.failed = true;
    d.failure = e.what();
  }
  return d;
}

inline TrialOutcome run_trial(const TrialSpec& spec, const Codebook& book, const PilotCodebook& pilots) {
  TrialOutcome out;
  Rng prng(derive_seed(spec.seed, {1}));
  out.reference.resize(spec.packets * packet_capacity_bits(spec.n_clusters));
  for (auto& b : out.reference) b = static_cast<std::uint8_t>(prng() & 1u);
  const auto tx = build_transmission(out.reference, spec.n_clusters, book, pilots, spec.packets);

  Rng wrng(derive_seed(spec.seed, {2}));
  EmissionWindow win;
  win.start_us = 500 + wrng() % 1000;
  TrajectoryConfig tc = spec.trajectory;
  tc.seed = derive_seed(spec.seed, {3});
  tc.vib_phase_rad = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(wrng);
  const double horizon_s = static_cast<double>(emission_end_us(tx.timelines, win)) * 1e-6 + 0.01;
  const Trajectory traj(spec.start_distance_m, tc, horizon_s);

  for (std::size_t p = 0; p < spec.packets; ++p) {
    const double mid_us = static_cast<double>(win.start_us) + (static_cast<double>(p) + 0.5) * kPacketChips * kChipUs;
    out.packet_mid_distance_m.push_back(traj.distance(mid_us * 1e-6));
  }

  SceneConfig sc = spec.scene;
  sc.leds_per_cluster = sc.n_leds / static_cast<int>(spec.n_clusters);
  const auto ev = generate_events(tx.timelines, sc, traj, spec.noise, derive_seed(spec.seed, {4}), win);
  out.n_events = ev.size();
  ReceiverConfig rc = spec.receiver;
  rc.correct_vibration = true;
  out.corrected = decode_trial(ev, spec.n_clusters, rc, book, pilots);
  if (spec.also_uncorrected) {
    rc.correct_vibration = false;
    out.uncorrected = decode_trial(ev, spec.n_clusters, rc, book, pilots);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct BerRow {
  double speed_mps = 0.0;
  double distance_lo_m = 0.0;
  double distance_hi_m = 0.0; // equal to lo for static points
  bool correction = true;
  int trials = 0;
  std::size_t bits = 0;
  std::size_t errors = 0;
  int failed_trials = 0; // sync lost or a cluster lost

  double ber() const { return bits ? static_cast<double>(errors) / static_cast<double>(bits) : 0.0; }
  bool error_free() const { return bits > 0 && errors == 0; }
  double plot_ber() const { return error_free() ? kPlotFloor : ber(); }
  bool unrecoverable() const { return trials > 0 && failed_trials == trials; }
};

struct BerReport {
  std::string mode; // "static" | "mobile"
  std::size_t n_clusters = 0;
  double throughput_bps = 0.0;
  std::uint64_t seed = 0;
  std::vector<BerRow> rows;
  // Whole-stream totals, counted per trial independently of binning.
  std::size_t stream_bits = 0;
  std::size_t stream_errors = 0;
  std::size_t stream_bits_uncorrected = 0;
  std::size_t stream_errors_uncorrected = 0;
};

namespace detail {
inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}
} // namespace detail

inline constexpr const char* kBerCsvHeader =
  "mode,speed_mps,distance_lo_m,distance_hi_m,correction,trials,bits,errors,ber,error_free,plot_ber,failed_trials,unrecoverable";

inline std::string ber_report_csv(const BerReport& r) {
  std::ostringstream os;
  os << kBerCsvHeader << '\n';
  for (const auto& row : r.rows)
    os << r.mode << ',' << detail::fmt_num(row.speed_mps) << ',' << detail::fmt_num(row.distance_lo_m) << ','
       << detail::fmt_num(row.distance_hi_m) << ',' << (row.correction ? "on" : "off") << ',' << row.trials << ','
       << row.bits << ',' << row.errors << ',' << detail::fmt_num(row.ber()) << ',' << (row.error_free() ? 1 : 0) << ','
       << detail::fmt_num(row.plot_ber()) << ',' << row.failed_trials << ',' << (row.unrecoverable() ? 1 : 0) << '\n';
  return os.str();
}

inline nlohmann::json ber_report_json(const BerReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"speed_mps", row.speed_mps}, {"distance_lo_m", row.distance_lo_m}, {"distance_hi_m", row.distance_hi_m},
                    {"correction", row.correction}, {"trials", row.trials}, {"bits", row.bits}, {"errors", row.errors},
                    {"ber", row.ber()}, {"error_free", row.error_free()}, {"plot_ber", row.plot_ber()},
                    {"failed_trials", row.failed_trials}, {"unrecoverable", row.unrecoverable()}});
  return {{"mode", r.mode}, {"n_clusters", r.n_clusters}, {"throughput_bps", r.throughput_bps}, {"seed", r.seed},
          {"plot_floor", kPlotFloor}, {"stream_bits", r.stream_bits}, {"stream_errors", r.stream_errors},
          {"rows", rows}};
}

// ---------------------------------------------------------------------------
// Sweeps

inline std::vector<double> sweep_distances(const ExperimentConfig& e) {
  std::vector<double> d;
  const auto n = static_cast<long>(std::floor((e.distance_max_m - e.distance_min_m) / e.distance_step_m + 1e-9));
  for (long i = 0; i <= n; ++i) d.push_back(e.distance_min_m + static_cast<double>(i) * e.distance_step_m);
  return d;
}

inline void require_valid(const Config& cfg) {
  auto bad = validate(cfg);
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

inline TrialSpec base_spec(const Config& cfg) {
  TrialSpec s;
  s.n_clusters = static_cast<std::size_t>(cfg.experiment.cluster_mode);
  s.packets = static_cast<std::size_t>(cfg.experiment.packets_per_trial);
  s.scene = cfg.scene;
  s.trajectory = cfg.trajectory;
  s.noise = cfg.noise;
  s.receiver = cfg.receiver;
  return s;
}

/// Fixed transmitter and receiver: no motion and no vibration.
inline BerReport run_static_sweep(const Config& cfg) {
  require_valid(cfg);
  const auto& e = cfg.experiment;
  const auto dists = sweep_distances(e);
  const auto trials = static_cast<std::size_t>(e.trials);
  const Codebook book;
  const auto pilots = build_pilot_codebook();

  std::vector<TrialOutcome> res(dists.size() * trials);
  parallel_for(res.size(), e.threads, [&](std::size_t job) {
    const std::size_t pi = job / trials, ti = job % trials;
    TrialSpec s = base_spec(cfg);
    s.start_distance_m = dists[pi];
    s.trajectory.speed_mps = 0.0;
    s.trajectory.vib_amp_px = 0.0;
    s.trajectory.walk_sigma_px = 0.0;
    s.seed = derive_seed(e.seed, {0x5707, pi, ti});
    res[job] = run_trial(s, book, pilots);
  });

  BerReport rep;
  rep.mode = "static";
  rep.n_clusters = static_cast<std::size_t>(e.cluster_mode);
  rep.throughput_bps = throughput_bps(rep.n_clusters);
  rep.seed = e.seed;
  for (std::size_t pi = 0; pi < dists.size(); ++pi) {
    BerRow row;
    row.distance_lo_m = row.distance_hi_m = dists[pi];
    row.trials = e.trials;
    for (std::size_t ti = 0; ti < trials; ++ti) {
      const auto& t = res[pi * trials + ti];
      const auto be = count_bit_errors(t.reference, t.corrected.payload);
      row.bits += be.bits;
      row.errors += be.errors;
      row.failed_trials += t.corrected.failed || t.corrected.cluster_lost;
    }
    rep.stream_bits += row.bits;
    rep.stream_errors += row.errors;
    rep.rows.push_back(row);
  }
  return rep;
}

struct MobileOptions {
  bool ablate_correction = false;
};

/// Approach from distance_max to distance_min at each speed. Every trial is
/// a short capture window placed at a random position inside one bin; its
/// decoded bits are assigned per packet to the bin holding the true distance
/// at the packet's midpoint.
inline BerReport run_mobile_sweep(const Config& cfg, const MobileOptions& opt = {}) {
  require_valid(cfg);
  const auto& e = cfg.experiment;
  if (e.speeds_mps.empty()) throw ConfigError({"experiment.speeds_mps: mobile sweep needs at least one speed"});
  for (std::size_t i = 0; i < e.speeds_mps.size(); ++i)
    if (!(e.speeds_mps[i] > 0))
      throw ConfigError({"experiment.speeds_mps[" + std::to_string(i) +
                         "]: speed 0 is a stationary setup, use static-sweep instead"});

  // Bins, far to near.
  std::vector<std::pair<double, double>> bins;
  for (double hi = e.distance_max_m; hi - e.bin_m >= e.distance_min_m - 1e-9; hi -= e.bin_m) bins.emplace_back(hi - e.bin_m, hi);
  if (bins.empty()) throw ConfigError({"experiment.bin_m: larger than the distance range"});

  const auto trials = static_cast<std::size_t>(e.trials);
  const std::size_t nb = bins.size();
  const Codebook book;
  const auto pilots = build_pilot_codebook();
  const double window_s = (2000.0 + static_cast<double>(e.packets_per_trial) * kPacketChips * kChipUs) * 1e-6;

  std::vector<TrialOutcome> res(e.speeds_mps.size() * nb * trials);
  parallel_for(res.size(), e.threads, [&](std::size_t job) {
    const std::size_t si = job / (nb * trials), bi = (job / trials) % nb, ti = job % trials;
    TrialSpec s = base_spec(cfg);
    s.trajectory.speed_mps = e.speeds_mps[si];
    s.seed = derive_seed(e.seed, {0x40b1, si, bi, ti});
    s.also_uncorrected = opt.ablate_correction;
    const auto [lo, hi] = bins[bi];
    const double travel = e.speeds_mps[si] * window_s;
    Rng prng(derive_seed(s.seed, {5}));
    const double slack = std::max(0.0, hi - lo - travel);
    s.start_distance_m = hi - std::uniform_real_distribution<double>(0.0, 1.0)(prng) * slack;
    res[job] = run_trial(s, book, pilots);
  });

  BerReport rep;
  rep.mode = "mobile";
  rep.n_clusters = static_cast<std::size_t>(e.cluster_mode);
  rep.throughput_bps = throughput_bps(rep.n_clusters);
  rep.seed = e.seed;
  const std::size_t cap = packet_capacity_bits(rep.n_clusters);
  for (std::size_t si = 0; si < e.speeds_mps.size(); ++si) {
    for (int pass = 0; pass < (opt.ablate_correction ? 2 : 1); ++pass) {
      const bool corr = pass == 0;
      std::vector<BerRow> rows(nb);
      for (std::size_t bi = 0; bi < nb; ++bi) {
        rows[bi].speed_mps = e.speeds_mps[si];
        rows[bi].distance_lo_m = bins[bi].first;
        rows[bi].distance_hi_m = bins[bi].second;
        rows[bi].correction = corr;
      }
      for (std::size_t bi = 0; bi < nb; ++bi)
        for (std::size_t ti = 0; ti < trials; ++ti) {
          const auto& t = res[(si * nb + bi) * trials + ti];
          const auto& d = corr ? t.corrected : *t.uncorrected;
          rows[bi].trials += 1;
          rows[bi].failed_trials += d.failed || d.cluster_lost;
          const auto whole = count_bit_errors(t.reference, d.payload);
          (corr ? rep.stream_bits : rep.stream_bits_uncorrected) += whole.bits;
          (corr ? rep.stream_errors : rep.stream_errors_uncorrected) += whole.errors;
          for (std::size_t p = 0; p < t.packet_mid_distance_m.size(); ++p) {
            const double dist = t.packet_mid_distance_m[p];
            std::size_t target = bi;
            for (std::size_t k = 0; k < nb; ++k)
              if (dist >= bins[k].first && dist < bins[k].second) target = k;
            const std::span<const std::uint8_t> ref(t.reference.data() + p * cap, cap);
            const std::span<const std::uint8_t> dec =
              d.payload.size() > p * cap
                ? std::span<const std::uint8_t>(d.payload).subspan(p * cap, std::min(cap, d.payload.size() - p * cap))
                : std::span<const std::uint8_t>{};
            const auto be = count_bit_errors(ref, dec);
            rows[target].bits += be.bits;
            rows[target].errors += be.errors;
          }
        }
      rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Throughput

struct ThroughputReport {
  std::size_t n_clusters = 0;
  double bps = 0.0;
  // Rates quoted for the 12/16/32-cluster field configurations.
  std::optional<double> reference_kbps;
  double kbps() const { return bps / 1000.0; }
  std::optional<double> discrepancy_kbps() const {
    if (!reference_kbps) return std::nullopt;
    return kbps() - *reference_kbps;
  }
};

inline std::optional<double> reference_rate_kbps(std::size_t n_clusters) {
  switch (n_clusters) {
  case 12: return 57.0;
  case 16: return 28.0;
  case 32: return 21.0;
  default: return std::nullopt;
  }
}

inline ThroughputReport report_throughput(std::size_t n_clusters) {
  if (n_clusters == 0 || n_clusters > kMaxClusters)
    throw ConfigError({"experiment.cluster_mode: cluster count must be in [1, 32]"});
  return {n_clusters, throughput_bps(n_clusters), reference_rate_kbps(n_clusters)};
}

inline ThroughputReport report_throughput(const Config& cfg) {
  return report_throughput(static_cast<std::size_t>(cfg.experiment.cluster_mode));
}

inline nlohmann::json throughput_json(const ThroughputReport& t) {
  nlohmann::json j{{"n_clusters", t.n_clusters}, {"throughput_bps", t.bps}, {"throughput_kbps", t.kbps()},
                   {"packet_bits", t.n_clusters * kBitsPerClusterPacket},
                   {"packet_duration_s", static_cast<double>(kPacketChips) / kChipRateHz}};
  if (t.reference_kbps) {
    j["reference_kbps"] = *t.reference_kbps;
    j["discrepancy_kbps"] = *t.discrepancy_kbps();
  }
  return j;
}

} // namespace evlc
