// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "evlc/eval.hpp"

using namespace evlc;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failures += !o.pass;
  std::printf("criterion %d %-28s %s  (%.1f s) %s\n", id, name, o.pass ? "PASS" : "FAIL", s, o.detail.c_str());
  std::fflush(stdout);
}

std::filesystem::path out_dir;

void save(const std::string& name, const std::string& text) { std::ofstream(out_dir / name, std::ios::binary) << text; }

// ---- artifacts for criteria 4-7, regenerated for the determinism check

std::string sync_trials_csv() {
  const auto cfg = preset_config("paper-outdoor");
  const Codebook book;
  const auto pilots = build_pilot_codebook();
  std::vector<std::string> lines(100);
  parallel_for(lines.size(), 0, [&](std::size_t i) {
    const auto seed = derive_seed(4, {i});
    Rng rng(seed);
    Bits payload(1152);
    for (auto& b : payload) b = rng() & 1;
    const auto tx = build_transmission(payload, 16, book, pilots);
    EmissionWindow win;
    win.start_us = 500 + rng() % 1000;
    const double dist = 10.0 + static_cast<double>(rng() % 41); // 10..50 m
    SceneConfig sc = cfg.scene;
    NoiseModel nm = cfg.noise;
    nm.p_drop = 0.1;
    const auto ev = generate_events(tx.timelines, sc, Trajectory(dist, {}, 1.0), nm, derive_seed(seed, {1}), win);
    std::ostringstream os;
    os << i << ',' << dist << ',' << win.start_us << ',';
    try {
      const auto f = alternation_filter(ev, cfg.receiver.filter_window_us, cfg.receiver.filter_min_count);
      const auto s = detect_sync(f.events, cfg.receiver.sync_margin);
      const long err = static_cast<long>(s.packet_start_us) - static_cast<long>(win.start_us);
      os << s.packet_start_us << ',' << err << ',' << detail::fmt_num(s.margin) << ',' << (std::abs(err) <= 100 ? 1 : 0);
    } catch (const Error& e) {
      os << "-1,,,0";
    }
    lines[i] = os.str();
  });
  std::string csv = "trial,distance_m,true_start_us,detected_start_us,error_us,margin,ok\n";
  for (const auto& l : lines) csv += l + "\n";
  return csv;
}

Config ablation_config() {
  auto c = preset_config("paper-outdoor");
  c.experiment.speeds_mps = {8.3};
  c.experiment.distance_max_m = 70;
  c.experiment.trials = 20;
  // 8 px per 10 ms peak slew at 10 Hz, no random walk
  c.trajectory.vib_freq_hz = 10.0;
  c.trajectory.vib_amp_px = 8.0 / (2.0 * std::numbers::pi * 10.0 * 0.01);
  c.trajectory.walk_sigma_px = 0.0;
  return c;
}

Config static_config() { return preset_config("paper-outdoor"); }

Config mobile_config() {
  auto c = preset_config("paper-outdoor");
  c.experiment.speeds_mps = {8.3};
  c.experiment.distance_max_m = 70;
  return c;
}

std::string ablation_csv() { return ber_report_csv(run_mobile_sweep(ablation_config(), {true})); }
std::string static_csv() { return ber_report_csv(run_static_sweep(static_config())); }
std::string mobile_csv() { return ber_report_csv(run_mobile_sweep(mobile_config())); }

std::map<int, std::string> artifacts;

} // namespace

int main(int argc, char** argv) {
  out_dir = argc > 1 ? argv[1] : "acceptance_out";
  std::filesystem::create_directories(out_dir);

  report(1, "codec-conformance", [] {
    const Codebook book;
    int orig = 0, neg = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      orig += book.source_row(i) < 16;
      bool is_neg = true;
      for (std::size_t j = 0; j < kCodeLength; ++j) is_neg &= book[i + 8].chips()[j] == -book[i].chips()[j];
      neg += is_neg;
    }
    if (book.entries().size() != 16 || orig != 8 || neg != 8) return Outcome{false, "codebook shape"};
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j) {
        const int expect = i == j ? 16 : (i % 8 == j % 8 ? -16 : 0);
        if (inner_product(book[i].chips(), book[j].chips()) != expect) return Outcome{false, "inner product table"};
      }
    for (unsigned s = 0; s < 16; ++s) {
      Bits bits;
      append_symbol_bits(bits, s);
      const auto chips = book.encode_bits(bits);
      if (chips.size() != 16) return Outcome{false, "rate is not 4 bits per 16 chips"};
      if (book.decode_codeword(transition_template(chips)).symbol != s) return Outcome{false, "symbol " + std::to_string(s)};
    }
    return Outcome{true, "16/16 symbols, rate 1/4"};
  });

  report(2, "spread-reconstruct", [] {
    Rng rng(2);
    const auto h = build_hadamard(16);
    std::size_t checks = 0;
    for (int n = 0; n < 10000; ++n) {
      ChipSeq c = h[rng() % 16];
      if (rng() & 1)
        for (auto& v : c) v = static_cast<Chip>(-v);
      const auto s = spread_bipolar(c);
      if (reconstruct_even(s) != c) return Outcome{false, "round trip"};
      for (std::size_t m = 0; m < kCodeLength; ++m)
        for (std::size_t which = 0; which < 2; ++which) {
          auto e = s;
          e[2 * m + which] = 0;
          if (complement_missing(e, reconstruct_even(e)) != c) return Outcome{false, "erasure recovery"};
          ++checks;
        }
    }
    return Outcome{true, std::to_string(checks) + " erasure patterns"};
  });

  report(3, "pilot-separation", [] {
    const auto pilots = build_pilot_codebook();
    for (std::size_t code = 0; code < 32; ++code)
      for (std::size_t slot = 0; slot < 32; ++slot) {
        std::vector<GridSignal> grids;
        for (std::size_t g = 0; g < 32; ++g) grids.push_back({GridKey{static_cast<int>(g), 0}, ChipSeq(kPilotChips, 0)});
        // ideal observation: transitions only, from a dark start
        Chip last = -1;
        for (std::size_t j = 0; j < kPilotChips; ++j) {
          const Chip c = pilots[code].spread[j];
          grids[slot].i_xy[j] = c != last ? c : 0;
          last = c;
        }
        ClusterWeightMap m;
        try {
          m = grid_correlate(grids, pilots, 32);
        } catch (const ClusterLostError& e) {
          m = e.partial();
        }
        for (std::size_t g = 0; g < 32; ++g)
          for (std::size_t k = 0; k < 32; ++k) {
            const double expect = g == slot && k == code ? 16.0 : 0.0;
            if (m.w[g][k] != expect) return Outcome{false, "code " + std::to_string(code) + " grid " + std::to_string(slot)};
          }
      }
    return Outcome{true, "1024 placements"};
  });

  report(4, "sync-10pct-drop", [] {
    const auto csv = sync_trials_csv();
    artifacts[4] = csv;
    save("sync_trials.csv", csv);
    int ok = 0;
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) ok += line.back() == '1';
    return Outcome{ok >= 99, std::to_string(ok) + "/100 within one chip"};
  });

  report(5, "vibration-ablation", [] {
    const auto rep = run_mobile_sweep(ablation_config(), {true});
    artifacts[5] = ber_report_csv(rep);
    save("ablation.csv", artifacts[5]);
    const std::size_t nb = rep.rows.size() / 2;
    bool le = true;
    int strict = 0;
    std::string d;
    for (std::size_t b = 0; b < nb; ++b) {
      const auto& on = rep.rows[b];
      const auto& off = rep.rows[nb + b];
      le &= on.ber() <= off.ber();
      strict += on.ber() < off.ber();
      d += detail::fmt_num(on.distance_lo_m) + "-" + detail::fmt_num(on.distance_hi_m) + ":" + detail::fmt_num(on.ber()) + "/" +
           detail::fmt_num(off.ber()) + " ";
    }
    return Outcome{le && strict >= 1, d};
  });

  report(6, "static-sweep", [] {
    const auto rep = run_static_sweep(static_config());
    artifacts[6] = ber_report_csv(rep);
    save("static_sweep.csv", artifacts[6]);
    bool ok = true;
    std::string d;
    for (const auto& r : rep.rows) {
      if (r.distance_lo_m <= 40.0) ok &= r.errors == 0;
      if (r.distance_lo_m > 60.0) ok &= r.errors > 0;
      d += detail::fmt_num(r.distance_lo_m) + ":" + detail::fmt_num(r.ber()) + " ";
    }
    return Outcome{ok, d};
  });

  report(7, "mobile-8.3mps", [] {
    const auto rep = run_mobile_sweep(mobile_config());
    artifacts[7] = ber_report_csv(rep);
    save("mobile_sweep.csv", artifacts[7]);
    bool ok = true;
    std::string d;
    for (const auto& r : rep.rows) {
      if (r.distance_hi_m <= 40.0) ok &= r.errors == 0 && r.bits > 0;
      d += detail::fmt_num(r.distance_lo_m) + "-" + detail::fmt_num(r.distance_hi_m) + ":" + detail::fmt_num(r.ber()) + " ";
    }
    return Outcome{ok, d};
  });

  report(8, "throughput", [] {
    const auto t = report_throughput(16);
    const bool ok = std::abs(t.kbps() - 28.1) < 0.05 && std::abs(*t.discrepancy_kbps()) <= 0.5;
    return Outcome{ok, detail::fmt_num(t.kbps()) + " kbps"};
  });

  report(9, "determinism", [] {
    if (artifacts.size() != 4) return Outcome{false, "earlier artifacts missing"};
    std::string bad;
    if (sync_trials_csv() != artifacts[4]) bad += " 4";
    if (ablation_csv() != artifacts[5]) bad += " 5";
    if (static_csv() != artifacts[6]) bad += " 6";
    if (mobile_csv() != artifacts[7]) bad += " 7";
    return Outcome{bad.empty(), bad.empty() ? "criteria 4-7 CSV byte-identical on rerun" : "differs:" + bad};
  });

  std::printf("%s\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED");
  return failures ? 1 : 0;
}
