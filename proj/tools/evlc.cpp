// evlc: simulation and evaluation front end.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "evlc/config.hpp"
#include "evlc/decode_report.hpp"
#include "evlc/eval.hpp"
#include "evlc/event_io.hpp"

namespace fs = std::filesystem;
using namespace evlc;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNoSignal = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> trials;
  std::string format = "csv";
};

Config load(const Common& c) {
  Config cfg = c.config.empty() ? Config{} : load_config(c.config);
  if (c.seed) cfg.experiment.seed = *c.seed;
  if (c.out_dir) cfg.experiment.out_dir = *c.out_dir;
  if (c.trials) cfg.experiment.trials = *c.trials;
  auto bad = validate(cfg);
  if (!bad.empty()) throw ConfigError(std::move(bad));
  return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << text;
}

void add_common(CLI::App* sub, Common& c, bool trials) {
  sub->add_option("--config", c.config, "JSON configuration file");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--out-dir", c.out_dir, "output directory");
  if (trials) sub->add_option("--trials", c.trials, "trials per sweep point");
  sub->add_option("--format", c.format, "report format")->check(CLI::IsMember({"csv", "json"}));
}

int cmd_gen_codebook(const Common& c, const std::string& out) {
  const Codebook book;
  std::ostringstream os;
  if (c.format == "json") {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < kCodebookSize; ++i) {
      std::vector<int> chips(book[i].chips().begin(), book[i].chips().end());
      arr.push_back({{"index", i}, {"chips", chips}, {"transitions", book[i].transitions()}});
    }
    os << arr.dump(2) << '\n';
  } else {
    os << "index,chips,transitions\n";
    for (std::size_t i = 0; i < kCodebookSize; ++i) {
      os << i << ',';
      for (std::size_t m = 0; m < kCodeLength; ++m) os << (m ? " " : "") << static_cast<int>(book[i].chips()[m]);
      os << ',' << book[i].transitions() << '\n';
    }
  }
  if (out.empty()) std::cout << os.str();
  else write_file(out, os.str());
  return 0;
}

int cmd_simulate(const Common& c, const std::string& out, std::optional<double> distance, std::size_t packets) {
  const Config cfg = load(c);
  const Codebook book;
  const auto pilots = build_pilot_codebook();
  const auto n = static_cast<std::size_t>(cfg.experiment.cluster_mode);
  Rng prng(derive_seed(cfg.experiment.seed, {1}));
  Bits payload(packets * packet_capacity_bits(n));
  for (auto& b : payload) b = static_cast<std::uint8_t>(prng() & 1u);
  const auto tx = build_transmission(payload, n, book, pilots, packets);
  EmissionWindow win;
  TrajectoryConfig tc = cfg.trajectory;
  tc.seed = derive_seed(cfg.experiment.seed, {3});
  const double horizon = static_cast<double>(emission_end_us(tx.timelines, win)) * 1e-6 + 0.01;
  const Trajectory traj(distance.value_or(cfg.scene.distance_m), tc, horizon);
  const auto ev = generate_events(tx.timelines, cfg.scene, traj, cfg.noise, derive_seed(cfg.experiment.seed, {4}), win);

  fs::path path = out.empty() ? fs::path(cfg.experiment.out_dir) / "events.bin" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_events(ev, path.string());
  std::string bits;
  for (auto b : payload) bits.push_back(b ? '1' : '0');
  nlohmann::json side{{"header", tx.header}, {"seed", cfg.experiment.seed}, {"transmit_start_us", win.start_us},
                      {"distance_m", traj.distance(0.0)}, {"n_events", ev.size()}, {"payload", bits}};
  write_file(path.string() + ".json", side.dump(2) + "\n");
  std::cerr << "wrote " << ev.size() << " events to " << path.string() << "\n";
  return 0;
}

int cmd_decode(const Common& c, const std::string& events, const std::string& reference, const std::string& weights,
               const std::string& out) {
  const Config cfg = load(c);
  const auto ev = read_events(events);
  std::optional<Bits> ref;
  if (!reference.empty()) {
    std::ifstream is(reference);
    if (!is) throw Error("cannot open " + reference);
    const auto side = nlohmann::json::parse(is);
    Bits bits;
    for (char ch : side.at("payload").get<std::string>()) bits.push_back(ch == '1');
    ref = std::move(bits);
  }
  DecodeOptions opt;
  opt.keep_weight_maps = !weights.empty();
  const auto rep = decode_stream(ev, static_cast<std::size_t>(cfg.experiment.cluster_mode), cfg.receiver, Codebook{},
                                 build_pilot_codebook(), opt);
  const auto j = ref ? decode_report_json(rep, std::span<const std::uint8_t>(*ref)) : decode_report_json(rep);
  if (out.empty()) std::cout << j.dump(2) << '\n';
  else write_file(out, j.dump(2) + "\n");
  if (!weights.empty()) {
    std::ostringstream os;
    write_weight_map_csv(os, rep);
    write_file(weights, os.str());
  }
  return 0;
}

int emit_report(const Common& c, const Config& cfg, const BerReport& r, const std::string& stem) {
  const fs::path dir(cfg.experiment.out_dir);
  const std::string text = c.format == "json" ? ber_report_json(r).dump(2) + "\n" : ber_report_csv(r);
  const fs::path p = dir / (stem + (c.format == "json" ? ".json" : ".csv"));
  write_file(p, text);
  std::cout << text;
  std::cerr << "wrote " << p.string() << "\n";
  return 0;
}

int cmd_throughput(const Common& c, std::optional<std::size_t> clusters) {
  const auto t = clusters ? report_throughput(*clusters) : report_throughput(load(c));
  if (c.format == "json") {
    std::cout << throughput_json(t).dump(2) << '\n';
    return 0;
  }
  std::cout << "n_clusters,throughput_bps,throughput_kbps,reference_kbps,discrepancy_kbps\n"
            << t.n_clusters << ',' << detail::fmt_num(t.bps) << ',' << detail::fmt_num(t.kbps()) << ','
            << (t.reference_kbps ? detail::fmt_num(*t.reference_kbps) : "") << ','
            << (t.discrepancy_kbps() ? detail::fmt_num(*t.discrepancy_kbps()) : "") << '\n';
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera LED-bar link simulator and evaluator"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen-codebook", "dump the 16-entry codebook");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output file (default stdout)");
  gen->add_option("--format", c.format)->check(CLI::IsMember({"csv", "json"}));

  auto* sim = app.add_subcommand("simulate", "render a random payload to an event file");
  std::string sim_out;
  std::optional<double> sim_dist;
  std::size_t sim_packets = 3;
  add_common(sim, c, false);
  sim->add_option("--out", sim_out, "event file; .csv selects text, anything else binary");
  sim->add_option("--distance", sim_dist, "start distance in metres (default scene.distance_m)");
  sim->add_option("--packets", sim_packets, "packets to transmit")->check(CLI::PositiveNumber);

  auto* dec = app.add_subcommand("decode", "decode an event file");
  std::string dec_events, dec_ref, dec_weights, dec_out;
  add_common(dec, c, false);
  dec->add_option("events", dec_events, "event file")->required();
  dec->add_option("--reference", dec_ref, "sidecar JSON written by simulate, for BER");
  dec->add_option("--weights", dec_weights, "write per-frame weight maps as CSV");
  dec->add_option("--out", dec_out, "report file (default stdout)");

  auto* st = app.add_subcommand("static-sweep", "BER against distance, fixed link");
  add_common(st, c, true);

  auto* mob = app.add_subcommand("mobile-sweep", "BER per travel bin while approaching");
  bool ablate = false;
  add_common(mob, c, true);
  mob->add_flag("--ablate-correction", ablate, "also decode without vibration correction");

  auto* thr = app.add_subcommand("throughput", "payload rate of the framing");
  std::optional<std::size_t> thr_n;
  add_common(thr, c, false);
  thr->add_option("--clusters", thr_n, "cluster count (default from config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_codebook(c, gen_out);
    if (*sim) return cmd_simulate(c, sim_out, sim_dist, sim_packets);
    if (*dec) return cmd_decode(c, dec_events, dec_ref, dec_weights, dec_out);
    if (*st) {
      const Config cfg = load(c);
      return emit_report(c, cfg, run_static_sweep(cfg), "static_sweep");
    }
    if (*mob) {
      const Config cfg = load(c);
      return emit_report(c, cfg, run_mobile_sweep(cfg, {ablate}), "mobile_sweep");
    }
    if (*thr) return cmd_throughput(c, thr_n);
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n";
    for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
    return kExitConfig;
  } catch (const NoSignalError& e) {
    std::cerr << "no signal: " << e.what() << "\n";
    return kExitNoSignal;
  } catch (const SyncNotFoundError& e) {
    std::cerr << "sync not found: " << e.what() << "\n";
    return kExitNoSignal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
