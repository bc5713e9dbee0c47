#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evlc/channel_sim.hpp"
#include "evlc/errors.hpp"
#include "evlc/receiver.hpp"

namespace evlc {

struct ExperimentConfig {
  int cluster_mode = 16;
  double distance_min_m = 10.0;
  double distance_max_m = 80.0;
  double distance_step_m = 5.0;
  std::vector<double> speeds_mps{5.6, 8.3, 11.1};
  double bin_m = 10.0;
  int trials = 4;
  int packets_per_trial = 3;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  // 0 uses every hardware thread.
  int threads = 0;
};

struct Config {
  SceneConfig scene;
  TrajectoryConfig trajectory;
  NoiseModel noise;
  ReceiverConfig receiver;
  ExperimentConfig experiment;
};

// Calibrated stand-in for an outdoor daytime link: LED brightness puts the
// sensitivity limit just under 60 m for 16 clusters, with moderate event
// loss, timing jitter and background activity. Vibration is a typical ride;
// the 8 px / 10 ms worst case is exercised separately.
inline nlohmann::json preset_json(const std::string& name) {
  if (name == "default") return nlohmann::json::object();
  if (name == "paper-outdoor")
    return {
      {"scene", {{"led_gain", 3.5}, {"blob_sigma_px", 1.0}, {"contrast_threshold", 0.2}}},
      {"noise", {{"p_drop", 0.1}, {"jitter_sigma_us", 10.0}, {"bg_rate_hz_per_px", 1.0}, {"refractory_us", 50.0}}},
      {"trajectory", {{"vib_amp_px", 4.0}, {"vib_freq_hz", 10.0}, {"walk_sigma_px", 2.0}}},
      {"receiver", {{"grid_px", 2}, {"centroid_threshold_rel", 0.3}}},
    };
  throw ConfigError({"preset: unknown preset '" + name + "'"});
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& obj, const char* key, T& out, const std::string& path, std::vector<std::string>& bad) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    bad.push_back(path + "." + key + ": wrong type");
  }
}

inline void merge_into(nlohmann::json& base, const nlohmann::json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

inline void check_known(const nlohmann::json& obj, const std::string& path, std::initializer_list<const char*> keys,
                        std::vector<std::string>& bad) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : keys) ok |= it.key() == k;
    if (!ok) bad.push_back(path + "." + it.key() + ": unknown key");
  }
}

} // namespace detail

inline std::vector<std::string> validate(const Config& c) {
  std::vector<std::string> bad;
  const auto& s = c.scene;
  if (s.n_leds <= 0) bad.push_back("scene.n_leds: must be > 0");
  if (s.leds_per_cluster <= 0 || (s.n_leds > 0 && s.n_leds % s.leds_per_cluster != 0))
    bad.push_back("scene.leds_per_cluster: must divide scene.n_leds");
  else if (s.n_clusters() > static_cast<int>(kMaxClusters))
    bad.push_back("scene.leds_per_cluster: more than 32 clusters");
  if (!(s.distance_m > 0)) bad.push_back("scene.distance_m: must be > 0");
  if (!(s.led_pitch_m > 0)) bad.push_back("scene.led_pitch_m: must be > 0");
  if (!(s.focal_px > 0)) bad.push_back("scene.focal_px: must be > 0");
  if (!(s.blob_sigma_px > 0)) bad.push_back("scene.blob_sigma_px: must be > 0");
  if (!(s.led_gain >= 0)) bad.push_back("scene.led_gain: must be >= 0");
  if (!(s.ambient > 0)) bad.push_back("scene.ambient: must be > 0");
  if (!(s.contrast_threshold > 0)) bad.push_back("scene.contrast_threshold: must be > 0");
  if (!(s.gain_ref_distance_m > 0)) bad.push_back("scene.gain_ref_distance_m: must be > 0");
  const auto& t = c.trajectory;
  if (!(t.speed_mps >= 0)) bad.push_back("trajectory.speed_mps: must be >= 0");
  if (!(t.vib_amp_px >= 0)) bad.push_back("trajectory.vib_amp_px: must be >= 0");
  if (!(t.vib_freq_hz >= 0)) bad.push_back("trajectory.vib_freq_hz: must be >= 0");
  if (!(t.walk_sigma_px >= 0)) bad.push_back("trajectory.walk_sigma_px: must be >= 0");
  const auto& n = c.noise;
  if (!(n.p_drop >= 0 && n.p_drop <= 1)) bad.push_back("noise.p_drop: must be in [0, 1]");
  if (!(n.jitter_sigma_us >= 0)) bad.push_back("noise.jitter_sigma_us: must be >= 0");
  if (!(n.bg_rate_hz_per_px >= 0)) bad.push_back("noise.bg_rate_hz_per_px: must be >= 0");
  if (!(n.refractory_us >= 0)) bad.push_back("noise.refractory_us: must be >= 0");
  const auto& r = c.receiver;
  if (r.grid_px <= 0) bad.push_back("receiver.grid_px: must be > 0");
  if (r.filter_window_us == 0) bad.push_back("receiver.filter_window_us: must be > 0");
  if (!(r.theta_rel >= 0 && r.theta_rel < 1)) bad.push_back("receiver.theta_rel: must be in [0, 1)");
  if (!(r.centroid_sigma_px >= 0)) bad.push_back("receiver.centroid_sigma_px: must be >= 0");
  const auto& e = c.experiment;
  if (e.cluster_mode != 12 && e.cluster_mode != 16 && e.cluster_mode != 32)
    bad.push_back("experiment.cluster_mode: must be 12, 16 or 32");
  if (!(e.distance_min_m > 0)) bad.push_back("experiment.distance_min_m: must be > 0");
  if (!(e.distance_max_m >= e.distance_min_m)) bad.push_back("experiment.distance_max_m: must be >= distance_min_m");
  if (!(e.distance_step_m > 0)) bad.push_back("experiment.distance_step_m: must be > 0");
  if (!(e.bin_m > 0)) bad.push_back("experiment.bin_m: must be > 0");
  if (e.trials < 1) bad.push_back("experiment.trials: must be >= 1");
  if (e.packets_per_trial < 1) bad.push_back("experiment.packets_per_trial: must be >= 1");
  for (std::size_t i = 0; i < e.speeds_mps.size(); ++i)
    if (!(e.speeds_mps[i] >= 0)) bad.push_back("experiment.speeds_mps[" + std::to_string(i) + "]: must be >= 0");
  return bad;
}

// The cluster mode decides the LED grouping of the 96-LED bar.
inline void apply_cluster_mode(Config& c) {
  if (c.experiment.cluster_mode > 0 && c.scene.n_leds % c.experiment.cluster_mode == 0)
    c.scene.leds_per_cluster = c.scene.n_leds / c.experiment.cluster_mode;
}

/// Builds a Config from defaults, then the named "preset" (if any), then the
/// document's own keys. Throws ConfigError listing every bad key path.
inline Config config_from_json(const nlohmann::json& doc) {
  std::vector<std::string> bad;
  if (!doc.is_object()) throw ConfigError({"$: configuration must be a JSON object"});
  nlohmann::json merged = nlohmann::json::object();
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string())
      bad.push_back("preset: must be a string");
    else
      merged = preset_json(doc["preset"].get<std::string>());
  }
  detail::merge_into(merged, doc);
  detail::check_known(merged, "$", {"preset", "scene", "trajectory", "noise", "receiver", "experiment"}, bad);

  Config c;
  const auto section = [&](const char* name) -> nlohmann::json {
    if (!merged.contains(name)) return nlohmann::json::object();
    if (!merged[name].is_object()) {
      bad.push_back(std::string(name) + ": must be an object");
      return nlohmann::json::object();
    }
    return merged[name];
  };
  const auto sc = section("scene");
  detail::check_known(sc, "scene", {"n_leds", "leds_per_cluster", "led_pitch_m", "distance_m", "focal_px", "blob_sigma_px",
                                    "led_gain", "gain_ref_distance_m", "ambient", "contrast_threshold", "center_x_px",
                                    "center_y_px"}, bad);
  detail::read_key(sc, "n_leds", c.scene.n_leds, "scene", bad);
  detail::read_key(sc, "leds_per_cluster", c.scene.leds_per_cluster, "scene", bad);
  detail::read_key(sc, "led_pitch_m", c.scene.led_pitch_m, "scene", bad);
  detail::read_key(sc, "distance_m", c.scene.distance_m, "scene", bad);
  detail::read_key(sc, "focal_px", c.scene.focal_px, "scene", bad);
  detail::read_key(sc, "blob_sigma_px", c.scene.blob_sigma_px, "scene", bad);
  detail::read_key(sc, "led_gain", c.scene.led_gain, "scene", bad);
  detail::read_key(sc, "gain_ref_distance_m", c.scene.gain_ref_distance_m, "scene", bad);
  detail::read_key(sc, "ambient", c.scene.ambient, "scene", bad);
  detail::read_key(sc, "contrast_threshold", c.scene.contrast_threshold, "scene", bad);
  detail::read_key(sc, "center_x_px", c.scene.center_x_px, "scene", bad);
  detail::read_key(sc, "center_y_px", c.scene.center_y_px, "scene", bad);

  const auto tr = section("trajectory");
  detail::check_known(tr, "trajectory", {"speed_mps", "vib_amp_px", "vib_freq_hz", "vib_phase_rad", "walk_sigma_px", "seed"}, bad);
  detail::read_key(tr, "speed_mps", c.trajectory.speed_mps, "trajectory", bad);
  detail::read_key(tr, "vib_amp_px", c.trajectory.vib_amp_px, "trajectory", bad);
  detail::read_key(tr, "vib_freq_hz", c.trajectory.vib_freq_hz, "trajectory", bad);
  detail::read_key(tr, "vib_phase_rad", c.trajectory.vib_phase_rad, "trajectory", bad);
  detail::read_key(tr, "walk_sigma_px", c.trajectory.walk_sigma_px, "trajectory", bad);
  detail::read_key(tr, "seed", c.trajectory.seed, "trajectory", bad);

  const auto nz = section("noise");
  detail::check_known(nz, "noise", {"p_drop", "jitter_sigma_us", "bg_rate_hz_per_px", "refractory_us"}, bad);
  detail::read_key(nz, "p_drop", c.noise.p_drop, "noise", bad);
  detail::read_key(nz, "jitter_sigma_us", c.noise.jitter_sigma_us, "noise", bad);
  detail::read_key(nz, "bg_rate_hz_per_px", c.noise.bg_rate_hz_per_px, "noise", bad);
  detail::read_key(nz, "refractory_us", c.noise.refractory_us, "noise", bad);

  const auto rc = section("receiver");
  detail::check_known(rc, "receiver", {"grid_px", "theta_rel", "theta_abs", "filter_window_us", "filter_min_count", "sync_margin",
                                       "centroid_sigma_px", "centroid_threshold_rel", "correct_vibration", "max_packets"}, bad);
  detail::read_key(rc, "grid_px", c.receiver.grid_px, "receiver", bad);
  detail::read_key(rc, "theta_rel", c.receiver.theta_rel, "receiver", bad);
  detail::read_key(rc, "theta_abs", c.receiver.theta_abs, "receiver", bad);
  detail::read_key(rc, "filter_window_us", c.receiver.filter_window_us, "receiver", bad);
  detail::read_key(rc, "filter_min_count", c.receiver.filter_min_count, "receiver", bad);
  detail::read_key(rc, "sync_margin", c.receiver.sync_margin, "receiver", bad);
  detail::read_key(rc, "centroid_sigma_px", c.receiver.centroid_sigma_px, "receiver", bad);
  detail::read_key(rc, "centroid_threshold_rel", c.receiver.centroid_threshold_rel, "receiver", bad);
  detail::read_key(rc, "correct_vibration", c.receiver.correct_vibration, "receiver", bad);
  detail::read_key(rc, "max_packets", c.receiver.max_packets, "receiver", bad);

  const auto ex = section("experiment");
  const bool mode_given = ex.contains("cluster_mode");
  detail::check_known(ex, "experiment", {"cluster_mode", "distance_min_m", "distance_max_m", "distance_step_m", "speeds_mps",
                                         "bin_m", "trials", "packets_per_trial", "seed", "out_dir", "threads"}, bad);
  detail::read_key(ex, "cluster_mode", c.experiment.cluster_mode, "experiment", bad);
  detail::read_key(ex, "distance_min_m", c.experiment.distance_min_m, "experiment", bad);
  detail::read_key(ex, "distance_max_m", c.experiment.distance_max_m, "experiment", bad);
  detail::read_key(ex, "distance_step_m", c.experiment.distance_step_m, "experiment", bad);
  detail::read_key(ex, "speeds_mps", c.experiment.speeds_mps, "experiment", bad);
  detail::read_key(ex, "bin_m", c.experiment.bin_m, "experiment", bad);
  detail::read_key(ex, "trials", c.experiment.trials, "experiment", bad);
  detail::read_key(ex, "packets_per_trial", c.experiment.packets_per_trial, "experiment", bad);
  detail::read_key(ex, "seed", c.experiment.seed, "experiment", bad);
  detail::read_key(ex, "out_dir", c.experiment.out_dir, "experiment", bad);
  detail::read_key(ex, "threads", c.experiment.threads, "experiment", bad);

  // An explicit cluster mode wins over scene.leds_per_cluster.
  if (mode_given || !sc.contains("leds_per_cluster")) apply_cluster_mode(c);
  else if (c.scene.leds_per_cluster > 0) c.experiment.cluster_mode = c.scene.n_clusters();

  auto more = validate(c);
  bad.insert(bad.end(), more.begin(), more.end());
  if (!bad.empty()) throw ConfigError(std::move(bad));
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"$: cannot open " + path});
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({std::string("$: ") + e.what()});
  }
  return config_from_json(doc);
}

inline nlohmann::json config_to_json(const Config& c) {
  const auto& s = c.scene;
  const auto& t = c.trajectory;
  const auto& n = c.noise;
  const auto& r = c.receiver;
  const auto& e = c.experiment;
  return {
    {"scene", {{"n_leds", s.n_leds}, {"leds_per_cluster", s.leds_per_cluster}, {"led_pitch_m", s.led_pitch_m},
               {"distance_m", s.distance_m}, {"focal_px", s.focal_px}, {"blob_sigma_px", s.blob_sigma_px},
               {"led_gain", s.led_gain}, {"gain_ref_distance_m", s.gain_ref_distance_m}, {"ambient", s.ambient},
               {"contrast_threshold", s.contrast_threshold}, {"center_x_px", s.center_x_px}, {"center_y_px", s.center_y_px}}},
    {"trajectory", {{"speed_mps", t.speed_mps}, {"vib_amp_px", t.vib_amp_px}, {"vib_freq_hz", t.vib_freq_hz},
                    {"vib_phase_rad", t.vib_phase_rad}, {"walk_sigma_px", t.walk_sigma_px}, {"seed", t.seed}}},
    {"noise", {{"p_drop", n.p_drop}, {"jitter_sigma_us", n.jitter_sigma_us}, {"bg_rate_hz_per_px", n.bg_rate_hz_per_px},
               {"refractory_us", n.refractory_us}}},
    {"receiver", {{"grid_px", r.grid_px}, {"theta_rel", r.theta_rel}, {"theta_abs", r.theta_abs},
                  {"filter_window_us", r.filter_window_us}, {"filter_min_count", r.filter_min_count},
                  {"sync_margin", r.sync_margin}, {"centroid_sigma_px", r.centroid_sigma_px},
                  {"centroid_threshold_rel", r.centroid_threshold_rel}, {"correct_vibration", r.correct_vibration},
                  {"max_packets", r.max_packets}}},
    {"experiment", {{"cluster_mode", e.cluster_mode}, {"distance_min_m", e.distance_min_m}, {"distance_max_m", e.distance_max_m},
                    {"distance_step_m", e.distance_step_m}, {"speeds_mps", e.speeds_mps}, {"bin_m", e.bin_m},
                    {"trials", e.trials}, {"packets_per_trial", e.packets_per_trial}, {"seed", e.seed},
                    {"out_dir", e.out_dir}, {"threads", e.threads}}},
  };
}

inline Config preset_config(const std::string& name) {
  return config_from_json(nlohmann::json{{"preset", name}});
}

} // namespace evlc
