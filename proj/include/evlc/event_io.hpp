#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "evlc/channel_sim.hpp"
#include "evlc/errors.hpp"

namespace evlc {

// Binary layout: 8-byte magic, then little-endian 16-byte records
//   t:u64  x:u16  y:u16  p:i8  pad:u8[3]
inline constexpr char kEventMagic[8] = {'E', 'V', 'L', 'C', '0', '0', '0', '1'};
inline constexpr std::size_t kEventRecordBytes = 16;

enum class EventFormat { Binary, Csv };

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

inline void check_event(const Event& e, std::uint64_t prev_t, bool first, std::size_t offset) {
  if (e.x >= kSensorWidth || e.y >= kSensorHeight) throw ParseError("pixel coordinate out of sensor bounds", offset);
  if (e.p != 1 && e.p != -1) throw ParseError("polarity must be -1 or +1", offset);
  if (!first && e.t < prev_t) throw ParseError("timestamps are not monotonic", offset);
}

} // namespace detail

inline std::string encode_events_binary(std::vector<Event> ev) {
  sort_events(ev);
  std::string out(kEventMagic, sizeof(kEventMagic));
  out.reserve(out.size() + ev.size() * kEventRecordBytes);
  for (const auto& e : ev) {
    detail::put_le<std::uint64_t>(out, e.t);
    detail::put_le<std::uint16_t>(out, e.x);
    detail::put_le<std::uint16_t>(out, e.y);
    out.push_back(static_cast<char>(e.p));
    out.append(3, '\0');
  }
  return out;
}

inline std::vector<Event> decode_events_binary(std::string_view data) {
  if (data.size() < sizeof(kEventMagic) || std::memcmp(data.data(), kEventMagic, sizeof(kEventMagic)) != 0)
    throw ParseError("missing EVLC0001 magic", 0);
  const std::size_t body = data.size() - sizeof(kEventMagic);
  if (body % kEventRecordBytes != 0)
    throw ParseError("truncated event record", sizeof(kEventMagic) + body / kEventRecordBytes * kEventRecordBytes);
  std::vector<Event> ev(body / kEventRecordBytes);
  const auto* base = reinterpret_cast<const unsigned char*>(data.data());
  for (std::size_t i = 0; i < ev.size(); ++i) {
    const std::size_t off = sizeof(kEventMagic) + i * kEventRecordBytes;
    const unsigned char* r = base + off;
    Event& e = ev[i];
    e.t = detail::get_le<std::uint64_t>(r);
    e.x = detail::get_le<std::uint16_t>(r + 8);
    e.y = detail::get_le<std::uint16_t>(r + 10);
    e.p = static_cast<std::int8_t>(r[12]);
    detail::check_event(e, i ? ev[i - 1].t : 0, i == 0, off);
  }
  return ev;
}

inline std::string encode_events_csv(std::vector<Event> ev) {
  sort_events(ev);
  std::string out = "t_us,x,y,p\n";
  out.reserve(out.size() + ev.size() * 20);
  for (const auto& e : ev) {
    out += std::to_string(e.t);
    out += ',';
    out += std::to_string(e.x);
    out += ',';
    out += std::to_string(e.y);
    out += ',';
    out += std::to_string(static_cast<int>(e.p));
    out += '\n';
  }
  return out;
}

inline std::vector<Event> decode_events_csv(std::string_view data) {
  constexpr std::string_view header = "t_us,x,y,p";
  std::size_t pos = data.find('\n');
  std::string_view first = data.substr(0, pos);
  if (!first.empty() && first.back() == '\r') first.remove_suffix(1);
  if (first != header) throw ParseError("expected header 't_us,x,y,p'", 0);
  std::vector<Event> ev;
  while (pos != std::string_view::npos && pos + 1 < data.size()) {
    const std::size_t line_start = pos + 1;
    pos = data.find('\n', line_start);
    std::string_view line = data.substr(line_start, pos == std::string_view::npos ? std::string_view::npos : pos - line_start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    long long vals[4] = {};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int f = 0; f < 4; ++f) {
      auto [next, ec] = std::from_chars(p, end, vals[f]);
      if (ec != std::errc{} || (f < 3 ? (next == end || *next != ',') : next != end))
        throw ParseError("malformed CSV event line", line_start + static_cast<std::size_t>(p - line.data()));
      p = next + (f < 3 ? 1 : 0);
    }
    if (vals[0] < 0 || vals[1] < 0 || vals[2] < 0 || vals[1] > 0xffff || vals[2] > 0xffff)
      throw ParseError("negative or oversized field", line_start);
    Event e{static_cast<std::uint64_t>(vals[0]), static_cast<std::uint16_t>(vals[1]),
            static_cast<std::uint16_t>(vals[2]), static_cast<std::int8_t>(vals[3])};
    if (vals[3] != 1 && vals[3] != -1) throw ParseError("polarity must be -1 or +1", line_start);
    detail::check_event(e, ev.empty() ? 0 : ev.back().t, ev.empty(), line_start);
    ev.push_back(e);
  }
  return ev;
}

inline EventFormat format_for_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? EventFormat::Csv : EventFormat::Binary;
}

inline void write_events(const std::vector<Event>& ev, const std::string& path, EventFormat fmt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  const auto data = fmt == EventFormat::Csv ? encode_events_csv(ev) : encode_events_binary(ev);
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!os) throw Error("write failed: " + path);
}

inline void write_events(const std::vector<Event>& ev, const std::string& path) {
  write_events(ev, path, format_for_path(path));
}

// Detects the encoding from the magic bytes.
inline std::vector<Event> read_events(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (data.size() >= sizeof(kEventMagic) && std::memcmp(data.data(), kEventMagic, sizeof(kEventMagic)) == 0)
    return decode_events_binary(data);
  return decode_events_csv(data);
}

} // namespace evlc
