#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace evlc {

// Base for every failure the decode pipeline can report.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// The alternation filter left no pixels standing.
class NoSignalError : public Error {
public:
  using Error::Error;
};

class SyncNotFoundError : public Error {
public:
  SyncNotFoundError(const std::string& what, double margin)
    : Error(what), margin_(margin) {}
  double margin() const { return margin_; }

private:
  double margin_;
};

// No events fell inside a pilot window.
class TrackingLostError : public Error {
public:
  using Error::Error;
};

class HorizonError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t offset)
    : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

private:
  std::size_t offset_;
};

// Collects every invalid key path of a configuration document.
class ConfigError : public Error {
public:
  explicit ConfigError(std::vector<std::string> problems)
    : Error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid configuration:";
    for (const auto& e : p) s += "\n  " + e;
    return s;
  }
  std::vector<std::string> problems_;
};

} // namespace evlc
