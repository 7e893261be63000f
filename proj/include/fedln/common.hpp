#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace fedln {

using ClassIndex = std::uint16_t;

/// Invalid argument or violated precondition.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file; message names the byte offset or line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scenario/configuration rejected before any compute.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finalizer from splitmix64.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Order-sensitive 64-bit hash of a key tuple, used to derive sub-seeds
/// (e.g. hash64({seed, client_id})) so that streams for distinct keys are
/// independent of each other.
constexpr std::uint64_t hash64(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x9e3779b97f4a7c15ULL));
  return h;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ParameterError(msg);
}

}  // namespace fedln
