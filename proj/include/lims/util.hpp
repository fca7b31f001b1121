#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lims {

/// Root of every exception thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::system_clock;
using TimePoint = Clock::time_point;
using Micros = std::chrono::microseconds;

inline std::int64_t to_micros(TimePoint t) {
  return std::chrono::duration_cast<Micros>(t.time_since_epoch()).count();
}
inline TimePoint from_micros(std::int64_t us) { return TimePoint{Micros{us}}; }

/// Hex SHA-256 of a file's content; throws Error if unreadable.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

/// Streaming SHA-256 for copy-and-hash loops.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void update(std::string_view bytes);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string read_file(const std::filesystem::path& path);
/// Writes via a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::vector<std::string> split_lines(std::string_view text);
std::string trim(std::string_view s);

/// Parses a plain decimal literal ("1000.00", "-1e-3"); rejects hex, inf, nan.
std::optional<double> parse_decimal(std::string_view lexeme);

/// Shell-style glob match on a single name (fnmatch semantics).
bool glob_match(std::string_view pattern, std::string_view name);

std::filesystem::file_time_type to_file_time(TimePoint t);
TimePoint from_file_time(std::filesystem::file_time_type t);

}  // namespace lims
