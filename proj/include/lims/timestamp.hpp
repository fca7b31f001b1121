#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "lims/util.hpp"

namespace lims {

/// An ISO-8601 instant carried as its lexical form. A missing zone
/// designator is read as UTC.
class Timestamp {
 public:
  Timestamp();  // 1970-01-01T00:00:00Z

  static std::optional<Timestamp> parse(std::string_view lexeme);
  /// Seconds precision with a trailing 'Z'.
  static Timestamp from(TimePoint t);
  /// Microsecond precision, for latency bookkeeping.
  static Timestamp from_precise(TimePoint t);
  static Timestamp now() { return from(Clock::now()); }

  const std::string& str() const { return lexeme_; }
  TimePoint instant() const { return instant_; }

  friend bool operator==(const Timestamp& a, const Timestamp& b) { return a.lexeme_ == b.lexeme_; }

 private:
  Timestamp(std::string lexeme, TimePoint instant) : lexeme_(std::move(lexeme)), instant_(instant) {}

  std::string lexeme_;
  TimePoint instant_;
};

/// "YYYYMMDD" of the UTC calendar date.
std::string yyyymmdd(TimePoint t);

}  // namespace lims
