#pragma once

// Two-packet message framing: a 4-byte big-endian byte count followed by the
// payload itself.

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "lims/util.hpp"

namespace lims::net {

inline constexpr std::uint32_t kDefaultMaxFrame = 64u << 20;
inline constexpr std::size_t kHeaderSize = 4;

enum class Errc {
  EmptyPayload,
  PayloadTooLarge,
  Truncated,
  Oversized,
  Timeout,
  Closed,
  ConnectionRefused,
  ProtocolError,
  BindFailure,
  Io,
};

std::string_view to_string(Errc e);

class TransportError : public Error {
 public:
  TransportError(Errc code, const std::string& detail);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

using Deadline = std::chrono::steady_clock::time_point;

/// Anything frames can be read from.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  /// Reads at least one byte into `buf`, or returns 0 at end of stream.
  /// Throws TransportError{Timeout} once `deadline` passes with nothing read.
  virtual std::size_t read_some(std::span<char> buf, Deadline deadline) = 0;
};

struct FrameLimits {
  std::uint32_t max_frame_size = kDefaultMaxFrame;
  std::chrono::milliseconds header_timeout{10'000};
  std::chrono::milliseconds body_timeout{30'000};
};

/// Header ++ payload. Throws EmptyPayload / PayloadTooLarge.
std::string frame(std::string_view payload, std::uint32_t max_frame_size = kDefaultMaxFrame);

std::uint32_t decode_header(std::span<const char, kHeaderSize> header);

/// Reads one complete payload. Errors: Closed (clean end before any header
/// byte), Timeout (no header in time), Truncated, Oversized, EmptyPayload.
/// Buffer growth follows bytes actually received, never the declared size.
std::string read_frame(ByteSource& source, const FrameLimits& limits = {});

/// In-memory source, used for fuzzing and tests. `stall_after` simulates a
/// peer that stops sending (reads past it time out instead of hitting EOF).
class MemorySource : public ByteSource {
 public:
  explicit MemorySource(std::string bytes, bool stall_at_end = false)
      : bytes_(std::move(bytes)), stall_at_end_(stall_at_end) {}
  std::size_t read_some(std::span<char> buf, Deadline deadline) override;

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
  bool stall_at_end_;
};

}  // namespace lims::net
