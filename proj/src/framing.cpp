#include "lims/framing.hpp"

#include <algorithm>
#include <cstring>

namespace lims::net {

std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::EmptyPayload: return "EmptyPayload";
    case Errc::PayloadTooLarge: return "PayloadTooLarge";
    case Errc::Truncated: return "Truncated";
    case Errc::Oversized: return "Oversized";
    case Errc::Timeout: return "Timeout";
    case Errc::Closed: return "Closed";
    case Errc::ConnectionRefused: return "ConnectionRefused";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::BindFailure: return "BindFailure";
    case Errc::Io: return "Io";
  }
  return "?";
}

TransportError::TransportError(Errc code, const std::string& detail)
    : Error(std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)), code_(code) {}

std::string frame(std::string_view payload, std::uint32_t max_frame_size) {
  if (payload.empty()) throw TransportError(Errc::EmptyPayload, "zero-length payload");
  if (payload.size() > max_frame_size)
    throw TransportError(Errc::PayloadTooLarge, std::to_string(payload.size()) + " bytes");
  auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(kHeaderSize + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(payload);
  return out;
}

std::uint32_t decode_header(std::span<const char, kHeaderSize> h) {
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(h[i])); };
  return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

std::string read_frame(ByteSource& source, const FrameLimits& limits) {
  using std::chrono::steady_clock;
  char header[kHeaderSize];
  std::size_t got = 0;
  auto header_deadline = steady_clock::now() + limits.header_timeout;
  while (got < kHeaderSize) {
    std::size_t n;
    try {
      n = source.read_some(std::span<char>(header + got, kHeaderSize - got), header_deadline);
    } catch (const TransportError& e) {
      if (e.code() == Errc::Timeout && got > 0) throw TransportError(Errc::Truncated, "partial header");
      throw;
    }
    if (n == 0) {
      if (got == 0) throw TransportError(Errc::Closed, "peer closed connection");
      throw TransportError(Errc::Truncated, "stream ended inside header");
    }
    got += n;
  }
  auto declared = decode_header(std::span<const char, kHeaderSize>(header, kHeaderSize));
  if (declared == 0) throw TransportError(Errc::EmptyPayload, "header declares zero bytes");
  if (declared > limits.max_frame_size)
    throw TransportError(Errc::Oversized, "declared " + std::to_string(declared) + " > max " +
                                              std::to_string(limits.max_frame_size));

  std::string payload;
  constexpr std::size_t kChunk = 64 * 1024;
  auto body_deadline = steady_clock::now() + limits.body_timeout;
  while (payload.size() < declared) {
    auto want = std::min<std::size_t>(kChunk, declared - payload.size());
    auto old = payload.size();
    payload.resize(old + want);
    std::size_t n;
    try {
      n = source.read_some(std::span<char>(payload.data() + old, want), body_deadline);
    } catch (const TransportError& e) {
      if (e.code() == Errc::Timeout)
        throw TransportError(Errc::Truncated, "received " + std::to_string(old) + " of " + std::to_string(declared) +
                                                  " bytes before timeout");
      throw;
    }
    payload.resize(old + n);
    if (n == 0)
      throw TransportError(Errc::Truncated,
                           "received " + std::to_string(old) + " of " + std::to_string(declared) + " bytes");
  }
  return payload;
}

std::size_t MemorySource::read_some(std::span<char> buf, Deadline) {
  if (pos_ >= bytes_.size()) {
    if (stall_at_end_) throw TransportError(Errc::Timeout, "no data");
    return 0;
  }
  auto n = std::min(buf.size(), bytes_.size() - pos_);
  std::memcpy(buf.data(), bytes_.data() + pos_, n);
  pos_ += n;
  return n;
}

}  // namespace lims::net
