#pragma once

// Wire framing for transport messages.
//
// Layout, all integers little-endian, 29-byte header:
//   magic "PCL1" (4) | version (1) | src (4) | dst (4) | tag (8) | length (8)
// followed by `length` payload bytes.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace collfft {

using Bytes = std::vector<std::byte>;
using Tag = std::uint64_t;

inline constexpr std::array<std::byte, 4> kFrameMagic{
    std::byte{'P'}, std::byte{'C'}, std::byte{'L'}, std::byte{'1'}};
inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 4 + 1 + 4 + 4 + 8 + 8;
static_assert(kFrameHeaderSize == 29);

/// Upper bound accepted by the decoder; guards allocation on corrupt input.
inline constexpr std::uint64_t kMaxFramePayload = std::uint64_t{1} << 36;

enum class TransportErrc {
  bad_magic,
  bad_version,
  truncated,
  frame_too_large,
  malformed_hosts,
  bind_failed,
  unreachable,
  unknown_rank,
  shut_down,
  peer_closed,
  io_error,
};

const char* to_string(TransportErrc code) noexcept;

class TransportError : public std::runtime_error {
 public:
  TransportError(TransportErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  TransportErrc code() const noexcept { return code_; }

 private:
  TransportErrc code_;
};

struct FrameHeader {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  Tag tag = 0;
  std::uint64_t length = 0;

  friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

struct Frame {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  Tag tag = 0;
  Bytes payload;

  FrameHeader header() const {
    return {src, dst, tag, static_cast<std::uint64_t>(payload.size())};
  }

  friend bool operator==(const Frame&, const Frame&) = default;
};

std::array<std::byte, kFrameHeaderSize> encode_header(const FrameHeader& h) noexcept;

/// Validates magic and version. Requires at least kFrameHeaderSize bytes.
FrameHeader decode_header(std::span<const std::byte> bytes);

Bytes encode_frame(const Frame& f);

/// Decodes one frame; trailing bytes after the payload are ignored.
Frame decode_frame(std::span<const std::byte> bytes);

}  // namespace collfft
