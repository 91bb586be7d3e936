#include "collfft/frame.hpp"

#include <algorithm>
#include <cstring>

namespace collfft {

namespace {

template <typename T>
void store_le(std::byte* out, T value) noexcept {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::byte>((value >> (8 * i)) & 0xFF);
  }
}

template <typename T>
T load_le(const std::byte* in) noexcept {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(std::to_integer<std::uint8_t>(in[i])) << (8 * i);
  }
  return value;
}

}  // namespace

const char* to_string(TransportErrc code) noexcept {
  switch (code) {
    case TransportErrc::bad_magic: return "bad magic";
    case TransportErrc::bad_version: return "unsupported version";
    case TransportErrc::truncated: return "truncated frame";
    case TransportErrc::frame_too_large: return "frame too large";
    case TransportErrc::malformed_hosts: return "malformed host table";
    case TransportErrc::bind_failed: return "bind failed";
    case TransportErrc::unreachable: return "peer unreachable";
    case TransportErrc::unknown_rank: return "unknown rank";
    case TransportErrc::shut_down: return "endpoint shut down";
    case TransportErrc::peer_closed: return "peer closed";
    case TransportErrc::io_error: return "i/o error";
  }
  return "transport error";
}

std::array<std::byte, kFrameHeaderSize> encode_header(const FrameHeader& h) noexcept {
  std::array<std::byte, kFrameHeaderSize> out{};
  std::copy(kFrameMagic.begin(), kFrameMagic.end(), out.begin());
  out[4] = std::byte{kFrameVersion};
  store_le(out.data() + 5, h.src);
  store_le(out.data() + 9, h.dst);
  store_le(out.data() + 13, h.tag);
  store_le(out.data() + 21, h.length);
  return out;
}

FrameHeader decode_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kFrameHeaderSize) {
    throw TransportError(TransportErrc::truncated,
                         "header needs 29 bytes, got " + std::to_string(bytes.size()));
  }
  if (!std::equal(kFrameMagic.begin(), kFrameMagic.end(), bytes.begin())) {
    throw TransportError(TransportErrc::bad_magic, "expected \"PCL1\"");
  }
  const auto version = std::to_integer<std::uint8_t>(bytes[4]);
  if (version != kFrameVersion) {
    throw TransportError(TransportErrc::bad_version, "version " + std::to_string(version));
  }
  FrameHeader h;
  h.src = load_le<std::uint32_t>(bytes.data() + 5);
  h.dst = load_le<std::uint32_t>(bytes.data() + 9);
  h.tag = load_le<std::uint64_t>(bytes.data() + 13);
  h.length = load_le<std::uint64_t>(bytes.data() + 21);
  if (h.length > kMaxFramePayload) {
    throw TransportError(TransportErrc::frame_too_large, std::to_string(h.length) + " bytes");
  }
  return h;
}

Bytes encode_frame(const Frame& f) {
  const auto header = encode_header(f.header());
  Bytes out(kFrameHeaderSize + f.payload.size());
  std::copy(header.begin(), header.end(), out.begin());
  if (!f.payload.empty()) {
    std::memcpy(out.data() + kFrameHeaderSize, f.payload.data(), f.payload.size());
  }
  return out;
}

Frame decode_frame(std::span<const std::byte> bytes) {
  const FrameHeader h = decode_header(bytes);
  const std::size_t available = bytes.size() - kFrameHeaderSize;
  if (available < h.length) {
    throw TransportError(TransportErrc::truncated,
                         "payload needs " + std::to_string(h.length) + " bytes, got " +
                             std::to_string(available));
  }
  Frame f{h.src, h.dst, h.tag, {}};
  const auto body = bytes.subspan(kFrameHeaderSize, static_cast<std::size_t>(h.length));
  f.payload.assign(body.begin(), body.end());
  return f;
}

}  // namespace collfft
