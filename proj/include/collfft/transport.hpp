#pragma once

// Rank-to-rank message endpoints with runtime-selectable backends.
//
// An Endpoint delivers tagged byte payloads between the ranks of a fixed
// world. Receives match on (src, tag); frames sharing a (src, tag) pair are
// delivered in send order, anything else is queued until asked for.
// Progress is autonomous: completions fire from backend threads (or inline),
// never because the caller polls.

#include "collfft/frame.hpp"

#include <chrono>
#include <compare>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <future>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace collfft {

struct RankId {
  std::uint32_t value = 0;

  constexpr RankId() = default;
  constexpr explicit RankId(std::uint32_t v) : value(v) {}

  friend constexpr auto operator<=>(RankId, RankId) = default;
};

enum class Backend { inproc, tcp };

std::string_view to_string(Backend b) noexcept;
std::optional<Backend> parse_backend(std::string_view name) noexcept;

struct ByteCounters {
  std::uint64_t payload_sent = 0;
  std::uint64_t payload_received = 0;
  std::uint64_t header_sent = 0;
  std::uint64_t header_received = 0;
  std::uint64_t messages_sent = 0;
  // Excludes loopback traffic.
  std::uint64_t off_rank_payload_sent = 0;
  std::uint64_t off_rank_payload_received = 0;

  friend bool operator==(const ByteCounters&, const ByteCounters&) = default;
};

/// Invoked exactly once; a non-null exception_ptr means failure.
using SendCallback = std::function<void(std::exception_ptr)>;
using RecvCallback = std::function<void(std::exception_ptr, Bytes)>;

class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual RankId rank() const noexcept = 0;
  virtual std::size_t world_size() const noexcept = 0;
  virtual std::string_view backend_name() const noexcept = 0;
  virtual std::size_t connected_peers() const noexcept = 0;

  /// Takes ownership of `payload`. Throws TransportError for an unknown
  /// destination or a shut-down endpoint; later failures go to `done`.
  /// `done` fires once the payload has been handed to the backend.
  virtual void post_send(RankId dst, Tag tag, Bytes payload, SendCallback done) = 0;

  /// `done` may run inline if a matching frame is already queued.
  virtual void post_recv(RankId src, Tag tag, RecvCallback done) = 0;

  virtual ByteCounters counters() const = 0;

  /// Idempotent. Flushes in-flight sends, then fails outstanding receives.
  virtual void shutdown() = 0;

  /// Copies `payload` at call time.
  std::future<void> send(RankId dst, Tag tag, std::span<const std::byte> payload);
  std::future<Bytes> recv(RankId src, Tag tag);
};

// ---------------------------------------------------------------------------
// In-process backend

/// Shared state for a world of in-process endpoints. Endpoints hold a
/// reference to the group, so it outlives them.
class InprocGroup : public std::enable_shared_from_this<InprocGroup> {
 public:
  static std::shared_ptr<InprocGroup> create(std::size_t world_size);

  std::size_t world_size() const noexcept;

  /// Each rank may be claimed once.
  std::unique_ptr<Endpoint> endpoint(RankId rank);

  /// Shuts down every rank's mailbox, unblocking all pending receives.
  void shutdown_all();

  struct State;
  explicit InprocGroup(std::size_t world_size);
  ~InprocGroup();

 private:
  std::unique_ptr<State> state_;
};

// ---------------------------------------------------------------------------
// TCP backend

struct HostEntry {
  RankId rank;
  std::string host;
  std::uint16_t port = 0;

  friend bool operator==(const HostEntry&, const HostEntry&) = default;
};

/// Entries sorted by rank, ranks exactly 0..n-1.
class HostTable {
 public:
  HostTable() = default;
  /// Throws TransportError(malformed_hosts) on duplicate or missing ranks or
  /// out-of-range ports.
  explicit HostTable(std::vector<HostEntry> entries);

  std::size_t size() const noexcept { return entries_.size(); }
  const HostEntry& at(RankId r) const;
  const std::vector<HostEntry>& entries() const noexcept { return entries_; }

 private:
  std::vector<HostEntry> entries_;
};

/// Parses `<rank> <host>:<port>` lines; `#` starts a comment. Ranks must
/// appear in ascending order.
HostTable parse_hostfile(std::istream& in);
HostTable load_hostfile(const std::filesystem::path& path);

struct TcpOptions {
  std::chrono::milliseconds initial_backoff{50};
  int max_attempts = 10;
  /// Bound on waiting for lower-ranked peers to connect in.
  std::chrono::milliseconds accept_timeout{60'000};
  /// Bound on draining the peer's stream during shutdown.
  std::chrono::milliseconds linger{5'000};
};

/// Blocks until the full mesh is up. The lower rank of each pair connects.
std::unique_ptr<Endpoint> connect_tcp(RankId rank, const HostTable& hosts,
                                      const TcpOptions& options = {});

// ---------------------------------------------------------------------------
// Decorators

/// Defers each frame's hand-off to `inner` by at least `latency`. Delays of
/// concurrent sends overlap. Counters are the inner endpoint's.
std::unique_ptr<Endpoint> delay_wrap(std::unique_ptr<Endpoint> inner,
                                     std::chrono::nanoseconds latency);

}  // namespace collfft
