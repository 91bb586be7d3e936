#pragma once

// Receive-side matching shared by the transport backends.

#include "collfft/transport.hpp"

#include <atomic>
#include <deque>
#include <map>
#include <mutex>
#include <utility>

namespace collfft::detail {

class Mailbox {
 public:
  explicit Mailbox(std::size_t world_size) : source_closed_(world_size) {}

  /// Hands `payload` to the oldest waiting receive for (src, tag), or queues
  /// it. Dropped once the mailbox is closed.
  void deliver(RankId src, Tag tag, Bytes payload);

  /// Throws TransportError(shut_down) if the mailbox is already closed.
  void post(RankId src, Tag tag, RecvCallback done);

  /// Fails every waiting receive with `reason`; later posts throw.
  void close(std::exception_ptr reason);

  /// The stream from `src` ended: waiting and future receives from `src`
  /// that cannot be satisfied from the queue fail with `reason`.
  void close_source(RankId src, std::exception_ptr reason);

  bool closed() const;

 private:
  struct Slot {
    std::deque<Bytes> arrived;
    std::deque<RecvCallback> waiting;
  };
  using Key = std::pair<std::uint32_t, Tag>;

  mutable std::mutex mutex_;
  std::map<Key, Slot> slots_;
  std::vector<std::exception_ptr> source_closed_;
  std::exception_ptr closed_;
};

struct AtomicCounters {
  std::atomic<std::uint64_t> payload_sent{0};
  std::atomic<std::uint64_t> payload_received{0};
  std::atomic<std::uint64_t> header_sent{0};
  std::atomic<std::uint64_t> header_received{0};
  std::atomic<std::uint64_t> messages_sent{0};
  std::atomic<std::uint64_t> off_rank_payload_sent{0};
  std::atomic<std::uint64_t> off_rank_payload_received{0};

  void on_send(std::uint64_t bytes, bool off_rank) noexcept;
  void on_receive(std::uint64_t bytes, bool off_rank) noexcept;
  ByteCounters snapshot() const noexcept;
};

std::exception_ptr shut_down_error(std::string_view where);

}  // namespace collfft::detail
