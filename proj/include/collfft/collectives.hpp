#pragma once

// Scatter, all-to-all, gather and barrier over an Endpoint.
//
// Every collective consumes one sequence number of its kind, so all ranks
// must issue collectives in the same order. Each call returns a handle
// immediately; any number may be outstanding at once.

#include "collfft/transport.hpp"

#include <array>
#include <cstdint>
#include <exception>
#include <future>
#include <memory>
#include <mutex>
#include <vector>

namespace collfft {

enum class CollectiveKind : std::uint8_t { scatter = 1, alltoall = 2, gather = 3, barrier = 4 };

/// Transport tag for one collective invocation:
/// (kind << 56) | (root << 40) | seq.
struct TagKey {
  static constexpr std::uint64_t kSeqLimit = std::uint64_t{1} << 40;
  static constexpr std::uint32_t kRootLimit = std::uint32_t{1} << 16;

  CollectiveKind kind;
  std::uint16_t root;
  std::uint64_t seq;

  constexpr Tag pack() const noexcept {
    return (static_cast<Tag>(kind) << 56) | (static_cast<Tag>(root) << 40) |
           (seq & (kSeqLimit - 1));
  }

  static constexpr TagKey unpack(Tag tag) noexcept {
    return {static_cast<CollectiveKind>(tag >> 56),
            static_cast<std::uint16_t>((tag >> 40) & 0xFFFF), tag & (kSeqLimit - 1)};
  }

  friend constexpr bool operator==(const TagKey&, const TagKey&) = default;
};

class Communicator {
 public:
  /// The endpoint must outlive the communicator.
  explicit Communicator(Endpoint& endpoint);

  RankId rank() const noexcept { return rank_; }
  std::size_t size() const noexcept { return size_; }
  Endpoint& endpoint() noexcept { return *endpoint_; }

  /// `chunks` is read on the root only and must hold size() entries there.
  /// Rank r's handle yields chunks[r]. The root's handle completes at once
  /// with its own chunk; a later failure of its outbound sends is rethrown
  /// by the next collective call.
  std::future<Bytes> scatter(RankId root, std::vector<Bytes> chunks = {});

  /// Callback form of scatter; `done` may run on a transport thread.
  void scatter_then(RankId root, std::vector<Bytes> chunks, RecvCallback done);

  /// result[j] is the chunk rank j addressed to this rank. Completes only
  /// once every remote chunk has arrived.
  std::future<std::vector<Bytes>> all_to_all(std::vector<Bytes> chunks);

  /// Root's handle yields one chunk per rank; other ranks get an empty list.
  std::future<std::vector<Bytes>> gather(RankId root, Bytes chunk);

  std::future<void> barrier();

  std::uint64_t sequence(CollectiveKind kind) const noexcept {
    return seq_[static_cast<std::size_t>(kind)];
  }

 private:
  struct ErrorLatch {
    std::mutex mutex;
    std::exception_ptr first;
    void record(std::exception_ptr err);
  };

  Tag next_tag(CollectiveKind kind, RankId root);
  void check_rank(RankId r, const char* what) const;
  std::function<void(std::exception_ptr)> latch_failures() const;

  std::shared_ptr<ErrorLatch> async_error_ = std::make_shared<ErrorLatch>();

  Endpoint* endpoint_;
  RankId rank_;
  std::size_t size_;
  std::array<std::uint64_t, 5> seq_{};
};

}  // namespace collfft
