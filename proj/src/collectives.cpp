#include "collfft/collectives.hpp"

#include <mutex>
#include <stdexcept>
#include <string>

namespace collfft {

namespace {

// Calls `finish` exactly once: with the first error reported, or with
// nullptr after `count` successful arrivals.
class Join {
 public:
  Join(std::size_t count, std::function<void(std::exception_ptr)> finish)
      : remaining_(count), finish_(std::move(finish)) {}

  void arrive(std::exception_ptr err) {
    {
      std::lock_guard lock(mutex_);
      if (finished_) return;
      if (!err && --remaining_ > 0) return;
      finished_ = true;
    }
    finish_(err);
  }

 private:
  std::mutex mutex_;
  std::size_t remaining_;
  bool finished_ = false;
  std::function<void(std::exception_ptr)> finish_;
};

template <typename T>
std::function<void(std::exception_ptr)> settle(std::shared_ptr<std::promise<T>> promise,
                                               std::shared_ptr<T> value) {
  return [promise, value](std::exception_ptr err) {
    if (err) {
      promise->set_exception(err);
    } else {
      promise->set_value(std::move(*value));
    }
  };
}

std::function<void(std::exception_ptr)> settle(std::shared_ptr<std::promise<void>> promise) {
  return [promise](std::exception_ptr err) {
    if (err) {
      promise->set_exception(err);
    } else {
      promise->set_value();
    }
  };
}

}  // namespace

Communicator::Communicator(Endpoint& endpoint)
    : endpoint_(&endpoint), rank_(endpoint.rank()), size_(endpoint.world_size()) {
  if (size_ > TagKey::kRootLimit) {
    throw std::invalid_argument("Communicator: world size " + std::to_string(size_) +
                                " exceeds the 16-bit root field");
  }
}

void Communicator::ErrorLatch::record(std::exception_ptr err) {
  if (!err) return;
  std::lock_guard lock(mutex);
  if (!first) first = err;
}

std::function<void(std::exception_ptr)> Communicator::latch_failures() const {
  return [latch = async_error_](std::exception_ptr err) { latch->record(err); };
}

Tag Communicator::next_tag(CollectiveKind kind, RankId root) {
  {
    std::lock_guard lock(async_error_->mutex);
    if (async_error_->first) std::rethrow_exception(async_error_->first);
  }
  auto& seq = seq_[static_cast<std::size_t>(kind)];
  if (seq >= TagKey::kSeqLimit) throw std::overflow_error("collective sequence exhausted");
  return TagKey{kind, static_cast<std::uint16_t>(root.value), seq++}.pack();
}

void Communicator::check_rank(RankId r, const char* what) const {
  if (r.value >= size_) {
    throw std::invalid_argument(std::string(what) + ": rank " + std::to_string(r.value) +
                                " outside world of " + std::to_string(size_));
  }
}

void Communicator::scatter_then(RankId root, std::vector<Bytes> chunks, RecvCallback done) {
  check_rank(root, "scatter");
  if (rank_ == root && chunks.size() != size_) {
    throw std::invalid_argument("scatter: root holds " + std::to_string(chunks.size()) +
                                " chunks, world size is " + std::to_string(size_));
  }
  const Tag tag = next_tag(CollectiveKind::scatter, root);

  if (rank_ != root) {
    endpoint_->post_recv(root, tag, std::move(done));
    return;
  }

  // The root's own chunk never touches the transport.
  for (std::uint32_t r = 0; r < size_; ++r) {
    if (r == rank_.value) continue;
    endpoint_->post_send(RankId(r), tag, std::move(chunks[r]), latch_failures());
  }
  done(nullptr, std::move(chunks[rank_.value]));
}

std::future<Bytes> Communicator::scatter(RankId root, std::vector<Bytes> chunks) {
  auto promise = std::make_shared<std::promise<Bytes>>();
  auto fut = promise->get_future();
  scatter_then(root, std::move(chunks), [promise](std::exception_ptr err, Bytes payload) {
    if (err) {
      promise->set_exception(err);
    } else {
      promise->set_value(std::move(payload));
    }
  });
  return fut;
}

std::future<std::vector<Bytes>> Communicator::all_to_all(std::vector<Bytes> chunks) {
  if (chunks.size() != size_) {
    throw std::invalid_argument("all_to_all: got " + std::to_string(chunks.size()) +
                                " chunks, world size is " + std::to_string(size_));
  }
  const Tag tag = next_tag(CollectiveKind::alltoall, RankId(0));
  const std::uint32_t me = rank_.value;
  const auto n = static_cast<std::uint32_t>(size_);

  auto promise = std::make_shared<std::promise<std::vector<Bytes>>>();
  auto fut = promise->get_future();
  auto result = std::make_shared<std::vector<Bytes>>(size_);
  (*result)[me] = std::move(chunks[me]);

  // One arrival per remote receive and per outbound hand-off, plus the local
  // copy so a world of one completes too.
  auto join = std::make_shared<Join>(2 * (size_ - 1) + 1, settle(promise, result));

  // Linear shift: step s sends to me+s and receives from me-s. Every step is
  // posted up front; completion waits for all of them.
  for (std::uint32_t step = 1; step < n; ++step) {
    const std::uint32_t from = (me + n - step) % n;
    endpoint_->post_recv(RankId(from), tag,
                         [join, result, from](std::exception_ptr err, Bytes payload) {
                           if (!err) (*result)[from] = std::move(payload);
                           join->arrive(err);
                         });
  }
  for (std::uint32_t step = 1; step < n; ++step) {
    const std::uint32_t to = (me + step) % n;
    endpoint_->post_send(RankId(to), tag, std::move(chunks[to]),
                         [join](std::exception_ptr err) { join->arrive(err); });
  }
  join->arrive(nullptr);
  return fut;
}

std::future<std::vector<Bytes>> Communicator::gather(RankId root, Bytes chunk) {
  check_rank(root, "gather");
  const Tag tag = next_tag(CollectiveKind::gather, root);

  auto promise = std::make_shared<std::promise<std::vector<Bytes>>>();
  auto fut = promise->get_future();
  auto result = std::make_shared<std::vector<Bytes>>();

  if (rank_ != root) {
    auto join = std::make_shared<Join>(1, settle(promise, result));
    endpoint_->post_send(root, tag, std::move(chunk),
                         [join](std::exception_ptr err) { join->arrive(err); });
    return fut;
  }

  result->resize(size_);
  (*result)[rank_.value] = std::move(chunk);
  auto join = std::make_shared<Join>(size_, settle(promise, result));
  for (std::uint32_t r = 0; r < size_; ++r) {
    if (r == rank_.value) continue;
    endpoint_->post_recv(RankId(r), tag, [join, result, r](std::exception_ptr err, Bytes payload) {
      if (!err) (*result)[r] = std::move(payload);
      join->arrive(err);
    });
  }
  join->arrive(nullptr);
  return fut;
}

std::future<void> Communicator::barrier() {
  const Tag tag = next_tag(CollectiveKind::barrier, RankId(0));
  auto promise = std::make_shared<std::promise<void>>();
  auto fut = promise->get_future();
  auto complete = settle(promise);
  const RankId root(0);

  if (rank_ != root) {
    // Entry notice goes up, release comes down. Both directions share the
    // tag because receives match on (src, tag).
    auto join = std::make_shared<Join>(2, complete);
    endpoint_->post_recv(root, tag, [join](std::exception_ptr err, Bytes) { join->arrive(err); });
    endpoint_->post_send(root, tag, Bytes{}, [join](std::exception_ptr err) { join->arrive(err); });
    return fut;
  }

  Endpoint* ep = endpoint_;
  const auto n = static_cast<std::uint32_t>(size_);
  // Release notices are handed off before the root's own handle completes.
  auto release = [ep, n, tag, complete](std::exception_ptr err) {
    if (err) {
      complete(err);
      return;
    }
    auto sent = std::make_shared<Join>(n, complete);
    try {
      for (std::uint32_t peer = 1; peer < n; ++peer) {
        ep->post_send(RankId(peer), tag, Bytes{},
                      [sent](std::exception_ptr e) { sent->arrive(e); });
      }
    } catch (...) {
      sent->arrive(std::current_exception());
      return;
    }
    sent->arrive(nullptr);
  };
  auto entered = std::make_shared<Join>(n, release);
  for (std::uint32_t r = 1; r < n; ++r) {
    ep->post_recv(RankId(r), tag, [entered](std::exception_ptr err, Bytes) { entered->arrive(err); });
  }
  entered->arrive(nullptr);
  return fut;
}

}  // namespace collfft
