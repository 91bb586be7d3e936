#include "collfft/transport.hpp"
#include "mailbox.hpp"

#include <atomic>
#include <condition_variable>
#include <queue>
#include <thread>

namespace collfft {

namespace {

using Clock = std::chrono::steady_clock;

class DelayedEndpoint final : public Endpoint {
 public:
  DelayedEndpoint(std::unique_ptr<Endpoint> inner, std::chrono::nanoseconds latency)
      : inner_(std::move(inner)), latency_(latency), timer_([this] { run(); }) {}

  ~DelayedEndpoint() override { shutdown(); }

  RankId rank() const noexcept override { return inner_->rank(); }
  std::size_t world_size() const noexcept override { return inner_->world_size(); }
  std::string_view backend_name() const noexcept override { return inner_->backend_name(); }
  std::size_t connected_peers() const noexcept override { return inner_->connected_peers(); }

  void post_send(RankId dst, Tag tag, Bytes payload, SendCallback done) override {
    if (dst.value >= world_size()) {
      throw TransportError(TransportErrc::unknown_rank,
                           "destination " + std::to_string(dst.value));
    }
    {
      std::lock_guard lock(mutex_);
      if (stopping_) {
        throw TransportError(TransportErrc::shut_down,
                             "send on rank " + std::to_string(rank().value));
      }
      pending_.push(Pending{Clock::now() + latency_, next_order_++, dst, tag,
                            std::move(payload), std::move(done)});
    }
    wake_.notify_one();
  }

  void post_recv(RankId src, Tag tag, RecvCallback done) override {
    inner_->post_recv(src, tag, std::move(done));
  }

  ByteCounters counters() const override { return inner_->counters(); }

  void shutdown() override {
    if (shut_.exchange(true)) return;
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_one();
    if (timer_.joinable()) timer_.join();
    inner_->shutdown();
  }

 private:
  struct Pending {
    Clock::time_point due;
    std::uint64_t order;
    RankId dst;
    Tag tag;
    Bytes payload;
    SendCallback done;
  };
  struct Later {
    bool operator()(const Pending& a, const Pending& b) const {
      return a.due != b.due ? a.due > b.due : a.order > b.order;
    }
  };

  // Releases frames in (due, order) order; drains the queue before exiting.
  void run() {
    std::unique_lock lock(mutex_);
    for (;;) {
      if (pending_.empty()) {
        if (stopping_) return;
        wake_.wait(lock);
        continue;
      }
      const auto due = pending_.top().due;
      if (Clock::now() < due) {
        wake_.wait_until(lock, due);
        continue;
      }
      Pending item = std::move(const_cast<Pending&>(pending_.top()));
      pending_.pop();
      lock.unlock();
      try {
        inner_->post_send(item.dst, item.tag, std::move(item.payload), item.done);
      } catch (...) {
        item.done(std::current_exception());
      }
      lock.lock();
    }
  }

  std::unique_ptr<Endpoint> inner_;
  std::chrono::nanoseconds latency_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::priority_queue<Pending, std::vector<Pending>, Later> pending_;
  std::uint64_t next_order_ = 0;
  bool stopping_ = false;
  std::atomic<bool> shut_{false};
  std::thread timer_;
};

}  // namespace

std::unique_ptr<Endpoint> delay_wrap(std::unique_ptr<Endpoint> inner,
                                     std::chrono::nanoseconds latency) {
  if (latency < std::chrono::nanoseconds::zero()) {
    throw std::invalid_argument("delay_wrap: latency must be non-negative");
  }
  if (latency == std::chrono::nanoseconds::zero()) return inner;
  return std::make_unique<DelayedEndpoint>(std::move(inner), latency);
}

}  // namespace collfft
