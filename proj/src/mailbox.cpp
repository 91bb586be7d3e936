#include "mailbox.hpp"

namespace collfft::detail {

void Mailbox::deliver(RankId src, Tag tag, Bytes payload) {
  RecvCallback ready;
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    auto it = slots_.find({src.value, tag});
    if (it != slots_.end() && !it->second.waiting.empty()) {
      ready = std::move(it->second.waiting.front());
      it->second.waiting.pop_front();
      if (it->second.waiting.empty() && it->second.arrived.empty()) slots_.erase(it);
    } else {
      slots_[{src.value, tag}].arrived.push_back(std::move(payload));
      return;
    }
  }
  // Callbacks run unlocked: they may post further sends or receives.
  ready(nullptr, std::move(payload));
}

void Mailbox::post(RankId src, Tag tag, RecvCallback done) {
  Bytes payload;
  std::exception_ptr failure;
  {
    std::lock_guard lock(mutex_);
    if (closed_) std::rethrow_exception(closed_);
    auto it = slots_.find({src.value, tag});
    if (it != slots_.end() && !it->second.arrived.empty()) {
      payload = std::move(it->second.arrived.front());
      it->second.arrived.pop_front();
      if (it->second.waiting.empty() && it->second.arrived.empty()) slots_.erase(it);
    } else if (source_closed_.at(src.value)) {
      failure = source_closed_[src.value];
    } else {
      slots_[{src.value, tag}].waiting.push_back(std::move(done));
      return;
    }
  }
  done(failure, std::move(payload));
}

void Mailbox::close(std::exception_ptr reason) {
  std::vector<RecvCallback> orphans;
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    closed_ = reason;
    for (auto& [key, slot] : slots_) {
      for (auto& cb : slot.waiting) orphans.push_back(std::move(cb));
    }
    slots_.clear();
  }
  for (auto& cb : orphans) cb(reason, {});
}

void Mailbox::close_source(RankId src, std::exception_ptr reason) {
  std::vector<RecvCallback> orphans;
  {
    std::lock_guard lock(mutex_);
    if (closed_ || source_closed_.at(src.value)) return;
    source_closed_[src.value] = reason;
    for (auto it = slots_.begin(); it != slots_.end();) {
      if (it->first.first == src.value) {
        for (auto& cb : it->second.waiting) orphans.push_back(std::move(cb));
        it->second.waiting.clear();
      }
      if (it->second.waiting.empty() && it->second.arrived.empty()) {
        it = slots_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& cb : orphans) cb(reason, {});
}

bool Mailbox::closed() const {
  std::lock_guard lock(mutex_);
  return static_cast<bool>(closed_);
}

void AtomicCounters::on_send(std::uint64_t bytes, bool off_rank) noexcept {
  payload_sent += bytes;
  messages_sent += 1;
  if (off_rank) {
    off_rank_payload_sent += bytes;
    header_sent += kFrameHeaderSize;
  }
}

void AtomicCounters::on_receive(std::uint64_t bytes, bool off_rank) noexcept {
  payload_received += bytes;
  if (off_rank) {
    off_rank_payload_received += bytes;
    header_received += kFrameHeaderSize;
  }
}

ByteCounters AtomicCounters::snapshot() const noexcept {
  return {payload_sent.load(),        payload_received.load(),
          header_sent.load(),         header_received.load(),
          messages_sent.load(),       off_rank_payload_sent.load(),
          off_rank_payload_received.load()};
}

std::exception_ptr shut_down_error(std::string_view where) {
  return std::make_exception_ptr(TransportError(TransportErrc::shut_down, std::string(where)));
}

}  // namespace collfft::detail
