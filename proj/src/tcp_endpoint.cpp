#include "collfft/transport.hpp"
#include "mailbox.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <thread>

namespace collfft {

namespace {

// Handshake frames identify the connecting rank; they never reach a mailbox.
constexpr Tag kHandshakeTag = ~Tag{0};

using Clock = std::chrono::steady_clock;

std::string errno_text(int err) { return std::strerror(err); }

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct AddrInfoDeleter {
  void operator()(addrinfo* ai) const noexcept { freeaddrinfo(ai); }
};
using AddrInfoPtr = std::unique_ptr<addrinfo, AddrInfoDeleter>;

AddrInfoPtr resolve(const HostEntry& entry, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* result = nullptr;
  const std::string port = std::to_string(entry.port);
  if (int rc = getaddrinfo(entry.host.c_str(), port.c_str(), &hints, &result); rc != 0) {
    throw TransportError(TransportErrc::unreachable,
                         "cannot resolve " + entry.host + ": " + gai_strerror(rc));
  }
  return AddrInfoPtr(result);
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

/// Returns false on orderly EOF before any byte was read.
bool read_exact(int fd, std::byte* out, std::size_t n) {
  std::size_t done = 0;
  while (done < n) {
    const ssize_t got = ::recv(fd, out + done, n - done, 0);
    if (got == 0) {
      if (done == 0) return false;
      throw TransportError(TransportErrc::truncated, "stream ended mid-frame");
    }
    if (got < 0) {
      if (errno == EINTR) continue;
      throw TransportError(TransportErrc::io_error, "recv: " + errno_text(errno));
    }
    done += static_cast<std::size_t>(got);
  }
  return true;
}

void write_all(int fd, std::span<const std::byte> header, std::span<const std::byte> body) {
  iovec iov[2];
  iov[0] = {const_cast<std::byte*>(header.data()), header.size()};
  iov[1] = {const_cast<std::byte*>(body.data()), body.size()};
  std::size_t first = 0;
  const int count = body.empty() ? 1 : 2;
  while (first < static_cast<std::size_t>(count)) {
    msghdr msg{};
    msg.msg_iov = iov + first;
    msg.msg_iovlen = count - first;
    const ssize_t sent = ::sendmsg(fd, &msg, MSG_NOSIGNAL);
    if (sent < 0) {
      if (errno == EINTR) continue;
      throw TransportError(TransportErrc::io_error, "send: " + errno_text(errno));
    }
    auto left = static_cast<std::size_t>(sent);
    while (first < static_cast<std::size_t>(count) && left >= iov[first].iov_len) {
      left -= iov[first].iov_len;
      ++first;
    }
    if (first < static_cast<std::size_t>(count)) {
      iov[first].iov_base = static_cast<char*>(iov[first].iov_base) + left;
      iov[first].iov_len -= left;
    }
  }
}

Fd connect_with_backoff(const HostEntry& peer, const TcpOptions& options) {
  auto delay = options.initial_backoff;
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    AddrInfoPtr addrs = resolve(peer, false);
    for (addrinfo* ai = addrs.get(); ai != nullptr; ai = ai->ai_next) {
      Fd fd(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
      if (!fd) {
        last_error = errno_text(errno);
        continue;
      }
      if (::connect(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
        set_nodelay(fd.get());
        return fd;
      }
      last_error = errno_text(errno);
    }
  }
  throw TransportError(TransportErrc::unreachable,
                       "rank " + std::to_string(peer.rank.value) + " at " + peer.host + ":" +
                           std::to_string(peer.port) + " after " +
                           std::to_string(options.max_attempts) + " attempts (" + last_error +
                           ")");
}

Fd listen_on(const HostEntry& self, std::size_t backlog) {
  AddrInfoPtr addrs = resolve(self, true);
  std::string last_error = "no address";
  for (addrinfo* ai = addrs.get(); ai != nullptr; ai = ai->ai_next) {
    Fd fd(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!fd) {
      last_error = errno_text(errno);
      continue;
    }
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0 &&
        ::listen(fd.get(), static_cast<int>(backlog) + 4) == 0) {
      return fd;
    }
    last_error = errno_text(errno);
  }
  throw TransportError(TransportErrc::bind_failed,
                       self.host + ":" + std::to_string(self.port) + ": " + last_error);
}

class TcpEndpoint final : public Endpoint {
 public:
  TcpEndpoint(RankId rank, const HostTable& hosts, const TcpOptions& options)
      : rank_(rank), world_(hosts.size()), options_(options), mailbox_(world_), peers_(world_) {
    for (auto& p : peers_) p = std::make_unique<Peer>();
    establish(hosts);
    for (std::uint32_t r = 0; r < world_; ++r) {
      if (r == rank_.value) continue;
      Peer& peer = *peers_[r];
      peer.writer = std::thread([this, r] { write_loop(r); });
      peer.reader = std::thread([this, r] { read_loop(r); });
    }
  }

  ~TcpEndpoint() override { shutdown(); }

  RankId rank() const noexcept override { return rank_; }
  std::size_t world_size() const noexcept override { return world_; }
  std::string_view backend_name() const noexcept override { return "tcp"; }
  std::size_t connected_peers() const noexcept override {
    std::size_t n = 0;
    for (const auto& p : peers_) n += p->fd ? 1 : 0;
    return n;
  }

  void post_send(RankId dst, Tag tag, Bytes payload, SendCallback done) override {
    if (dst.value >= world_) {
      throw TransportError(TransportErrc::unknown_rank,
                           "destination " + std::to_string(dst.value));
    }
    if (shut_) {
      throw TransportError(TransportErrc::shut_down, "send on rank " + std::to_string(rank_.value));
    }
    if (dst == rank_) {
      const auto bytes = static_cast<std::uint64_t>(payload.size());
      counters_.on_send(bytes, false);
      counters_.on_receive(bytes, false);
      mailbox_.deliver(rank_, tag, std::move(payload));
      done(nullptr);
      return;
    }
    Peer& peer = *peers_[dst.value];
    std::exception_ptr failed;
    {
      std::lock_guard lock(peer.mutex);
      if (peer.write_error) {
        failed = peer.write_error;
      } else {
        const FrameHeader header{rank_.value, dst.value, tag,
                                 static_cast<std::uint64_t>(payload.size())};
        peer.queue.push_back({encode_header(header), std::move(payload), std::move(done)});
      }
    }
    if (failed) {
      done(failed);
      return;
    }
    peer.wake.notify_one();
  }

  void post_recv(RankId src, Tag tag, RecvCallback done) override {
    if (src.value >= world_) {
      throw TransportError(TransportErrc::unknown_rank, "source " + std::to_string(src.value));
    }
    if (shut_) {
      throw TransportError(TransportErrc::shut_down, "recv on rank " + std::to_string(rank_.value));
    }
    mailbox_.post(src, tag, std::move(done));
  }

  ByteCounters counters() const override { return counters_.snapshot(); }

  void shutdown() override {
    if (shut_.exchange(true)) return;
    // Flush queued frames, then half-close so peers see EOF.
    for (auto& p : peers_) {
      {
        std::lock_guard lock(p->mutex);
        p->closing = true;
      }
      p->wake.notify_one();
    }
    for (auto& p : peers_) {
      if (p->writer.joinable()) p->writer.join();
      if (p->fd) ::shutdown(p->fd.get(), SHUT_WR);
      // Frames that raced past the shut_ check after the writer exited.
      std::deque<Outgoing> late;
      {
        std::lock_guard lock(p->mutex);
        late.swap(p->queue);
      }
      for (auto& item : late) item.done(detail::shut_down_error("send raced shutdown"));
    }
    {
      std::unique_lock lock(readers_mutex_);
      readers_done_.wait_for(lock, options_.linger,
                             [this] { return readers_finished_ + 1 >= world_; });
    }
    for (auto& p : peers_) {
      if (p->fd) ::shutdown(p->fd.get(), SHUT_RDWR);
      if (p->reader.joinable()) p->reader.join();
      p->fd.reset();
    }
    mailbox_.close(detail::shut_down_error("rank " + std::to_string(rank_.value)));
  }

 private:
  struct Outgoing {
    std::array<std::byte, kFrameHeaderSize> header;
    Bytes payload;
    SendCallback done;
  };

  struct Peer {
    Fd fd;
    std::thread reader;
    std::thread writer;
    std::mutex mutex;
    std::condition_variable wake;
    std::deque<Outgoing> queue;
    bool closing = false;
    std::exception_ptr write_error;
  };

  void establish(const HostTable& hosts) {
    Fd listener = listen_on(hosts.at(rank_), world_);

    for (std::uint32_t r = rank_.value + 1; r < world_; ++r) {
      Fd fd = connect_with_backoff(hosts.at(RankId(r)), options_);
      const auto hello = encode_header({rank_.value, r, kHandshakeTag, 0});
      write_all(fd.get(), hello, {});
      peers_[r]->fd = std::move(fd);
    }

    const auto deadline = Clock::now() + options_.accept_timeout;
    std::size_t accepted = 0;
    while (accepted < rank_.value) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) {
        throw TransportError(TransportErrc::unreachable,
                             "rank " + std::to_string(rank_.value) + " timed out waiting for " +
                                 std::to_string(rank_.value - accepted) + " lower-ranked peers");
      }
      pollfd pfd{listener.get(), POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0 && errno != EINTR) {
        throw TransportError(TransportErrc::io_error, "poll: " + errno_text(errno));
      }
      if (ready <= 0) continue;
      Fd fd(::accept(listener.get(), nullptr, nullptr));
      if (!fd) continue;
      set_nodelay(fd.get());
      std::array<std::byte, kFrameHeaderSize> hello{};
      if (!read_exact(fd.get(), hello.data(), hello.size())) continue;
      const FrameHeader h = decode_header(hello);
      if (h.tag != kHandshakeTag || h.dst != rank_.value || h.src >= rank_.value ||
          peers_[h.src]->fd) {
        throw TransportError(TransportErrc::malformed_hosts,
                             "unexpected handshake from rank " + std::to_string(h.src));
      }
      peers_[h.src]->fd = std::move(fd);
      ++accepted;
    }
  }

  void write_loop(std::uint32_t r) {
    Peer& peer = *peers_[r];
    for (;;) {
      Outgoing item;
      {
        std::unique_lock lock(peer.mutex);
        peer.wake.wait(lock, [&] { return peer.closing || !peer.queue.empty(); });
        if (peer.queue.empty()) return;
        item = std::move(peer.queue.front());
        peer.queue.pop_front();
      }
      std::exception_ptr err;
      try {
        write_all(peer.fd.get(), item.header, item.payload);
        counters_.on_send(item.payload.size(), true);
      } catch (...) {
        err = std::current_exception();
      }
      if (err) {
        std::deque<Outgoing> dropped;
        {
          std::lock_guard lock(peer.mutex);
          peer.write_error = err;
          dropped.swap(peer.queue);
        }
        item.done(err);
        for (auto& d : dropped) d.done(err);
        return;
      }
      item.done(nullptr);
    }
  }

  void read_loop(std::uint32_t r) {
    Peer& peer = *peers_[r];
    std::exception_ptr reason;
    try {
      std::array<std::byte, kFrameHeaderSize> raw{};
      while (read_exact(peer.fd.get(), raw.data(), raw.size())) {
        const FrameHeader h = decode_header(raw);
        if (h.src != r || h.dst != rank_.value) {
          throw TransportError(TransportErrc::io_error,
                               "misaddressed frame " + std::to_string(h.src) + "->" +
                                   std::to_string(h.dst) + " on link from " + std::to_string(r));
        }
        Bytes payload(static_cast<std::size_t>(h.length));
        if (h.length > 0 && !read_exact(peer.fd.get(), payload.data(), payload.size())) {
          throw TransportError(TransportErrc::truncated, "stream ended before payload");
        }
        counters_.on_receive(h.length, true);
        mailbox_.deliver(RankId(r), h.tag, std::move(payload));
      }
      reason = std::make_exception_ptr(
          TransportError(TransportErrc::peer_closed, "rank " + std::to_string(r)));
    } catch (...) {
      reason = std::current_exception();
    }
    mailbox_.close_source(RankId(r), reason);
    {
      std::lock_guard lock(readers_mutex_);
      ++readers_finished_;
    }
    readers_done_.notify_all();
  }

  RankId rank_;
  std::size_t world_;
  TcpOptions options_;
  detail::Mailbox mailbox_;
  detail::AtomicCounters counters_;
  std::vector<std::unique_ptr<Peer>> peers_;
  std::atomic<bool> shut_{false};
  std::mutex readers_mutex_;
  std::condition_variable readers_done_;
  std::size_t readers_finished_ = 0;
};

}  // namespace

std::unique_ptr<Endpoint> connect_tcp(RankId rank, const HostTable& hosts,
                                      const TcpOptions& options) {
  if (rank.value >= hosts.size()) {
    throw TransportError(TransportErrc::malformed_hosts,
                         "rank " + std::to_string(rank.value) + " not in host table of size " +
                             std::to_string(hosts.size()));
  }
  return std::make_unique<TcpEndpoint>(rank, hosts, options);
}

}  // namespace collfft
