#include "collfft/launch.hpp"

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <mutex>
#include <stdexcept>
#include <thread>

namespace collfft {

namespace {

// Tracks live endpoints so a failing rank can unblock its siblings.
class Abort {
 public:
  void attach(Endpoint* ep) {
    std::lock_guard lock(mutex_);
    if (tripped_) {
      ep->shutdown();
      return;
    }
    live_.push_back(ep);
  }

  void detach(Endpoint* ep) {
    std::lock_guard lock(mutex_);
    std::erase(live_, ep);
  }

  void trip(std::exception_ptr err) {
    std::lock_guard lock(mutex_);
    if (!first_) first_ = err;
    tripped_ = true;
    for (Endpoint* ep : live_) ep->shutdown();
    if (group_) group_->shutdown_all();
  }

  void set_group(std::shared_ptr<InprocGroup> group) { group_ = std::move(group); }

  std::exception_ptr first() const { return first_; }

 private:
  std::mutex mutex_;
  std::vector<Endpoint*> live_;
  std::shared_ptr<InprocGroup> group_;
  std::exception_ptr first_;
  bool tripped_ = false;
};

void run_rank(const std::function<std::unique_ptr<Endpoint>()>& make,
              std::chrono::nanoseconds latency, const RankBody& body, Abort& abort) {
  std::unique_ptr<Endpoint> ep;
  try {
    ep = delay_wrap(make(), latency);
    abort.attach(ep.get());
    Communicator comm(*ep);
    body(comm);
    comm.barrier().get();
    abort.detach(ep.get());
    ep->shutdown();
  } catch (...) {
    if (ep) abort.detach(ep.get());
    abort.trip(std::current_exception());
  }
}

}  // namespace

void run_world(const WorldOptions& options, const RankBody& body) {
  Abort abort;

  if (options.backend == Backend::inproc) {
    if (options.ranks == 0) throw std::invalid_argument("run_world: need at least one rank");
    auto group = InprocGroup::create(options.ranks);
    abort.set_group(group);
    std::vector<std::thread> workers;
    for (std::uint32_t r = 0; r < options.ranks; ++r) {
      workers.emplace_back([&, r] {
        run_rank([&] { return group->endpoint(RankId(r)); }, options.latency, body, abort);
      });
    }
    for (auto& w : workers) w.join();
  } else {
    if (!options.hosts) throw std::invalid_argument("run_world: tcp needs a host table");
    const HostTable& hosts = *options.hosts;
    if (options.ranks != hosts.size()) {
      throw std::invalid_argument("run_world: " + std::to_string(options.ranks) +
                                  " ranks requested, host table lists " +
                                  std::to_string(hosts.size()));
    }
    std::vector<RankId> local;
    if (options.local_rank) {
      local.push_back(*options.local_rank);
    } else {
      for (std::uint32_t r = 0; r < hosts.size(); ++r) local.emplace_back(r);
    }
    std::vector<std::thread> workers;
    for (RankId r : local) {
      workers.emplace_back([&, r] {
        run_rank([&] { return connect_tcp(r, hosts, options.tcp); }, options.latency, body, abort);
      });
    }
    for (auto& w : workers) w.join();
  }

  if (auto err = abort.first()) std::rethrow_exception(err);
}

HostTable loopback_hosts(std::size_t ranks) {
  // Hold every probe socket open until all ports are chosen so the kernel
  // cannot hand out the same port twice.
  std::vector<int> probes;
  std::vector<HostEntry> entries;
  for (std::uint32_t r = 0; r < ranks; ++r) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError(TransportErrc::bind_failed, "socket() for port probe");
    probes.push_back(fd);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    socklen_t len = sizeof addr;
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
      for (int p : probes) ::close(p);
      throw TransportError(TransportErrc::bind_failed, "port probe");
    }
    entries.push_back({RankId(r), "127.0.0.1", ntohs(addr.sin_port)});
  }
  for (int p : probes) ::close(p);
  return HostTable(std::move(entries));
}

}  // namespace collfft
