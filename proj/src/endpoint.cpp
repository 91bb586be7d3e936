#include "collfft/transport.hpp"
#include "mailbox.hpp"

#include <fstream>
#include <istream>
#include <sstream>

namespace collfft {

std::string_view to_string(Backend b) noexcept {
  switch (b) {
    case Backend::inproc: return "inproc";
    case Backend::tcp: return "tcp";
  }
  return "unknown";
}

std::optional<Backend> parse_backend(std::string_view name) noexcept {
  if (name == "inproc") return Backend::inproc;
  if (name == "tcp") return Backend::tcp;
  return std::nullopt;
}

std::future<void> Endpoint::send(RankId dst, Tag tag, std::span<const std::byte> payload) {
  auto promise = std::make_shared<std::promise<void>>();
  auto fut = promise->get_future();
  post_send(dst, tag, Bytes(payload.begin(), payload.end()),
            [promise](std::exception_ptr err) {
              if (err) {
                promise->set_exception(err);
              } else {
                promise->set_value();
              }
            });
  return fut;
}

std::future<Bytes> Endpoint::recv(RankId src, Tag tag) {
  auto promise = std::make_shared<std::promise<Bytes>>();
  auto fut = promise->get_future();
  post_recv(src, tag, [promise](std::exception_ptr err, Bytes payload) {
    if (err) {
      promise->set_exception(err);
    } else {
      promise->set_value(std::move(payload));
    }
  });
  return fut;
}

// ---------------------------------------------------------------------------

struct InprocGroup::State {
  struct Rank {
    explicit Rank(std::size_t world) : mailbox(world) {}
    detail::Mailbox mailbox;
    detail::AtomicCounters counters;
    std::atomic<bool> claimed{false};
  };

  explicit State(std::size_t world) {
    ranks.reserve(world);
    for (std::size_t i = 0; i < world; ++i) ranks.push_back(std::make_unique<Rank>(world));
  }

  std::vector<std::unique_ptr<Rank>> ranks;
};

namespace {

class InprocEndpoint final : public Endpoint {
 public:
  InprocEndpoint(std::shared_ptr<InprocGroup> group, InprocGroup::State& state, RankId rank)
      : group_(std::move(group)), state_(state), rank_(rank) {}

  ~InprocEndpoint() override { shutdown(); }

  RankId rank() const noexcept override { return rank_; }
  std::size_t world_size() const noexcept override { return state_.ranks.size(); }
  std::string_view backend_name() const noexcept override { return "inproc"; }
  std::size_t connected_peers() const noexcept override { return world_size() - 1; }

  void post_send(RankId dst, Tag tag, Bytes payload, SendCallback done) override {
    if (dst.value >= world_size()) {
      throw TransportError(TransportErrc::unknown_rank,
                           "destination " + std::to_string(dst.value));
    }
    auto& self = *state_.ranks[rank_.value];
    if (self.mailbox.closed()) {
      throw TransportError(TransportErrc::shut_down, "send on rank " + std::to_string(rank_.value));
    }
    const bool off_rank = dst != rank_;
    const auto bytes = static_cast<std::uint64_t>(payload.size());
    self.counters.on_send(bytes, off_rank);
    auto& peer = *state_.ranks[dst.value];
    peer.counters.on_receive(bytes, off_rank);
    peer.mailbox.deliver(rank_, tag, std::move(payload));
    done(nullptr);
  }

  void post_recv(RankId src, Tag tag, RecvCallback done) override {
    if (src.value >= world_size()) {
      throw TransportError(TransportErrc::unknown_rank, "source " + std::to_string(src.value));
    }
    state_.ranks[rank_.value]->mailbox.post(src, tag, std::move(done));
  }

  ByteCounters counters() const override {
    return state_.ranks[rank_.value]->counters.snapshot();
  }

  void shutdown() override {
    state_.ranks[rank_.value]->mailbox.close(
        detail::shut_down_error("rank " + std::to_string(rank_.value)));
  }

 private:
  std::shared_ptr<InprocGroup> group_;
  InprocGroup::State& state_;
  RankId rank_;
};

}  // namespace

InprocGroup::InprocGroup(std::size_t world_size)
    : state_(std::make_unique<State>(world_size)) {}

InprocGroup::~InprocGroup() = default;

std::shared_ptr<InprocGroup> InprocGroup::create(std::size_t world_size) {
  if (world_size == 0) throw std::invalid_argument("InprocGroup: world size must be positive");
  return std::make_shared<InprocGroup>(world_size);
}

std::size_t InprocGroup::world_size() const noexcept { return state_->ranks.size(); }

std::unique_ptr<Endpoint> InprocGroup::endpoint(RankId rank) {
  if (rank.value >= world_size()) {
    throw TransportError(TransportErrc::unknown_rank, "rank " + std::to_string(rank.value));
  }
  if (state_->ranks[rank.value]->claimed.exchange(true)) {
    throw std::logic_error("InprocGroup: rank " + std::to_string(rank.value) +
                           " already has an endpoint");
  }
  return std::make_unique<InprocEndpoint>(shared_from_this(), *state_, rank);
}

void InprocGroup::shutdown_all() {
  for (std::size_t r = 0; r < state_->ranks.size(); ++r) {
    state_->ranks[r]->mailbox.close(detail::shut_down_error("group shutdown"));
  }
}

// ---------------------------------------------------------------------------

HostTable::HostTable(std::vector<HostEntry> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const HostEntry& a, const HostEntry& b) { return a.rank < b.rank; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].rank.value != i) {
      throw TransportError(TransportErrc::malformed_hosts,
                           "ranks must be exactly 0.." + std::to_string(entries.size() - 1) +
                               " without duplicates");
    }
    if (entries[i].port == 0) {
      throw TransportError(TransportErrc::malformed_hosts,
                           "rank " + std::to_string(i) + " has port 0");
    }
    if (entries[i].host.empty()) {
      throw TransportError(TransportErrc::malformed_hosts,
                           "rank " + std::to_string(i) + " has an empty host");
    }
  }
  entries_ = std::move(entries);
}

const HostEntry& HostTable::at(RankId r) const {
  if (r.value >= entries_.size()) {
    throw TransportError(TransportErrc::unknown_rank, "rank " + std::to_string(r.value));
  }
  return entries_[r.value];
}

HostTable parse_hostfile(std::istream& in) {
  std::vector<HostEntry> entries;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw TransportError(TransportErrc::malformed_hosts,
                         "line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string rank_text, address, extra;
    if (!(fields >> rank_text)) continue;
    if (!(fields >> address) || (fields >> extra)) fail("expected '<rank> <host>:<port>'");

    std::size_t used = 0;
    unsigned long rank = 0;
    try {
      rank = std::stoul(rank_text, &used);
    } catch (const std::exception&) {
      fail("bad rank '" + rank_text + "'");
    }
    if (used != rank_text.size()) fail("bad rank '" + rank_text + "'");

    const auto colon = address.rfind(':');
    if (colon == std::string::npos || colon == 0) fail("address needs host:port");
    const std::string port_text = address.substr(colon + 1);
    unsigned long port = 0;
    try {
      port = std::stoul(port_text, &used);
    } catch (const std::exception&) {
      fail("bad port '" + port_text + "'");
    }
    if (used != port_text.size() || port < 1 || port > 65535) fail("port out of range");

    if (rank != entries.size()) fail("ranks must ascend from 0 without gaps or duplicates");
    entries.push_back({RankId(static_cast<std::uint32_t>(rank)), address.substr(0, colon),
                       static_cast<std::uint16_t>(port)});
  }
  if (entries.empty()) throw TransportError(TransportErrc::malformed_hosts, "no ranks listed");
  return HostTable(std::move(entries));
}

HostTable load_hostfile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw TransportError(TransportErrc::malformed_hosts, "cannot open " + path.string());
  }
  return parse_hostfile(in);
}

}  // namespace collfft
