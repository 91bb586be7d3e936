#pragma once

// Brings up a world of ranks and runs a body on each one hosted by this
// process.

#include "collfft/collectives.hpp"
#include "collfft/transport.hpp"

#include <chrono>
#include <functional>
#include <optional>

namespace collfft {

struct WorldOptions {
  Backend backend = Backend::inproc;
  /// inproc: number of worker threads. tcp: must match the host table.
  std::size_t ranks = 1;
  /// Wraps every endpoint in delay_wrap when positive.
  std::chrono::nanoseconds latency{0};
  /// tcp only.
  std::optional<HostTable> hosts;
  /// tcp only: the single rank this process hosts. Unset hosts every rank
  /// of the table in this process (loopback testing).
  std::optional<RankId> local_rank;
  TcpOptions tcp;
};

using RankBody = std::function<void(Communicator&)>;

/// Runs `body` on every rank hosted here, then a closing barrier, then
/// shuts the endpoints down. If any rank throws, all local endpoints are
/// shut down so the others unblock, and the first exception is rethrown.
void run_world(const WorldOptions& options, const RankBody& body);

/// `ranks` entries on 127.0.0.1 with ports the kernel reported free.
HostTable loopback_hosts(std::size_t ranks);

}  // namespace collfft
