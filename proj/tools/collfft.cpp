// collfft: distributed 2D FFT and collective benchmarks.
//
//   collfft [launch] --transport inproc|tcp --ranks P [--hostfile F --rank R]
//           [--inject-latency MS] <fft|bench-chunk|bench-strong> ...
//
// Exit codes: 0 success, 1 verification or runtime failure, 2 usage error,
// 3 transport failure.

#include "collfft/bench.hpp"
#include "collfft/dist_fft.hpp"
#include "collfft/launch.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitTransport = 3;

constexpr double kVerifyTolerance = 1e-8;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Context {
  std::string transport = "inproc";
  std::size_t ranks = 1;
  std::string hostfile;
  int rank = -1;
  double latency_ms = 0.0;
};

collfft::WorldOptions world_options(const Context& ctx, bool ranks_given) {
  collfft::WorldOptions opts;
  auto backend = collfft::parse_backend(ctx.transport);
  if (!backend) throw UsageError("unknown transport '" + ctx.transport + "'");
  opts.backend = *backend;
  if (ctx.latency_ms < 0) throw UsageError("--inject-latency must be non-negative");
  opts.latency = std::chrono::duration_cast<std::chrono::nanoseconds>(
      std::chrono::duration<double, std::milli>(ctx.latency_ms));

  if (opts.backend == collfft::Backend::inproc) {
    if (!ctx.hostfile.empty() || ctx.rank >= 0) {
      throw UsageError("--hostfile and --rank only apply to --transport tcp");
    }
    if (ctx.ranks == 0) throw UsageError("--ranks must be positive");
    opts.ranks = ctx.ranks;
    return opts;
  }

  if (ctx.hostfile.empty()) {
    // No host table: host every rank in this process over loopback.
    if (ctx.rank >= 0) throw UsageError("--rank needs --hostfile");
    opts.hosts = collfft::loopback_hosts(ctx.ranks);
  } else {
    opts.hosts = collfft::load_hostfile(ctx.hostfile);
  }
  if (ranks_given && ctx.ranks != opts.hosts->size()) {
    throw UsageError(fmt::format("--ranks {} disagrees with the host table ({} ranks)", ctx.ranks,
                                 opts.hosts->size()));
  }
  opts.ranks = opts.hosts->size();
  if (ctx.rank >= 0) {
    if (static_cast<std::size_t>(ctx.rank) >= opts.ranks) {
      throw UsageError(fmt::format("--rank {} outside host table", ctx.rank));
    }
    opts.local_rank = collfft::RankId(static_cast<std::uint32_t>(ctx.rank));
  }
  return opts;
}

collfft::Strategy strategy_from(const std::string& name) {
  auto s = collfft::parse_strategy(name);
  if (!s) throw UsageError("unknown strategy '" + name + "'");
  return *s;
}

void write_results(const std::vector<collfft::BenchRecord>& records, const std::string& out) {
  const auto summaries = collfft::summarize_records(records);
  collfft::write_csv(records, summaries, out);
  for (const auto& s : summaries) {
    fmt::print("{} {} {} P={} param={} runs={} mean={:.6e}s ci95=±{:.3e}s\n",
               collfft::to_string(s.experiment), s.transport, s.strategy, s.world_size, s.param,
               s.stat.runs, s.stat.mean_seconds, s.stat.ci95_half_width);
  }
  fmt::print("wrote {}.runs.csv and {}.summary.csv\n", out, out);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (!args.empty() && args.front() == "launch") args.erase(args.begin());
  std::reverse(args.begin(), args.end());

  CLI::App app{"Distributed 2D FFT over pluggable transports, with collective benchmarks"};
  app.fallthrough();
  app.require_subcommand(1);

  Context ctx;
  app.add_option("--transport", ctx.transport, "Message backend: inproc or tcp")
      ->check(CLI::IsMember({"inproc", "tcp"}));
  auto* ranks_opt = app.add_option("--ranks", ctx.ranks, "Number of ranks");
  app.add_option("--hostfile", ctx.hostfile, "tcp host table: '<rank> <host>:<port>' per line");
  app.add_option("--rank", ctx.rank, "tcp: the rank this process hosts");
  app.add_option("--inject-latency", ctx.latency_ms, "Defer every message by this many ms");

  // fft
  auto* fft = app.add_subcommand("fft", "Run one distributed 2D FFT");
  std::size_t fft_side = 64;
  std::string fft_strategy = "alltoall";
  std::uint64_t fft_seed = 42;
  bool fft_verify = false;
  fft->add_option("--side", fft_side, "Matrix side (power of two)");
  fft->add_option("--strategy", fft_strategy, "alltoall or scatter")
      ->check(CLI::IsMember({"alltoall", "scatter"}));
  fft->add_option("--seed", fft_seed, "Input generator seed");
  fft->add_flag("--verify", fft_verify, "Compare against a serial transform");

  // bench-chunk
  auto* chunk = app.add_subcommand("bench-chunk", "Chunk-size scaling between two ranks");
  std::string chunk_sizes = "2^10..2^26";
  collfft::BenchOptions chunk_opts;
  std::string chunk_out = "chunk";
  chunk->add_option("--sizes", chunk_sizes, "2^a..2^b or a comma list of byte counts");
  chunk->add_option("--runs", chunk_opts.runs, "Timed runs per size");
  chunk->add_option("--warmup", chunk_opts.warmup, "Untimed runs per size");
  chunk->add_option("--out", chunk_out, "Output prefix for the CSV files");

  // bench-strong
  auto* strong = app.add_subcommand("bench-strong", "Strong scaling of the distributed FFT");
  std::size_t strong_side = 256;
  std::string strong_strategy = "alltoall";
  collfft::BenchOptions strong_opts;
  std::string strong_out = "strong";
  strong->add_option("--side", strong_side, "Matrix side (power of two)");
  strong->add_option("--strategy", strong_strategy, "alltoall or scatter")
      ->check(CLI::IsMember({"alltoall", "scatter"}));
  strong->add_option("--runs", strong_opts.runs, "Timed runs");
  strong->add_option("--warmup", strong_opts.warmup, "Untimed runs");
  strong->add_option("--seed", strong_opts.seed, "Base input seed");
  strong->add_option("--out", strong_out, "Output prefix for the CSV files");

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const auto world = world_options(ctx, ranks_opt->count() > 0);

    if (fft->parsed()) {
      const auto strategy = strategy_from(fft_strategy);
      const collfft::Decomposition d{world.ranks, fft_side, fft_side};
      try {
        d.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      std::atomic<bool> failed{false};
      collfft::run_world(world, [&](collfft::Communicator& comm) {
        const bool root = comm.rank().value == 0;
        if (fft_verify) {
          const double err = collfft::verify_dist(comm, fft_side, fft_side, strategy, fft_seed);
          if (root) {
            fmt::print("max_rel_error {:.3e}\n", err);
            if (!(err <= kVerifyTolerance)) failed = true;
          }
          return;
        }
        const std::size_t lr = d.local_rows();
        collfft::Slab slab{d, comm.rank(), collfft::SlabLayout::rows,
                           collfft::random_matrix(lr, fft_side, fft_seed, comm.rank().value * lr)};
        comm.barrier().get();
        const auto start = std::chrono::steady_clock::now();
        auto result = collfft::fft2_dist(comm, std::move(slab), strategy);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (root) {
          fmt::print("fft side={} ranks={} transport={} strategy={} rank0_seconds={:.6e}\n",
                     fft_side, comm.size(), comm.endpoint().backend_name(), fft_strategy, secs);
        }
      });
      if (failed) {
        std::fprintf(stderr, "verification failed: error above %.0e\n", kVerifyTolerance);
        return kExitFailed;
      }
      return kExitOk;
    }

    if (chunk->parsed()) {
      std::vector<std::uint64_t> sizes;
      try {
        sizes = collfft::parse_sizes(chunk_sizes);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (world.ranks != 2) throw UsageError("bench-chunk needs --ranks 2");
      if (chunk_opts.runs < 2) throw UsageError("--runs must be at least 2");
      collfft::run_world(world, [&](collfft::Communicator& comm) {
        auto records = collfft::bench_chunk_size(comm, sizes, chunk_opts);
        if (comm.rank().value == 0) write_results(records, chunk_out);
      });
      return kExitOk;
    }

    if (strong->parsed()) {
      const auto strategy = strategy_from(strong_strategy);
      try {
        collfft::Decomposition{world.ranks, strong_side, strong_side}.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (strong_opts.runs < 2) throw UsageError("--runs must be at least 2");
      collfft::run_world(world, [&](collfft::Communicator& comm) {
        auto records = collfft::bench_strong(comm, strong_side, strategy, strong_opts);
        if (comm.rank().value == 0) write_results(records, strong_out);
      });
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const collfft::TransportError& e) {
    std::fprintf(stderr, "transport failure: %s\n", e.what());
    return kExitTransport;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailed;
  }
  return kExitUsage;
}
