// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// the number of failed criteria (0 when everything passes).

#include "collfft/bench.hpp"
#include "collfft/dist_fft.hpp"
#include "collfft/fft_kernel.hpp"
#include "collfft/launch.hpp"

#include <fmt/format.h>

#include <spawn.h>
#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <vector>

extern char** environ;

namespace {

using namespace collfft;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(std::string why) {
    if (pass) detail = std::move(why);
    pass = false;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

WorldOptions world(Backend backend, std::size_t ranks,
                   std::chrono::nanoseconds latency = std::chrono::nanoseconds{0}) {
  WorldOptions o;
  o.backend = backend;
  o.ranks = ranks;
  o.latency = latency;
  if (backend == Backend::tcp) o.hosts = loopback_hosts(ranks);
  return o;
}

Vector row_vector(std::size_t n, std::uint64_t seed) {
  return random_matrix(1, n, seed).row(0).transpose();
}

// ---------------------------------------------------------------------------

Outcome fft_oracle_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> coeff(-3.0, 3.0);
  double worst_oracle = 0, worst_parseval = 0, worst_linear = 0;
  int cases = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (std::size_t n = 1; n <= 4096; n <<= 1) {
      const Vector x = row_vector(n, seed);
      const Vector y = row_vector(n, seed + 1000);
      const Vector fx = fft_pow2(x);
      const Vector fy = fft_pow2(y);
      worst_oracle = std::max(worst_oracle, max_rel_error(fx, dft_naive(x)));

      const double e = x.squaredNorm();
      worst_parseval = std::max(worst_parseval,
                                std::abs(e - fx.squaredNorm() / static_cast<double>(n)) / e);

      const ComplexSample a{coeff(rng), coeff(rng)}, b{coeff(rng), coeff(rng)};
      const Vector combo = a * x + b * y;
      const Vector expect = a * fx + b * fy;
      worst_linear = std::max(worst_linear, max_rel_error(fft_pow2(combo), expect));
      ++cases;
    }
  }
  const double secs = seconds_since(t0);
  o.detail = fmt::format("{} cases, oracle {:.2e}, parseval {:.2e}, linearity {:.2e}, {:.1f} s",
                         cases, worst_oracle, worst_parseval, worst_linear, secs);
  if (worst_oracle > 1e-10) o.fail("oracle error too large: " + o.detail);
  if (worst_parseval > 1e-10) o.fail("Parseval violated: " + o.detail);
  if (worst_linear > 1e-10) o.fail("linearity violated: " + o.detail);
  if (secs >= 30.0) o.fail("too slow: " + o.detail);
  return o;
}

Outcome distributed_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0;
  int cases = 0;
  for (Backend b : {Backend::inproc, Backend::tcp}) {
    for (std::size_t P : {1u, 2u, 4u}) {
      std::mutex m;
      run_world(world(b, P), [&](Communicator& comm) {
        for (std::size_t side : {8u, 16u, 32u, 64u}) {
          for (Strategy s : {Strategy::alltoall, Strategy::scatter}) {
            const double err = verify_dist(comm, side, side, s, side + P);
            if (comm.rank().value == 0) {
              std::lock_guard lock(m);
              worst = std::max(worst, err);
              ++cases;
              if (!(err <= 1e-10)) {
                o.fail(fmt::format("{} P={} side={} {}: error {:.3e}", to_string(b), P, side,
                                   to_string(s), err));
              }
            }
          }
        }
      });
    }
  }
  const double secs = seconds_since(t0);
  if (o.pass) o.detail = fmt::format("{} cases, worst {:.2e}, {:.1f} s", cases, worst, secs);
  if (secs >= 60.0) o.fail(fmt::format("too slow: {:.1f} s", secs));
  return o;
}

Outcome strategy_equality() {
  Outcome o;
  struct Config {
    std::size_t P, R, C;
    std::uint64_t seed;
  };
  std::mt19937_64 rng(2718);
  std::vector<Config> configs;
  const std::size_t ps[] = {1, 2, 4, 8};
  while (configs.size() < 12) {
    const std::size_t P = ps[rng() % 4];
    const std::size_t R = std::size_t{8} << (rng() % 4);
    const std::size_t C = std::size_t{8} << (rng() % 4);
    configs.push_back({P, R, C, rng()});
  }
  for (const auto& c : configs) {
    const Decomposition d{c.P, c.R, c.C};
    std::atomic<bool> equal{true};
    run_world(world(Backend::inproc, c.P), [&](Communicator& comm) {
      const std::size_t lr = d.local_rows();
      const Matrix block = random_matrix(lr, c.C, c.seed, comm.rank().value * lr);
      const auto a = fft2_dist(comm, Slab{d, comm.rank(), SlabLayout::rows, block}, Strategy::alltoall);
      const auto s = fft2_dist(comm, Slab{d, comm.rank(), SlabLayout::rows, block}, Strategy::scatter);
      if (serialize(a.spectrum.data) != serialize(s.spectrum.data)) equal = false;
    });
    if (!equal) o.fail(fmt::format("differs at P={} R={} C={} seed={}", c.P, c.R, c.C, c.seed));
  }
  if (o.pass) o.detail = fmt::format("{} configurations bitwise identical", configs.size());
  return o;
}

Outcome volume_formula() {
  Outcome o;
  std::vector<std::string> seen;
  struct Config {
    std::size_t P, side;
  };
  for (Config c : {Config{2, 16}, Config{4, 8}, Config{4, 32}, Config{8, 64}}) {
    for (Strategy s : {Strategy::alltoall, Strategy::scatter}) {
      const Decomposition d{c.P, c.side, c.side};
      std::atomic<std::uint64_t> total{0};
      run_world(world(Backend::inproc, c.P), [&](Communicator& comm) {
        const std::size_t lr = d.local_rows();
        Slab slab{d, comm.rank(), SlabLayout::rows,
                  random_matrix(lr, c.side, 5, comm.rank().value * lr)};
        const auto before = comm.endpoint().counters().off_rank_payload_sent;
        fft2_dist(comm, std::move(slab), s);
        total += comm.endpoint().counters().off_rank_payload_sent - before;
      });
      const std::uint64_t expected = comm_volume_expected(d);
      if (total != expected) {
        o.fail(fmt::format("P={} side={} {}: measured {} expected {}", c.P, c.side, to_string(s),
                           total.load(), expected));
      }
      if (c.P == 4 && c.side == 8 && total != 768) o.fail("P=4 8x8 is not 768 bytes");
      seen.push_back(fmt::format("P={}/{}:{}", c.P, c.side, total.load()));
    }
  }
  if (o.pass) o.detail = fmt::format("exact for {} runs, P=4 8x8 = 768 B", seen.size());
  return o;
}

Outcome collective_substitution() {
  Outcome o;
  int cases = 0;
  std::mt19937_64 seeds(31415);
  for (std::size_t P : {1u, 2u, 3u, 4u, 8u}) {
    const std::uint64_t base = seeds();
    std::atomic<int> mismatches{0};
    constexpr int kCases = 24;
    run_world(world(Backend::inproc, P), [&](Communicator& comm) {
      const std::uint32_t me = comm.rank().value;
      for (int k = 0; k < kCases; ++k) {
        // Every rank derives the whole input matrix from the same seed.
        std::mt19937_64 rng(base + static_cast<std::uint64_t>(k));
        std::vector<std::vector<Bytes>> input(P, std::vector<Bytes>(P));
        for (auto& row : input) {
          for (auto& chunk : row) {
            chunk.resize(rng() % 2048);
            for (auto& byte : chunk) byte = static_cast<std::byte>(rng());
          }
        }
        const auto a2a = comm.all_to_all(input[me]).get();
        std::vector<std::future<Bytes>> parts;
        for (std::uint32_t root = 0; root < P; ++root) {
          parts.push_back(comm.scatter(RankId(root), root == me ? input[me] : std::vector<Bytes>{}));
        }
        for (std::uint32_t root = 0; root < P; ++root) {
          const Bytes got = parts[root].get();
          if (got != a2a[root] || got != input[root][me]) ++mismatches;
        }
      }
    });
    cases += kCases;
    if (mismatches) o.fail(fmt::format("P={}: {} mismatching chunks", P, mismatches.load()));
  }
  if (o.pass) o.detail = fmt::format("{} cases over P in {{1,2,3,4,8}}", cases);
  return o;
}

Outcome overlap_traces() {
  Outcome o;
  constexpr int kRepetitions = 10;
  constexpr std::size_t P = 4;
  constexpr std::size_t side = 64;
  int scatter_ok = 0, alltoall_ok = 0;
  for (int rep = 0; rep < kRepetitions; ++rep) {
    for (Strategy s : {Strategy::scatter, Strategy::alltoall}) {
      const Decomposition d{P, side, side};
      std::atomic<bool> any_overlap{false};
      run_world(world(Backend::inproc, P, 50ms), [&](Communicator& comm) {
        const std::size_t lr = d.local_rows();
        Slab slab{d, comm.rank(), SlabLayout::rows,
                  random_matrix(lr, side, 100 + rep, comm.rank().value * lr)};
        const auto res = fft2_dist(comm, std::move(slab), s);
        TraceClock::time_point last_comm{};
        for (const auto& e : res.trace) {
          if (e.phase == Phase::comm) last_comm = std::max(last_comm, e.end);
        }
        for (const auto& e : res.trace) {
          if (e.phase == Phase::transpose && e.start < last_comm) any_overlap = true;
        }
      });
      if (s == Strategy::scatter && any_overlap) ++scatter_ok;
      if (s == Strategy::alltoall && !any_overlap) ++alltoall_ok;
    }
  }
  o.detail = fmt::format("scatter overlapped {}/{}, alltoall sequenced {}/{}", scatter_ok,
                         kRepetitions, alltoall_ok, kRepetitions);
  if (scatter_ok != kRepetitions || alltoall_ok != kRepetitions) o.fail(o.detail);
  return o;
}

Outcome wire_protocol() {
  Outcome o;
  std::mt19937_64 rng(1000);
  int frames = 0, rejected = 0;
  for (; frames < 1000; ++frames) {
    Frame f;
    f.src = static_cast<std::uint32_t>(rng());
    f.dst = static_cast<std::uint32_t>(rng());
    f.tag = rng();
    f.payload.resize(rng() % 4096);
    for (auto& b : f.payload) b = static_cast<std::byte>(rng());
    const Bytes wire = encode_frame(f);
    if (wire.size() != 29 + f.payload.size()) o.fail("encoded length is not 29 + payload");
    if (decode_frame(wire) != f) o.fail("round-trip mismatch");

    Bytes corrupt = wire;
    corrupt[rng() % 4] ^= std::byte{static_cast<unsigned char>(1 + rng() % 255)};
    try {
      decode_frame(corrupt);
      o.fail("corrupted magic accepted");
    } catch (const TransportError& e) {
      if (e.code() != TransportErrc::bad_magic) o.fail("corrupted magic: wrong error");
      ++rejected;
    }

    const std::size_t cut = rng() % wire.size();
    try {
      decode_frame(std::span(wire.data(), cut));
      o.fail(fmt::format("truncation to {} of {} bytes accepted", cut, wire.size()));
    } catch (const TransportError& e) {
      if (e.code() != TransportErrc::truncated) o.fail("truncation: wrong error");
      ++rejected;
    }
  }
  if (o.pass) o.detail = fmt::format("{} frames round-tripped, {} corruptions rejected", frames, rejected);
  return o;
}

Outcome benchmark_statistics() {
  Outcome o;
  const double pair[] = {1.0, 3.0};
  const auto two = summarize(pair);
  if (two.mean_seconds != 2.0 || std::abs(two.ci95_half_width - 12.706205) > 1e-6) {
    o.fail(fmt::format("[1,3]: mean {} half-width {}", two.mean_seconds, two.ci95_half_width));
  }
  const double five[] = {0.12, 0.15, 0.11, 0.19, 0.13};
  const auto f = summarize(five);
  if (std::abs(f.mean_seconds - 0.14) > 1e-12 ||
      std::abs(f.ci95_half_width - 0.03926486322955121) > 1e-7) {
    o.fail(fmt::format("5 samples: mean {} half-width {}", f.mean_seconds, f.ci95_half_width));
  }
  const double t49 = t_quantile_975(49);
  if (std::abs(t49 - 2.0096) > 5e-5) o.fail(fmt::format("t(0.975, 49) = {}", t49));

  std::vector<double> xs(50);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = 0.01 * static_cast<double>(1 + i % 7);
  const auto fifty = summarize(xs);
  double mean = 0, ss = 0;
  for (double x : xs) mean += x / 50;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double expect = 2.009575 * std::sqrt(ss / 49) / std::sqrt(50.0);
  if (std::abs(fifty.ci95_half_width - expect) > 1e-9 * expect + 1e-15) {
    o.fail("50-sample half-width does not use t(49)");
  }

  const std::vector<double> constant(50, 0.0375);
  const auto c = summarize(constant);
  if (c.mean_seconds != 0.0375 || c.ci95_half_width != 0.0) o.fail("constant samples");
  if (kDefaultRuns != 50 || BenchOptions{}.runs != 50) o.fail("default runs is not 50");
  if (o.pass) o.detail = fmt::format("t(49) = {:.6f}, constant half-width 0, default runs {}", t49, kDefaultRuns);
  return o;
}

// ---------------------------------------------------------------------------
// End-to-end

pid_t spawn(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0) return -1;
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  if (pid < 0 || waitpid(pid, &status, 0) != pid) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string check_csv(const std::filesystem::path& prefix, const std::string& transport,
                      std::size_t P) {
  const auto runs = read_runs_csv(prefix.string() + ".runs.csv");
  const auto summary = read_summary_csv(prefix.string() + ".summary.csv");
  if (runs.size() != 50) return fmt::format("{} run rows, want 50", runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    if (r.experiment != Experiment::strong || r.transport != transport || r.world_size != P ||
        r.param != 256 || r.run_index != i || !(r.seconds > 0)) {
      return fmt::format("bad run row {}", i);
    }
  }
  if (summary.size() != 1 || summary[0].stat.runs != 50 || !(summary[0].stat.mean_seconds > 0) ||
      !(summary[0].stat.ci95_half_width >= 0)) {
    return "bad summary";
  }
  return {};
}

Outcome end_to_end_smoke() {
  Outcome o;
  const std::string cli = COLLFFT_CLI;
  const auto dir = std::filesystem::temp_directory_path() / "collfft_acceptance";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto t0 = Clock::now();

  const auto inproc = dir / "inproc";
  const int rc = wait_exit(spawn({cli, "--transport", "inproc", "--ranks", "4", "bench-strong",
                                  "--side", "256", "--out", inproc.string()}));
  if (rc != 0) {
    o.fail(fmt::format("inproc P=4 exited {}", rc));
  } else if (auto why = check_csv(inproc, "inproc", 4); !why.empty()) {
    o.fail("inproc P=4: " + why);
  }

  const HostTable hosts = loopback_hosts(2);
  const auto hostfile = dir / "hosts.txt";
  {
    std::ofstream out(hostfile);
    out << "# loopback pair\n";
    for (const auto& e : hosts.entries()) out << e.rank.value << ' ' << e.host << ':' << e.port << '\n';
  }
  std::vector<pid_t> ranks;
  const auto tcp = dir / "tcp";
  for (int r = 0; r < 2; ++r) {
    ranks.push_back(spawn({cli, "--transport", "tcp", "--hostfile", hostfile.string(), "--rank",
                           std::to_string(r), "bench-strong", "--side", "256", "--out",
                           (r == 0 ? tcp : dir / "tcp_rank1").string()}));
  }
  for (std::size_t r = 0; r < ranks.size(); ++r) {
    const int code = wait_exit(ranks[r]);
    if (code != 0) o.fail(fmt::format("tcp rank {} exited {}", r, code));
  }
  if (o.pass) {
    if (auto why = check_csv(tcp, "tcp", 2); !why.empty()) o.fail("tcp P=2: " + why);
  }

  const double secs = seconds_since(t0);
  if (secs >= 120.0) o.fail(fmt::format("too slow: {:.1f} s", secs));
  if (o.pass) o.detail = fmt::format("inproc P=4 and tcp P=2 each wrote 50 rows, {:.1f} s", secs);
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"fft-oracle-suite", fft_oracle_suite},
      {"distributed-correctness", distributed_correctness},
      {"strategy-equality", strategy_equality},
      {"volume-formula", volume_formula},
      {"collective-substitution", collective_substitution},
      {"overlap-synchronization-traces", overlap_traces},
      {"wire-protocol", wire_protocol},
      {"benchmark-statistics", benchmark_statistics},
      {"end-to-end-smoke", end_to_end_smoke},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    if (!o.pass) ++failed;
    fmt::print("{} {}: {}\n", o.pass ? "PASS" : "FAIL", c.name, o.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", std::size(criteria) - failed, std::size(criteria));
  return failed;
}
