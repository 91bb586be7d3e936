#pragma once

// Shared oracles, generators and world builders for the test binaries.

#include "collfft/collectives.hpp"
#include "collfft/dist_fft.hpp"
#include "collfft/fft_kernel.hpp"
#include "collfft/launch.hpp"
#include "collfft/transport.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace collfft::test {

inline Bytes bytes(std::string_view s) {
  Bytes out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<std::byte>(s[i]);
  return out;
}

inline std::string text(const Bytes& b) {
  std::string out(b.size(), '\0');
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = static_cast<char>(b[i]);
  return out;
}

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::byte>(rng() & 0xFF);
  return out;
}

/// Direct evaluation of the 2D DFT sum; independent of the 1D kernels.
inline Matrix naive_dft2(const Matrix& x) {
  const auto R = static_cast<std::size_t>(x.rows());
  const auto C = static_cast<std::size_t>(x.cols());
  Matrix out(R, C);
  for (std::size_t u = 0; u < R; ++u) {
    for (std::size_t v = 0; v < C; ++v) {
      long double re = 0, im = 0;
      for (std::size_t j = 0; j < R; ++j) {
        for (std::size_t k = 0; k < C; ++k) {
          const long double phase = -2.0L * std::numbers::pi_v<long double> *
                                    (static_cast<long double>((u * j) % R) / R +
                                     static_cast<long double>((v * k) % C) / C);
          const long double c = std::cos(phase), s = std::sin(phase);
          const long double xr = x(j, k).real(), xi = x(j, k).imag();
          re += xr * c - xi * s;
          im += xr * s + xi * c;
        }
      }
      out(u, v) = {static_cast<double>(re), static_cast<double>(im)};
    }
  }
  return out;
}

inline Vector random_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Vector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = {d(rng), d(rng)};
  return v;
}

/// A full world of endpoints in this process, on either backend.
struct World {
  std::vector<std::unique_ptr<Endpoint>> eps;

  World() = default;
  World(World&&) = default;
  World& operator=(World&&) = delete;

  Endpoint& operator[](std::size_t r) { return *eps[r]; }
  std::size_t size() const { return eps.size(); }

  /// Concurrent, so tcp ranks see each other's EOF instead of lingering.
  void shutdown_all() {
    std::vector<std::thread> threads;
    for (auto& ep : eps) {
      if (ep) threads.emplace_back([&ep] { ep->shutdown(); });
    }
    for (auto& t : threads) t.join();
  }

  ~World() { shutdown_all(); }
};

inline World make_world(Backend backend, std::size_t n,
                        std::chrono::nanoseconds latency = std::chrono::nanoseconds{0}) {
  World w;
  w.eps.resize(n);
  if (backend == Backend::inproc) {
    auto group = InprocGroup::create(n);
    for (std::uint32_t r = 0; r < n; ++r) w.eps[r] = group->endpoint(RankId(r));
  } else {
    const HostTable hosts = loopback_hosts(n);
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(n);
    for (std::uint32_t r = 0; r < n; ++r) {
      threads.emplace_back([&, r] {
        try {
          w.eps[r] = connect_tcp(RankId(r), hosts);
        } catch (...) {
          errors[r] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (auto& ep : w.eps) ep = delay_wrap(std::move(ep), latency);
  return w;
}

/// Runs body(rank, communicator) on one thread per rank of `world`.
template <typename Body>
void run_ranks(World& world, Body body) {
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(world.size());
  for (std::uint32_t r = 0; r < world.size(); ++r) {
    threads.emplace_back([&, r] {
      try {
        Communicator comm(world[r]);
        body(r, comm);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && serialize(a) == serialize(b);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace collfft::test
