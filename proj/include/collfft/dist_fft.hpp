#pragma once

// Slab-decomposed distributed 2D FFT.
//
// Each rank owns R/P contiguous rows. One forward transform runs
//   fft1 -> chunk -> comm -> transpose -> fft2
// and leaves the spectrum in transposed layout: rank p's local row u holds
// spectrum column p*C/P + u.

#include "collfft/collectives.hpp"
#include "collfft/fft_kernel.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace collfft {

enum class Strategy {
  /// One synchronized all-to-all, then transpose every chunk.
  alltoall,
  /// P concurrent scatters; each chunk is transposed as soon as it lands.
  scatter,
};

std::string_view to_string(Strategy s) noexcept;
std::optional<Strategy> parse_strategy(std::string_view name) noexcept;

struct Decomposition {
  std::size_t world_size = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;

  /// Throws std::invalid_argument unless rows and cols are powers of two
  /// divisible by world_size.
  void validate() const;

  std::size_t local_rows() const noexcept { return rows / world_size; }
  std::size_t local_cols() const noexcept { return cols / world_size; }
  std::size_t chunk_bytes() const noexcept {
    return local_rows() * local_cols() * sizeof(ComplexSample);
  }

  friend bool operator==(const Decomposition&, const Decomposition&) = default;
};

enum class SlabLayout {
  /// owner's R/P rows of the R x C input
  rows,
  /// owner's C/P rows of the C x R transpose
  transposed,
};

struct Slab {
  Decomposition decomp;
  RankId owner;
  SlabLayout layout = SlabLayout::rows;
  Matrix data;

  static Slab zeros(const Decomposition& d, RankId owner, SlabLayout layout);

  std::size_t global_row_offset() const noexcept {
    const std::size_t per_rank =
        layout == SlabLayout::rows ? decomp.local_rows() : decomp.local_cols();
    return owner.value * per_rank;
  }
};

enum class Phase { fft1, chunk, comm, transpose, fft2 };
std::string_view to_string(Phase p) noexcept;

using TraceClock = std::chrono::steady_clock;

struct PhaseEvent {
  Phase phase;
  RankId rank;
  TraceClock::time_point start;
  TraceClock::time_point end;
};

using ChunkSet = std::vector<Bytes>;

/// Chunk j holds columns [j*C/P, (j+1)*C/P) of every local row, row-major,
/// as little-endian (re, im) float64 pairs.
ChunkSet chunk_rows(const Slab& slab);

/// Places the chunk that rank `source` addressed to this rank: element
/// (i, j) lands at (j, source*R/P + i). `dest` must be in transposed layout.
void transpose_chunk_into(Slab& dest, std::span<const std::byte> chunk, RankId source);

struct DistResult {
  Slab spectrum;
  std::vector<PhaseEvent> trace;
};

/// Collective; every rank passes its own slab and the same strategy.
DistResult fft2_dist(Communicator& comm, Slab slab, Strategy strategy);

/// Total off-rank payload for one communication step: (1 - 1/P) * R * C * 16.
std::uint64_t comm_volume_expected(const Decomposition& d) noexcept;

/// Correctness harness. Rank 0 builds the global input (from `seed`, or the
/// given matrix), distributes row blocks, runs fft2_dist, collects and
/// untransposes the result and compares it with fft2_serial. Every rank
/// returns rank 0's max relative error.
double verify_dist(Communicator& comm, std::size_t rows, std::size_t cols, Strategy strategy,
                   std::uint64_t seed);
double verify_dist(Communicator& comm, std::size_t rows, std::size_t cols, Strategy strategy,
                   const Matrix* global_on_root);

// ---------------------------------------------------------------------------
// Deterministic input generation and sample serialization

/// xorshift64* seeded through splitmix64. Samples are uniform in [-1, 1).
class Xorshift64Star {
 public:
  explicit Xorshift64Star(std::uint64_t seed) noexcept;
  std::uint64_t next() noexcept;
  double uniform() noexcept;

 private:
  std::uint64_t state_;
};

/// Rows [row_offset, row_offset + rows) of the global matrix defined by
/// `seed`. Each global row has its own generator stream (seeded from seed
/// and the row index), so any rank can build its block independently.
/// Within a row, samples are drawn re then im, left to right.
Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     std::size_t row_offset = 0);

Bytes serialize(const Matrix& m);
/// Reads rows x cols samples; throws std::invalid_argument on size mismatch.
Matrix deserialize(std::span<const std::byte> bytes, std::size_t rows, std::size_t cols);

}  // namespace collfft
