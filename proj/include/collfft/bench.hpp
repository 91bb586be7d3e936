#pragma once

// Benchmark harness: chunk-size scaling over two ranks, strong scaling of
// the distributed FFT, run statistics and CSV output.

#include "collfft/collectives.hpp"
#include "collfft/dist_fft.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace collfft {

enum class Experiment { chunk, strong };
std::string_view to_string(Experiment e) noexcept;

inline constexpr std::size_t kDefaultRuns = 50;
inline constexpr std::size_t kDefaultWarmup = 5;

struct BenchOptions {
  std::size_t runs = kDefaultRuns;
  /// Untimed repetitions per configuration, excluded from the records.
  std::size_t warmup = kDefaultWarmup;
  std::uint64_t seed = 42;
};

struct BenchRecord {
  Experiment experiment = Experiment::chunk;
  std::string transport;
  std::string strategy;
  std::size_t world_size = 0;
  /// chunk bytes, or matrix side
  std::uint64_t param = 0;
  std::size_t run_index = 0;
  double seconds = 0.0;

  friend bool operator==(const BenchRecord&, const BenchRecord&) = default;
};

struct SummaryStat {
  double mean_seconds = 0.0;
  double ci95_half_width = 0.0;
  std::size_t runs = 0;
};

struct SummaryRow {
  Experiment experiment = Experiment::chunk;
  std::string transport;
  std::string strategy;
  std::size_t world_size = 0;
  std::uint64_t param = 0;
  SummaryStat stat;
};

/// Two ranks each root a scatter carrying `size` bytes to the other, so the
/// link carries one one-way stream per direction. One record per run: the
/// slower rank's duration. Every rank returns the same records.
std::vector<BenchRecord> bench_chunk_size(Communicator& comm, std::span<const std::uint64_t> sizes,
                                          const BenchOptions& options = {});

/// Times fft2_dist on a side x side input. Run k uses seed + k. One record
/// per run: the slowest rank's duration. Every rank returns the same records.
std::vector<BenchRecord> bench_strong(Communicator& comm, std::size_t side, Strategy strategy,
                                      const BenchOptions& options = {});

/// 0.975 quantile of Student's t. Tabulated for dof 1..30, 40, 49, 50, 60,
/// 100 and infinity (pass SIZE_MAX); other dof use the nearest tabulated
/// dof below.
double t_quantile_975(std::size_t dof);

/// Sample mean and Student-t 95% half-width. Needs at least two samples.
SummaryStat summarize(std::span<const double> seconds);

/// Groups records by configuration (first-appearance order) and summarizes each.
std::vector<SummaryRow> summarize_records(std::span<const BenchRecord> records);

inline constexpr std::string_view kRunsCsvHeader =
    "experiment,transport,strategy,world_size,param,run_index,seconds";
inline constexpr std::string_view kSummaryCsvHeader =
    "experiment,transport,strategy,world_size,param,runs,mean_seconds,ci95_half_width";

/// Writes `<prefix>.runs.csv` and `<prefix>.summary.csv`.
void write_csv(std::span<const BenchRecord> records, std::span<const SummaryRow> summaries,
               const std::filesystem::path& prefix);

std::vector<BenchRecord> read_runs_csv(const std::filesystem::path& path);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

/// Fixed-point decimal, 17 significant digits with trailing zeros dropped,
/// so doubles round-trip.
std::string format_decimal(double value);

/// Accepts "2^a..2^b" (every power of two in range), "n" or "n,m,...";
/// list items may themselves be "2^k".
std::vector<std::uint64_t> parse_sizes(std::string_view text);

}  // namespace collfft
