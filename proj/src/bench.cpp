#include "collfft/bench.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <tuple>

namespace collfft {

namespace {

using Clock = std::chrono::steady_clock;

struct TEntry {
  std::size_t dof;
  double t;
};

// Student's t, two-sided 95% (0.975 quantile).
constexpr std::array<TEntry, 35> kTTable{{
    {1, 12.706205}, {2, 4.302653},  {3, 3.182446},  {4, 2.776445},  {5, 2.570582},
    {6, 2.446912},  {7, 2.364624},  {8, 2.306004},  {9, 2.262157},  {10, 2.228139},
    {11, 2.200985}, {12, 2.178813}, {13, 2.160369}, {14, 2.144787}, {15, 2.131450},
    {16, 2.119905}, {17, 2.109816}, {18, 2.100922}, {19, 2.093024}, {20, 2.085963},
    {21, 2.079614}, {22, 2.073873}, {23, 2.068658}, {24, 2.063899}, {25, 2.059539},
    {26, 2.055529}, {27, 2.051831}, {28, 2.048407}, {29, 2.045230}, {30, 2.042272},
    {40, 2.021075}, {49, 2.009575}, {50, 2.008559}, {60, 2.000298}, {100, 1.983972},
}};
constexpr double kTInfinity = 1.959964;

/// Every rank contributes `value`; every rank gets the maximum.
double all_max(Communicator& comm, double value) {
  Bytes encoded(sizeof value);
  std::memcpy(encoded.data(), &value, sizeof value);
  std::vector<Bytes> out(comm.size(), encoded);
  double best = value;
  for (const Bytes& b : comm.all_to_all(std::move(out)).get()) {
    double v;
    std::memcpy(&v, b.data(), sizeof v);
    best = std::max(best, v);
  }
  return best;
}

double elapsed_seconds(Clock::time_point start, Clock::time_point end) {
  // Clamp so a record is always strictly positive.
  return std::max(std::chrono::duration<double>(end - start).count(), 1e-9);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

template <typename T>
T parse_number(std::string_view text, const char* what) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw std::invalid_argument(fmt::format("bad {} '{}'", what, text));
  }
  return value;
}

double parse_double(std::string_view text) {
  // libstdc++ 11 lacks floating-point from_chars.
  std::string owned(text);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(owned, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != owned.size() || owned.empty()) {
    throw std::invalid_argument(fmt::format("bad number '{}'", text));
  }
  return v;
}

Experiment parse_experiment(std::string_view text) {
  if (text == "chunk") return Experiment::chunk;
  if (text == "strong") return Experiment::strong;
  throw std::runtime_error(fmt::format("bad experiment '{}'", text));
}

std::vector<std::vector<std::string_view>> read_table(const std::filesystem::path& path,
                                                      std::string_view header,
                                                      std::vector<std::string>& storage) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  while (std::getline(in, line)) {
    if (!line.empty()) storage.push_back(line);
  }
  const std::size_t width = split(header, ',').size();
  std::vector<std::vector<std::string_view>> rows;
  for (const auto& l : storage) {
    auto fields = split(l, ',');
    if (fields.size() != width) {
      throw std::runtime_error(path.string() + ": row has " + std::to_string(fields.size()) +
                               " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::uint64_t parse_size_item(std::string_view item) {
  if (item.starts_with("2^")) {
    const auto exp = parse_number<unsigned>(item.substr(2), "exponent");
    if (exp > 62) throw std::invalid_argument(fmt::format("size 2^{} too large", exp));
    return std::uint64_t{1} << exp;
  }
  return parse_number<std::uint64_t>(item, "size");
}

}  // namespace

std::string_view to_string(Experiment e) noexcept {
  return e == Experiment::chunk ? "chunk" : "strong";
}

std::vector<BenchRecord> bench_chunk_size(Communicator& comm, std::span<const std::uint64_t> sizes,
                                          const BenchOptions& options) {
  if (comm.size() != 2) {
    throw std::invalid_argument("bench_chunk_size needs exactly 2 ranks, world has " +
                                std::to_string(comm.size()));
  }
  const std::uint32_t me = comm.rank().value;
  std::vector<BenchRecord> records;
  records.reserve(sizes.size() * options.runs);

  for (const std::uint64_t size : sizes) {
    Bytes payload(static_cast<std::size_t>(size));
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::byte>(i * 31 + me);

    for (std::size_t k = 0; k < options.warmup + options.runs; ++k) {
      // Rank r sends to the other rank only; its own entry stays empty.
      std::vector<Bytes> mine(2);
      mine[1 - me] = payload;

      comm.barrier().get();
      const auto start = Clock::now();
      auto from0 = comm.scatter(RankId(0), me == 0 ? std::move(mine) : std::vector<Bytes>{});
      auto from1 = comm.scatter(RankId(1), me == 1 ? std::move(mine) : std::vector<Bytes>{});
      from0.get();
      from1.get();
      const double seconds = all_max(comm, elapsed_seconds(start, Clock::now()));

      if (k >= options.warmup) {
        records.push_back({Experiment::chunk, std::string(comm.endpoint().backend_name()),
                           "scatter", comm.size(), size, k - options.warmup, seconds});
      }
    }
  }
  return records;
}

std::vector<BenchRecord> bench_strong(Communicator& comm, std::size_t side, Strategy strategy,
                                      const BenchOptions& options) {
  const Decomposition d{comm.size(), side, side};
  d.validate();
  const std::size_t row_offset = comm.rank().value * d.local_rows();
  std::vector<BenchRecord> records;
  records.reserve(options.runs);

  for (std::size_t k = 0; k < options.warmup + options.runs; ++k) {
    const bool timed = k >= options.warmup;
    const std::size_t run = timed ? k - options.warmup : 0;
    Slab slab{d, comm.rank(), SlabLayout::rows,
              random_matrix(d.local_rows(), side, options.seed + run, row_offset)};

    comm.barrier().get();
    const auto start = Clock::now();
    fft2_dist(comm, std::move(slab), strategy);
    const double seconds = all_max(comm, elapsed_seconds(start, Clock::now()));

    if (timed) {
      records.push_back({Experiment::strong, std::string(comm.endpoint().backend_name()),
                         std::string(to_string(strategy)), comm.size(), side, run, seconds});
    }
  }
  return records;
}

double t_quantile_975(std::size_t dof) {
  if (dof == 0) throw std::invalid_argument("t_quantile_975: dof must be positive");
  if (dof == std::numeric_limits<std::size_t>::max()) return kTInfinity;
  double t = kTTable.front().t;
  for (const auto& e : kTTable) {
    if (e.dof > dof) break;
    t = e.t;
  }
  return t;
}

SummaryStat summarize(std::span<const double> seconds) {
  const std::size_t n = seconds.size();
  if (n < 2) {
    throw std::invalid_argument("summarize needs at least 2 samples, got " + std::to_string(n));
  }
  // Shifted by the first sample: constant input yields exactly that constant
  // and a zero deviation sum.
  const double shift = seconds.front();
  double offset = 0.0;
  for (double s : seconds) offset += s - shift;
  const double mean = shift + offset / static_cast<double>(n);
  double sq = 0.0;
  for (double s : seconds) sq += (s - mean) * (s - mean);
  const double stddev = std::sqrt(sq / static_cast<double>(n - 1));
  return {mean, t_quantile_975(n - 1) * stddev / std::sqrt(static_cast<double>(n)), n};
}

std::vector<SummaryRow> summarize_records(std::span<const BenchRecord> records) {
  using Key = std::tuple<Experiment, std::string, std::string, std::size_t, std::uint64_t>;
  std::vector<Key> order;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : records) {
    Key key{r.experiment, r.transport, r.strategy, r.world_size, r.param};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(r.seconds);
  }
  std::vector<SummaryRow> rows;
  for (const auto& key : order) {
    const auto& [experiment, transport, strategy, world, param] = key;
    rows.push_back({experiment, transport, strategy, world, param, summarize(groups.at(key))});
  }
  return rows;
}

std::string format_decimal(double value) {
  if (value == 0.0) return "0";
  if (!std::isfinite(value)) return fmt::format("{}", value);
  const int magnitude = static_cast<int>(std::floor(std::log10(std::abs(value))));
  const int decimals = std::clamp(16 - magnitude, 0, 340);
  std::string text = fmt::format("{:.{}f}", value, decimals);
  if (text.find('.') != std::string::npos) {
    text.erase(text.find_last_not_of('0') + 1);
    if (text.back() == '.') text.pop_back();
  }
  return text;
}

void write_csv(std::span<const BenchRecord> records, std::span<const SummaryRow> summaries,
               const std::filesystem::path& prefix) {
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
  };
  const auto runs_path = std::filesystem::path(prefix.string() + ".runs.csv");
  const auto summary_path = std::filesystem::path(prefix.string() + ".summary.csv");

  {
    auto out = open(runs_path);
    out << kRunsCsvHeader << '\n';
    for (const auto& r : records) {
      out << fmt::format("{},{},{},{},{},{},{}\n", to_string(r.experiment), r.transport,
                         r.strategy, r.world_size, r.param, r.run_index,
                         format_decimal(r.seconds));
    }
    if (!out) throw std::runtime_error("write failed: " + runs_path.string());
  }
  {
    auto out = open(summary_path);
    out << kSummaryCsvHeader << '\n';
    for (const auto& s : summaries) {
      out << fmt::format("{},{},{},{},{},{},{},{}\n", to_string(s.experiment), s.transport,
                         s.strategy, s.world_size, s.param, s.stat.runs,
                         format_decimal(s.stat.mean_seconds),
                         format_decimal(s.stat.ci95_half_width));
    }
    if (!out) throw std::runtime_error("write failed: " + summary_path.string());
  }
}

std::vector<BenchRecord> read_runs_csv(const std::filesystem::path& path) {
  std::vector<std::string> storage;
  std::vector<BenchRecord> out;
  for (const auto& f : read_table(path, kRunsCsvHeader, storage)) {
    out.push_back({parse_experiment(f[0]), std::string(f[1]), std::string(f[2]),
                   parse_number<std::size_t>(f[3], "world_size"),
                   parse_number<std::uint64_t>(f[4], "param"),
                   parse_number<std::size_t>(f[5], "run_index"), parse_double(f[6])});
  }
  return out;
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
  std::vector<std::string> storage;
  std::vector<SummaryRow> out;
  for (const auto& f : read_table(path, kSummaryCsvHeader, storage)) {
    out.push_back({parse_experiment(f[0]), std::string(f[1]), std::string(f[2]),
                   parse_number<std::size_t>(f[3], "world_size"),
                   parse_number<std::uint64_t>(f[4], "param"),
                   {parse_double(f[6]), parse_double(f[7]),
                    parse_number<std::size_t>(f[5], "runs")}});
  }
  return out;
}

std::vector<std::uint64_t> parse_sizes(std::string_view text) {
  std::vector<std::uint64_t> sizes;
  if (const auto dots = text.find(".."); dots != std::string_view::npos) {
    const auto lo_text = text.substr(0, dots);
    const auto hi_text = text.substr(dots + 2);
    if (!lo_text.starts_with("2^") || !hi_text.starts_with("2^")) {
      throw std::invalid_argument("size ranges must be written 2^a..2^b");
    }
    const auto lo = parse_number<unsigned>(lo_text.substr(2), "exponent");
    const auto hi = parse_number<unsigned>(hi_text.substr(2), "exponent");
    if (lo > hi || hi > 62) throw std::invalid_argument("bad size range " + std::string(text));
    for (unsigned e = lo; e <= hi; ++e) sizes.push_back(std::uint64_t{1} << e);
    return sizes;
  }
  for (auto item : split(text, ',')) {
    if (item.empty()) throw std::invalid_argument("empty size in list");
    sizes.push_back(parse_size_item(item));
  }
  return sizes;
}

}  // namespace collfft
