#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msac {

// One timed configuration. MAC counts are computed from the shapes, never
// measured; peak bytes come from the live-tensor tracker.
struct BenchRecord {
  std::string op;
  std::size_t N = 0, M = 0;
  std::size_t n = 1, m = 1;
  std::size_t L = 1, C = 1;
  std::size_t d = 1, d_a = 1, d_o = 1;
  std::uint64_t wall_ns = 0;
  std::uint64_t mac_count = 0;
  std::size_t peak_bytes = 0;
};

struct BenchOptions {
  std::vector<std::size_t> sizes = {8, 16, 32};  // N = M per entry
  std::size_t n = 3, m = 3;
  std::size_t d = 4, d_a = 4, d_o = 4;
  std::size_t heads = 1;
  std::size_t scales = 2;
  std::size_t repeats = 5;
  std::size_t mem_cap_mib = 1024;
  std::uint64_t seed = 42;
};

struct BenchResult {
  std::vector<BenchRecord> records;
  std::vector<std::string> notes;  // skipped configurations, kernel ratios
};

const std::vector<std::string>& bench_operator_names();
// conv2d_naive, conv2d_patch, sa2d, sac, msac; "conv2d" runs both kernels and
// notes the naive/patch wall-time ratio per size.
BenchResult run_bench(const std::string& op, const BenchOptions& opt);

std::uint64_t conv2d_mac_count(std::size_t N, std::size_t M, std::size_t n, std::size_t m,
                               std::size_t d);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRecord& r);

}  // namespace msac
