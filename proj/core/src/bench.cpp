#include "msac/bench.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "msac/attention.hpp"
#include "msac/kernels.hpp"
#include "msac/rng.hpp"
#include "msac/sac.hpp"
#include "msac/tensor.hpp"

namespace msac {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t head_mac_count(std::size_t N, std::size_t M, std::size_t n, std::size_t m,
                             std::size_t d, std::size_t d_a, std::size_t d_o) {
  std::uint64_t px = static_cast<std::uint64_t>(N) * M;
  std::uint64_t proj = px * n * m * d * (2 * d_a + d_o);
  std::uint64_t scores = px * px * d_a;
  std::uint64_t apply = px * px * d_o;
  return proj + scores + apply;
}

std::uint64_t multi_head_mac_count(std::size_t N, std::size_t M, std::size_t n, std::size_t m,
                                   std::size_t d, std::size_t d_a, std::size_t d_o,
                                   std::size_t C) {
  std::uint64_t px = static_cast<std::uint64_t>(N) * M;
  return C * head_mac_count(N, M, n, m, d, d_a, d_o) + px * (C * d_o) * d_o;
}

// Rough upper bound on live tensor bytes for the attention ops; the two
// [N,M,N,M] tensors dominate, and the tape keeps every intermediate alive.
std::size_t estimate_bytes(std::size_t N, std::size_t M, std::size_t heads_times_scales) {
  std::size_t px = N * M;
  return 8 * (heads_times_scales * 6 * px * px + 16 * px);
}

struct TimedRun {
  std::uint64_t wall_ns = 0;
  std::size_t peak_bytes = 0;
};

TimedRun time_median(const std::function<void()>& fn, std::size_t repeats) {
  std::vector<std::uint64_t> times;
  TimedRun out;
  for (std::size_t r = 0; r < repeats; ++r) {
    memtrack::reset_peak();
    auto t0 = Clock::now();
    fn();
    auto t1 = Clock::now();
    times.push_back(
        static_cast<std::uint64_t>(std::chrono::nanoseconds(t1 - t0).count()));
    out.peak_bytes = std::max(out.peak_bytes, memtrack::peak_bytes());
  }
  std::sort(times.begin(), times.end());
  out.wall_ns = times[times.size() / 2];
  return out;
}

}  // namespace

std::uint64_t conv2d_mac_count(std::size_t N, std::size_t M, std::size_t n, std::size_t m,
                               std::size_t d) {
  return static_cast<std::uint64_t>(N) * M * n * m * d;
}

const std::vector<std::string>& bench_operator_names() {
  static const std::vector<std::string> names{"conv2d", "conv2d_naive", "conv2d_patch",
                                              "sa2d", "sac", "msac"};
  return names;
}

BenchResult run_bench(const std::string& op, const BenchOptions& opt) {
  require(!opt.sizes.empty(), "bench: size grid must be nonempty");
  require(opt.repeats >= 1, "bench: repeats must be positive");
  bool known = false;
  for (const std::string& name : bench_operator_names()) known = known || name == op;
  require(known, "bench: unknown operator '" + op + "'");

  BenchResult result;
  std::size_t cap_bytes = opt.mem_cap_mib * std::size_t{1024} * 1024;
  Rng rng(opt.seed);

  std::vector<double> naive_walls, patch_walls;

  for (std::size_t s : opt.sizes) {
    std::size_t N = s, M = s;
    std::size_t n = std::min(opt.n, N), m = std::min(opt.m, M);

    auto make_record = [&](const std::string& name) {
      BenchRecord rec;
      rec.op = name;
      rec.N = N;
      rec.M = M;
      rec.n = n;
      rec.m = m;
      rec.C = opt.heads;
      rec.d = opt.d;
      rec.d_a = opt.d_a;
      rec.d_o = opt.d_o;
      return rec;
    };

    if (op == "conv2d" || op == "conv2d_naive" || op == "conv2d_patch") {
      Tensor x = rng.tensor({N, M, opt.d}, -1.0, 1.0);
      Tensor h = rng.tensor({n, m, opt.d}, -1.0, 1.0);
      TimedRun naive_run, patch_run;
      if (op != "conv2d_patch") {
        naive_run = time_median([&] { conv2d(x, h, ConvKernel::naive); }, opt.repeats);
        BenchRecord rec = make_record("conv2d_naive");
        rec.L = 1;
        rec.C = 1;
        rec.wall_ns = naive_run.wall_ns;
        rec.mac_count = conv2d_mac_count(N, M, n, m, opt.d);
        rec.peak_bytes = naive_run.peak_bytes;
        result.records.push_back(rec);
      }
      if (op != "conv2d_naive") {
        patch_run = time_median([&] { conv2d(x, h, ConvKernel::patch); }, opt.repeats);
        BenchRecord rec = make_record("conv2d_patch");
        rec.L = 1;
        rec.C = 1;
        rec.wall_ns = patch_run.wall_ns;
        rec.mac_count = conv2d_mac_count(N, M, n, m, opt.d);
        rec.peak_bytes = patch_run.peak_bytes;
        result.records.push_back(rec);
      }
      if (op == "conv2d" && patch_run.wall_ns > 0) {
        double ratio = static_cast<double>(naive_run.wall_ns) /
                       static_cast<double>(patch_run.wall_ns);
        std::ostringstream os;
        os << "conv2d " << N << "x" << M << ": naive/patch wall ratio " << ratio;
        result.notes.push_back(os.str());
      }
      continue;
    }

    std::size_t head_scales = opt.heads * (op == "msac" ? opt.scales : 1);
    if (estimate_bytes(N, M, head_scales) > cap_bytes) {
      result.notes.push_back("skipped " + op + " at " + std::to_string(N) + "x" +
                             std::to_string(M) + ": estimated working set exceeds cap");
      continue;
    }

    if (op == "sa2d") {
      Tensor x = rng.tensor({N, M, opt.d}, -1.0, 1.0);
      AttentionParams p = make_attention_params(rng, opt.d, opt.d_a, opt.d_o, 1, 1, false, N, M);
      TimedRun run = time_median([&] { sa2d(x, p); }, opt.repeats);
      BenchRecord rec = make_record("sa2d");
      rec.n = 1;
      rec.m = 1;
      rec.C = 1;
      rec.wall_ns = run.wall_ns;
      rec.mac_count = head_mac_count(N, M, 1, 1, opt.d, opt.d_a, opt.d_o);
      rec.peak_bytes = run.peak_bytes;
      result.records.push_back(rec);
    } else if (op == "sac") {
      Tensor x = rng.tensor({N, M, opt.d}, -1.0, 1.0);
      SACParams p =
          make_sac_params(rng, opt.heads, opt.d, opt.d_a, opt.d_o, n, m, false, false, N, M);
      TimedRun run = time_median([&] { sac(x, p); }, opt.repeats);
      BenchRecord rec = make_record("sac");
      rec.wall_ns = run.wall_ns;
      rec.mac_count = multi_head_mac_count(N, M, n, m, opt.d, opt.d_a, opt.d_o, opt.heads);
      rec.peak_bytes = run.peak_bytes;
      result.records.push_back(rec);
    } else if (op == "msac") {
      Tensor x = rng.tensor({N, M, opt.d}, -1.0, 1.0);
      MsacConfig cfg;
      cfg.d = opt.d;
      cfg.d_a = opt.d_a;
      cfg.d_o = opt.d_o;
      cfg.heads = opt.heads;
      cfg.scales.clear();
      for (std::size_t l = 0; l < opt.scales; ++l) {
        std::size_t fl = std::min(l + 1, std::min(n, std::min(N, M)));
        cfg.scales.emplace_back(fl, fl);
      }
      cfg.seed = opt.seed;
      MSACParams p = make_msac_params(rng, cfg, N, M);
      TimedRun run = time_median([&] { msac(x, p); }, opt.repeats);
      BenchRecord rec = make_record("msac");
      rec.L = cfg.scales.size();
      std::uint64_t macs = 0;
      std::uint64_t px = static_cast<std::uint64_t>(N) * M;
      for (auto [nl, ml] : cfg.scales)
        macs += multi_head_mac_count(N, M, nl, ml, opt.d, opt.d_a, opt.d_o, opt.heads);
      macs += px * (cfg.scales.size() * opt.d_o) * opt.d_o;
      rec.mac_count = macs;
      rec.peak_bytes = run.peak_bytes;
      result.records.push_back(rec);
    }
  }
  return result;
}

std::string bench_csv_header() {
  return "operator,N,M,n,m,L,C,d,d_a,d_o,wall_ns,mac_count,peak_bytes";
}

std::string bench_csv_row(const BenchRecord& r) {
  std::ostringstream os;
  os << r.op << ',' << r.N << ',' << r.M << ',' << r.n << ',' << r.m << ',' << r.L << ',' << r.C
     << ',' << r.d << ',' << r.d_a << ',' << r.d_o << ',' << r.wall_ns << ',' << r.mac_count
     << ',' << r.peak_bytes;
  return os.str();
}

}  // namespace msac
