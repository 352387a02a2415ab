#include <benchmark/benchmark.h>

#include "msac/attention.hpp"
#include "msac/kernels.hpp"
#include "msac/rng.hpp"
#include "msac/sac.hpp"

namespace {

using namespace msac;

constexpr std::size_t kChannels = 4;

void BM_Conv2dNaive(benchmark::State& state) {
  std::size_t s = static_cast<std::size_t>(state.range(0));
  Rng rng(42);
  Tensor x = rng.tensor({s, s, kChannels}, -1, 1);
  Tensor h = rng.tensor({3, 3, kChannels}, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, h, ConvKernel::naive));
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(s * s * 9 * kChannels));
}
BENCHMARK(BM_Conv2dNaive)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

void BM_Conv2dPatch(benchmark::State& state) {
  std::size_t s = static_cast<std::size_t>(state.range(0));
  Rng rng(42);
  Tensor x = rng.tensor({s, s, kChannels}, -1, 1);
  Tensor h = rng.tensor({3, 3, kChannels}, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, h, ConvKernel::patch));
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(s * s * 9 * kChannels));
}
BENCHMARK(BM_Conv2dPatch)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

void BM_ConvBankPatch(benchmark::State& state) {
  std::size_t s = static_cast<std::size_t>(state.range(0));
  Rng rng(42);
  Tensor x = rng.tensor({s, s, kChannels}, -1, 1);
  Tensor bank = rng.tensor({8, 3, 3, kChannels}, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(conv_bank(x, bank, ConvKernel::patch));
}
BENCHMARK(BM_ConvBankPatch)->Arg(16)->Arg(32)->Arg(64);

// The score tensor is [N,M,N,M], so doubling the side multiplies the element
// count by 16; these runs make the quartic growth visible.
void BM_Sa2d(benchmark::State& state) {
  std::size_t s = static_cast<std::size_t>(state.range(0));
  Rng rng(42);
  Tensor x = rng.tensor({s, s, kChannels}, -1, 1);
  AttentionParams p = make_attention_params(rng, kChannels, 4, 4, 1, 1, false, s, s);
  for (auto _ : state) benchmark::DoNotOptimize(sa2d(x, p));
}
BENCHMARK(BM_Sa2d)->Arg(8)->Arg(16)->Arg(32);

void BM_Sac2x2(benchmark::State& state) {
  std::size_t s = static_cast<std::size_t>(state.range(0));
  Rng rng(42);
  Tensor x = rng.tensor({s, s, kChannels}, -1, 1);
  SACParams p = make_sac_params(rng, 2, kChannels, 4, 4, 2, 2, true, true, s, s);
  for (auto _ : state) benchmark::DoNotOptimize(sac(x, p));
}
BENCHMARK(BM_Sac2x2)->Arg(8)->Arg(16)->Arg(32);

void BM_MsacForward(benchmark::State& state) {
  std::size_t s = static_cast<std::size_t>(state.range(0));
  Rng rng(42);
  MsacConfig cfg;
  cfg.d = kChannels;
  cfg.d_a = 4;
  cfg.d_o = 4;
  cfg.heads = 1;
  cfg.scales = {{1, 1}, {2, 2}, {3, 3}};
  MSACParams p = make_msac_params(rng, cfg, s, s);
  Tensor x = rng.tensor({s, s, kChannels}, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(msac::msac(x, p));
}
BENCHMARK(BM_MsacForward)->Arg(8)->Arg(16)->Arg(24);

void BM_MsacForwardBackward(benchmark::State& state) {
  std::size_t s = static_cast<std::size_t>(state.range(0));
  Rng rng(42);
  MsacConfig cfg;
  cfg.d = kChannels;
  cfg.d_a = 4;
  cfg.d_o = 4;
  cfg.heads = 1;
  cfg.scales = {{1, 1}, {2, 2}};
  MSACParams p = make_msac_params(rng, cfg, s, s);
  Tensor x0 = rng.tensor({s, s, kChannels}, -1, 1);
  for (auto _ : state) {
    ad::NodePtr x = ad::leaf(x0, "x");
    ad::MSACParamNodes nodes = ad::lift(p);
    ad::NodePtr loss = ad::sum(ad::msac(x, nodes));
    ad::backward(loss);
    benchmark::DoNotOptimize(x->grad);
  }
}
BENCHMARK(BM_MsacForwardBackward)->Arg(8)->Arg(16);

void BM_SoftmaxQuartic(benchmark::State& state) {
  std::size_t s = static_cast<std::size_t>(state.range(0));
  Rng rng(42);
  Tensor t = rng.tensor({s, s, s, s}, -2, 2);
  for (auto _ : state) benchmark::DoNotOptimize(softmax_over_axes(t, {0, 1}));
}
BENCHMARK(BM_SoftmaxQuartic)->Arg(8)->Arg(16)->Arg(24);

}  // namespace

BENCHMARK_MAIN();
