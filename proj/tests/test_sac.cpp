#include <stdexcept>
#include <cmath>

#include "doctest.h"
#include "msac/kernels.hpp"
#include "msac/sac.hpp"
#include "oracles.hpp"

using namespace msac;

namespace {

FilterBank basis_bank(std::size_t channels) {
  Tensor t(Shape{channels, 1, 1, channels});
  for (std::size_t f = 0; f < channels; ++f) t[f * channels + f] = 1.0;
  return FilterBank(std::move(t));
}

FilterBank averaging_bank(std::size_t d_o, std::size_t blocks) {
  Tensor t(Shape{d_o, 1, 1, blocks * d_o});
  for (std::size_t f = 0; f < d_o; ++f)
    for (std::size_t b = 0; b < blocks; ++b)
      t[f * blocks * d_o + b * d_o + f] = 1.0 / static_cast<double>(blocks);
  return FilterBank(std::move(t));
}

SACParams single_head_sac(Rng& rng, std::size_t d, std::size_t d_a, std::size_t d_o,
                          std::size_t n, std::size_t m, bool bias, std::size_t N,
                          std::size_t M) {
  SACParams p;
  p.mh.heads = {make_attention_params(rng, d, d_a, d_o, n, m, bias, N, M)};
  p.mh.hy = basis_bank(d_o);
  return p;
}

// Reference multi-head SAC: per-head straight-line attention with enlarged
// filters, channel concat, 1x1 reduction, optional parallel conv branch.
Tensor sac_reference(const Tensor& x, const SACParams& p) {
  std::size_t N = x.dim(0), M = x.dim(1), d_o = p.d_o();
  std::size_t C = p.mh.heads.size();
  Tensor stacked(Shape{N, M, C * d_o});
  for (std::size_t c = 0; c < C; ++c) {
    const AttentionParams& h = p.mh.heads[c];
    const Tensor* bias = h.bias ? &*h.bias : nullptr;
    Tensor y = oracle::sa2d(x, h.hq.tensor, h.hk.tensor, h.hv.tensor, bias);
    for (std::size_t px = 0; px < N * M; ++px)
      for (std::size_t o = 0; o < d_o; ++o)
        stacked[px * C * d_o + c * d_o + o] = y[px * d_o + o];
  }
  Tensor y = oracle::conv_bank(stacked, p.mh.hy.tensor);
  if (!p.hr) return y;
  Tensor y_conv = oracle::conv_bank(x, p.hr->tensor);
  Tensor both(Shape{N, M, 2 * d_o});
  for (std::size_t px = 0; px < N * M; ++px) {
    for (std::size_t o = 0; o < d_o; ++o) both[px * 2 * d_o + o] = y[px * d_o + o];
    for (std::size_t o = 0; o < d_o; ++o) both[px * 2 * d_o + d_o + o] = y_conv[px * d_o + o];
  }
  return oracle::conv_bank(both, p.hy_fuse->tensor);
}

}  // namespace

TEST_SUITE("sac") {
  TEST_CASE("1x1 single head without parallel branch equals plain 2D attention") {
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
      std::size_t N = 1 + rng.below(5), M = 1 + rng.below(5), d = 1 + rng.below(3);
      std::size_t d_a = 1 + rng.below(3), d_o = 1 + rng.below(3);
      bool bias = rng.below(2) == 0;
      SACParams p = single_head_sac(rng, d, d_a, d_o, 1, 1, bias, N, M);
      Tensor x = rng.tensor({N, M, d}, -1, 1);
      CHECK(max_rel_diff(sac(x, p), sa2d(x, p.mh.heads[0]), 1e-12) < 1e-12);
    }
  }

  TEST_CASE("zero parallel branch with a first-block selector matches the plain output") {
    Rng rng(102);
    std::size_t N = 3, M = 3, d = 2, d_o = 2;
    SACParams plain = single_head_sac(rng, d, 2, d_o, 2, 2, false, N, M);
    SACParams fused = plain;
    fused.hr = FilterBank(Tensor(Shape{d_o, 2, 2, d}));  // zero branch
    Tensor select(Shape{d_o, 1, 1, 2 * d_o});
    for (std::size_t f = 0; f < d_o; ++f) select[f * 2 * d_o + f] = 1.0;
    fused.hy_fuse = FilterBank(select);
    Tensor x = rng.tensor({N, M, d}, -1, 1);
    CHECK(max_rel_diff(sac(x, fused), sac(x, plain)) < 1e-14);
  }

  TEST_CASE("2x2 two-head SAC matches the straight-line reference") {
    Rng rng(103);
    Tensor x = rng.tensor({4, 4, 2}, -1, 1);
    SACParams p;
    p.mh.heads = {make_attention_params(rng, 2, 2, 3, 2, 2, true, 4, 4),
                  make_attention_params(rng, 2, 2, 3, 2, 2, true, 4, 4)};
    p.mh.hy = FilterBank(rng.tensor({3, 1, 1, 6}, -1, 1));
    CHECK(max_rel_diff(sac(x, p), sac_reference(x, p)) < 1e-12);

    p.hr = FilterBank(rng.tensor({3, 2, 2, 2}, -1, 1));
    p.hy_fuse = FilterBank(rng.tensor({3, 1, 1, 6}, -1, 1));
    CHECK(max_rel_diff(sac(x, p), sac_reference(x, p)) < 1e-12);
  }

  TEST_CASE("filter exceeding the spatial extent is rejected") {
    Rng rng(104);
    SACParams p = single_head_sac(rng, 2, 2, 2, 3, 3, false, 3, 3);
    CHECK_THROWS_AS(sac(Tensor(Shape{2, 2, 2}), p), std::invalid_argument);
  }

  TEST_CASE("hr without fusion bank is rejected") {
    Rng rng(105);
    SACParams p = single_head_sac(rng, 2, 2, 2, 1, 1, false, 2, 2);
    p.hr = FilterBank(Tensor(Shape{2, 1, 1, 2}));
    CHECK_THROWS_AS(sac(Tensor(Shape{2, 2, 2}), p), std::invalid_argument);
  }
}

TEST_SUITE("msac") {
  TEST_CASE("single scale with an identity-selecting reduction equals that scale") {
    Rng rng(111);
    std::size_t N = 3, M = 3, d = 2, d_o = 3;
    MSACParams p;
    p.scales = {single_head_sac(rng, d, 2, d_o, 2, 2, true, N, M)};
    p.hphi = basis_bank(d_o);
    Tensor x = rng.tensor({N, M, d}, -1, 1);
    CHECK(max_rel_diff(msac::msac(x, p), sac(x, p.scales[0])) < 1e-14);
  }

  TEST_CASE("two identical scales under an averaging reduction equal one scale") {
    Rng rng(112);
    std::size_t N = 3, M = 3, d = 2, d_o = 2;
    SACParams scale_params = single_head_sac(rng, d, 2, d_o, 1, 2, false, N, M);
    MSACParams p;
    p.scales = {scale_params, scale_params};
    p.hphi = averaging_bank(d_o, 2);
    Tensor x = rng.tensor({N, M, d}, -1, 1);
    CHECK(max_rel_diff(msac::msac(x, p), sac(x, scale_params)) < 1e-12);
  }

  TEST_CASE("super-tensor carries d_o * L channels before reduction") {
    Rng rng(113);
    MsacConfig cfg;
    cfg.d = 2;
    cfg.d_a = 2;
    cfg.d_o = 3;
    cfg.scales = {{1, 1}, {1, 2}, {2, 2}};
    MSACParams p = make_msac_params(rng, cfg, 4, 4);
    Tensor x = rng.tensor({4, 4, 2}, -1, 1);
    std::vector<Tensor> outs;
    for (const SACParams& s : p.scales) outs.push_back(sac(x, s));
    Tensor super = concat_last_axis(outs);
    CHECK(super.shape() == Shape{4, 4, 9});
    // And the reduction of that super-tensor is exactly the msac output.
    CHECK(max_rel_diff(conv_bank(super, p.hphi.tensor), msac::msac(x, p)) < 1e-14);
  }

  TEST_CASE("output shape is N x M x d_o across random configurations") {
    Rng rng(114);
    for (int trial = 0; trial < 15; ++trial) {
      MsacConfig cfg;
      cfg.d = 1 + rng.below(3);
      cfg.d_a = 1 + rng.below(3);
      cfg.d_o = 1 + rng.below(3);
      cfg.heads = 1 + rng.below(2);
      cfg.parallel_conv = rng.below(2) == 0;
      cfg.bias = rng.below(2) == 0;
      std::size_t N = 2 + rng.below(3), M = 2 + rng.below(3);
      cfg.scales = {{1, 1}, {1 + rng.below(2), 1 + rng.below(2)}};
      MSACParams p = make_msac_params(rng, cfg, N, M);
      Tensor x = rng.tensor({N, M, cfg.d}, -1, 1);
      CHECK(msac::msac(x, p).shape() == Shape{N, M, cfg.d_o});
    }
  }

  TEST_CASE("zeroing one scale's value filters removes exactly its averaged share") {
    Rng rng(115);
    std::size_t N = 3, M = 3, d = 2, d_o = 2, L = 2;
    MSACParams p;
    p.scales = {single_head_sac(rng, d, 2, d_o, 1, 1, false, N, M),
                single_head_sac(rng, d, 2, d_o, 2, 2, false, N, M)};
    p.hphi = averaging_bank(d_o, L);
    Tensor x = rng.tensor({N, M, d}, -1, 1);

    Tensor full = msac::msac(x, p);
    Tensor gamma1 = sac(x, p.scales[1]);

    MSACParams zeroed = p;
    zeroed.scales[1].mh.heads[0].hv = FilterBank(Tensor(Shape{d_o, 2, 2, d}));
    Tensor without = msac::msac(x, zeroed);

    // full - without == gamma1 / L by linearity of the fusion step.
    Tensor diff = sub(full, without);
    CHECK(max_rel_diff(diff, scale(gamma1, 1.0 / static_cast<double>(L)), 1e-9) < 1e-9);
  }

  TEST_CASE("projection stage only touches the filter footprint") {
    Rng rng(116);
    std::size_t M = 7, d = 2;
    AttentionParams p = make_attention_params(rng, d, 2, 2, 1, 3, false, 1, M);
    Tensor x = rng.tensor({1, M, d}, -1, 1);
    auto [q, k, v] = sa2d_project(x, p);

    std::size_t j = 3;
    Tensor xp = x;
    xp[j * d + 0] += 0.25;
    auto [q2, k2, v2] = sa2d_project(xp, p);

    std::size_t d_a = 2;
    for (std::size_t col = 0; col < M; ++col) {
      bool in_footprint = col + 1 >= j && col <= j + 1;  // 1x3 filter, centered
      double delta = 0.0;
      for (std::size_t a = 0; a < d_a; ++a)
        delta = std::max(delta, std::fabs(q2[col * d_a + a] - q[col * d_a + a]));
      if (in_footprint)
        CHECK(delta > 0.0);
      else
        CHECK(delta == 0.0);
    }
  }
}

TEST_SUITE("msac_1d") {
  TEST_CASE("single 1x1 scale behaves as 1D self attention") {
    Rng rng(121);
    std::size_t M = 6, d = 3, d_a = 2, d_o = 2;
    MSACParams p;
    p.scales = {single_head_sac(rng, d, d_a, d_o, 1, 1, false, 1, M)};
    p.hphi = basis_bank(d_o);
    Tensor x = rng.tensor({1, M, d}, -1, 1);

    const AttentionParams& h = p.scales[0].mh.heads[0];
    Tensor wq = reshape(h.hq.tensor, {d_a, d});
    Tensor wk = reshape(h.hk.tensor, {d_a, d});
    Tensor wv = reshape(h.hv.tensor, {d_o, d});
    Tensor X = permute(reshape(x, {M, d}), {1, 0});

    Tensor y1d = reshape(permute(self_attention_1d(X, wq, wk, wv), {1, 0}), {1, M, d_o});
    CHECK(max_rel_diff(msac_1d(x, p), y1d, 1e-12) < 1e-12);
  }

  TEST_CASE("ten-token sentence through 1x1, 1x2, 1x3 scales keeps its shape") {
    Rng rng(122);
    MsacConfig cfg;
    cfg.d = 4;
    cfg.d_a = 3;
    cfg.d_o = 3;
    cfg.scales = {{1, 1}, {1, 2}, {1, 3}};
    cfg.bias = true;
    MSACParams p = make_msac_params(rng, cfg, 1, 10);
    Tensor x = rng.tensor({1, 10, 4}, -1, 1);
    CHECK(msac_1d(x, p).shape() == Shape{1, 10, 3});
  }

  TEST_CASE("bigram scale scores every window position against every other") {
    Rng rng(123);
    std::size_t M = 5, d = 2, d_a = 2;
    AttentionParams p = make_attention_params(rng, d, d_a, 2, 1, 2, false, 1, M);
    Tensor x = rng.tensor({1, M, d}, -1, 1);
    auto [q, k, v] = sa2d_project(x, p);
    CHECK(sa2d_scores(q, k).shape() == Shape{1, M, 1, M});
  }

  TEST_CASE("rejects scales taller than one row") {
    Rng rng(124);
    MSACParams p;
    p.scales = {single_head_sac(rng, 2, 2, 2, 2, 2, false, 4, 4)};
    p.hphi = basis_bank(2);
    CHECK_THROWS_AS(msac_1d(Tensor(Shape{1, 4, 2}), p), std::invalid_argument);
    CHECK_THROWS_AS(msac_1d(Tensor(Shape{2, 4, 2}), p), std::invalid_argument);
  }
}
