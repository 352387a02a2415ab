#include <stdexcept>
#include <cmath>

#include "doctest.h"
#include "msac/attention.hpp"
#include "msac/kernels.hpp"
#include "oracles.hpp"

using namespace msac;

namespace {

AttentionParams random_params(Rng& rng, std::size_t d, std::size_t d_a, std::size_t d_o,
                              std::size_t n, std::size_t m, bool bias, std::size_t N,
                              std::size_t M) {
  return make_attention_params(rng, d, d_a, d_o, n, m, bias, N, M);
}

}  // namespace

TEST_SUITE("self_attention_1d") {
  TEST_CASE("single token: softmax collapses to 1, output is the value projection") {
    Rng rng(61);
    Tensor X = rng.tensor({3, 1}, -1, 1);
    Tensor wq = rng.tensor({2, 3}, -1, 1), wk = rng.tensor({2, 3}, -1, 1);
    Tensor wv = rng.tensor({4, 3}, -1, 1);
    CHECK(max_rel_diff(self_attention_1d(X, wq, wk, wv), oracle::matmul(wv, X)) < 1e-15);
  }

  TEST_CASE("zero queries give uniform attention: every output is the value row-mean") {
    Rng rng(62);
    std::size_t n = 5;
    Tensor X = rng.tensor({3, n}, -1, 1);
    Tensor wq(Shape{2, 3});
    Tensor wk = rng.tensor({2, 3}, -1, 1);
    Tensor wv = rng.tensor({3, 3}, -1, 1);
    Tensor Y = self_attention_1d(X, wq, wk, wv);
    Tensor V = oracle::matmul(wv, X);
    for (std::size_t o = 0; o < 3; ++o) {
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += V[o * n + j];
      mean /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j)
        CHECK(Y[o * n + j] == doctest::Approx(mean).epsilon(1e-13));
    }
  }

  TEST_CASE("matches the dense-matrix reference") {
    Rng rng(63);
    for (int trial = 0; trial < 50; ++trial) {
      std::size_t d = 1 + rng.below(4), n = 1 + rng.below(6);
      std::size_t d_a = 1 + rng.below(4), d_o = 1 + rng.below(4);
      Tensor X = rng.tensor({d, n}, -1, 1);
      Tensor wq = rng.tensor({d_a, d}, -1, 1);
      Tensor wk = rng.tensor({d_a, d}, -1, 1);
      Tensor wv = rng.tensor({d_o, d}, -1, 1);
      CHECK(max_rel_diff(self_attention_1d(X, wq, wk, wv),
                         oracle::self_attention_1d(X, wq, wk, wv)) < 1e-12);
    }
  }

  TEST_CASE("rejects dimension mismatch") {
    CHECK_THROWS_AS(self_attention_1d(Tensor(Shape{3, 2}), Tensor(Shape{2, 4}),
                                      Tensor(Shape{2, 3}), Tensor(Shape{2, 3})),
                    std::invalid_argument);
    CHECK_THROWS_AS(self_attention_1d(Tensor(Shape{3, 2}), Tensor(Shape{2, 3}),
                                      Tensor(Shape{1, 3}), Tensor(Shape{2, 3})),
                    std::invalid_argument);
  }
}

TEST_SUITE("sa2d stages") {
  TEST_CASE("basis query filters reproduce the input") {
    Rng rng(71);
    std::size_t d = 3;
    Tensor x = rng.tensor({2, 3, d}, -1, 1);
    AttentionParams p = random_params(rng, d, d, d, 1, 1, false, 2, 3);
    Tensor basis(Shape{d, 1, 1, d});
    for (std::size_t f = 0; f < d; ++f) basis[f * d + f] = 1.0;
    p.hq = FilterBank(basis);
    auto [q, k, v] = sa2d_project(x, p);
    CHECK(max_abs_diff(q, x) == 0.0);

    p.hq = FilterBank(Tensor(Shape{d, 1, 1, d}));
    p.hk = FilterBank(Tensor(Shape{d, 1, 1, d}));
    p.hv = FilterBank(Tensor(Shape{d, 1, 1, d}));
    auto [q0, k0, v0] = sa2d_project(x, p);
    CHECK(max_abs_diff(q0, Tensor(Shape{2, 3, d})) == 0.0);
    CHECK(max_abs_diff(k0, Tensor(Shape{2, 3, d})) == 0.0);
    CHECK(max_abs_diff(v0, Tensor(Shape{2, 3, d})) == 0.0);
  }

  TEST_CASE("projection equals the per-pixel dense product for 1x1 filters") {
    Rng rng(72);
    std::size_t d = 3, d_a = 2;
    Tensor x = rng.tensor({3, 2, d}, -1, 1);
    AttentionParams p = random_params(rng, d, d_a, 2, 1, 1, false, 3, 2);
    auto [q, k, v] = sa2d_project(x, p);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t a = 0; a < d_a; ++a) {
          double expect = 0.0;
          for (std::size_t c = 0; c < d; ++c)
            expect += x[(i * 2 + j) * d + c] * p.hq.tensor[a * d + c];
          CHECK(q[(i * 2 + j) * d_a + a] == doctest::Approx(expect).epsilon(1e-13));
        }
  }

  TEST_CASE("scores on a single pixel reduce to one dot product") {
    Rng rng(73);
    Tensor q = rng.tensor({1, 1, 3}, -1, 1);
    Tensor k = rng.tensor({1, 1, 3}, -1, 1);
    double expect = q[0] * k[0] + q[1] * k[1] + q[2] * k[2];
    Tensor alpha = sa2d_scores(q, k);
    CHECK(alpha.shape() == Shape{1, 1, 1, 1});
    CHECK(alpha[0] == doctest::Approx(expect).epsilon(1e-15));
  }

  TEST_CASE("all-ones fields score the channel count everywhere") {
    Tensor q = Tensor::full({2, 2, 4}, 1.0);
    Tensor k = Tensor::full({2, 2, 4}, 1.0);
    Tensor alpha = sa2d_scores(q, k);
    for (std::size_t i = 0; i < alpha.size(); ++i) CHECK(alpha[i] == 4.0);
  }

  TEST_CASE("scores match the quadruple-loop reference") {
    Rng rng(74);
    std::size_t N = 2, M = 3, d_a = 3;
    Tensor q = rng.tensor({N, M, d_a}, -1, 1);
    Tensor k = rng.tensor({N, M, d_a}, -1, 1);
    Tensor alpha = sa2d_scores(q, k);
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t t = 0; t < M; ++t)
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < M; ++j) {
            double expect = 0.0;
            for (std::size_t a = 0; a < d_a; ++a)
              expect += k[(r * M + t) * d_a + a] * q[(i * M + j) * d_a + a];
            CHECK(alpha[((r * M + t) * N + i) * M + j] ==
                  doctest::Approx(expect).epsilon(1e-13));
          }
    CHECK_THROWS_AS(sa2d_scores(q, Tensor(Shape{N, M, d_a + 1})), std::invalid_argument);
  }

  TEST_CASE("zero scores without bias give uniform coefficients") {
    Tensor alpha(Shape{2, 3, 2, 3});
    Tensor a = sa2d_coefficients(alpha, 4);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-13));
  }

  TEST_CASE("log-2 zero-distance bias doubles same-position attention on a 1x2 image") {
    Tensor alpha(Shape{1, 2, 1, 2});
    Tensor bias(Shape{1, 2});
    bias[0] = std::log(2.0);
    Tensor a = sa2d_coefficients(alpha, 1, bias);
    // query (0,0): keys (0,0) and (0,1)
    CHECK(a[0 * 2 + 0] == doctest::Approx(2.0 / 3.0).epsilon(1e-13));  // a[0,0,0,0]
    CHECK(a[1 * 2 + 0] == doctest::Approx(1.0 / 3.0).epsilon(1e-13));  // a[0,1,0,0]
    // query (0,1): same-position key is (0,1)
    CHECK(a[1 * 2 + 1] == doctest::Approx(2.0 / 3.0).epsilon(1e-13));  // a[0,1,0,1]
    CHECK(a[0 * 2 + 1] == doctest::Approx(1.0 / 3.0).epsilon(1e-13));  // a[0,0,0,1]
  }

  TEST_CASE("coefficient slices always sum to one and stay positive") {
    Rng rng(75);
    for (int trial = 0; trial < 25; ++trial) {
      std::size_t N = 1 + rng.below(3), M = 1 + rng.below(3);
      Tensor alpha = rng.tensor({N, M, N, M}, -4, 4);
      bool with_bias = rng.below(2) == 0;
      std::optional<Tensor> bias;
      if (with_bias) bias = rng.tensor({N, M}, -1, 1);
      Tensor a = sa2d_coefficients(alpha, 1 + rng.below(4), bias);
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < M; ++j) {
          double total = 0.0;
          for (std::size_t r = 0; r < N; ++r)
            for (std::size_t t = 0; t < M; ++t) {
              double v = a[((r * M + t) * N + i) * M + j];
              CHECK(v > 0.0);
              total += v;
            }
          CHECK(std::fabs(total - 1.0) < 1e-12);
        }
    }
  }

  TEST_CASE("shifting all scores by a constant leaves coefficients unchanged") {
    Rng rng(76);
    Tensor alpha = rng.tensor({2, 2, 2, 2}, -2, 2);
    Tensor shifted = alpha;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 57.0;
    CHECK(max_rel_diff(sa2d_coefficients(alpha, 3), sa2d_coefficients(shifted, 3)) < 1e-12);
  }

  TEST_CASE("pre-softmax bias term is symmetric in attender and attendee") {
    Rng rng(77);
    std::size_t N = 3, M = 4;
    Tensor bias = rng.tensor({N, M}, -1, 1);
    // With zero scores the softmax input is exactly the gathered bias.
    ad::NodePtr logits =
        ad::add_relative_bias(ad::leaf(Tensor(Shape{N, M, N, M})), ad::leaf(bias));
    const Tensor& L = logits->value;
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t t = 0; t < M; ++t)
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < M; ++j)
            CHECK(L[((r * M + t) * N + i) * M + j] == L[((i * M + j) * N + r) * M + t]);
  }

  TEST_CASE("bias smaller than the spatial extent is rejected") {
    Tensor alpha(Shape{2, 3, 2, 3});
    CHECK_THROWS_AS(sa2d_coefficients(alpha, 2, Tensor(Shape{2, 2})), std::invalid_argument);
  }

  TEST_CASE("uniform coefficients average the value pixels") {
    Rng rng(78);
    std::size_t N = 2, M = 3, d_o = 2;
    Tensor a = Tensor::full({N, M, N, M}, 1.0 / 6.0);
    Tensor v = rng.tensor({N, M, d_o}, -1, 1);
    Tensor y = sa2d_apply(a, v);
    for (std::size_t o = 0; o < d_o; ++o) {
      double mean = 0.0;
      for (std::size_t p = 0; p < N * M; ++p) mean += v[p * d_o + o];
      mean /= 6.0;
      for (std::size_t p = 0; p < N * M; ++p)
        CHECK(y[p * d_o + o] == doctest::Approx(mean).epsilon(1e-13));
    }
  }

  TEST_CASE("one-hot coefficients select a single value pixel") {
    Rng rng(79);
    std::size_t N = 2, M = 2, d_o = 3;
    Tensor v = rng.tensor({N, M, d_o}, -1, 1);
    Tensor a(Shape{N, M, N, M});
    std::size_t rstar = 1, tstar = 0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j) a[((rstar * M + tstar) * N + i) * M + j] = 1.0;
    Tensor y = sa2d_apply(a, v);
    for (std::size_t p = 0; p < N * M; ++p)
      for (std::size_t o = 0; o < d_o; ++o)
        CHECK(y[p * d_o + o] == v[(rstar * M + tstar) * d_o + o]);
  }

  TEST_CASE("outputs stay inside the componentwise envelope of the values") {
    Rng rng(80);
    for (int trial = 0; trial < 20; ++trial) {
      std::size_t N = 1 + rng.below(3), M = 1 + rng.below(3), d_o = 1 + rng.below(3);
      Tensor a = sa2d_coefficients(rng.tensor({N, M, N, M}, -3, 3), 2);
      Tensor v = rng.tensor({N, M, d_o}, -1, 1);
      Tensor y = sa2d_apply(a, v);
      for (std::size_t o = 0; o < d_o; ++o) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t p = 0; p < N * M; ++p) {
          lo = std::min(lo, v[p * d_o + o]);
          hi = std::max(hi, v[p * d_o + o]);
        }
        for (std::size_t p = 0; p < N * M; ++p) {
          CHECK(y[p * d_o + o] >= lo - 1e-12);
          CHECK(y[p * d_o + o] <= hi + 1e-12);
        }
      }
    }
  }
}

TEST_SUITE("sa2d") {
  TEST_CASE("single-pixel image passes the value through regardless of q,k") {
    Rng rng(81);
    AttentionParams p = random_params(rng, 3, 2, 2, 1, 1, true, 1, 1);
    Tensor x = rng.tensor({1, 1, 3}, -1, 1);
    auto [q, k, v] = sa2d_project(x, p);
    CHECK(max_rel_diff(sa2d(x, p), v) < 1e-15);
  }

  TEST_CASE("matches the straight-line reference head") {
    Rng rng(82);
    for (int trial = 0; trial < 30; ++trial) {
      std::size_t N = 1 + rng.below(4), M = 1 + rng.below(4), d = 1 + rng.below(3);
      bool with_bias = rng.below(2) == 0;
      AttentionParams p =
          random_params(rng, d, 1 + rng.below(3), 1 + rng.below(3), 1, 1, with_bias, N, M);
      Tensor x = rng.tensor({N, M, d}, -1, 1);
      const Tensor* bias = p.bias ? &*p.bias : nullptr;
      Tensor expected = oracle::sa2d(x, p.hq.tensor, p.hk.tensor, p.hv.tensor, bias);
      CHECK(max_rel_diff(sa2d(x, p), expected) < 1e-12);
    }
  }

  TEST_CASE("row inputs with 1x1 filters reduce to 1D self attention") {
    Rng rng(83);
    for (int trial = 0; trial < 100; ++trial) {
      std::size_t M = 1 + rng.below(8), d = 1 + rng.below(4);
      std::size_t d_a = 1 + rng.below(4), d_o = 1 + rng.below(4);
      Tensor wq = rng.tensor({d_a, d}, -1, 1);
      Tensor wk = rng.tensor({d_a, d}, -1, 1);
      Tensor wv = rng.tensor({d_o, d}, -1, 1);
      Tensor X = rng.tensor({d, M}, -1, 1);

      AttentionParams p;
      p.hq = FilterBank(reshape(wq, {d_a, 1, 1, d}));
      p.hk = FilterBank(reshape(wk, {d_a, 1, 1, d}));
      p.hv = FilterBank(reshape(wv, {d_o, 1, 1, d}));
      Tensor x = reshape(permute(X, {1, 0}), {1, M, d});

      Tensor y2d = sa2d(x, p);
      Tensor y1d = reshape(permute(self_attention_1d(X, wq, wk, wv), {1, 0}), {1, M, d_o});
      CHECK(max_rel_diff(y2d, y1d, 1e-12) < 1e-12);
    }
  }

  TEST_CASE("bias-free attention is equivariant to column permutations") {
    Rng rng(84);
    std::size_t M = 5, d = 3;
    AttentionParams p = random_params(rng, d, 2, 3, 1, 1, false, 1, M);
    Tensor x = rng.tensor({1, M, d}, -1, 1);
    std::vector<std::size_t> perm{3, 0, 4, 2, 1};

    Tensor xp(Shape{1, M, d});
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t c = 0; c < d; ++c) xp[j * d + c] = x[perm[j] * d + c];

    Tensor y = sa2d(x, p);
    Tensor yp = sa2d(xp, p);
    std::size_t d_o = p.d_o();
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t o = 0; o < d_o; ++o)
        CHECK(yp[j * d_o + o] == doctest::Approx(y[perm[j] * d_o + o]).epsilon(1e-12));
  }
}

TEST_SUITE("multi_head_sa2d") {
  TEST_CASE("one head with an identity-selecting bank equals sa2d") {
    Rng rng(91);
    std::size_t d = 3, d_o = 2, N = 2, M = 3;
    AttentionParams head = random_params(rng, d, 2, d_o, 1, 1, true, N, M);
    MultiHeadParams p;
    p.heads = {head};
    Tensor basis(Shape{d_o, 1, 1, d_o});
    for (std::size_t f = 0; f < d_o; ++f) basis[f * d_o + f] = 1.0;
    p.hy = FilterBank(basis);
    Tensor x = rng.tensor({N, M, d}, -1, 1);
    CHECK(max_rel_diff(multi_head_sa2d(x, p), sa2d(x, head)) < 1e-14);
  }

  TEST_CASE("two identical heads under an averaging bank equal one head") {
    Rng rng(92);
    std::size_t d = 2, d_o = 3, N = 2, M = 2;
    AttentionParams head = random_params(rng, d, 2, d_o, 1, 1, false, N, M);
    MultiHeadParams p;
    p.heads = {head, head};
    Tensor avg(Shape{d_o, 1, 1, 2 * d_o});
    for (std::size_t f = 0; f < d_o; ++f) {
      avg[f * 2 * d_o + f] = 0.5;
      avg[f * 2 * d_o + d_o + f] = 0.5;
    }
    p.hy = FilterBank(avg);
    Tensor x = rng.tensor({N, M, d}, -1, 1);
    CHECK(max_rel_diff(multi_head_sa2d(x, p), sa2d(x, head)) < 1e-12);
  }

  TEST_CASE("output shape is always N x M x d_o") {
    Rng rng(93);
    for (int trial = 0; trial < 10; ++trial) {
      std::size_t N = 1 + rng.below(4), M = 1 + rng.below(4), d = 1 + rng.below(3);
      std::size_t d_o = 1 + rng.below(3);
      MultiHeadParams p = make_multi_head_params(rng, 1 + rng.below(3), d, 1 + rng.below(3),
                                                 d_o, 1, 1, false, N, M);
      Tensor x = rng.tensor({N, M, d}, -1, 1);
      CHECK(multi_head_sa2d(x, p).shape() == Shape{N, M, d_o});
    }
  }

  TEST_CASE("mismatched fusion bank is rejected") {
    Rng rng(94);
    MultiHeadParams p = make_multi_head_params(rng, 2, 2, 2, 3, 1, 1, false, 2, 2);
    p.hy = FilterBank(Tensor(Shape{3, 1, 1, 5}));  // needs 2*3 input channels
    CHECK_THROWS_AS(multi_head_sa2d(Tensor(Shape{2, 2, 2}), p), std::invalid_argument);
  }
}
