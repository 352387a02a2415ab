#include <stdexcept>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "msac/attention.hpp"
#include "msac/gradcheck.hpp"
#include "msac/sac.hpp"

using namespace msac;

TEST_SUITE("backward") {
  TEST_CASE("sum of a leaf propagates all-ones") {
    Rng rng(131);
    ad::NodePtr x = ad::leaf(rng.tensor({2, 3}, -1, 1), "x");
    ad::backward(ad::sum(x));
    REQUIRE(x->grad.has_value());
    CHECK(max_abs_diff(*x->grad, Tensor::full({2, 3}, 1.0)) == 0.0);
  }

  TEST_CASE("sum of a softmax has zero gradient") {
    Rng rng(132);
    ad::NodePtr x = ad::leaf(rng.tensor({4}, -2, 2), "x");
    ad::backward(ad::sum(ad::softmax_over_axes(x, {0})));
    REQUIRE(x->grad.has_value());
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::fabs((*x->grad)[i]) < 1e-15);
  }

  TEST_CASE("fan-out sums gradients") {
    ad::NodePtr x = ad::leaf(Tensor({1}, {3.0}), "x");
    ad::NodePtr y = ad::add(x, x);  // dy/dx = 2
    ad::backward(ad::sum(y));
    CHECK((*x->grad)[0] == 2.0);
  }

  TEST_CASE("non-scalar root is rejected") {
    ad::NodePtr x = ad::leaf(Tensor(Shape{2, 2}), "x");
    CHECK_THROWS_AS(ad::backward(x), std::invalid_argument);
  }

  TEST_CASE("cycles are detected") {
    ad::NodePtr x = ad::leaf(Tensor::scalar(1.0), "x");
    ad::NodePtr y = ad::scale(x, 2.0);
    y->parents.push_back(y);  // manufactured self-loop
    CHECK_THROWS_AS(ad::backward(y), std::invalid_argument);
  }

  TEST_CASE("full attention gradients match central differences") {
    Rng rng(133);
    std::size_t N = 2, M = 3, d = 2;
    AttentionParams p = make_attention_params(rng, d, 2, 2, 1, 1, true, N, M);
    Tensor x0 = rng.tensor({N, M, d}, -1, 1);

    ad::NodePtr x = ad::leaf(x0, "x");
    ad::AttentionParamNodes nodes = ad::lift(p);
    std::vector<ad::NodePtr> leaves{x, nodes.hq, nodes.hk, nodes.hv, nodes.bias};
    auto loss = [&] { return ad::sum(ad::square(ad::sa2d(x, nodes))); };
    ad::backward(loss());

    for (const ad::NodePtr& leafp : leaves) {
      Tensor original = leafp->value;
      Tensor numeric = ad::finite_diff_grad(
          [&](const Tensor& probe) {
            leafp->value = probe;
            return loss()->value.item();
          },
          original, 1e-4);
      leafp->value = original;
      CHECK(max_rel_diff(*leafp->grad, numeric, 1e-8) < 1e-5);
    }
  }
}

TEST_SUITE("finite_diff_grad") {
  TEST_CASE("sum of squares at [1,2]") {
    auto f = [](const Tensor& t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
      return acc;
    };
    Tensor g = ad::finite_diff_grad(f, Tensor({2}, {1.0, 2.0}), 1e-5);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-6));
  }

  TEST_CASE("linear functions are exact up to rounding for any eps") {
    auto f = [](const Tensor& t) { return 3.0 * t[0] - 7.0 * t[1]; };
    for (double eps : {1e-2, 1e-5, 1e-7}) {
      Tensor g = ad::finite_diff_grad(f, Tensor({2}, {0.25, -0.5}), eps);
      CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-7));
      CHECK(g[1] == doctest::Approx(-7.0).epsilon(1e-7));
    }
  }

  TEST_CASE("rejects non-positive eps and non-finite outputs") {
    auto f = [](const Tensor& t) { return t[0]; };
    CHECK_THROWS_AS(ad::finite_diff_grad(f, Tensor(Shape{1}), 0.0), std::invalid_argument);
    auto bad = [](const Tensor&) { return std::numeric_limits<double>::infinity(); };
    CHECK_THROWS_AS(ad::finite_diff_grad(bad, Tensor(Shape{1}), 1e-4), std::runtime_error);
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("conv2d passes at a tight tolerance") {
    GradReport rep = grad_check("conv2d", 20, 7);
    CHECK(rep.max_rel_error < 1e-6);
    CHECK(rep.probe_count > 0);
  }

  TEST_CASE("softmax-based coefficients pass under curvature") {
    GradReport rep = grad_check("sa2d_coefficients", 10, 7);
    CHECK(rep.max_rel_error < 1e-5);
  }

  TEST_CASE("full msac passes at the suite tolerance") {
    GradReport rep = grad_check("msac", 5, 7);
    CHECK(rep.max_rel_error < 1e-4);
  }

  TEST_CASE("unregistered op is rejected") {
    CHECK_THROWS_AS(grad_check("no_such_op", 1, 7), std::invalid_argument);
    CHECK(is_registered_grad_op("msac"));
    CHECK_FALSE(is_registered_grad_op("no_such_op"));
  }

  TEST_CASE("coefficient gradients sum to zero along the normalized axes") {
    Rng rng(141);
    std::size_t N = 2, M = 2;
    ad::NodePtr alpha = ad::leaf(rng.tensor({N, M, N, M}, -1, 1), "alpha");
    ad::NodePtr a = ad::sa2d_coefficients(alpha, 2, nullptr);
    ad::backward(ad::sum(ad::square(a)));
    // d(loss)/d(alpha) summed over (r,t) per (i,j) is zero: the softmax
    // Jacobian annihilates constants.
    const Tensor& g = *alpha->grad;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        double total = 0.0;
        for (std::size_t r = 0; r < N; ++r)
          for (std::size_t t = 0; t < M; ++t) total += g[((r * M + t) * N + i) * M + j];
        CHECK(std::fabs(total) < 1e-10);
      }
  }

  TEST_CASE("identical seeds produce bitwise-identical gradients") {
    auto run = [] {
      Rng rng(55);
      Tensor x0 = rng.tensor({3, 3, 2}, -1, 1);
      MsacConfig cfg;
      cfg.d = 2;
      cfg.d_a = 2;
      cfg.d_o = 2;
      cfg.scales = {{1, 1}, {2, 2}};
      cfg.bias = true;
      MSACParams p = make_msac_params(rng, cfg, 3, 3);
      ad::NodePtr x = ad::leaf(x0, "x");
      ad::MSACParamNodes nodes = ad::lift(p);
      ad::backward(ad::sum(ad::square(ad::msac(x, nodes))));
      return *x->grad;
    };
    CHECK(max_abs_diff(run(), run()) == 0.0);
  }
}
