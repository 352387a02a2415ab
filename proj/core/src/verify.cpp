#include "msac/verify.hpp"

#include <cmath>
#include <stdexcept>

#include "msac/attention.hpp"
#include "msac/kernels.hpp"
#include "msac/rng.hpp"
#include "msac/sac.hpp"

namespace msac {

namespace {

Tensor dense_matmul_reference(const Tensor& w, const Tensor& x) {
  std::size_t dp = w.dim(0), d = w.dim(1), n = x.dim(1);
  Tensor out(Shape{dp, n});
  for (std::size_t i = 0; i < dp; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += w[i * d + k] * x[k * n + j];
      out[i * n + j] = acc;
    }
  return out;
}

// Identity-selecting 1x1 bank: filter f picks channel f.
FilterBank basis_bank(std::size_t channels) {
  Tensor t(Shape{channels, 1, 1, channels});
  for (std::size_t f = 0; f < channels; ++f) t[f * channels + f] = 1.0;
  return FilterBank(std::move(t));
}

VerifyReport verify_lemma1(std::size_t trials, std::uint64_t seed) {
  VerifyReport rep;
  rep.suite = "lemma1";
  rep.trials = trials;
  rep.seed = seed;
  rep.tolerance = 0.0;
  rep.exact = true;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t dp = 1 + rng.below(8), d = 1 + rng.below(8), n = 1 + rng.below(8);
    Tensor w = rng.integer_tensor({dp, d}, -4, 4);
    Tensor x = rng.integer_tensor({d, n}, -4, 4);
    double dev = max_abs_diff(matmul_via_conv(w, x), dense_matmul_reference(w, x));
    rep.max_abs_deviation = std::max(rep.max_abs_deviation, dev);
  }
  rep.max_rel_deviation = rep.max_abs_deviation;
  rep.pass = rep.max_abs_deviation == 0.0;
  return rep;
}

VerifyReport verify_sac_sa2d(std::size_t trials, std::uint64_t seed) {
  VerifyReport rep;
  rep.suite = "sac-sa2d";
  rep.trials = trials;
  rep.seed = seed;
  rep.tolerance = 1e-12;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t N = 1 + rng.below(5), M = 1 + rng.below(5), d = 1 + rng.below(3);
    std::size_t d_a = 1 + rng.below(3), d_o = 1 + rng.below(3);
    bool with_bias = rng.below(2) == 0;
    AttentionParams head = make_attention_params(rng, d, d_a, d_o, 1, 1, with_bias, N, M);
    SACParams p;
    p.mh.heads = {head};
    p.mh.hy = basis_bank(d_o);
    Tensor x = rng.tensor({N, M, d}, -1.0, 1.0);
    double dev = max_rel_diff(sac(x, p), sa2d(x, head), 1e-12);
    rep.max_rel_deviation = std::max(rep.max_rel_deviation, dev);
  }
  rep.pass = rep.max_rel_deviation <= rep.tolerance;
  return rep;
}

VerifyReport verify_sa2d_1d(std::size_t trials, std::uint64_t seed) {
  VerifyReport rep;
  rep.suite = "sa2d-1d";
  rep.trials = trials;
  rep.seed = seed;
  rep.tolerance = 1e-12;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t M = 1 + rng.below(8), d = 1 + rng.below(4);
    std::size_t d_a = 1 + rng.below(4), d_o = 1 + rng.below(4);
    Tensor wq = rng.tensor({d_a, d}, -1.0, 1.0);
    Tensor wk = rng.tensor({d_a, d}, -1.0, 1.0);
    Tensor wv = rng.tensor({d_o, d}, -1.0, 1.0);
    Tensor X = rng.tensor({d, M}, -1.0, 1.0);

    AttentionParams p;
    p.hq = FilterBank(reshape(wq, {d_a, 1, 1, d}));
    p.hk = FilterBank(reshape(wk, {d_a, 1, 1, d}));
    p.hv = FilterBank(reshape(wv, {d_o, 1, 1, d}));
    Tensor x = reshape(permute(X, {1, 0}), {1, M, d});

    Tensor y2d = sa2d(x, p);                             // [1, M, d_o]
    Tensor y1d = self_attention_1d(X, wq, wk, wv);       // [d_o, M]
    Tensor y1d_as_image = reshape(permute(y1d, {1, 0}), {1, M, d_o});
    double dev = max_rel_diff(y2d, y1d_as_image, 1e-12);
    rep.max_rel_deviation = std::max(rep.max_rel_deviation, dev);
  }
  rep.pass = rep.max_rel_deviation <= rep.tolerance;
  return rep;
}

}  // namespace

const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"lemma1", "sac-sa2d", "sa2d-1d"};
  return names;
}

VerifyReport run_verify_suite(const std::string& suite, std::size_t trials, std::uint64_t seed) {
  require(trials >= 1, "verify: trial count must be positive");
  if (suite == "lemma1") return verify_lemma1(trials, seed);
  if (suite == "sac-sa2d") return verify_sac_sa2d(trials, seed);
  if (suite == "sa2d-1d") return verify_sa2d_1d(trials, seed);
  throw std::invalid_argument("verify: unknown suite '" + suite + "'");
}

std::vector<VerifyReport> run_all_verify_suites(std::size_t trials, std::uint64_t seed) {
  std::vector<VerifyReport> out;
  for (const std::string& name : verify_suite_names())
    out.push_back(run_verify_suite(name, trials, seed));
  return out;
}

}  // namespace msac
