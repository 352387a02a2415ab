#include "msac/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

#include "msac/apps.hpp"
#include "msac/attention.hpp"
#include "msac/sac.hpp"

namespace msac {

namespace {

using ad::NodePtr;

struct CheckInstance {
  std::vector<NodePtr> leaves;
  std::function<NodePtr()> build;  // loss from the leaves' current values
};

using InstanceMaker = std::function<CheckInstance(Rng&)>;

// Random positive weights keep the scalar loss sensitive to every output
// coordinate; a flat weighting would zero out softmax gradients entirely.
NodePtr weighted(Rng& rng, const NodePtr& out) {
  Tensor w = rng.tensor(out->value.shape(), 0.5, 1.5);
  return ad::sum(ad::mul_by(out, std::move(w)));
}

MsacConfig small_config(Rng& rng, bool allow_2d) {
  MsacConfig cfg;
  cfg.d = 1 + rng.below(3);
  cfg.d_a = 1 + rng.below(3);
  cfg.d_o = 1 + rng.below(3);
  cfg.heads = 1 + rng.below(2);
  cfg.parallel_conv = true;
  cfg.bias = true;
  if (allow_2d)
    cfg.scales = {{1, 1}, {2, 2}};
  else
    cfg.scales = {{1, 1}, {1, 2}};
  return cfg;
}

const std::map<std::string, std::pair<std::size_t, InstanceMaker>>& registry() {
  static const std::map<std::string, std::pair<std::size_t, InstanceMaker>> reg = [] {
    std::map<std::string, std::pair<std::size_t, InstanceMaker>> r;

    r["conv2d"] = {20, [](Rng& rng) {
      std::size_t N = 2 + rng.below(3), M = 2 + rng.below(3), d = 1 + rng.below(3);
      std::size_t n = 1 + rng.below(std::min<std::size_t>(3, N));
      std::size_t m = 1 + rng.below(std::min<std::size_t>(3, M));
      NodePtr x = ad::leaf(rng.tensor({N, M, d}, -1, 1), "x");
      NodePtr h = ad::leaf(rng.tensor({n, m, d}, -1, 1), "h");
      CheckInstance inst;
      inst.leaves = {x, h};
      inst.build = [x, h, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::conv2d(x, h));
      };
      return inst;
    }};

    r["conv_bank"] = {20, [](Rng& rng) {
      std::size_t N = 2 + rng.below(3), M = 2 + rng.below(3), d = 1 + rng.below(3);
      std::size_t n = 1 + rng.below(std::min<std::size_t>(3, N));
      std::size_t m = 1 + rng.below(std::min<std::size_t>(3, M));
      std::size_t F = 1 + rng.below(3);
      NodePtr x = ad::leaf(rng.tensor({N, M, d}, -1, 1), "x");
      NodePtr bank = ad::leaf(rng.tensor({F, n, m, d}, -1, 1), "bank");
      CheckInstance inst;
      inst.leaves = {x, bank};
      inst.build = [x, bank, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::conv_bank(x, bank));
      };
      return inst;
    }};

    r["matmul_via_conv"] = {20, [](Rng& rng) {
      std::size_t dp = 1 + rng.below(4), d = 1 + rng.below(4), cols = 1 + rng.below(4);
      NodePtr w = ad::leaf(rng.tensor({dp, d}, -1, 1), "w");
      NodePtr x = ad::leaf(rng.tensor({d, cols}, -1, 1), "x");
      CheckInstance inst;
      inst.leaves = {w, x};
      inst.build = [w, x, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::matmul_via_conv(w, x));
      };
      return inst;
    }};

    r["softmax_over_axes"] = {20, [](Rng& rng) {
      Shape shape{1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
      std::vector<std::size_t> axes;
      axes.push_back(rng.below(3));
      if (rng.below(2) == 0) axes.push_back((axes[0] + 1) % 3);
      NodePtr x = ad::leaf(rng.tensor(shape, -2, 2), "x");
      CheckInstance inst;
      inst.leaves = {x};
      inst.build = [x, axes, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::softmax_over_axes(x, axes));
      };
      return inst;
    }};

    r["concat_last_axis"] = {20, [](Rng& rng) {
      std::size_t N = 1 + rng.below(3), M = 1 + rng.below(3);
      std::size_t parts = 2 + rng.below(2);
      std::vector<NodePtr> leaves;
      for (std::size_t i = 0; i < parts; ++i)
        leaves.push_back(ad::leaf(rng.tensor({N, M, 1 + rng.below(3)}, -1, 1), "part"));
      CheckInstance inst;
      inst.leaves = leaves;
      inst.build = [leaves, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::concat_last_axis(leaves));
      };
      return inst;
    }};

    r["self_attention_1d"] = {10, [](Rng& rng) {
      std::size_t d = 1 + rng.below(4), n = 1 + rng.below(4);
      std::size_t d_a = 1 + rng.below(4), d_o = 1 + rng.below(4);
      NodePtr X = ad::leaf(rng.tensor({d, n}, -1, 1), "X");
      NodePtr wq = ad::leaf(rng.tensor({d_a, d}, -1, 1), "wq");
      NodePtr wk = ad::leaf(rng.tensor({d_a, d}, -1, 1), "wk");
      NodePtr wv = ad::leaf(rng.tensor({d_o, d}, -1, 1), "wv");
      CheckInstance inst;
      inst.leaves = {X, wq, wk, wv};
      inst.build = [X, wq, wk, wv, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::self_attention_1d(X, wq, wk, wv));
      };
      return inst;
    }};

    auto lift_and_collect = [](const AttentionParams& p, std::vector<NodePtr>& leaves) {
      ad::AttentionParamNodes nodes = ad::lift(p);
      ad::collect_leaves(nodes, leaves);
      return nodes;
    };

    r["sa2d_project"] = {10, [lift_and_collect](Rng& rng) {
      std::size_t N = 2 + rng.below(2), M = 2 + rng.below(2), d = 1 + rng.below(3);
      AttentionParams p = make_attention_params(rng, d, 1 + rng.below(3), 1 + rng.below(3), 1,
                                                1, false, N, M);
      NodePtr x = ad::leaf(rng.tensor({N, M, d}, -1, 1), "x");
      CheckInstance inst;
      inst.leaves = {x};
      ad::AttentionParamNodes nodes = lift_and_collect(p, inst.leaves);
      inst.build = [x, nodes, seeded = rng.bits()] {
        Rng wrng(seeded);
        ad::ProjectedNodes proj = ad::sa2d_project(x, nodes);
        return ad::add(weighted(wrng, proj.q),
                       ad::add(weighted(wrng, proj.k), weighted(wrng, proj.v)));
      };
      return inst;
    }};

    r["sa2d_scores"] = {10, [](Rng& rng) {
      std::size_t N = 1 + rng.below(3), M = 1 + rng.below(3), d_a = 1 + rng.below(3);
      NodePtr q = ad::leaf(rng.tensor({N, M, d_a}, -1, 1), "q");
      NodePtr k = ad::leaf(rng.tensor({N, M, d_a}, -1, 1), "k");
      CheckInstance inst;
      inst.leaves = {q, k};
      inst.build = [q, k, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::sa2d_scores(q, k));
      };
      return inst;
    }};

    r["sa2d_coefficients"] = {10, [](Rng& rng) {
      std::size_t N = 1 + rng.below(3), M = 1 + rng.below(3);
      std::size_t d_a = 1 + rng.below(4);
      bool with_bias = rng.below(2) == 0;
      NodePtr alpha = ad::leaf(rng.tensor({N, M, N, M}, -2, 2), "alpha");
      CheckInstance inst;
      inst.leaves = {alpha};
      NodePtr bias;
      if (with_bias) {
        bias = ad::leaf(rng.tensor({N, M}, -1, 1), "bias");
        inst.leaves.push_back(bias);
      }
      inst.build = [alpha, bias, d_a, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::sa2d_coefficients(alpha, d_a, bias));
      };
      return inst;
    }};

    r["sa2d_apply"] = {10, [](Rng& rng) {
      std::size_t N = 1 + rng.below(3), M = 1 + rng.below(3), d_o = 1 + rng.below(3);
      NodePtr a = ad::leaf(rng.tensor({N, M, N, M}, -1, 1), "a");
      NodePtr v = ad::leaf(rng.tensor({N, M, d_o}, -1, 1), "v");
      CheckInstance inst;
      inst.leaves = {a, v};
      inst.build = [a, v, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::sa2d_apply(a, v));
      };
      return inst;
    }};

    r["sa2d"] = {5, [lift_and_collect](Rng& rng) {
      std::size_t N = 2 + rng.below(2), M = 2 + rng.below(2), d = 1 + rng.below(3);
      AttentionParams p = make_attention_params(rng, d, 1 + rng.below(3), 1 + rng.below(3), 1,
                                                1, true, N, M);
      NodePtr x = ad::leaf(rng.tensor({N, M, d}, -1, 1), "x");
      CheckInstance inst;
      inst.leaves = {x};
      ad::AttentionParamNodes nodes = lift_and_collect(p, inst.leaves);
      inst.build = [x, nodes, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::sa2d(x, nodes));
      };
      return inst;
    }};

    r["multi_head_sa2d"] = {5, [](Rng& rng) {
      std::size_t N = 2 + rng.below(2), M = 2 + rng.below(2), d = 1 + rng.below(3);
      MultiHeadParams p = make_multi_head_params(rng, 2, d, 1 + rng.below(3), 1 + rng.below(3),
                                                 1, 1, true, N, M);
      NodePtr x = ad::leaf(rng.tensor({N, M, d}, -1, 1), "x");
      CheckInstance inst;
      inst.leaves = {x};
      ad::MultiHeadParamNodes nodes = ad::lift(p);
      ad::collect_leaves(nodes, inst.leaves);
      inst.build = [x, nodes, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::multi_head_sa2d(x, nodes));
      };
      return inst;
    }};

    r["sac"] = {5, [](Rng& rng) {
      std::size_t N = 3, M = 3, d = 1 + rng.below(2);
      SACParams p = make_sac_params(rng, 1 + rng.below(2), d, 2, 2, 2, 2, true, true, N, M);
      NodePtr x = ad::leaf(rng.tensor({N, M, d}, -1, 1), "x");
      CheckInstance inst;
      inst.leaves = {x};
      ad::SACParamNodes nodes = ad::lift(p);
      ad::collect_leaves(nodes, inst.leaves);
      inst.build = [x, nodes, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::sac(x, nodes));
      };
      return inst;
    }};

    r["msac"] = {5, [](Rng& rng) {
      std::size_t N = 3, M = 3;
      MsacConfig cfg = small_config(rng, true);
      MSACParams p = make_msac_params(rng, cfg, N, M);
      NodePtr x = ad::leaf(rng.tensor({N, M, cfg.d}, -1, 1), "x");
      CheckInstance inst;
      inst.leaves = {x};
      ad::MSACParamNodes nodes = ad::lift(p);
      ad::collect_leaves(nodes, inst.leaves);
      inst.build = [x, nodes, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::msac(x, nodes));
      };
      return inst;
    }};

    r["msac_1d"] = {5, [](Rng& rng) {
      std::size_t M = 3 + rng.below(2);
      MsacConfig cfg = small_config(rng, false);
      MSACParams p = make_msac_params(rng, cfg, 1, M);
      NodePtr x = ad::leaf(rng.tensor({1, M, cfg.d}, -1, 1), "x");
      CheckInstance inst;
      inst.leaves = {x};
      ad::MSACParamNodes nodes = ad::lift(p);
      ad::collect_leaves(nodes, inst.leaves);
      inst.build = [x, nodes, seeded = rng.bits()] {
        Rng wrng(seeded);
        return weighted(wrng, ad::msac_1d(x, nodes));
      };
      return inst;
    }};

    r["lm_forward"] = {3, [](Rng& rng) {
      MsacConfig cfg = small_config(rng, false);
      cfg.d = 2;
      cfg.d_a = 2;
      cfg.d_o = 2;
      cfg.heads = 1;
      std::size_t vocab = 4, len = 4;
      ToyLMModel model = make_lm_model(rng, vocab, cfg, 1, len);
      std::vector<std::size_t> tokens;
      for (std::size_t t = 0; t < len; ++t) tokens.push_back(rng.below(vocab));
      ad::LMModelNodes nodes = ad::lift(model);
      CheckInstance inst;
      inst.leaves = ad::collect_leaves(nodes);
      inst.build = [nodes, tokens] { return ad::lm_loss(nodes, tokens); };
      return inst;
    }};

    r["similarity_score"] = {3, [](Rng& rng) {
      MsacConfig cfg = small_config(rng, true);
      cfg.d = 2;
      cfg.d_a = 2;
      cfg.d_o = 2;
      cfg.heads = 1;
      std::size_t N = 2, M = 2;
      SimilarityModel model = make_similarity_model(rng, cfg, SegMode::channel, 1, N, M, 1);
      NodePtr x = ad::leaf(rng.tensor({N, M, cfg.d}, -1, 1), "x");
      NodePtr z = ad::leaf(rng.tensor({N, M, cfg.d}, -1, 1), "z");
      ad::SimilarityModelNodes nodes = ad::lift(model);
      CheckInstance inst;
      inst.leaves = {x, z};
      for (const NodePtr& p : ad::collect_leaves(nodes)) inst.leaves.push_back(p);
      inst.build = [nodes, x, z] {
        return ad::bce_with_logits(ad::similarity_logit(nodes, x, z), 1.0);
      };
      return inst;
    }};

    return r;
  }();
  return reg;
}

}  // namespace

const std::vector<std::string>& registered_grad_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, entry] : registry()) out.push_back(name);
    return out;
  }();
  return names;
}

bool is_registered_grad_op(const std::string& op) { return registry().count(op) > 0; }

std::size_t default_grad_trials(const std::string& op) {
  auto it = registry().find(op);
  require(it != registry().end(), "grad_check: unregistered op '" + op + "'");
  return it->second.first;
}

GradReport grad_check(const std::string& op, std::size_t trials, std::uint64_t seed, double eps,
                      double rel_floor) {
  auto it = registry().find(op);
  require(it != registry().end(), "grad_check: unregistered op '" + op + "'");
  require(trials >= 1, "grad_check: trial count must be positive");
  require(eps > 0.0, "grad_check: eps must be positive");

  Rng rng(seed);
  GradReport report;
  report.op = op;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    CheckInstance inst = it->second.second(rng);
    ad::NodePtr loss = inst.build();
    ad::backward(loss);

    for (const ad::NodePtr& leafp : inst.leaves) {
      Tensor analytic = leafp->grad ? *leafp->grad : Tensor::zeros(leafp->value.shape());
      Tensor original = leafp->value;
      Tensor numeric = ad::finite_diff_grad(
          [&](const Tensor& probe) {
            leafp->value = probe;
            return inst.build()->value.item();
          },
          original, eps);
      leafp->value = original;

      for (std::size_t i = 0; i < analytic.size(); ++i) {
        double a = analytic[i], n = numeric[i];
        double abs_err = std::fabs(a - n);
        double rel_err = abs_err / std::max({std::fabs(a), std::fabs(n), rel_floor});
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        report.max_rel_error = std::max(report.max_rel_error, rel_err);
      }
      report.probe_count += analytic.size();
    }
  }
  return report;
}

}  // namespace msac
