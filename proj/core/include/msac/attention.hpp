#pragma once

#include <optional>
#include <vector>

#include "msac/autodiff.hpp"
#include "msac/rng.hpp"
#include "msac/tensor.hpp"

namespace msac {

// Query/key/value filter banks plus the optional relative positional bias for
// one attention head. Banks are [d_a|d_o, n, m, d]; the bias is indexed by the
// absolute spatial offset between attending and attended positions, so it must
// cover the largest image the head will see.
struct AttentionParams {
  FilterBank hq;
  FilterBank hk;
  FilterBank hv;
  std::optional<Tensor> bias;

  std::size_t d_a() const { return hq.tensor.dim(0); }
  std::size_t d_o() const { return hv.tensor.dim(0); }
  std::size_t n() const { return hq.n(); }
  std::size_t m() const { return hq.m(); }
  std::size_t d() const { return hq.d(); }
  void validate() const;
};

// C independent heads fused by a 1x1 reduction bank hy [d_o, 1, 1, C*d_o].
struct MultiHeadParams {
  std::vector<AttentionParams> heads;
  FilterBank hy;

  std::size_t head_count() const { return heads.size(); }
  std::size_t d_o() const { return heads.front().d_o(); }
  void validate() const;
};

AttentionParams make_attention_params(Rng& rng, std::size_t d, std::size_t d_a, std::size_t d_o,
                                      std::size_t n, std::size_t m, bool with_bias,
                                      std::size_t n_max, std::size_t m_max);
MultiHeadParams make_multi_head_params(Rng& rng, std::size_t heads, std::size_t d,
                                       std::size_t d_a, std::size_t d_o, std::size_t n,
                                       std::size_t m, bool with_bias, std::size_t n_max,
                                       std::size_t m_max);

// Uniform [-s, s] with s = 1/sqrt(fan_in); keeps pre-softmax logits O(1).
Tensor init_filter_bank(Rng& rng, Shape shape, std::size_t fan_in);

namespace ad {

using msac::ad::NodePtr;

struct AttentionParamNodes {
  NodePtr hq, hk, hv;
  NodePtr bias;  // null when absent
};
struct MultiHeadParamNodes {
  std::vector<AttentionParamNodes> heads;
  NodePtr hy;
};

AttentionParamNodes lift(const AttentionParams& p);
MultiHeadParamNodes lift(const MultiHeadParams& p);
void collect_leaves(const AttentionParamNodes& p, std::vector<NodePtr>& out);
void collect_leaves(const MultiHeadParamNodes& p, std::vector<NodePtr>& out);

NodePtr self_attention_1d(const NodePtr& X, const NodePtr& wq, const NodePtr& wk,
                          const NodePtr& wv);

struct ProjectedNodes {
  NodePtr q, k, v;
};
ProjectedNodes sa2d_project(const NodePtr& x, const AttentionParamNodes& p);
NodePtr sa2d_scores(const NodePtr& q, const NodePtr& k);
NodePtr sa2d_coefficients(const NodePtr& alpha, std::size_t d_a, const NodePtr& bias);
NodePtr sa2d_apply(const NodePtr& a, const NodePtr& v);

// Full head: project -> scores -> coefficients -> apply. When trace is given,
// the coefficient node of every head evaluated underneath is appended to it,
// which is how the normalization property is asserted on inner heads.
NodePtr sa2d(const NodePtr& x, const AttentionParamNodes& p,
             std::vector<NodePtr>* coefficient_trace = nullptr);
NodePtr multi_head_sa2d(const NodePtr& x, const MultiHeadParamNodes& p,
                        std::vector<NodePtr>* coefficient_trace = nullptr);

}  // namespace ad

// Tensor-level entry points; thin wrappers over the graph compositions.
Tensor self_attention_1d(const Tensor& X, const Tensor& wq, const Tensor& wk, const Tensor& wv);

struct ProjectionResult {
  Tensor q, k, v;
};
ProjectionResult sa2d_project(const Tensor& x, const AttentionParams& p);
Tensor sa2d_scores(const Tensor& q, const Tensor& k);
Tensor sa2d_coefficients(const Tensor& alpha, std::size_t d_a,
                         const std::optional<Tensor>& bias = std::nullopt);
Tensor sa2d_apply(const Tensor& a, const Tensor& v);
Tensor sa2d(const Tensor& x, const AttentionParams& p);
Tensor multi_head_sa2d(const Tensor& x, const MultiHeadParams& p);

}  // namespace msac
