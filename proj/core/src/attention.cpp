#include "msac/attention.hpp"

#include <cmath>

namespace msac {

void AttentionParams::validate() const {
  require(hq.tensor.rank() == 4 && hk.tensor.rank() == 4 && hv.tensor.rank() == 4,
          "attention params: filter banks must be rank 4 [filters,n,m,d]");
  require(hq.tensor.dim(0) == hk.tensor.dim(0),
          "attention params: hq and hk must share leading size d_a");
  for (std::size_t ax = 1; ax < 4; ++ax) {
    require(hq.tensor.dim(ax) == hk.tensor.dim(ax) && hq.tensor.dim(ax) == hv.tensor.dim(ax),
            "attention params: hq/hk/hv must share (n,m,d)");
  }
  if (bias) require(bias->rank() == 2, "attention params: bias must be a matrix");
}

void MultiHeadParams::validate() const {
  require(!heads.empty(), "multi-head params: need at least one head");
  const AttentionParams& h0 = heads.front();
  for (const AttentionParams& h : heads) {
    h.validate();
    require(h.d_a() == h0.d_a() && h.d_o() == h0.d_o() && h.n() == h0.n() && h.m() == h0.m() &&
                h.d() == h0.d(),
            "multi-head params: all heads must share (d_a,d_o,n,m,d)");
  }
  require(hy.tensor.rank() == 4 && hy.n() == 1 && hy.m() == 1,
          "multi-head params: hy must be a 1x1 bank");
  require(hy.d() == heads.size() * h0.d_o(),
          "multi-head params: hy channel size " + std::to_string(hy.d()) +
              " must equal heads*d_o = " + std::to_string(heads.size() * h0.d_o()));
  require(hy.tensor.dim(0) == h0.d_o(), "multi-head params: hy must produce d_o channels");
}

Tensor init_filter_bank(Rng& rng, Shape shape, std::size_t fan_in) {
  double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.tensor(std::move(shape), -s, s);
}

AttentionParams make_attention_params(Rng& rng, std::size_t d, std::size_t d_a, std::size_t d_o,
                                      std::size_t n, std::size_t m, bool with_bias,
                                      std::size_t n_max, std::size_t m_max) {
  std::size_t fan_in = n * m * d;
  AttentionParams p;
  p.hq = FilterBank(init_filter_bank(rng, {d_a, n, m, d}, fan_in));
  p.hk = FilterBank(init_filter_bank(rng, {d_a, n, m, d}, fan_in));
  p.hv = FilterBank(init_filter_bank(rng, {d_o, n, m, d}, fan_in));
  if (with_bias) p.bias = rng.tensor({n_max, m_max}, -0.1, 0.1);
  p.validate();
  return p;
}

MultiHeadParams make_multi_head_params(Rng& rng, std::size_t heads, std::size_t d,
                                       std::size_t d_a, std::size_t d_o, std::size_t n,
                                       std::size_t m, bool with_bias, std::size_t n_max,
                                       std::size_t m_max) {
  MultiHeadParams p;
  for (std::size_t c = 0; c < heads; ++c)
    p.heads.push_back(make_attention_params(rng, d, d_a, d_o, n, m, with_bias, n_max, m_max));
  p.hy = FilterBank(init_filter_bank(rng, {d_o, 1, 1, heads * d_o}, heads * d_o));
  p.validate();
  return p;
}

namespace ad {

AttentionParamNodes lift(const AttentionParams& p) {
  AttentionParamNodes nodes;
  nodes.hq = leaf(p.hq.tensor, "hq");
  nodes.hk = leaf(p.hk.tensor, "hk");
  nodes.hv = leaf(p.hv.tensor, "hv");
  if (p.bias) nodes.bias = leaf(*p.bias, "bias");
  return nodes;
}

MultiHeadParamNodes lift(const MultiHeadParams& p) {
  MultiHeadParamNodes nodes;
  for (const AttentionParams& h : p.heads) nodes.heads.push_back(lift(h));
  nodes.hy = leaf(p.hy.tensor, "hy");
  return nodes;
}

void collect_leaves(const AttentionParamNodes& p, std::vector<NodePtr>& out) {
  out.push_back(p.hq);
  out.push_back(p.hk);
  out.push_back(p.hv);
  if (p.bias) out.push_back(p.bias);
}

void collect_leaves(const MultiHeadParamNodes& p, std::vector<NodePtr>& out) {
  for (const AttentionParamNodes& h : p.heads) collect_leaves(h, out);
  out.push_back(p.hy);
}

NodePtr self_attention_1d(const NodePtr& X, const NodePtr& wq, const NodePtr& wk,
                          const NodePtr& wv) {
  require(X->value.rank() == 2, "self_attention_1d: X must be [d,n]");
  require(wq->value.rank() == 2 && wk->value.rank() == 2 && wv->value.rank() == 2,
          "self_attention_1d: weights must be matrices");
  std::size_t d = X->value.dim(0), ncols = X->value.dim(1);
  require(wq->value.dim(1) == d && wk->value.dim(1) == d && wv->value.dim(1) == d,
          "self_attention_1d: weight column count must match token dimension");
  require(wq->value.dim(0) == wk->value.dim(0),
          "self_attention_1d: wq and wk must share d_a rows");
  std::size_t d_a = wq->value.dim(0);

  NodePtr Q = matmul_via_conv(wq, X);  // [d_a, n]
  NodePtr K = matmul_via_conv(wk, X);
  NodePtr V = matmul_via_conv(wv, X);  // [d_o, n]

  // Keys become the signal, queries the filters: s[j,f] = <k_j, q_f>.
  NodePtr k_sig = reshape(permute(K, {1, 0}), Shape{1, ncols, d_a});
  NodePtr q_bank = reshape(permute(Q, {1, 0}), Shape{ncols, 1, 1, d_a});
  NodePtr scores = reshape(conv_bank(k_sig, q_bank), Shape{ncols, ncols});

  // Column-wise softmax: each query column becomes a distribution over keys,
  // so every output token is a convex combination of V's columns.
  NodePtr A = softmax_over_axes(scale(scores, 1.0 / std::sqrt(static_cast<double>(d_a))), {0});
  return matmul_via_conv(V, A);  // [d_o, n]
}

ProjectedNodes sa2d_project(const NodePtr& x, const AttentionParamNodes& p) {
  return {conv_bank(x, p.hq), conv_bank(x, p.hk), conv_bank(x, p.hv)};
}

NodePtr sa2d_scores(const NodePtr& q, const NodePtr& k) {
  require(q->value.rank() == 3 && q->value.same_shape(k->value),
          "sa2d_scores: q and k must share shape [N,M,d_a], got " +
              shape_to_string(q->value.shape()) + " vs " + shape_to_string(k->value.shape()));
  std::size_t N = q->value.dim(0), M = q->value.dim(1), d_a = q->value.dim(2);
  // Every query pixel acts as a 1x1 filter over the key field.
  NodePtr q_bank = reshape(q, Shape{N, M, 1, 1, d_a});
  return conv_bank(k, q_bank);  // [r,t,i,j]
}

NodePtr sa2d_coefficients(const NodePtr& alpha, std::size_t d_a, const NodePtr& bias) {
  require(alpha->value.rank() == 4, "sa2d_coefficients: scores must be rank 4");
  require(d_a >= 1, "sa2d_coefficients: d_a must be positive");
  NodePtr logits = scale(alpha, 1.0 / std::sqrt(static_cast<double>(d_a)));
  if (bias) logits = add_relative_bias(logits, bias);
  // Normalize jointly over the attended positions (r,t) for each query (i,j).
  return softmax_over_axes(logits, {0, 1});
}

NodePtr sa2d_apply(const NodePtr& a, const NodePtr& v) { return apply_attention(a, v); }

NodePtr sa2d(const NodePtr& x, const AttentionParamNodes& p,
             std::vector<NodePtr>* coefficient_trace) {
  ProjectedNodes proj = sa2d_project(x, p);
  NodePtr alpha = sa2d_scores(proj.q, proj.k);
  NodePtr a = sa2d_coefficients(alpha, p.hq->value.dim(0), p.bias);
  if (coefficient_trace) coefficient_trace->push_back(a);
  return sa2d_apply(a, proj.v);
}

NodePtr multi_head_sa2d(const NodePtr& x, const MultiHeadParamNodes& p,
                        std::vector<NodePtr>* coefficient_trace) {
  std::vector<NodePtr> outs;
  outs.reserve(p.heads.size());
  for (const AttentionParamNodes& h : p.heads) outs.push_back(sa2d(x, h, coefficient_trace));
  NodePtr fused = concat_last_axis(std::move(outs));
  return conv_bank(fused, p.hy);
}

}  // namespace ad

Tensor self_attention_1d(const Tensor& X, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  return ad::self_attention_1d(ad::leaf(X), ad::leaf(wq), ad::leaf(wk), ad::leaf(wv))->value;
}

ProjectionResult sa2d_project(const Tensor& x, const AttentionParams& p) {
  p.validate();
  ad::ProjectedNodes nodes = ad::sa2d_project(ad::leaf(x), ad::lift(p));
  return {nodes.q->value, nodes.k->value, nodes.v->value};
}

Tensor sa2d_scores(const Tensor& q, const Tensor& k) {
  return ad::sa2d_scores(ad::leaf(q), ad::leaf(k))->value;
}

Tensor sa2d_coefficients(const Tensor& alpha, std::size_t d_a,
                         const std::optional<Tensor>& bias) {
  ad::NodePtr bias_node = bias ? ad::leaf(*bias) : nullptr;
  return ad::sa2d_coefficients(ad::leaf(alpha), d_a, bias_node)->value;
}

Tensor sa2d_apply(const Tensor& a, const Tensor& v) {
  return ad::sa2d_apply(ad::leaf(a), ad::leaf(v))->value;
}

Tensor sa2d(const Tensor& x, const AttentionParams& p) {
  p.validate();
  return ad::sa2d(ad::leaf(x), ad::lift(p))->value;
}

Tensor multi_head_sa2d(const Tensor& x, const MultiHeadParams& p) {
  p.validate();
  return ad::multi_head_sa2d(ad::leaf(x), ad::lift(p))->value;
}

}  // namespace msac
