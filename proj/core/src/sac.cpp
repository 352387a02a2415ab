#include "msac/sac.hpp"

namespace msac {

void SACParams::validate() const {
  mh.validate();
  require(hr.has_value() == hy_fuse.has_value(),
          "sac params: hr and hy_fuse must be present together");
  if (hr) {
    const AttentionParams& h0 = mh.heads.front();
    require(hr->tensor.rank() == 4 && hr->tensor.dim(0) == h0.d_o() && hr->n() == h0.n() &&
                hr->m() == h0.m() && hr->d() == h0.d(),
            "sac params: hr must match the attention filters' (d_o,n,m,d)");
    require(hy_fuse->tensor.rank() == 4 && hy_fuse->n() == 1 && hy_fuse->m() == 1 &&
                hy_fuse->d() == 2 * h0.d_o() && hy_fuse->tensor.dim(0) == h0.d_o(),
            "sac params: hy_fuse must be a 1x1 bank over 2*d_o channels");
  }
}

void MSACParams::validate() const {
  require(!scales.empty(), "msac params: need at least one scale");
  const SACParams& s0 = scales.front();
  std::size_t d = s0.mh.heads.front().d();
  std::size_t d_a = s0.mh.heads.front().d_a();
  for (const SACParams& s : scales) {
    s.validate();
    require(s.mh.heads.front().d() == d && s.mh.heads.front().d_a() == d_a &&
                s.d_o() == s0.d_o(),
            "msac params: all scales must share (d, d_a, d_o)");
  }
  require(hphi.tensor.rank() == 4 && hphi.n() == 1 && hphi.m() == 1,
          "msac params: hphi must be a 1x1 bank");
  require(hphi.d() == scales.size() * s0.d_o(),
          "msac params: hphi channel size " + std::to_string(hphi.d()) +
              " must equal d_o*L = " + std::to_string(scales.size() * s0.d_o()));
  require(hphi.tensor.dim(0) == s0.d_o(), "msac params: hphi must produce d_o channels");
}

SACParams make_sac_params(Rng& rng, std::size_t heads, std::size_t d, std::size_t d_a,
                          std::size_t d_o, std::size_t n, std::size_t m, bool parallel_conv,
                          bool with_bias, std::size_t n_max, std::size_t m_max) {
  SACParams p;
  p.mh = make_multi_head_params(rng, heads, d, d_a, d_o, n, m, with_bias, n_max, m_max);
  if (parallel_conv) {
    p.hr = FilterBank(init_filter_bank(rng, {d_o, n, m, d}, n * m * d));
    p.hy_fuse = FilterBank(init_filter_bank(rng, {d_o, 1, 1, 2 * d_o}, 2 * d_o));
  }
  p.validate();
  return p;
}

MSACParams make_msac_params(const MsacConfig& cfg, std::size_t n_max, std::size_t m_max) {
  Rng rng(cfg.seed);
  return make_msac_params(rng, cfg, n_max, m_max);
}

MSACParams make_msac_params(Rng& rng, const MsacConfig& cfg, std::size_t n_max,
                            std::size_t m_max) {
  require(!cfg.scales.empty(), "msac config: need at least one scale");
  MSACParams p;
  for (auto [n, m] : cfg.scales)
    p.scales.push_back(make_sac_params(rng, cfg.heads, cfg.d, cfg.d_a, cfg.d_o, n, m,
                                       cfg.parallel_conv, cfg.bias, n_max, m_max));
  std::size_t fused = cfg.d_o * cfg.scales.size();
  p.hphi = FilterBank(init_filter_bank(rng, {cfg.d_o, 1, 1, fused}, fused));
  p.validate();
  return p;
}

namespace ad {

SACParamNodes lift(const SACParams& p) {
  SACParamNodes nodes;
  nodes.mh = lift(p.mh);
  if (p.hr) {
    nodes.hr = leaf(p.hr->tensor, "hr");
    nodes.hy_fuse = leaf(p.hy_fuse->tensor, "hy_fuse");
  }
  return nodes;
}

MSACParamNodes lift(const MSACParams& p) {
  MSACParamNodes nodes;
  for (const SACParams& s : p.scales) nodes.scales.push_back(lift(s));
  nodes.hphi = leaf(p.hphi.tensor, "hphi");
  return nodes;
}

void collect_leaves(const SACParamNodes& p, std::vector<NodePtr>& out) {
  collect_leaves(p.mh, out);
  if (p.hr) {
    out.push_back(p.hr);
    out.push_back(p.hy_fuse);
  }
}

void collect_leaves(const MSACParamNodes& p, std::vector<NodePtr>& out) {
  for (const SACParamNodes& s : p.scales) collect_leaves(s, out);
  out.push_back(p.hphi);
}

NodePtr sac(const NodePtr& x, const SACParamNodes& p,
            std::vector<NodePtr>* coefficient_trace) {
  NodePtr y = multi_head_sa2d(x, p.mh, coefficient_trace);
  if (!p.hr) return y;
  // Parallel regular convolution branch, fused back to d_o channels.
  NodePtr y_conv = conv_bank(x, p.hr);
  NodePtr both = concat_last_axis({y, y_conv});
  return conv_bank(both, p.hy_fuse);
}

NodePtr msac(const NodePtr& x, const MSACParamNodes& p,
             std::vector<NodePtr>* coefficient_trace) {
  std::vector<NodePtr> outs;
  outs.reserve(p.scales.size());
  for (const SACParamNodes& s : p.scales) outs.push_back(sac(x, s, coefficient_trace));
  NodePtr super = concat_last_axis(std::move(outs));  // [N,M,d_o*L]
  return conv_bank(super, p.hphi);
}

NodePtr msac_1d(const NodePtr& x, const MSACParamNodes& p,
                std::vector<NodePtr>* coefficient_trace) {
  require(x->value.rank() == 3 && x->value.dim(0) == 1,
          "msac_1d: input must be [1,M,d], got " + shape_to_string(x->value.shape()));
  for (const SACParamNodes& s : p.scales) {
    std::size_t n = s.mh.heads.front().hq->value.dim(1);
    require(n == 1, "msac_1d: every scale must have filter height 1, got " + std::to_string(n));
  }
  return msac(x, p, coefficient_trace);
}

}  // namespace ad

Tensor sac(const Tensor& x, const SACParams& p) {
  p.validate();
  return ad::sac(ad::leaf(x), ad::lift(p))->value;
}

Tensor msac(const Tensor& x, const MSACParams& p) {
  p.validate();
  return ad::msac(ad::leaf(x), ad::lift(p))->value;
}

Tensor msac_1d(const Tensor& x, const MSACParams& p) {
  p.validate();
  return ad::msac_1d(ad::leaf(x), ad::lift(p))->value;
}

}  // namespace msac
