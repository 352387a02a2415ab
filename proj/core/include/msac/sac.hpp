#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "msac/attention.hpp"

namespace msac {

// One self-attentive convolution scale: multi-head attention with n x m
// projection filters, optionally fused with a parallel regular convolution
// branch. hr and hy_fuse are present together or not at all.
struct SACParams {
  MultiHeadParams mh;
  std::optional<FilterBank> hr;
  std::optional<FilterBank> hy_fuse;

  std::size_t d_o() const { return mh.d_o(); }
  std::size_t n() const { return mh.heads.front().n(); }
  std::size_t m() const { return mh.heads.front().m(); }
  bool has_parallel_conv() const { return hr.has_value(); }
  void validate() const;
};

// L parallel SAC scales fused by the 1x1 reduction bank hphi
// [d_o, 1, 1, d_o*L]; scale l occupies channel block [l*d_o, (l+1)*d_o).
struct MSACParams {
  std::vector<SACParams> scales;
  FilterBank hphi;

  std::size_t scale_count() const { return scales.size(); }
  std::size_t d_o() const { return scales.front().d_o(); }
  void validate() const;
};

// Mirrors the MSAC configuration JSON:
// {d, d_a, d_o, heads, scales: [[n,m],...], parallel_conv, bias, seed}.
struct MsacConfig {
  std::size_t d = 2;
  std::size_t d_a = 2;
  std::size_t d_o = 2;
  std::size_t heads = 1;
  std::vector<std::pair<std::size_t, std::size_t>> scales = {{1, 1}};
  bool parallel_conv = false;
  bool bias = false;
  std::uint64_t seed = 42;
};

SACParams make_sac_params(Rng& rng, std::size_t heads, std::size_t d, std::size_t d_a,
                          std::size_t d_o, std::size_t n, std::size_t m, bool parallel_conv,
                          bool with_bias, std::size_t n_max, std::size_t m_max);
MSACParams make_msac_params(const MsacConfig& cfg, std::size_t n_max, std::size_t m_max);
MSACParams make_msac_params(Rng& rng, const MsacConfig& cfg, std::size_t n_max,
                            std::size_t m_max);

namespace ad {

struct SACParamNodes {
  MultiHeadParamNodes mh;
  NodePtr hr;       // null when absent
  NodePtr hy_fuse;  // present iff hr present
};
struct MSACParamNodes {
  std::vector<SACParamNodes> scales;
  NodePtr hphi;
};

SACParamNodes lift(const SACParams& p);
MSACParamNodes lift(const MSACParams& p);
void collect_leaves(const SACParamNodes& p, std::vector<NodePtr>& out);
void collect_leaves(const MSACParamNodes& p, std::vector<NodePtr>& out);

NodePtr sac(const NodePtr& x, const SACParamNodes& p,
            std::vector<NodePtr>* coefficient_trace = nullptr);
NodePtr msac(const NodePtr& x, const MSACParamNodes& p,
             std::vector<NodePtr>* coefficient_trace = nullptr);
NodePtr msac_1d(const NodePtr& x, const MSACParamNodes& p,
                std::vector<NodePtr>* coefficient_trace = nullptr);

}  // namespace ad

Tensor sac(const Tensor& x, const SACParams& p);
Tensor msac(const Tensor& x, const MSACParams& p);
// Sentence-shaped entry point: requires x [1,M,d] and every scale 1 x m_l.
Tensor msac_1d(const Tensor& x, const MSACParams& p);

}  // namespace msac
