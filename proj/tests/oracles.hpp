// Independent reference implementations used only by tests. Everything here
// is a direct transcription of the defining formulas with plain loops; none
// of it shares code with the library paths it checks.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "msac/tensor.hpp"

namespace oracle {

using msac::Shape;
using msac::Tensor;

// Window sum with 1-based index bookkeeping kept explicit: output (i,j) reads
// input position i - ceil(n/2) + k for k = 1..n, zero outside the signal.
inline Tensor conv2d(const Tensor& x, const Tensor& h) {
  std::size_t N = x.dim(0), M = x.dim(1), d = x.dim(2);
  std::size_t n = h.dim(0), m = h.dim(1);
  std::size_t cn = (n + 1) / 2, cm = (m + 1) / 2;
  Tensor out(Shape{N, M});
  for (std::size_t i = 1; i <= N; ++i) {
    for (std::size_t j = 1; j <= M; ++j) {
      double acc = 0.0;
      for (std::size_t k = 1; k <= n; ++k) {
        for (std::size_t l = 1; l <= m; ++l) {
          long a = static_cast<long>(i) - static_cast<long>(cn) + static_cast<long>(k);
          long b = static_cast<long>(j) - static_cast<long>(cm) + static_cast<long>(l);
          if (a < 1 || a > static_cast<long>(N) || b < 1 || b > static_cast<long>(M)) continue;
          for (std::size_t c = 0; c < d; ++c)
            acc += x[((a - 1) * M + (b - 1)) * d + c] * h[((k - 1) * m + (l - 1)) * d + c];
        }
      }
      out[(i - 1) * M + (j - 1)] = acc;
    }
  }
  return out;
}

// Bank application filter by filter; bank is [F..., n, m, d] flattened to F.
inline Tensor conv_bank(const Tensor& x, const Tensor& bank) {
  std::size_t N = x.dim(0), M = x.dim(1);
  std::size_t r = bank.rank();
  std::size_t n = bank.dim(r - 3), m = bank.dim(r - 2), d = bank.dim(r - 1);
  std::size_t F = bank.size() / (n * m * d);
  Shape out_shape{N, M};
  for (std::size_t ax = 0; ax + 3 < r; ++ax) out_shape.push_back(bank.dim(ax));
  Tensor out(out_shape);
  for (std::size_t f = 0; f < F; ++f) {
    Tensor filt(Shape{n, m, d},
                std::vector<double>(bank.data() + f * n * m * d,
                                    bank.data() + (f + 1) * n * m * d));
    Tensor c = oracle::conv2d(x, filt);
    for (std::size_t p = 0; p < N * M; ++p) out[p * F + f] = c[p];
  }
  return out;
}

inline Tensor matmul(const Tensor& w, const Tensor& x) {
  std::size_t dp = w.dim(0), d = w.dim(1), n = x.dim(1);
  Tensor out(Shape{dp, n});
  for (std::size_t i = 0; i < dp; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) out[i * n + j] += w[i * d + k] * x[k * n + j];
  return out;
}

// Dense-matrix 1D self attention: project, score every query against every
// key, normalize over keys, mix the value columns.
inline Tensor self_attention_1d(const Tensor& X, const Tensor& wq, const Tensor& wk,
                                const Tensor& wv) {
  std::size_t ncols = X.dim(1);
  std::size_t d_a = wq.dim(0), d_o = wv.dim(0);
  Tensor Q = oracle::matmul(wq, X), K = oracle::matmul(wk, X), V = oracle::matmul(wv, X);
  Tensor out(Shape{d_o, ncols});
  for (std::size_t f = 0; f < ncols; ++f) {
    std::vector<double> logits(ncols);
    double mx = -1e300;
    for (std::size_t j = 0; j < ncols; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < d_a; ++a) s += Q[a * ncols + f] * K[a * ncols + j];
      logits[j] = s / std::sqrt(static_cast<double>(d_a));
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (std::size_t j = 0; j < ncols; ++j)
      for (std::size_t o = 0; o < d_o; ++o)
        out[o * ncols + f] += (logits[j] / z) * V[o * ncols + j];
  }
  return out;
}

// Full 2D attention head from the elementary pieces: conv projections with
// filters [da|do, n, m, d], quad-loop scores, per-query softmax with the
// relative bias, convex mixing of value pixels. bias may be null.
inline Tensor sa2d(const Tensor& x, const Tensor& hq, const Tensor& hk, const Tensor& hv,
                   const Tensor* bias) {
  std::size_t N = x.dim(0), M = x.dim(1);
  std::size_t d_a = hq.dim(0), d_o = hv.dim(0);
  Tensor q = oracle::conv_bank(x, hq);
  Tensor k = oracle::conv_bank(x, hk);
  Tensor v = oracle::conv_bank(x, hv);

  Tensor out(Shape{N, M, d_o});
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      std::vector<double> logits(N * M);
      double mx = -1e300;
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t t = 0; t < M; ++t) {
          double s = 0.0;
          for (std::size_t a = 0; a < d_a; ++a)
            s += k[(r * M + t) * d_a + a] * q[(i * M + j) * d_a + a];
          s /= std::sqrt(static_cast<double>(d_a));
          if (bias) {
            std::size_t u = i >= r ? i - r : r - i;
            std::size_t w = j >= t ? j - t : t - j;
            s += (*bias)[u * bias->dim(1) + w];
          }
          logits[r * M + t] = s;
          mx = std::max(mx, s);
        }
      }
      double z = 0.0;
      for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
      }
      for (std::size_t p = 0; p < N * M; ++p)
        for (std::size_t o = 0; o < d_o; ++o)
          out[(i * M + j) * d_o + o] += (logits[p] / z) * v[p * d_o + o];
    }
  }
  return out;
}

}  // namespace oracle
