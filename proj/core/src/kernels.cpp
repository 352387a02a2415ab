#include "msac/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>

namespace msac {

namespace {

ConvKernel g_default_kernel = ConvKernel::patch;

void check_conv_args(const Tensor& x, const Tensor& bank) {
  require(x.rank() == 3, "conv: signal must have rank 3 [N,M,d], got " +
                             shape_to_string(x.shape()));
  require(bank.rank() >= 4, "conv: filter bank must have rank >= 4, got " +
                                shape_to_string(bank.shape()));
  std::size_t r = bank.rank();
  std::size_t n = bank.dim(r - 3), m = bank.dim(r - 2), d = bank.dim(r - 1);
  require(d == x.dim(2), "conv: channel mismatch, signal d=" + std::to_string(x.dim(2)) +
                             " filter d=" + std::to_string(d));
  require(n <= x.dim(0) && m <= x.dim(1),
          "conv: filter " + std::to_string(n) + "x" + std::to_string(m) +
              " larger than signal " + std::to_string(x.dim(0)) + "x" + std::to_string(x.dim(1)));
}

Shape conv_out_shape(const Tensor& x, const Tensor& bank) {
  Shape out{x.dim(0), x.dim(1)};
  for (std::size_t i = 0; i + 3 < bank.rank(); ++i) out.push_back(bank.dim(i));
  return out;
}

std::size_t lead_count(const Tensor& bank) {
  std::size_t f = 1;
  for (std::size_t i = 0; i + 3 < bank.rank(); ++i) f *= bank.dim(i);
  return f;
}

Tensor conv_bank_naive(const Tensor& x, const Tensor& bank) {
  const std::size_t N = x.dim(0), M = x.dim(1), d = x.dim(2);
  const std::size_t r = bank.rank();
  const std::size_t n = bank.dim(r - 3), m = bank.dim(r - 2);
  const std::size_t F = lead_count(bank);
  const std::ptrdiff_t off_n = static_cast<std::ptrdiff_t>(conv_center_offset(n));
  const std::ptrdiff_t off_m = static_cast<std::ptrdiff_t>(conv_center_offset(m));

  Tensor out(conv_out_shape(x, bank));
  const double* xd = x.data();
  const double* hd = bank.data();
  double* od = out.data();
  const std::size_t taps = n * m * d;

  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      double* orow = od + (i * M + j) * F;
      for (std::size_t f = 0; f < F; ++f) {
        const double* h = hd + f * taps;
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          std::ptrdiff_t a = static_cast<std::ptrdiff_t>(i + k) - off_n;
          if (a < 0 || a >= static_cast<std::ptrdiff_t>(N)) continue;
          for (std::size_t l = 0; l < m; ++l) {
            std::ptrdiff_t b = static_cast<std::ptrdiff_t>(j + l) - off_m;
            if (b < 0 || b >= static_cast<std::ptrdiff_t>(M)) continue;
            const double* xp = xd + (static_cast<std::size_t>(a) * M + static_cast<std::size_t>(b)) * d;
            const double* hp = h + (k * m + l) * d;
            for (std::size_t c = 0; c < d; ++c) acc += xp[c] * hp[c];
          }
        }
        orow[f] = acc;
      }
    }
  }
  return out;
}

Tensor conv_bank_patch(const Tensor& x, const Tensor& bank) {
  const std::size_t N = x.dim(0), M = x.dim(1), d = x.dim(2);
  const std::size_t r = bank.rank();
  const std::size_t n = bank.dim(r - 3), m = bank.dim(r - 2);
  const std::size_t F = lead_count(bank);
  const std::size_t P = N * M;
  const std::size_t K = n * m * d;

  // Patch matrix rows hold one filter window each, flattened in (k, l, c)
  // order; 1x1 filters reuse the signal buffer directly.
  std::vector<double> patches;
  const double* pm = nullptr;
  if (n == 1 && m == 1) {
    pm = x.data();
  } else {
    const std::ptrdiff_t off_n = static_cast<std::ptrdiff_t>(conv_center_offset(n));
    const std::ptrdiff_t off_m = static_cast<std::ptrdiff_t>(conv_center_offset(m));
    patches.assign(P * K, 0.0);
    const double* xd = x.data();
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < M; ++j) {
        double* row = patches.data() + (i * M + j) * K;
        for (std::size_t k = 0; k < n; ++k) {
          std::ptrdiff_t a = static_cast<std::ptrdiff_t>(i + k) - off_n;
          if (a < 0 || a >= static_cast<std::ptrdiff_t>(N)) continue;
          for (std::size_t l = 0; l < m; ++l) {
            std::ptrdiff_t b = static_cast<std::ptrdiff_t>(j + l) - off_m;
            if (b < 0 || b >= static_cast<std::ptrdiff_t>(M)) continue;
            const double* xp =
                xd + (static_cast<std::size_t>(a) * M + static_cast<std::size_t>(b)) * d;
            std::copy(xp, xp + d, row + (k * m + l) * d);
          }
        }
      }
    }
    pm = patches.data();
  }

  // out[p, f] = sum_k patches[p, k] * bank[f, k]; bank transposed once so the
  // inner loop runs over contiguous memory.
  std::vector<double> bank_t(K * F);
  const double* hd = bank.data();
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t k = 0; k < K; ++k) bank_t[k * F + f] = hd[f * K + k];

  Tensor out(conv_out_shape(x, bank));
  double* od = out.data();
  for (std::size_t p = 0; p < P; ++p) {
    const double* prow = pm + p * K;
    double* orow = od + p * F;
    for (std::size_t k = 0; k < K; ++k) {
      double a = prow[k];
      const double* brow = bank_t.data() + k * F;
      for (std::size_t f = 0; f < F; ++f) orow[f] += a * brow[f];
    }
  }
  return out;
}

// Offset tables for iterating slices: `outer` enumerates fixed settings of the
// kept axes, `inner` enumerates the normalized axes within one slice.
struct AxisSplit {
  std::vector<std::size_t> outer_offsets;
  std::vector<std::size_t> inner_offsets;
};

AxisSplit make_axis_split(const Shape& shape, const std::vector<std::size_t>& axes) {
  require(!axes.empty(), "softmax: empty axis list");
  std::vector<bool> is_axis(shape.size(), false);
  for (std::size_t a : axes) {
    require(a < shape.size(), "softmax: axis " + std::to_string(a) + " out of range for rank " +
                                  std::to_string(shape.size()));
    require(!is_axis[a], "softmax: repeated axis " + std::to_string(a));
    is_axis[a] = true;
  }
  auto strides = row_major_strides(shape);
  AxisSplit split;
  split.outer_offsets = {0};
  split.inner_offsets = {0};
  for (std::size_t ax = 0; ax < shape.size(); ++ax) {
    auto& table = is_axis[ax] ? split.inner_offsets : split.outer_offsets;
    std::vector<std::size_t> next;
    next.reserve(table.size() * shape[ax]);
    for (std::size_t base : table)
      for (std::size_t i = 0; i < shape[ax]; ++i) next.push_back(base + i * strides[ax]);
    table = std::move(next);
  }
  return split;
}

}  // namespace

ConvKernel default_conv_kernel() { return g_default_kernel; }
void set_default_conv_kernel(ConvKernel k) { g_default_kernel = k; }

std::size_t conv_center_offset(std::size_t n) { return (n + 1) / 2 - 1; }

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
  return strides;
}

Tensor conv2d(const Tensor& x, const Tensor& h) { return conv2d(x, h, g_default_kernel); }

Tensor conv2d(const Tensor& x, const Tensor& h, ConvKernel kernel) {
  require(h.rank() == 3, "conv2d: filter must have rank 3 [n,m,d], got " +
                             shape_to_string(h.shape()));
  Shape bank_shape{1, h.dim(0), h.dim(1), h.dim(2)};
  Tensor bank = reshape(h, bank_shape);
  Tensor out = conv_bank(x, bank, kernel);
  return reshape(out, Shape{x.dim(0), x.dim(1)});
}

Tensor conv_bank(const Tensor& x, const Tensor& bank) {
  return conv_bank(x, bank, g_default_kernel);
}

Tensor conv_bank(const Tensor& x, const Tensor& bank, ConvKernel kernel) {
  check_conv_args(x, bank);
  return kernel == ConvKernel::naive ? conv_bank_naive(x, bank) : conv_bank_patch(x, bank);
}

Tensor matmul_via_conv(const Tensor& w, const Tensor& x) {
  require(w.rank() == 2 && x.rank() == 2, "matmul_via_conv: both arguments must be matrices");
  require(w.dim(1) == x.dim(0), "matmul_via_conv: inner dimension mismatch " +
                                    std::to_string(w.dim(1)) + " vs " + std::to_string(x.dim(0)));
  std::size_t dp = w.dim(0), d = w.dim(1), ncols = x.dim(1);
  Tensor signal = reshape(permute(x, {1, 0}), Shape{1, ncols, d});
  Tensor bank = reshape(w, Shape{dp, 1, 1, d});
  Tensor out = conv_bank(signal, bank);  // [1, n, d']
  return permute(reshape(out, Shape{ncols, dp}), {1, 0});
}

Tensor softmax_over_axes(const Tensor& t, const std::vector<std::size_t>& axes) {
  AxisSplit split = make_axis_split(t.shape(), axes);
  Tensor out(t.shape());
  for (std::size_t base : split.outer_offsets) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t off : split.inner_offsets) mx = std::max(mx, t[base + off]);
    double sum = 0.0;
    for (std::size_t off : split.inner_offsets) {
      double e = std::exp(t[base + off] - mx);
      out[base + off] = e;
      sum += e;
    }
    for (std::size_t off : split.inner_offsets) out[base + off] /= sum;
  }
  return out;
}

Tensor log_softmax_over_axes(const Tensor& t, const std::vector<std::size_t>& axes) {
  AxisSplit split = make_axis_split(t.shape(), axes);
  Tensor out(t.shape());
  for (std::size_t base : split.outer_offsets) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t off : split.inner_offsets) mx = std::max(mx, t[base + off]);
    double sum = 0.0;
    for (std::size_t off : split.inner_offsets) sum += std::exp(t[base + off] - mx);
    double lse = mx + std::log(sum);
    for (std::size_t off : split.inner_offsets) out[base + off] = t[base + off] - lse;
  }
  return out;
}

Tensor softmax_backward(const Tensor& y, const Tensor& g, const std::vector<std::size_t>& axes) {
  AxisSplit split = make_axis_split(y.shape(), axes);
  Tensor dx(y.shape());
  for (std::size_t base : split.outer_offsets) {
    double dot = 0.0;
    for (std::size_t off : split.inner_offsets) dot += g[base + off] * y[base + off];
    for (std::size_t off : split.inner_offsets)
      dx[base + off] = y[base + off] * (g[base + off] - dot);
  }
  return dx;
}

Tensor log_softmax_backward(const Tensor& y, const Tensor& g,
                            const std::vector<std::size_t>& axes) {
  AxisSplit split = make_axis_split(y.shape(), axes);
  Tensor dx(y.shape());
  for (std::size_t base : split.outer_offsets) {
    double gsum = 0.0;
    for (std::size_t off : split.inner_offsets) gsum += g[base + off];
    for (std::size_t off : split.inner_offsets)
      dx[base + off] = g[base + off] - std::exp(y[base + off]) * gsum;
  }
  return dx;
}

Tensor concat_last_axis(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_last_axis: empty tensor list");
  const Shape& first = parts[0].shape();
  require(!first.empty(), "concat_last_axis: tensors must have rank >= 1");
  std::size_t total_last = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == parts[0].rank(), "concat_last_axis: rank mismatch");
    for (std::size_t ax = 0; ax + 1 < p.rank(); ++ax)
      require(p.dim(ax) == first[ax], "concat_last_axis: leading shape mismatch " +
                                          shape_to_string(p.shape()) + " vs " +
                                          shape_to_string(first));
    total_last += p.dim(p.rank() - 1);
  }
  Shape out_shape = first;
  out_shape.back() = total_last;
  Tensor out(out_shape);

  std::size_t rows = shape_numel(first) / first.back();
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    std::size_t w = p.dim(p.rank() - 1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(p.data() + r * w, p.data() + (r + 1) * w, out.data() + r * total_last + col);
    col += w;
  }
  return out;
}

std::vector<Tensor> split_last_axis(const Tensor& t, const std::vector<std::size_t>& sizes) {
  std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  require(t.rank() >= 1 && t.dim(t.rank() - 1) == total, "split_last_axis: sizes do not sum");
  std::size_t rows = t.size() / total;
  std::vector<Tensor> parts;
  std::size_t col = 0;
  for (std::size_t w : sizes) {
    Shape s = t.shape();
    s.back() = w;
    Tensor part(s);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(t.data() + r * total + col, t.data() + r * total + col + w, part.data() + r * w);
    parts.push_back(std::move(part));
    col += w;
  }
  return parts;
}

Tensor reshape(const Tensor& t, Shape shape) {
  require(shape_numel(shape) == t.size(), "reshape: element count mismatch, " +
                                              shape_to_string(t.shape()) + " -> " +
                                              shape_to_string(shape));
  return Tensor(std::move(shape), std::vector<double>(t.data(), t.data() + t.size()));
}

Tensor permute(const Tensor& t, const std::vector<std::size_t>& perm) {
  require(perm.size() == t.rank(), "permute: perm length must equal rank");
  std::vector<bool> seen(perm.size(), false);
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    require(perm[i] < t.rank() && !seen[perm[i]], "permute: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = t.dim(perm[i]);
  }
  Tensor out(out_shape);
  auto src_strides = row_major_strides(t.shape());
  auto out_strides = row_major_strides(out_shape);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t rem = flat, src = 0;
    for (std::size_t ax = 0; ax < out_shape.size(); ++ax) {
      std::size_t idx = rem / out_strides[ax];
      rem %= out_strides[ax];
      src += idx * src_strides[perm[ax]];
    }
    out[flat] = t[src];
  }
  return out;
}

Tensor conv_bank_grad_input(const Tensor& grad_out, const Tensor& bank, const Shape& x_shape) {
  require(x_shape.size() == 3, "conv_bank_grad_input: signal shape must be rank 3");
  const std::size_t N = x_shape[0], M = x_shape[1], d = x_shape[2];
  const std::size_t r = bank.rank();
  const std::size_t n = bank.dim(r - 3), m = bank.dim(r - 2);
  const std::size_t F = lead_count(bank);
  const std::ptrdiff_t off_n = static_cast<std::ptrdiff_t>(conv_center_offset(n));
  const std::ptrdiff_t off_m = static_cast<std::ptrdiff_t>(conv_center_offset(m));

  Tensor dx(Shape{N, M, d});
  const double* gd = grad_out.data();
  const double* hd = bank.data();
  const std::size_t taps = n * m * d;

  for (std::size_t a = 0; a < N; ++a) {
    for (std::size_t b = 0; b < M; ++b) {
      double* drow = dx.data() + (a * M + b) * d;
      for (std::size_t k = 0; k < n; ++k) {
        std::ptrdiff_t i = static_cast<std::ptrdiff_t>(a) - static_cast<std::ptrdiff_t>(k) + off_n;
        if (i < 0 || i >= static_cast<std::ptrdiff_t>(N)) continue;
        for (std::size_t l = 0; l < m; ++l) {
          std::ptrdiff_t j =
              static_cast<std::ptrdiff_t>(b) - static_cast<std::ptrdiff_t>(l) + off_m;
          if (j < 0 || j >= static_cast<std::ptrdiff_t>(M)) continue;
          const double* grow =
              gd + (static_cast<std::size_t>(i) * M + static_cast<std::size_t>(j)) * F;
          for (std::size_t f = 0; f < F; ++f) {
            double gv = grow[f];
            if (gv == 0.0) continue;
            const double* hp = hd + f * taps + (k * m + l) * d;
            for (std::size_t c = 0; c < d; ++c) drow[c] += gv * hp[c];
          }
        }
      }
    }
  }
  return dx;
}

Tensor conv_bank_grad_bank(const Tensor& grad_out, const Tensor& x, const Shape& bank_shape) {
  const std::size_t N = x.dim(0), M = x.dim(1), d = x.dim(2);
  const std::size_t r = bank_shape.size();
  const std::size_t n = bank_shape[r - 3], m = bank_shape[r - 2];
  std::size_t F = 1;
  for (std::size_t i = 0; i + 3 < r; ++i) F *= bank_shape[i];
  const std::ptrdiff_t off_n = static_cast<std::ptrdiff_t>(conv_center_offset(n));
  const std::ptrdiff_t off_m = static_cast<std::ptrdiff_t>(conv_center_offset(m));

  Tensor dh(bank_shape);
  const double* gd = grad_out.data();
  const double* xd = x.data();
  const std::size_t taps = n * m * d;

  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      const double* grow = gd + (i * M + j) * F;
      for (std::size_t k = 0; k < n; ++k) {
        std::ptrdiff_t a = static_cast<std::ptrdiff_t>(i + k) - off_n;
        if (a < 0 || a >= static_cast<std::ptrdiff_t>(N)) continue;
        for (std::size_t l = 0; l < m; ++l) {
          std::ptrdiff_t b = static_cast<std::ptrdiff_t>(j + l) - off_m;
          if (b < 0 || b >= static_cast<std::ptrdiff_t>(M)) continue;
          const double* xp =
              xd + (static_cast<std::size_t>(a) * M + static_cast<std::size_t>(b)) * d;
          for (std::size_t f = 0; f < F; ++f) {
            double gv = grow[f];
            if (gv == 0.0) continue;
            double* hp = dh.data() + f * taps + (k * m + l) * d;
            for (std::size_t c = 0; c < d; ++c) hp[c] += gv * xp[c];
          }
        }
      }
    }
  }
  return dh;
}

}  // namespace msac
