#pragma once

#include <vector>

#include "msac/tensor.hpp"

namespace msac {

// Two interchangeable convolution kernels. `naive` evaluates the window sums
// directly; `patch` flattens every filter window into a row of a patch matrix
// and runs one dense product. Both accumulate taps in the same (k, l, c)
// order, so they agree far below the test tolerances.
enum class ConvKernel { naive, patch };

ConvKernel default_conv_kernel();
void set_default_conv_kernel(ConvKernel k);

// Offset such that output row i reads input rows i + k - offset, k in [0, n).
// Even filter sizes lean right: a 1x2 filter reads columns j, j+1.
std::size_t conv_center_offset(std::size_t n);

// Single filter: x [N,M,d] * h [n,m,d] -> [N,M]. Out-of-range input positions
// read as the zero vector, so output spatial size equals input spatial size.
Tensor conv2d(const Tensor& x, const Tensor& h);
Tensor conv2d(const Tensor& x, const Tensor& h, ConvKernel kernel);

// Filter bank: x [N,M,d] * bank [F1,...,FL,n,m,d] -> [N,M,F1,...,FL].
Tensor conv_bank(const Tensor& x, const Tensor& bank);
Tensor conv_bank(const Tensor& x, const Tensor& bank, ConvKernel kernel);

// Dense product W [d',d] * X [d,n] -> [d',n], routed through conv_bank on the
// reshaped operands. Exactly equal to the triple-loop product.
Tensor matmul_via_conv(const Tensor& w, const Tensor& x);

// Joint softmax over the listed axes for each fixed setting of the remaining
// axes, stabilized by subtracting the per-slice maximum.
Tensor softmax_over_axes(const Tensor& t, const std::vector<std::size_t>& axes);
Tensor log_softmax_over_axes(const Tensor& t, const std::vector<std::size_t>& axes);

Tensor concat_last_axis(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& t, Shape shape);
Tensor permute(const Tensor& t, const std::vector<std::size_t>& perm);

// Adjoint kernels used by the tape.
Tensor conv_bank_grad_input(const Tensor& grad_out, const Tensor& bank, const Shape& x_shape);
Tensor conv_bank_grad_bank(const Tensor& grad_out, const Tensor& x, const Shape& bank_shape);
Tensor softmax_backward(const Tensor& y, const Tensor& g, const std::vector<std::size_t>& axes);
Tensor log_softmax_backward(const Tensor& y, const Tensor& g,
                            const std::vector<std::size_t>& axes);
std::vector<Tensor> split_last_axis(const Tensor& t, const std::vector<std::size_t>& sizes);

std::vector<std::size_t> row_major_strides(const Shape& s);

}  // namespace msac
