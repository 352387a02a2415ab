#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msac/kernels.hpp"
#include "msac/tensor.hpp"

namespace msac::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One differentiable value. The tape records operations at the granularity of
// whole tensor ops, so a forward pass stays a few dozen nodes even for the
// full multiscale operator.
struct Node {
  Tensor value;
  std::string op_tag;
  std::vector<NodePtr> parents;
  std::optional<Tensor> grad;

  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(Node&)> backprop;
};

NodePtr leaf(Tensor value, std::string tag = "leaf");

// Accumulates g into n's grad, initializing it on first touch.
void accumulate_grad(const NodePtr& n, const Tensor& g);

// Reverse topological accumulation from a scalar root. Populates grad on every
// reachable node; gradients of shared subexpressions sum over fan-out.
void backward(const NodePtr& root);

// Per-coordinate central differences: (f(x+eps e) - f(x-eps e)) / 2eps.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps);

// Graph primitives. Each mirrors the plain kernel of the same name.
NodePtr reshape(const NodePtr& x, Shape shape);
NodePtr permute(const NodePtr& x, std::vector<std::size_t> perm);
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& x, double c);
NodePtr mul_by(const NodePtr& x, Tensor weights);  // elementwise constant weights
NodePtr square(const NodePtr& x);
NodePtr dot(const NodePtr& a, const NodePtr& b);  // rank-1 pair -> scalar
NodePtr sum(const NodePtr& x);                    // -> scalar
NodePtr spatial_mean(const NodePtr& x);           // [N,M,d] -> [d]
NodePtr sigmoid(const NodePtr& x);
NodePtr conv_bank(const NodePtr& x, const NodePtr& bank);
NodePtr conv2d(const NodePtr& x, const NodePtr& filt);
NodePtr matmul_via_conv(const NodePtr& w, const NodePtr& x);
NodePtr softmax_over_axes(const NodePtr& x, std::vector<std::size_t> axes);
NodePtr log_softmax_over_axes(const NodePtr& x, std::vector<std::size_t> axes);
NodePtr concat_last_axis(std::vector<NodePtr> parts);
NodePtr gather_rows(const NodePtr& table, std::vector<std::size_t> ids);  // -> [1,len,d]

// scores [N,M,N,M] indexed (r,t,i,j) plus bias[|i-r|,|j-t|]; bias must cover
// distances up to N-1 and M-1.
NodePtr add_relative_bias(const NodePtr& scores, const NodePtr& bias);

// coeff [N,M,N,M] indexed (r,t,i,j), values [N,M,d_o]:
// out[i,j,:] = sum_{r,t} coeff[r,t,i,j] * values[r,t,:].
NodePtr apply_attention(const NodePtr& coeff, const NodePtr& values);

// Numerically stable -(y log s + (1-y) log(1-s)) with s = sigmoid(logit).
NodePtr bce_with_logits(const NodePtr& logit, double target);

}  // namespace msac::ad
