#include "msac/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace msac::ad {

namespace {

NodePtr make_node(Tensor value, std::string tag, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op_tag = std::move(tag);
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  return n;
}

}  // namespace

NodePtr leaf(Tensor value, std::string tag) {
  return make_node(std::move(value), std::move(tag), {}, nullptr);
}

void accumulate_grad(const NodePtr& n, const Tensor& g) {
  require(g.same_shape(n->value), "gradient shape mismatch for op " + n->op_tag);
  if (!n->grad)
    n->grad = g;
  else
    add_in_place(*n->grad, g);
}

void backward(const NodePtr& root) {
  require(root != nullptr, "backward: null root");
  require(root->value.size() == 1, "backward: root must be scalar-valued, got shape " +
                                       shape_to_string(root->value.shape()));

  // Iterative DFS; state 1 = on stack, 2 = done. A node seen in state 1 again
  // means a cycle.
  std::unordered_map<Node*, int> state;
  std::vector<NodePtr> order;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == 0) {
      int& s = state[node.get()];
      if (s == 2) {
        stack.pop_back();
        continue;
      }
      if (s == 1) throw std::invalid_argument("backward: cycle detected in graph");
      s = 1;
    }
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      int ps = state.count(parent.get()) ? state[parent.get()] : 0;
      if (ps == 1) throw std::invalid_argument("backward: cycle detected in graph");
      if (ps == 0) stack.emplace_back(parent, 0);
    } else {
      state[node.get()] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad = Tensor::full(root->value.shape(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.grad && n.backprop) n.backprop(n);
  }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  require(eps > 0.0, "finite_diff_grad: eps must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + eps;
    double up = f(probe);
    probe[i] = orig - eps;
    double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::runtime_error("finite_diff_grad: non-finite function value");
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

NodePtr reshape(const NodePtr& x, Shape shape) {
  Shape orig = x->value.shape();
  return make_node(msac::reshape(x->value, shape), "reshape", {x}, [orig](Node& n) {
    accumulate_grad(n.parents[0], msac::reshape(*n.grad, orig));
  });
}

NodePtr permute(const NodePtr& x, std::vector<std::size_t> perm) {
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
  return make_node(msac::permute(x->value, perm), "permute", {x}, [inverse](Node& n) {
    accumulate_grad(n.parents[0], msac::permute(*n.grad, inverse));
  });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  return make_node(msac::add(a->value, b->value), "add", {a, b}, [](Node& n) {
    accumulate_grad(n.parents[0], *n.grad);
    accumulate_grad(n.parents[1], *n.grad);
  });
}

NodePtr scale(const NodePtr& x, double c) {
  return make_node(msac::scale(x->value, c), "scale", {x}, [c](Node& n) {
    accumulate_grad(n.parents[0], msac::scale(*n.grad, c));
  });
}

NodePtr mul_by(const NodePtr& x, Tensor weights) {
  require(weights.same_shape(x->value), "mul_by: weight shape mismatch");
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * weights[i];
  return make_node(std::move(out), "mul_by", {x}, [w = std::move(weights)](Node& n) {
    Tensor dx(w.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = (*n.grad)[i] * w[i];
    accumulate_grad(n.parents[0], dx);
  });
}

NodePtr square(const NodePtr& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * x->value[i];
  return make_node(std::move(out), "square", {x}, [](Node& n) {
    const Tensor& v = n.parents[0]->value;
    Tensor dx(v.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = 2.0 * v[i] * (*n.grad)[i];
    accumulate_grad(n.parents[0], dx);
  });
}

NodePtr dot(const NodePtr& a, const NodePtr& b) {
  require(a->value.rank() == 1 && b->value.same_shape(a->value),
          "dot: expects two rank-1 tensors of equal length");
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) acc += a->value[i] * b->value[i];
  return make_node(Tensor::scalar(acc), "dot", {a, b}, [](Node& n) {
    double g = n.grad->item();
    accumulate_grad(n.parents[0], msac::scale(n.parents[1]->value, g));
    accumulate_grad(n.parents[1], msac::scale(n.parents[0]->value, g));
  });
}

NodePtr sum(const NodePtr& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
  return make_node(Tensor::scalar(acc), "sum", {x}, [](Node& n) {
    accumulate_grad(n.parents[0], Tensor::full(n.parents[0]->value.shape(), n.grad->item()));
  });
}

NodePtr spatial_mean(const NodePtr& x) {
  require(x->value.rank() == 3, "spatial_mean: expects [N,M,d]");
  std::size_t N = x->value.dim(0), M = x->value.dim(1), d = x->value.dim(2);
  Tensor out(Shape{d});
  for (std::size_t p = 0; p < N * M; ++p)
    for (std::size_t c = 0; c < d; ++c) out[c] += x->value[p * d + c];
  double inv = 1.0 / static_cast<double>(N * M);
  for (std::size_t c = 0; c < d; ++c) out[c] *= inv;
  return make_node(std::move(out), "spatial_mean", {x}, [N, M, d, inv](Node& n) {
    Tensor dx(Shape{N, M, d});
    for (std::size_t p = 0; p < N * M; ++p)
      for (std::size_t c = 0; c < d; ++c) dx[p * d + c] = (*n.grad)[c] * inv;
    accumulate_grad(n.parents[0], dx);
  });
}

NodePtr sigmoid(const NodePtr& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x->value[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Tensor saved = out;
  return make_node(std::move(out), "sigmoid", {x}, [s = std::move(saved)](Node& n) {
    Tensor dx(s.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = (*n.grad)[i] * s[i] * (1.0 - s[i]);
    accumulate_grad(n.parents[0], dx);
  });
}

NodePtr conv_bank(const NodePtr& x, const NodePtr& bank) {
  Tensor out = msac::conv_bank(x->value, bank->value);
  return make_node(std::move(out), "conv_bank", {x, bank}, [](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    const Tensor& hv = n.parents[1]->value;
    accumulate_grad(n.parents[0], conv_bank_grad_input(*n.grad, hv, xv.shape()));
    accumulate_grad(n.parents[1], conv_bank_grad_bank(*n.grad, xv, hv.shape()));
  });
}

NodePtr conv2d(const NodePtr& x, const NodePtr& filt) {
  require(filt->value.rank() == 3, "conv2d: filter must have rank 3");
  Shape bank_shape{1, filt->value.dim(0), filt->value.dim(1), filt->value.dim(2)};
  NodePtr bank = reshape(filt, bank_shape);
  NodePtr out = conv_bank(x, bank);
  return reshape(out, Shape{x->value.dim(0), x->value.dim(1)});
}

NodePtr matmul_via_conv(const NodePtr& w, const NodePtr& x) {
  require(w->value.rank() == 2 && x->value.rank() == 2,
          "matmul_via_conv: both arguments must be matrices");
  require(w->value.dim(1) == x->value.dim(0), "matmul_via_conv: inner dimension mismatch");
  std::size_t dp = w->value.dim(0), d = w->value.dim(1), ncols = x->value.dim(1);
  NodePtr signal = reshape(permute(x, {1, 0}), Shape{1, ncols, d});
  NodePtr bank = reshape(w, Shape{dp, 1, 1, d});
  NodePtr out = conv_bank(signal, bank);  // [1, n, d']
  return permute(reshape(out, Shape{ncols, dp}), {1, 0});
}

NodePtr softmax_over_axes(const NodePtr& x, std::vector<std::size_t> axes) {
  Tensor out = msac::softmax_over_axes(x->value, axes);
  Tensor saved = out;
  return make_node(std::move(out), "softmax_over_axes", {x},
                   [axes = std::move(axes), y = std::move(saved)](Node& n) {
                     accumulate_grad(n.parents[0], softmax_backward(y, *n.grad, axes));
                   });
}

NodePtr log_softmax_over_axes(const NodePtr& x, std::vector<std::size_t> axes) {
  Tensor out = msac::log_softmax_over_axes(x->value, axes);
  Tensor saved = out;
  return make_node(std::move(out), "log_softmax_over_axes", {x},
                   [axes = std::move(axes), y = std::move(saved)](Node& n) {
                     accumulate_grad(n.parents[0], log_softmax_backward(y, *n.grad, axes));
                   });
}

NodePtr concat_last_axis(std::vector<NodePtr> parts) {
  require(!parts.empty(), "concat_last_axis: empty node list");
  std::vector<Tensor> values;
  std::vector<std::size_t> sizes;
  for (const NodePtr& p : parts) {
    values.push_back(p->value);
    sizes.push_back(p->value.dim(p->value.rank() - 1));
  }
  Tensor out = msac::concat_last_axis(values);
  return make_node(std::move(out), "concat_last_axis", std::move(parts),
                   [sizes = std::move(sizes)](Node& n) {
                     std::vector<Tensor> slices = split_last_axis(*n.grad, sizes);
                     for (std::size_t i = 0; i < slices.size(); ++i)
                       accumulate_grad(n.parents[i], slices[i]);
                   });
}

NodePtr gather_rows(const NodePtr& table, std::vector<std::size_t> ids) {
  require(table->value.rank() == 2, "gather_rows: table must be [vocab, d]");
  require(!ids.empty(), "gather_rows: empty id sequence");
  std::size_t vocab = table->value.dim(0), d = table->value.dim(1);
  for (std::size_t id : ids)
    require(id < vocab, "gather_rows: id " + std::to_string(id) + " out of vocabulary " +
                            std::to_string(vocab));
  Tensor out(Shape{1, ids.size(), d});
  for (std::size_t t = 0; t < ids.size(); ++t)
    std::copy(table->value.data() + ids[t] * d, table->value.data() + (ids[t] + 1) * d,
              out.data() + t * d);
  return make_node(std::move(out), "gather_rows", {table},
                   [ids = std::move(ids), vocab, d](Node& n) {
                     Tensor dt(Shape{vocab, d});
                     for (std::size_t t = 0; t < ids.size(); ++t)
                       for (std::size_t c = 0; c < d; ++c)
                         dt[ids[t] * d + c] += (*n.grad)[t * d + c];
                     accumulate_grad(n.parents[0], dt);
                   });
}

namespace {

// Walks (r,t,i,j) score entries together with the matching bias cell.
template <typename Fn>
void for_each_bias_pair(std::size_t N, std::size_t M, std::size_t bm, Fn&& fn) {
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t t = 0; t < M; ++t)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < M; ++j) {
          std::size_t u = i >= r ? i - r : r - i;
          std::size_t v = j >= t ? j - t : t - j;
          fn(((r * M + t) * N + i) * M + j, u * bm + v);
        }
}

}  // namespace

NodePtr add_relative_bias(const NodePtr& scores, const NodePtr& bias) {
  const Tensor& s = scores->value;
  const Tensor& b = bias->value;
  require(s.rank() == 4 && s.dim(0) == s.dim(2) && s.dim(1) == s.dim(3),
          "add_relative_bias: scores must be [N,M,N,M], got " + shape_to_string(s.shape()));
  require(b.rank() == 2, "add_relative_bias: bias must be a matrix");
  std::size_t N = s.dim(0), M = s.dim(1);
  require(b.dim(0) >= N && b.dim(1) >= M,
          "add_relative_bias: bias " + shape_to_string(b.shape()) +
              " too small for spatial extent " + std::to_string(N) + "x" + std::to_string(M));
  Tensor out = s;
  for_each_bias_pair(N, M, b.dim(1),
                     [&](std::size_t si, std::size_t bi) { out[si] += b[bi]; });
  return make_node(std::move(out), "add_relative_bias", {scores, bias}, [N, M](Node& n) {
    accumulate_grad(n.parents[0], *n.grad);
    Tensor db(n.parents[1]->value.shape());
    for_each_bias_pair(N, M, db.dim(1),
                       [&](std::size_t si, std::size_t bi) { db[bi] += (*n.grad)[si]; });
    accumulate_grad(n.parents[1], db);
  });
}

NodePtr apply_attention(const NodePtr& coeff, const NodePtr& values) {
  const Tensor& a = coeff->value;
  const Tensor& v = values->value;
  require(a.rank() == 4 && v.rank() == 3, "apply_attention: expects [N,M,N,M] and [N,M,d]");
  std::size_t N = v.dim(0), M = v.dim(1), d = v.dim(2);
  require(a.dim(0) == N && a.dim(1) == M && a.dim(2) == N && a.dim(3) == M,
          "apply_attention: coefficient shape " + shape_to_string(a.shape()) +
              " does not match values " + shape_to_string(v.shape()));
  std::size_t P = N * M;
  Tensor out(Shape{N, M, d});
  // out[q,:] = sum_p a[p,q] * v[p,:] with p=(r,t), q=(i,j) flattened.
  for (std::size_t p = 0; p < P; ++p) {
    const double* vrow = v.data() + p * d;
    for (std::size_t q = 0; q < P; ++q) {
      double w = a[p * P + q];
      double* orow = out.data() + q * d;
      for (std::size_t c = 0; c < d; ++c) orow[c] += w * vrow[c];
    }
  }
  return make_node(std::move(out), "apply_attention", {coeff, values}, [N, M, d](Node& n) {
    std::size_t P = N * M;
    const Tensor& a = n.parents[0]->value;
    const Tensor& v = n.parents[1]->value;
    const Tensor& g = *n.grad;
    Tensor da(a.shape());
    Tensor dv(v.shape());
    for (std::size_t p = 0; p < P; ++p) {
      const double* vrow = v.data() + p * d;
      double* dvrow = dv.data() + p * d;
      for (std::size_t q = 0; q < P; ++q) {
        const double* grow = g.data() + q * d;
        double acc = 0.0;
        double w = a[p * P + q];
        for (std::size_t c = 0; c < d; ++c) {
          acc += grow[c] * vrow[c];
          dvrow[c] += w * grow[c];
        }
        da[p * P + q] = acc;
      }
    }
    accumulate_grad(n.parents[0], da);
    accumulate_grad(n.parents[1], dv);
  });
}

NodePtr bce_with_logits(const NodePtr& logit, double target) {
  require(logit->value.size() == 1, "bce_with_logits: logit must be scalar");
  require(target == 0.0 || target == 1.0, "bce_with_logits: target must be 0 or 1");
  double s = logit->value.item();
  // max(s,0) - y*s + log(1 + exp(-|s|))
  double loss = std::max(s, 0.0) - target * s + std::log1p(std::exp(-std::fabs(s)));
  return make_node(Tensor::scalar(loss), "bce_with_logits", {logit}, [target](Node& n) {
    double s = n.parents[0]->value.item();
    double sig = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
    accumulate_grad(n.parents[0], msac::scale(Tensor::scalar(sig - target), n.grad->item()));
  });
}

}  // namespace msac::ad
