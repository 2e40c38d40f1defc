#include "mmv/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace mmv::diff {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Builds the output tensor and, when any input is tracked, attaches the
// backward closure and parent links.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<NodePtr<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto out = Tensor<T>::from(std::move(shape), std::move(values));
  if (!NoGradGuard::grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in && in->requires_grad);
  if (!any) return out;
  Node<T>* node = out.node();
  node->requires_grad = true;
  for (auto& in : inputs) {
    if (in && in->requires_grad) node->parents.push_back(std::move(in));
  }
  node->backward = std::move(backward);
  return out;
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch(op, a.shape(), b.shape());
}

template <typename T>
void require_rank2(const char* op, const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(x.shape()));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::parallel::matmul<T>(a.data(), b.data(), {}, out, m, k, n);
  NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
  return make_result<T>({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node<T>& self) {
    if (an->requires_grad)
      kernels::parallel::matmul_grad_a<T>(self.grad, bn->value, {an->grad_buffer(), m * k}, m, k, n);
    if (bn->requires_grad)
      kernels::parallel::matmul_grad_b<T>(an->value, self.grad, {bn->grad_buffer(), k * n}, m, k, n);
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(0)) mismatch("linear", x.shape(), weight.shape());
  const std::size_t k = weight.dim(0), n = weight.dim(1), m = x.size() / k;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) mismatch("linear bias", weight.shape(), bias.shape());
  std::vector<T> out(m * n);
  kernels::parallel::matmul<T>(x.data(), weight.data(), bias.defined() ? bias.data() : std::span<const T>{}, out, m,
                               k, n);
  Shape shape = x.shape();
  shape.back() = n;
  NodePtr<T> xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.defined() ? bias.node_ptr() : nullptr;
  return make_result<T>(std::move(shape), std::move(out), {xn, wn, bn}, [xn, wn, bn, m, k, n](Node<T>& self) {
    if (xn->requires_grad)
      kernels::parallel::matmul_grad_a<T>(self.grad, wn->value, {xn->grad_buffer(), m * k}, m, k, n);
    if (wn->requires_grad)
      kernels::parallel::matmul_grad_b<T>(xn->value, self.grad, {wn->grad_buffer(), k * n}, m, k, n);
    if (bn && bn->requires_grad) {
      T* db = bn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += self.grad[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    for (const auto& p : {an, bn}) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      T* g = an->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      T* g = an->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  NodePtr<T> an = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {an}, [an, factor](Node<T>& self) {
    T* g = an->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  NodePtr<T> xn = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), {xn}, [xn](Node<T>& self) {
    T* g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn->value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  NodePtr<T> xn = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), {xn}, [xn](Node<T>& self) {
    T* g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = xn->value[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      g[i] += self.grad[i] * d;
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(x.shape()));
  const auto& shape = x.shape();
  const std::size_t len = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * len * inner + r;
      T max_v = in[base];
      for (std::size_t j = 1; j < len; ++j) max_v = std::max(max_v, in[base + j * inner]);
      T total = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        out[base + j * inner] = std::exp(in[base + j * inner] - max_v);
        total += out[base + j * inner];
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  NodePtr<T> xn = x.node_ptr();
  return make_result<T>(shape, std::move(out), {xn}, [xn, outer, inner, len](Node<T>& self) {
    T* g = xn->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < inner; ++r) {
        const std::size_t base = o * len * inner + r;
        T dot = T(0);
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t n = x.shape().back();
  if (gamma.size() != n || beta.size() != n) mismatch("layer_norm", x.shape(), gamma.shape());
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
  const auto in = x.data();
  const auto gm = gamma.data(), bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in.data() + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * rstd[r];
      out[r * n + j] = xhat[r * n + j] * gm[j] + bt[j];
    }
  }
  NodePtr<T> xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
  return make_result<T>(x.shape(), std::move(out), {xn, gn, bn},
                        [xn, gn, bn, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
                          const auto& gy = self.grad;
                          if (gn->requires_grad || bn->requires_grad) {
                            T* dg = gn->requires_grad ? gn->grad_buffer() : nullptr;
                            T* db = bn->requires_grad ? bn->grad_buffer() : nullptr;
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < n; ++j) {
                                if (dg) dg[j] += gy[r * n + j] * xhat[r * n + j];
                                if (db) db[j] += gy[r * n + j];
                              }
                            }
                          }
                          if (!xn->requires_grad) return;
                          T* dx = xn->grad_buffer();
                          const auto& gm = gn->value;
                          for (std::size_t r = 0; r < rows; ++r) {
                            T mean_d = T(0), mean_dx = T(0);
                            for (std::size_t j = 0; j < n; ++j) {
                              const T d = gy[r * n + j] * gm[j];
                              mean_d += d;
                              mean_dx += d * xhat[r * n + j];
                            }
                            mean_d /= static_cast<T>(n);
                            mean_dx /= static_cast<T>(n);
                            for (std::size_t j = 0; j < n; ++j) {
                              const T d = gy[r * n + j] * gm[j];
                              dx[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const kernels::AttentionDims& dims, std::span<const std::uint8_t> key_mask) {
  require_same_shape("attention", q, k);
  require_same_shape("attention", q, v);
  require_rank2("attention", q);
  if (q.dim(0) != dims.groups * dims.seq || q.dim(1) != dims.width()) {
    throw DimensionError("attention: tensor " + shape_string(q.shape()) + " does not match " +
                         std::to_string(dims.groups) + " groups x " + std::to_string(dims.seq) + " tokens x " +
                         std::to_string(dims.heads) + " heads x " + std::to_string(dims.head_dim));
  }
  if (!key_mask.empty() && key_mask.size() != dims.groups * dims.seq) {
    throw DimensionError("attention: key mask length " + std::to_string(key_mask.size()) + " does not match " +
                         std::to_string(dims.groups * dims.seq) + " tokens");
  }
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  std::vector<T> out(q.size());
  std::vector<T> probs(dims.groups * dims.heads * dims.seq * dims.seq);
  kernels::parallel::attention_forward<T>(q.data(), k.data(), v.data(), mask, out, probs, dims);
  NodePtr<T> qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr();
  return make_result<T>(q.shape(), std::move(out), {qn, kn, vn},
                        [qn, kn, vn, dims, mask = std::move(mask), probs = std::move(probs)](Node<T>& self) {
                          // The kernel writes all three; scratch buffers absorb untracked inputs.
                          std::vector<T> scratch_q, scratch_k, scratch_v;
                          auto target = [](const NodePtr<T>& node, std::vector<T>& scratch) -> std::span<T> {
                            if (node->requires_grad) return {node->grad_buffer(), node->value.size()};
                            scratch.assign(node->value.size(), T(0));
                            return scratch;
                          };
                          kernels::parallel::attention_backward<T>(qn->value, kn->value, vn->value, mask, probs,
                                                                   self.grad, target(qn, scratch_q),
                                                                   target(kn, scratch_k), target(vn, scratch_v), dims);
                        });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t width = 0;
  std::vector<std::size_t> offsets;
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) mismatch("concat_cols", parts[0].shape(), p.shape());
    offsets.push_back(width);
    width += p.dim(1);
    nodes.push_back(p.node_ptr());
  }
  std::vector<T> out(rows * width);
  for (std::size_t idx = 0; idx < parts.size(); ++idx) {
    const std::size_t w = parts[idx].dim(1);
    const auto src = parts[idx].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * w, w, out.data() + r * width + offsets[idx]);
  }
  return make_result<T>({rows, width}, std::move(out), nodes, [nodes, offsets, rows, width](Node<T>& self) {
    for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
      const auto& node = nodes[idx];
      if (!node->requires_grad) continue;
      const std::size_t w = node->shape[1];
      T* g = node->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * width + offsets[idx] + j];
    }
  });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t width = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  std::vector<NodePtr<T>> nodes;
  std::vector<T> out;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != width) mismatch("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
    nodes.push_back(p.node_ptr());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result<T>({rows, width}, std::move(out), nodes, [nodes](Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& node : nodes) {
      const std::size_t n = node->value.size();
      if (node->requires_grad) {
        T* g = node->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::ptrdiff_t> index) {
  require_rank2("gather_rows", x);
  const std::size_t rows = x.dim(0), width = x.dim(1);
  std::vector<std::ptrdiff_t> idx(index.begin(), index.end());
  std::vector<T> out(idx.size() * width, T(0));
  const auto src = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    if (static_cast<std::size_t>(idx[r]) >= rows)
      throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range for " + shape_string(x.shape()));
    std::copy_n(src.data() + static_cast<std::size_t>(idx[r]) * width, width, out.data() + r * width);
  }
  NodePtr<T> xn = x.node_ptr();
  const std::size_t out_rows = idx.size();
  return make_result<T>({out_rows, width}, std::move(out), {xn}, [xn, width, idx = std::move(idx)](Node<T>& self) {
    T* g = xn->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      T* dst = g + static_cast<std::size_t>(idx[r]) * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += self.grad[r * width + j];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) mismatch("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  NodePtr<T> xn = x.node_ptr();
  return make_result<T>(std::move(shape), std::move(out), {xn}, [xn](Node<T>& self) {
    T* g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  NodePtr<T> xn = x.node_ptr();
  return make_result<T>({1}, {total}, {xn}, [xn](Node<T>& self) {
    T* g = xn->grad_buffer();
    for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> huber_loss(const Tensor<T>& pred, const Tensor<T>& target, T delta) {
  if (!(delta > T(0))) throw ConfigError("huber_loss: delta must be positive, got " + std::to_string(delta));
  require_same_shape("huber_loss", pred, target);
  const std::size_t n = pred.size();
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T e = pred.data()[i] - target.data()[i];
    const T ae = std::abs(e);
    total += ae <= delta ? T(0.5) * e * e : delta * (ae - T(0.5) * delta);
  }
  total /= static_cast<T>(n);
  NodePtr<T> pn = pred.node_ptr(), tn = target.node_ptr();
  return make_result<T>({1}, {total}, {pn, tn}, [pn, tn, delta, n](Node<T>& self) {
    const T g0 = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T e = pn->value[i] - tn->value[i];
      const T d = std::clamp(e, -delta, delta) * g0;
      if (pn->requires_grad) pn->grad_buffer()[i] += d;
      if (tn->requires_grad) tn->grad_buffer()[i] -= d;
    }
  });
}

#define MMV_INSTANTIATE(T)                                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                                         \
  template Tensor<T> relu(const Tensor<T>&);                                                             \
  template Tensor<T> gelu(const Tensor<T>&);                                                             \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                     \
                               const kernels::AttentionDims&, std::span<const std::uint8_t>);            \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                            \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                            \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::ptrdiff_t>);                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                              \
  template Tensor<T> mean(const Tensor<T>&);                                                             \
  template Tensor<T> huber_loss(const Tensor<T>&, const Tensor<T>&, T);

MMV_INSTANTIATE(float)
MMV_INSTANTIATE(double)

}  // namespace mmv::diff
