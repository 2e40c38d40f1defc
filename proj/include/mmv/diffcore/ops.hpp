#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mmv/diffcore/kernels.hpp"
#include "mmv/diffcore/tensor.hpp"

// Differentiable operations. Each returns a fresh tensor; when gradient mode
// is on and any input requires a gradient, the result records a backward
// closure. Shapes must match exactly: the only broadcast is the last-axis
// affine parameters of linear and layer_norm.

namespace mmv::diff {

/// [m,k] x [k,n] -> [m,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., in] * w[in, out] + b[out]. Leading axes are flattened into rows.
/// `bias` may be an undefined tensor.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Softmax along `axis`, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Normalizes the last axis with biased variance, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

/// Fused scaled-dot-product multi-head attention over `dims.groups`
/// independent sequences. q, k, v: [groups*seq, heads*head_dim]. Keys whose
/// mask entry is zero receive exactly zero weight.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const kernels::AttentionDims& dims, std::span<const std::uint8_t> key_mask = {});

/// Concatenate 2-D tensors with equal row counts along the column axis.
template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

/// Stack 2-D tensors with equal widths along the row axis.
template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

/// out[r] = x[index[r]] for 2-D x; index -1 yields a zero row. Repeated
/// indices accumulate gradient.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::ptrdiff_t> index);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Mean Huber loss. Throws ConfigError for delta <= 0.
template <typename T>
Tensor<T> huber_loss(const Tensor<T>& pred, const Tensor<T>& target, T delta);

}  // namespace mmv::diff
