#pragma once

// Hot loops of the model: dense products and fused multi-head attention.
//
// Each kernel has a naive serial reference and an OpenMP version. Both
// accumulate every output element in the same order, so results agree
// bitwise for any thread count. Tests hold the pair against each other and
// bench/ times them.

#include <cstddef>
#include <cstdint>
#include <span>

namespace mmv::kernels {

struct AttentionDims {
  std::size_t groups = 1;  // independent sequences
  std::size_t seq = 1;     // tokens per sequence
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  std::size_t width() const { return heads * head_dim; }
};

namespace serial {

// c[m,n] = a[m,k] * b[k,n] (+ bias[n] when bias is non-empty)
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<const T> bias, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n);

// da[m,k] += g[m,n] * b[k,n]^T
template <typename T>
void matmul_grad_a(std::span<const T> g, std::span<const T> b, std::span<T> da, std::size_t m,
                   std::size_t k, std::size_t n);

// db[k,n] += a[m,k]^T * g[m,n]
template <typename T>
void matmul_grad_b(std::span<const T> a, std::span<const T> g, std::span<T> db, std::size_t m,
                   std::size_t k, std::size_t n);

// q, k, v, out: [groups*seq, heads*head_dim]; probs: [groups, heads, seq, seq].
// key_mask: [groups*seq], nonzero = attendable; empty means all keys valid.
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint8_t> key_mask, std::span<T> out, std::span<T> probs,
                       const AttentionDims& dims);

// Accumulates into grad_q, grad_k, grad_v.
template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const std::uint8_t> key_mask, std::span<const T> probs,
                        std::span<const T> grad_out, std::span<T> grad_q, std::span<T> grad_k,
                        std::span<T> grad_v, const AttentionDims& dims);

}  // namespace serial

namespace parallel {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<const T> bias, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n);

template <typename T>
void matmul_grad_a(std::span<const T> g, std::span<const T> b, std::span<T> da, std::size_t m,
                   std::size_t k, std::size_t n);

template <typename T>
void matmul_grad_b(std::span<const T> a, std::span<const T> g, std::span<T> db, std::size_t m,
                   std::size_t k, std::size_t n);

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint8_t> key_mask, std::span<T> out, std::span<T> probs,
                       const AttentionDims& dims);

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const std::uint8_t> key_mask, std::span<const T> probs,
                        std::span<const T> grad_out, std::span<T> grad_q, std::span<T> grad_k,
                        std::span<T> grad_v, const AttentionDims& dims);

}  // namespace parallel

/// Threads the parallel kernels use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace mmv::kernels
