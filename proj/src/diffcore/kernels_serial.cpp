#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mmv/diffcore/kernels.hpp"

namespace mmv::kernels::serial {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<const T> bias, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      if (!bias.empty()) acc += bias[j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_grad_a(std::span<const T> g, std::span<const T> b, std::span<T> da, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[p * n + j];
      da[i * k + p] += acc;
    }
  }
}

template <typename T>
void matmul_grad_b(std::span<const T> a, std::span<const T> g, std::span<T> db, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * g[i * n + j];
      db[p * n + j] += acc;
    }
  }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint8_t> key_mask, std::span<T> out, std::span<T> probs,
                       const AttentionDims& dims) {
  const std::size_t S = dims.seq, W = dims.width(), dh = dims.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t g = 0; g < dims.groups; ++g) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        T* p = probs.data() + ((g * dims.heads + h) * S + i) * S;
        const T* qi = q.data() + (g * S + i) * W + h * dh;
        T max_score = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < S; ++j) {
          if (!key_mask.empty() && !key_mask[g * S + j]) {
            p[j] = T(0);
            continue;
          }
          const T* kj = k.data() + (g * S + j) * W + h * dh;
          T dot = T(0);
          for (std::size_t d = 0; d < dh; ++d) dot += qi[d] * kj[d];
          p[j] = dot * scale;
          max_score = std::max(max_score, p[j]);
        }
        T total = T(0);
        for (std::size_t j = 0; j < S; ++j) {
          if (!key_mask.empty() && !key_mask[g * S + j]) continue;
          p[j] = std::exp(p[j] - max_score);
          total += p[j];
        }
        for (std::size_t j = 0; j < S; ++j) {
          if (!key_mask.empty() && !key_mask[g * S + j]) continue;
          p[j] /= total;
        }
        T* oi = out.data() + (g * S + i) * W + h * dh;
        for (std::size_t d = 0; d < dh; ++d) {
          T acc = T(0);
          for (std::size_t j = 0; j < S; ++j) {
            if (!key_mask.empty() && !key_mask[g * S + j]) continue;
            acc += p[j] * v[(g * S + j) * W + h * dh + d];
          }
          oi[d] = acc;
        }
      }
    }
  }
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const std::uint8_t> key_mask, std::span<const T> probs,
                        std::span<const T> grad_out, std::span<T> grad_q, std::span<T> grad_k,
                        std::span<T> grad_v, const AttentionDims& dims) {
  const std::size_t S = dims.seq, W = dims.width(), dh = dims.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> dscore(S);
  for (std::size_t g = 0; g < dims.groups; ++g) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        const T* p = probs.data() + ((g * dims.heads + h) * S + i) * S;
        const std::size_t oi = (g * S + i) * W + h * dh;
        T weighted = T(0);
        for (std::size_t j = 0; j < S; ++j) {
          if (!key_mask.empty() && !key_mask[g * S + j]) continue;
          const std::size_t vj = (g * S + j) * W + h * dh;
          T dp = T(0);
          for (std::size_t d = 0; d < dh; ++d) dp += grad_out[oi + d] * v[vj + d];
          dscore[j] = dp;
          weighted += p[j] * dp;
        }
        for (std::size_t j = 0; j < S; ++j) {
          if (!key_mask.empty() && !key_mask[g * S + j]) continue;
          dscore[j] = p[j] * (dscore[j] - weighted) * scale;
        }
        for (std::size_t d = 0; d < dh; ++d) {
          T acc = T(0);
          for (std::size_t j = 0; j < S; ++j) {
            if (!key_mask.empty() && !key_mask[g * S + j]) continue;
            acc += dscore[j] * k[(g * S + j) * W + h * dh + d];
          }
          grad_q[oi + d] += acc;
        }
        for (std::size_t j = 0; j < S; ++j) {
          if (!key_mask.empty() && !key_mask[g * S + j]) continue;
          const std::size_t kj = (g * S + j) * W + h * dh;
          for (std::size_t d = 0; d < dh; ++d) {
            grad_k[kj + d] += dscore[j] * q[oi + d];
            grad_v[kj + d] += p[j] * grad_out[oi + d];
          }
        }
      }
    }
  }
}

#define MMV_INSTANTIATE(T)                                                                          \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>, \
                          std::size_t, std::size_t, std::size_t);                                   \
  template void matmul_grad_a<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t, \
                                 std::size_t, std::size_t);                                         \
  template void matmul_grad_b<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t, \
                                 std::size_t, std::size_t);                                         \
  template void attention_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>,    \
                                     std::span<const std::uint8_t>, std::span<T>, std::span<T>,     \
                                     const AttentionDims&);                                         \
  template void attention_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>,   \
                                      std::span<const std::uint8_t>, std::span<const T>,            \
                                      std::span<const T>, std::span<T>, std::span<T>, std::span<T>, \
                                      const AttentionDims&);

MMV_INSTANTIATE(float)
MMV_INSTANTIATE(double)

}  // namespace mmv::kernels::serial
