#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mmv/diffcore/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mmv::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

namespace parallel {

// Row blocks below this many multiply-adds stay on the calling thread.
constexpr std::size_t kMinParallelWork = 1 << 14;

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<const T> bias, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kMinParallelWork)
  for (long ii = 0; ii < rows; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    T* ci = c.data() + i * n;
    std::fill(ci, ci + n, T(0));
    const T* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
    if (!bias.empty()) {
      for (std::size_t j = 0; j < n; ++j) ci[j] += bias[j];
    }
  }
}

template <typename T>
void matmul_grad_a(std::span<const T> g, std::span<const T> b, std::span<T> da, std::size_t m,
                   std::size_t k, std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kMinParallelWork)
  for (long ii = 0; ii < rows; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const T* gi = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b.data() + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      da[i * k + p] += acc;
    }
  }
}

template <typename T>
void matmul_grad_b(std::span<const T> a, std::span<const T> g, std::span<T> db, std::size_t m,
                   std::size_t k, std::size_t n) {
  const long cols = static_cast<long>(k);
#pragma omp parallel if (m * k * n > kMinParallelWork)
  {
    std::vector<T> row(n);
#pragma omp for schedule(static)
    for (long pp = 0; pp < cols; ++pp) {
      const std::size_t p = static_cast<std::size_t>(pp);
      std::fill(row.begin(), row.end(), T(0));
      for (std::size_t i = 0; i < m; ++i) {
        const T aip = a[i * k + p];
        const T* gi = g.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += aip * gi[j];
      }
      T* dbp = db.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += row[j];
    }
  }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint8_t> key_mask, std::span<T> out, std::span<T> probs,
                       const AttentionDims& dims) {
  const std::size_t S = dims.seq, W = dims.width(), dh = dims.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const long pairs = static_cast<long>(dims.groups * dims.heads);
#pragma omp parallel for schedule(static) if (dims.groups * S * S * W > kMinParallelWork)
  for (long gh = 0; gh < pairs; ++gh) {
    const std::size_t g = static_cast<std::size_t>(gh) / dims.heads;
    const std::size_t h = static_cast<std::size_t>(gh) % dims.heads;
    const std::uint8_t* mask = key_mask.empty() ? nullptr : key_mask.data() + g * S;
    for (std::size_t i = 0; i < S; ++i) {
      T* p = probs.data() + (static_cast<std::size_t>(gh) * S + i) * S;
      const T* qi = q.data() + (g * S + i) * W + h * dh;
      T max_score = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < S; ++j) {
        if (mask && !mask[j]) {
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
        if (mask && !mask[j]) continue;
        p[j] = std::exp(p[j] - max_score);
        total += p[j];
      }
      T* oi = out.data() + (g * S + i) * W + h * dh;
      std::fill(oi, oi + dh, T(0));
      for (std::size_t j = 0; j < S; ++j) {
        if (mask && !mask[j]) continue;
        p[j] /= total;
        const T pj = p[j];
        const T* vj = v.data() + (g * S + j) * W + h * dh;
        for (std::size_t d = 0; d < dh; ++d) oi[d] += pj * vj[d];
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
  const long pairs = static_cast<long>(dims.groups * dims.heads);
#pragma omp parallel if (dims.groups * S * S * W > kMinParallelWork)
  {
    std::vector<T> dscore(S);
    std::vector<T> gq(dh);
#pragma omp for schedule(static)
    for (long gh = 0; gh < pairs; ++gh) {
      const std::size_t g = static_cast<std::size_t>(gh) / dims.heads;
      const std::size_t h = static_cast<std::size_t>(gh) % dims.heads;
      const std::uint8_t* mask = key_mask.empty() ? nullptr : key_mask.data() + g * S;
      for (std::size_t i = 0; i < S; ++i) {
        const T* p = probs.data() + (static_cast<std::size_t>(gh) * S + i) * S;
        const std::size_t oi = (g * S + i) * W + h * dh;
        const T* go = grad_out.data() + oi;
        T weighted = T(0);
        for (std::size_t j = 0; j < S; ++j) {
          if (mask && !mask[j]) continue;
          const T* vj = v.data() + (g * S + j) * W + h * dh;
          T dp = T(0);
          for (std::size_t d = 0; d < dh; ++d) dp += go[d] * vj[d];
          dscore[j] = dp;
          weighted += p[j] * dp;
        }
        std::fill(gq.begin(), gq.end(), T(0));
        for (std::size_t j = 0; j < S; ++j) {
          if (mask && !mask[j]) continue;
          const T ds = p[j] * (dscore[j] - weighted) * scale;
          dscore[j] = ds;
          const T* kj = k.data() + (g * S + j) * W + h * dh;
          for (std::size_t d = 0; d < dh; ++d) gq[d] += ds * kj[d];
        }
        for (std::size_t d = 0; d < dh; ++d) grad_q[oi + d] += gq[d];
        const T* qi = q.data() + oi;
        for (std::size_t j = 0; j < S; ++j) {
          if (mask && !mask[j]) continue;
          const std::size_t kj = (g * S + j) * W + h * dh;
          const T ds = dscore[j], pj = p[j];
          for (std::size_t d = 0; d < dh; ++d) {
            grad_k[kj + d] += ds * qi[d];
            grad_v[kj + d] += pj * go[d];
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

}  // namespace parallel
}  // namespace mmv::kernels
