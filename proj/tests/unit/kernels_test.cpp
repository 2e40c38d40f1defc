#include <random>
#include <vector>

#include "doctest.h"
#include "mmv/diffcore/kernels.hpp"

namespace k = mmv::kernels;

namespace {

template <typename T>
std::vector<T> random_values(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T>
void check_matmul_pair(std::size_t m, std::size_t kk, std::size_t n, std::mt19937_64& rng) {
  const auto a = random_values<T>(m * kk, rng), b = random_values<T>(kk * n, rng), bias = random_values<T>(n, rng);
  const auto g = random_values<T>(m * n, rng);
  std::vector<T> c1(m * n), c2(m * n);
  k::serial::matmul<T>(a, b, bias, c1, m, kk, n);
  k::parallel::matmul<T>(a, b, bias, c2, m, kk, n);
  CHECK(c1 == c2);

  std::vector<T> da1(m * kk, T(0.5)), da2(m * kk, T(0.5));
  k::serial::matmul_grad_a<T>(g, b, da1, m, kk, n);
  k::parallel::matmul_grad_a<T>(g, b, da2, m, kk, n);
  CHECK(da1 == da2);

  std::vector<T> db1(kk * n, T(-0.25)), db2(kk * n, T(-0.25));
  k::serial::matmul_grad_b<T>(a, g, db1, m, kk, n);
  k::parallel::matmul_grad_b<T>(a, g, db2, m, kk, n);
  CHECK(db1 == db2);
}

template <typename T>
void check_attention_pair(const k::AttentionDims& dims, bool masked, std::mt19937_64& rng) {
  const std::size_t n = dims.groups * dims.seq * dims.width();
  const auto q = random_values<T>(n, rng), kv = random_values<T>(n, rng), v = random_values<T>(n, rng);
  const auto go = random_values<T>(n, rng);
  std::vector<std::uint8_t> mask;
  if (masked) {
    mask.assign(dims.groups * dims.seq, 1);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % dims.seq == 0) || (rng() % 3 != 0);
  }
  const std::size_t np = dims.groups * dims.heads * dims.seq * dims.seq;
  std::vector<T> o1(n), o2(n), p1(np), p2(np);
  k::serial::attention_forward<T>(q, kv, v, mask, o1, p1, dims);
  k::parallel::attention_forward<T>(q, kv, v, mask, o2, p2, dims);
  CHECK(o1 == o2);
  CHECK(p1 == p2);

  std::vector<T> gq1(n), gk1(n), gv1(n), gq2(n), gk2(n), gv2(n);
  k::serial::attention_backward<T>(q, kv, v, mask, p1, go, gq1, gk1, gv1, dims);
  k::parallel::attention_backward<T>(q, kv, v, mask, p2, go, gq2, gk2, gv2, dims);
  CHECK(gq1 == gq2);
  CHECK(gk1 == gk2);
  CHECK(gv1 == gv2);
}

}  // namespace

TEST_CASE("parallel matmul kernels agree bitwise with the serial reference") {
  std::mt19937_64 rng(7);
  for (int threads : {1, 2, 4}) {
    k::set_threads(threads);
    check_matmul_pair<float>(1, 1, 1, rng);
    check_matmul_pair<float>(37, 19, 23, rng);
    check_matmul_pair<double>(130, 64, 48, rng);  // above the parallel threshold
    check_matmul_pair<float>(300, 40, 33, rng);
  }
  k::set_threads(k::max_threads());
}

TEST_CASE("parallel attention kernels agree bitwise with the serial reference") {
  std::mt19937_64 rng(8);
  for (int threads : {1, 3}) {
    k::set_threads(threads);
    check_attention_pair<float>({1, 1, 1, 4}, false, rng);
    check_attention_pair<float>({3, 5, 2, 4}, true, rng);
    check_attention_pair<double>({16, 17, 2, 8}, true, rng);
    check_attention_pair<float>({40, 17, 4, 8}, false, rng);
  }
}

TEST_CASE("masked keys receive exactly zero weight") {
  const k::AttentionDims dims{1, 4, 1, 2};
  std::mt19937_64 rng(9);
  const auto q = random_values<double>(8, rng), kv = random_values<double>(8, rng), v = random_values<double>(8, rng);
  const std::vector<std::uint8_t> mask{1, 0, 1, 0};
  std::vector<double> out(8), probs(16);
  k::parallel::attention_forward<double>(q, kv, v, mask, out, probs, dims);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(probs[i * 4 + 1] == 0.0);
    CHECK(probs[i * 4 + 3] == 0.0);
    CHECK(probs[i * 4 + 0] + probs[i * 4 + 2] == doctest::Approx(1.0));
  }
}
