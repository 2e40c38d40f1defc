#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mmv/diffcore/gradcheck.hpp"
#include "mmv/diffcore/ops.hpp"

using mmv::Shape;
using mmv::diff::Tensor;
namespace d = mmv::diff;

namespace {

using TD = Tensor<double>;

TD random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(mmv::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TD::from(std::move(shape), std::move(v), requires_grad);
}

// Projects a tensor output onto fixed random weights so every output
// coordinate carries a distinct upstream gradient.
TD weighted_sum(const TD& y, const TD& w) { return d::sum(d::mul(y, w)); }

std::vector<double> triple_loop(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul examples") {
  auto eye = TD::from({2, 2}, {1, 0, 0, 1});
  auto b = TD::from({2, 2}, {3, 4, 5, 6});
  auto prod = d::matmul(eye, b);
  CHECK(std::vector<double>(prod.data().begin(), prod.data().end()) == std::vector<double>{3, 4, 5, 6});

  CHECK(d::matmul(TD::from({1, 1}, {2}), TD::from({1, 1}, {7})).item() == 14.0);

  const std::vector<double> av{1, 2, 3, 4}, bv{5, 6, 7, 8};
  const auto oracle = triple_loop(av, bv, 2, 2, 2);
  CHECK(oracle == std::vector<double>{19, 22, 43, 50});
  auto c = d::matmul(TD::from({2, 2}, av), TD::from({2, 2}, bv));
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == oracle);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = TD::zeros({2, 3});
  auto b = TD::zeros({2, 3});
  try {
    d::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const mmv::DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("and [2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  auto y = d::softmax(TD::from({2}, {0, 0}), 0);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == doctest::Approx(0.5));

  auto z = d::softmax(TD::from({2}, {0.0, std::log(3.0)}), 0);
  CHECK(z.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(z.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

  std::mt19937_64 rng(3);
  auto x = random_tensor({3, 5}, rng, false);
  std::vector<double> shifted(x.data().begin(), x.data().end());
  for (auto& v : shifted) v += 17.25;
  auto a = d::softmax(x, 1);
  auto b = d::softmax(TD::from({3, 5}, shifted), 1);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("softmax rows are distributions") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> scale(0.1, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = d::scale(random_tensor({4, 7, 3}, rng, false), scale(rng));
    const std::size_t axis = static_cast<std::size_t>(trial % 3);
    auto y = d::softmax(x, axis);
    const auto& shape = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < 3; ++i) inner *= shape[i];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < inner; ++r) {
        double total = 0;
        for (std::size_t j = 0; j < shape[axis]; ++j) {
          const double v = y.data()[(o * shape[axis] + j) * inner + r];
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("layer_norm examples") {
  auto ones = TD::from({3}, {1, 1, 1});
  auto zeros = TD::from({3}, {0, 0, 0});
  auto c = d::layer_norm(TD::from({3}, {4, 4, 4}), ones, zeros, 1e-5);
  for (double v : c.data()) CHECK(v == 0.0);

  auto g2 = TD::from({2}, {1, 1}), b2 = TD::from({2}, {0, 0});
  auto y = d::layer_norm(TD::from({2}, {1, -1}), g2, b2, 1e-5);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);  // (x - 0) / sqrt(1 + eps)
  CHECK(y.data()[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(-expected).epsilon(1e-12));
  CHECK(y.data()[0] == doctest::Approx(0.999995).epsilon(1e-6));

  std::mt19937_64 rng(5);
  auto beta = random_tensor({4}, rng, false);
  auto out = d::layer_norm(random_tensor({3, 4}, rng, false), TD::zeros({4}), beta, 1e-5);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.data()[r * 4 + j] == beta.data()[j]);
}

TEST_CASE("layer_norm normalizes rows") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> spread(0.05, 20.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 14);
    auto x = d::scale(random_tensor({5, n}, rng, false), spread(rng));
    std::vector<double> ones(n, 1.0);
    auto y = d::layer_norm(x, TD::from({n}, ones), TD::zeros({n}), 1e-5);
    for (std::size_t r = 0; r < 5; ++r) {
      double mu = 0, var = 0, in_mu = 0, in_var = 0;
      for (std::size_t j = 0; j < n; ++j) {
        mu += y.data()[r * n + j];
        in_mu += x.data()[r * n + j];
      }
      mu /= n;
      in_mu /= n;
      for (std::size_t j = 0; j < n; ++j) {
        var += (y.data()[r * n + j] - mu) * (y.data()[r * n + j] - mu);
        in_var += (x.data()[r * n + j] - in_mu) * (x.data()[r * n + j] - in_mu);
      }
      var /= n;
      in_var /= n;
      CHECK(std::abs(mu) < 1e-6);
      if (in_var >= 1e-3) CHECK(std::abs(var - 1.0) < 1e-4 + 1e-5 / in_var);
    }
  }
}

TEST_CASE("huber_loss examples") {
  auto p = TD::from({3}, {0.2, 0.4, 0.9});
  CHECK(d::huber_loss(p, p, 1.0).item() == 0.0);
  CHECK(d::huber_loss(TD::scalar(0.1), TD::scalar(0.0), 1.0).item() == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(d::huber_loss(TD::scalar(2.0), TD::scalar(0.0), 1.0).item() == doctest::Approx(1.5).epsilon(1e-12));
  CHECK_THROWS_AS(d::huber_loss(p, p, 0.0), mmv::ConfigError);
  CHECK_THROWS_AS(d::huber_loss(p, p, -1.0), mmv::ConfigError);
  CHECK_THROWS_AS(d::huber_loss(p, TD::zeros({2}), 1.0), mmv::DimensionError);
}

TEST_CASE("grad_check trivial cases") {
  std::vector<TD> x{TD::scalar(3.0, true)};
  CHECK(d::grad_check([&] { return d::mul(x[0], x[0]); }, x) < 1e-9);
  CHECK(x[0].grad()[0] == doctest::Approx(6.0));

  std::vector<TD> p{TD::scalar(0.5, true)};
  auto target = TD::scalar(0.5);
  CHECK(d::grad_check([&] { return d::huber_loss(p[0], target, 1.0); }, p) < 1e-9);
  CHECK(p[0].grad()[0] == 0.0);
}

TEST_CASE("grad_check rejects non-finite functions") {
  std::vector<TD> x{TD::scalar(1.0, true)};
  auto inf = TD::scalar(std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(d::grad_check([&] { return d::add(x[0], inf); }, x), mmv::NumericalError);
}

TEST_CASE("gradient accumulates across reuse") {
  auto x = TD::from({3}, {1.0, -2.0, 0.5}, true);
  d::sum(d::add(x, x)).backward();
  for (double g : x.grad()) CHECK(g == 2.0);

  // Two independent single uses accumulate to the same total.
  auto y = TD::from({3}, {1.0, -2.0, 0.5}, true);
  d::sum(y).backward();
  d::sum(y).backward();
  CHECK(y.grad() == x.grad());
}

TEST_CASE("no-grad guard records nothing") {
  auto x = TD::from({2}, {1.0, 2.0}, true);
  d::NoGradGuard guard;
  auto y = d::sum(d::mul(x, x));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("every differentiable op passes gradient check") {
  std::mt19937_64 rng(2024);
  const double tol = 1e-4;

  SUBCASE("matmul") {
    std::vector<TD> in{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
    auto w = random_tensor({3, 2}, rng, false);
    CHECK(d::grad_check([&] { return weighted_sum(d::matmul(in[0], in[1]), w); }, in) < tol);
  }
  SUBCASE("linear") {
    std::vector<TD> in{random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)};
    auto w = random_tensor({2, 3, 5}, rng, false);
    CHECK(d::grad_check([&] { return weighted_sum(d::linear(in[0], in[1], in[2]), w); }, in) < tol);
  }
  SUBCASE("elementwise") {
    std::vector<TD> in{random_tensor({6}, rng), random_tensor({6}, rng)};
    auto w = random_tensor({6}, rng, false);
    CHECK(d::grad_check([&] { return weighted_sum(d::add(in[0], in[1]), w); }, in) < tol);
    CHECK(d::grad_check([&] { return weighted_sum(d::sub(in[0], in[1]), w); }, in) < tol);
    CHECK(d::grad_check([&] { return weighted_sum(d::mul(in[0], in[1]), w); }, in) < tol);
    CHECK(d::grad_check([&] { return weighted_sum(d::scale(in[0], -2.5), w); }, in) < tol);
    CHECK(d::grad_check([&] { return weighted_sum(d::relu(in[0]), w); }, in) < tol);
    CHECK(d::grad_check([&] { return weighted_sum(d::gelu(in[0]), w); }, in) < tol);
  }
  SUBCASE("softmax") {
    std::vector<TD> in{random_tensor({3, 4, 2}, rng)};
    auto w = random_tensor({3, 4, 2}, rng, false);
    for (std::size_t axis = 0; axis < 3; ++axis)
      CHECK(d::grad_check([&] { return weighted_sum(d::softmax(in[0], axis), w); }, in) < tol);
  }
  SUBCASE("layer_norm") {
    std::vector<TD> in{random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)};
    auto w = random_tensor({3, 5}, rng, false);
    CHECK(d::grad_check([&] { return weighted_sum(d::layer_norm(in[0], in[1], in[2], 1e-5), w); }, in) < tol);
  }
  SUBCASE("attention with mask") {
    const mmv::kernels::AttentionDims dims{2, 4, 2, 3};
    std::vector<TD> in{random_tensor({8, 6}, rng), random_tensor({8, 6}, rng), random_tensor({8, 6}, rng)};
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 0, 0, 1};
    auto w = random_tensor({8, 6}, rng, false);
    CHECK(d::grad_check([&] { return weighted_sum(d::attention(in[0], in[1], in[2], dims, mask), w); }, in) < tol);
    CHECK(d::grad_check([&] { return weighted_sum(d::attention(in[0], in[1], in[2], dims), w); }, in) < tol);
  }
  SUBCASE("row and column assembly") {
    std::vector<TD> in{random_tensor({3, 2}, rng), random_tensor({3, 4}, rng), random_tensor({1, 2}, rng)};
    auto w = random_tensor({3, 6}, rng, false);
    CHECK(d::grad_check(
              [&] {
                std::vector<TD> parts{in[0], in[1]};
                return weighted_sum(d::concat_cols<double>(parts), w);
              },
              in) < tol);
    auto w2 = random_tensor({4, 2}, rng, false);
    CHECK(d::grad_check(
              [&] {
                std::vector<TD> parts{in[0], in[2]};
                return weighted_sum(d::concat_rows<double>(parts), w2);
              },
              in) < tol);
    const std::vector<std::ptrdiff_t> idx{2, -1, 0, 2, 1};
    auto w3 = random_tensor({5, 2}, rng, false);
    CHECK(d::grad_check([&] { return weighted_sum(d::gather_rows(in[0], idx), w3); }, in) < tol);
    auto w4 = random_tensor({2, 3}, rng, false);
    CHECK(d::grad_check([&] { return weighted_sum(d::reshape(in[0], {2, 3}), w4); }, in) < tol);
  }
  SUBCASE("reductions and huber") {
    std::vector<TD> in{random_tensor({7}, rng), random_tensor({7}, rng)};
    CHECK(d::grad_check([&] { return d::mean(d::mul(in[0], in[0])); }, in) < tol);
    // Residuals straddle both Huber branches with delta 0.5.
    CHECK(d::grad_check([&] { return d::huber_loss(in[0], in[1], 0.5); }, in) < tol);
  }
}

TEST_CASE("last-axis affine parameters are the only broadcast") {
  CHECK_THROWS_AS(d::add(TD::zeros({2, 3}), TD::zeros({3})), mmv::DimensionError);
  CHECK_THROWS_AS(d::layer_norm(TD::zeros({2, 3}), TD::zeros({2}), TD::zeros({3})), mmv::DimensionError);
  CHECK_THROWS_AS(d::linear(TD::zeros({2, 3}), TD::zeros({3, 4}), TD::zeros({3})), mmv::DimensionError);
  CHECK_THROWS_AS(d::attention(TD::zeros({4, 2}), TD::zeros({4, 2}), TD::zeros({4, 2}),
                               mmv::kernels::AttentionDims{1, 4, 1, 2}, std::vector<std::uint8_t>{1, 1}),
                  mmv::DimensionError);
}
