#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mtlta/gradcheck.hpp"
#include "mtlta/rng.hpp"
#include "mtlta/tensor.hpp"
#include "test_util.hpp"

using namespace mtlta;
using mtlta::testing::grad_vector;
using mtlta::testing::random_tensor;
using mtlta::testing::to_vector;

namespace {

Tensor identity(std::size_t n) {
  auto t = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.mutable_values()[i * n + i] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("matmul examples") {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(to_vector(matmul(a, identity(2))) == std::vector<double>{1, 2, 3, 4});
  auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
  CHECK(to_vector(matmul(a, b)) == std::vector<double>{19, 22, 43, 50});
  auto z = Tensor::zeros({3, 2});
  auto any = Tensor::from({2, 4}, {1, -2, 3, 4, 5, 6, -7, 8});
  CHECK(to_vector(matmul(z, any)) == std::vector<double>(12, 0.0));
}

TEST_CASE("matmul rejects mismatched inner dimensions and names both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul with identity is bitwise exact on random input") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(8);
    auto x = random_tensor({m, n}, rng, -1e6, 1e6);
    CHECK(to_vector(matmul(x, identity(n))) == to_vector(x));
  }
}

TEST_CASE("relu forward and subgradient") {
  CHECK(to_vector(relu(Tensor::from({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  CHECK(to_vector(relu(Tensor::from({3}, {-1, -0.5, -3}))) == std::vector<double>{0, 0, 0});

  auto x = Tensor::from({2}, {-1, 2}, true);
  sum(relu(x)).backward();
  CHECK(grad_vector(x) == std::vector<double>{0, 1});

  auto z = Tensor::from({1}, {0.0}, true);
  sum(relu(z)).backward();
  CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("softmax cross entropy examples") {
  std::vector<std::size_t> label0{0};
  CHECK(softmax_cross_entropy(Tensor::from({1, 2}, {0, 0}), label0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double big = softmax_cross_entropy(Tensor::from({1, 2}, {1000, 0}), label0).item();
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(0.0));

  std::vector<std::size_t> bad{2};
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::from({1, 2}, {0, 0}), bad), IndexError);
}

TEST_CASE("softmax cross entropy matches an extended-precision oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto logits = random_tensor({3, 4}, rng, -5, 5);
    std::vector<std::size_t> labels{rng.below(4), rng.below(4), rng.below(4)};
    long double total = 0.0L;
    for (std::size_t i = 0; i < 3; ++i) {
      long double z = 0.0L;
      for (std::size_t j = 0; j < 4; ++j) z += std::exp(static_cast<long double>(logits.at(i * 4 + j)));
      total += std::log(z) - static_cast<long double>(logits.at(i * 4 + labels[i]));
    }
    const double oracle = static_cast<double>(total / 3.0L);
    CHECK(std::abs(softmax_cross_entropy(logits, labels).item() - oracle) < 1e-10);
  }
}

TEST_CASE("softmax cross entropy gradient is (softmax - onehot)/batch") {
  auto logits = Tensor::from({2, 3}, {0.1, 0.2, 0.3, -1.0, 0.0, 1.0}, true);
  std::vector<std::size_t> labels{2, 0};
  softmax_cross_entropy(logits, labels).backward();
  for (std::size_t i = 0; i < 2; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) z += std::exp(logits.at(i * 3 + j));
    for (std::size_t j = 0; j < 3; ++j) {
      const double expected = (std::exp(logits.at(i * 3 + j)) / z - (j == labels[i] ? 1.0 : 0.0)) / 2.0;
      CHECK(logits.grad()[i * 3 + j] == doctest::Approx(expected).epsilon(1e-14));
    }
  }
}

TEST_CASE("mean and max pooling") {
  auto seq = Tensor::from({2, 2}, {1, 3, 3, 5});
  CHECK(to_vector(mean_pool(seq, {true, true})) == std::vector<double>{2, 4});
  CHECK(to_vector(max_pool(seq, {true, true})) == std::vector<double>{3, 5});
  CHECK(to_vector(mean_pool(seq, {false, true})) == std::vector<double>{3, 5});
  CHECK(to_vector(max_pool(seq, {true, false})) == std::vector<double>{1, 3});
  CHECK_THROWS_AS(mean_pool(seq, {false, false}), ShapeError);
  CHECK_THROWS_AS(max_pool(seq, {false, false}), ShapeError);
}

TEST_CASE("mean pool over valid rows matches a brute-force sum") {
  Rng rng(5);
  auto seq = random_tensor({5, 3}, rng);
  std::vector<bool> mask{true, false, true, true, false};
  auto pooled = mean_pool(seq, mask);
  for (std::size_t j = 0; j < 3; ++j) {
    const double s = seq.at(0 * 3 + j) + seq.at(2 * 3 + j) + seq.at(3 * 3 + j);
    CHECK(pooled.at(j) == doctest::Approx(s / 3.0).epsilon(1e-15));
  }
}

TEST_CASE("max pool tie routes gradient to the first row") {
  auto seq = Tensor::from({2, 1}, {2, 2}, true);
  sum(max_pool(seq, {true, true})).backward();
  CHECK(grad_vector(seq) == std::vector<double>{1, 0});
}

TEST_CASE("concat and complementary slicing") {
  CHECK(to_vector(concat(Tensor::from({2}, {1, 2}), Tensor::from({1}, {3}))) == std::vector<double>{1, 2, 3});
  auto x = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto empty = Tensor::zeros({2, 0});
  CHECK(to_vector(concat(x, empty)) == to_vector(x));
  CHECK_THROWS_AS(concat(Tensor::zeros({2, 2}), Tensor::zeros({3, 1})), ShapeError);

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng.below(5), d1 = rng.below(6), d2 = 1 + rng.below(6);
    auto a = random_tensor({rows, d1}, rng);
    auto b = random_tensor({rows, d2}, rng);
    auto c = concat(a, b);
    CHECK(to_vector(slice_last(c, 0, d1)) == to_vector(a));
    CHECK(to_vector(slice_last(c, d1, d1 + d2)) == to_vector(b));
  }
}

TEST_CASE("dropout modes") {
  Rng rng(1);
  auto x = random_tensor({4, 4}, rng);
  CHECK(to_vector(dropout(x, 0.0, true, rng)) == to_vector(x));
  CHECK(to_vector(dropout(x, 0.3, false, rng)) == to_vector(x));
  CHECK_THROWS(dropout(x, 1.0, true, rng));
  CHECK_THROWS(dropout(x, -0.1, true, rng));
}

TEST_CASE("dropout zero fraction follows p over a large sample") {
  Rng rng(2024);
  auto x = Tensor::full({1000000}, 1.0);
  auto y = dropout(x, 0.3, true, rng);
  std::size_t zeros = 0;
  bool survivors_scaled = true;
  for (double v : y.values()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      survivors_scaled = survivors_scaled && std::abs(v - 1.0 / 0.7) < 1e-15;
    }
  }
  CHECK(survivors_scaled);
  const double frac = static_cast<double>(zeros) / 1e6;
  CHECK(frac > 0.298);
  CHECK(frac < 0.302);
}

TEST_CASE("backward basics") {
  Rng rng(4);
  auto x = random_tensor({3, 2}, rng, -1, 1, true);
  sum(x).backward();
  CHECK(grad_vector(x) == std::vector<double>(6, 1.0));

  auto y = random_tensor({4}, rng, -1, 1, true);
  sum(multiply(y, y)).backward();
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.grad()[i] == doctest::Approx(2.0 * y.at(i)));

  CHECK_THROWS_AS(x.backward(), ShapeError);
}

TEST_CASE("two consumers accumulate the sum of single-consumer gradients") {
  Rng rng(8);
  auto w = random_tensor({3, 3}, rng);
  auto x = random_tensor({2, 3}, rng, -1, 1, true);

  auto f1 = [&](const Tensor& t) { return sum(relu(matmul(t, w))); };
  auto f2 = [&](const Tensor& t) { return sum(multiply(t, t)); };

  f1(x).backward();
  auto g1 = grad_vector(x);
  x.zero_grad();
  f2(x).backward();
  auto g2 = grad_vector(x);
  x.zero_grad();
  add(f1(x), f2(x)).backward();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("backward visits every node once in reverse creation order") {
  std::vector<std::uint64_t> visited;
  auto counting = [&visited](const Tensor& in) {
    return Tensor::make_op(in.shape(), {in.values().begin(), in.values().end()}, {in},
                          [in, &visited](std::span<const double> g) {
                            visited.push_back(in.id());
                            in.accumulate_grad(g);
                          });
  };
  auto x = Tensor::from({2}, {1, 2}, true);
  auto a = counting(x);
  auto b = counting(a);
  auto c = add(counting(b), b);  // b feeds two consumers
  sum(c).backward();
  // three counting nodes: inputs were b, a, x in that order
  REQUIRE(visited.size() == 3);
  CHECK(visited[0] == b.id());
  CHECK(visited[1] == a.id());
  CHECK(visited[2] == x.id());
  CHECK(grad_vector(x) == std::vector<double>{2, 2});
}

TEST_CASE("layer norm normalizes rows") {
  auto x = Tensor::from({2, 4}, {1, 2, 3, 4, -1, 0, 5, 2});
  auto y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}), 0.0);
  for (std::size_t i = 0; i < 2; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 4; ++j) mu += y.at(i * 4 + j);
    mu /= 4;
    for (std::size_t j = 0; j < 4; ++j) var += (y.at(i * 4 + j) - mu) * (y.at(i * 4 + j) - mu);
    CHECK(std::abs(mu) < 1e-15);
    CHECK(var / 4 == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("embedding lookup gathers and scatter-adds") {
  auto table = Tensor::from({3, 2}, {0, 1, 2, 3, 4, 5}, true);
  std::vector<std::size_t> ids{2, 0, 2};
  auto rows = embedding_lookup(table, ids);
  CHECK(to_vector(rows) == std::vector<double>{4, 5, 0, 1, 4, 5});
  sum(rows).backward();
  CHECK(grad_vector(table) == std::vector<double>{1, 1, 0, 0, 2, 2});
  std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(embedding_lookup(table, bad), IndexError);
}

TEST_CASE("reshape and transpose") {
  auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(to_vector(transpose(x)) == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(reshape(x, {3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
}

TEST_CASE("gradcheck on sum is exact") {
  Rng rng(1);
  auto x = random_tensor({4, 3}, rng);
  CHECK(gradcheck([](const Tensor& t) { return sum(t); }, x) < 1e-10);
}

TEST_CASE("every differentiable op passes gradcheck on random inputs") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(8), k = 1 + rng.below(8);
    auto w = random_tensor({n, k}, rng);
    auto x = random_tensor({m, n}, rng);
    auto probe = random_tensor({m, n}, rng);  // random projection avoids symmetric cancellations
    auto project = [probe](const Tensor& t) { return sum(multiply(t, probe)); };

    CHECK(gradcheck([&](const Tensor& t) { return sum(multiply(matmul(t, w), matmul(t, w))); }, x) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return sum(multiply(matmul(x, t), matmul(x, t))); }, w) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return project(relu(t)); }, x) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return project(softmax_rows(t)); }, x) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return project(layer_norm(t, Tensor::full({n}, 1.3), Tensor::full({n}, 0.2))); }, x) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return project(multiply(t, t)); }, x) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return project(scale(add(t, t), -0.7)); }, x) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return sum(multiply(transpose(t), transpose(probe))); }, x) < 1e-6);

    std::vector<std::size_t> labels(m);
    for (auto& l : labels) l = rng.below(n);
    CHECK(gradcheck([&](const Tensor& t) { return softmax_cross_entropy(t, labels); }, x) < 1e-6);

    std::vector<bool> mask(m, true);
    if (m > 1) mask[rng.below(m)] = false;
    auto pv = random_tensor({n}, rng);
    CHECK(gradcheck([&](const Tensor& t) { return sum(multiply(mean_pool(t, mask), pv)); }, x) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return sum(multiply(max_pool(t, mask), pv)); }, x) < 1e-6);

    auto b = random_tensor({m, k}, rng);
    auto pc = random_tensor({m, n + k}, rng);
    CHECK(gradcheck([&](const Tensor& t) { return sum(multiply(concat(t, b), pc)); }, x) < 1e-6);

    auto bias = random_tensor({n}, rng);
    CHECK(gradcheck([&](const Tensor& t) { return project(add_row(x, t)); }, bias) < 1e-6);

    auto table = random_tensor({6, n}, rng);
    std::vector<std::size_t> ids{1, 4, 1, 0};
    auto pe = random_tensor({4, n}, rng);
    CHECK(gradcheck([&](const Tensor& t) { return sum(multiply(embedding_lookup(t, ids), pe)); }, table) < 1e-6);

    CHECK(gradcheck([&](const Tensor& t) {
            Rng local(123);
            return project(dropout(t, 0.3, true, local));
          },
          x) < 1e-6);
  }
}
