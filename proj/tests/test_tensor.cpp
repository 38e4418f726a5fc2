#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tjstg/autodiff.h"
#include "tjstg/rng.h"
#include "tjstg/tensor.h"

using namespace tjstg;
namespace ad = tjstg::ad;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.next_gaussian();
  return t;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace

TEST_CASE("tensor shape and data invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({3}).rows(), ShapeError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(Tensor({2, 2}).item(), ShapeError);
  CHECK(Tensor({2, 3}).shape_str() == "[2x3]");
  CHECK(Tensor({4, 3}).reshaped({2, 6}).shape() == std::vector<std::size_t>{2, 6});
  CHECK_THROWS_AS(Tensor({4, 3}).reshaped({5, 2}), ShapeError);
}

TEST_CASE("tjt1 file round trip") {
  Rng rng(42);
  const auto path = temp_file("roundtrip.tjt");
  Tensor t = random_tensor(rng, {3, 4, 2});
  write_tensor(path.string(), t);
  const Tensor back = read_tensor(path.string());
  CHECK(back == t);

  SUBCASE("rank-1 and rank-4 shapes survive") {
    Tensor v = random_tensor(rng, {7});
    write_tensor(path.string(), v);
    CHECK(read_tensor(path.string()) == v);
    Tensor m = random_tensor(rng, {2, 3, 2, 5});
    write_tensor(path.string(), m);
    CHECK(read_tensor(path.string()) == m);
  }

  SUBCASE("identical content twice gives identical bytes") {
    const auto path2 = temp_file("roundtrip2.tjt");
    write_tensor(path2.string(), t);
    std::ifstream a(path.string(), std::ios::binary);
    std::ifstream b(path2.string(), std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
    const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
    CHECK(bytes_a == bytes_b);
    CHECK(bytes_a.substr(0, 4) == "TJT1");
  }
}

TEST_CASE("tjt1 reader rejects malformed files") {
  const auto path = temp_file("bad.tjt");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(read_tensor(path.string()), IoError);
  {
    std::ofstream f(path, std::ios::binary);
    f << "TJT1";  // truncated after the magic
  }
  CHECK_THROWS_AS(read_tensor(path.string()), IoError);
  CHECK_THROWS_AS(read_tensor("/nonexistent/dir/x.tjt"), IoError);

  SUBCASE("non-finite payload rejected on write") {
    Tensor t({1, 2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(write_tensor(path.string(), t), ContractError);
  }
}

TEST_CASE("matmul identity and zero cases") {
  ad::Graph g;
  ad::Var eye = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  ad::Var a = g.constant(Tensor::matrix({{2, 3}, {4, 5}}));
  CHECK(g.value(ad::matmul(eye, a)) == g.value(a));

  ad::Var m = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  ad::Var z = g.constant(Tensor::matrix({{0}, {0}}));
  const Tensor& prod = g.value(ad::matmul(m, z));
  CHECK(prod == Tensor::matrix({{0}, {0}}));
}

TEST_CASE("matmul matches the triple-loop oracle on random shapes") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.next_below(8);
    const std::size_t k = 1 + rng.next_below(8);
    const std::size_t n = 1 + rng.next_below(8);
    Tensor a = random_tensor(rng, {m, k});
    Tensor b = random_tensor(rng, {k, n});

    Tensor expect({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = 0; l < k; ++l)
          expect.at(i, j) += a.at(i, l) * b.at(l, j);

    ad::Graph g;
    const Tensor& got = g.value(ad::matmul(g.constant(a), g.constant(b)));
    REQUIRE(got.shape() == expect.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(close(got[i], expect[i], 1e-12));
  }
}

TEST_CASE("matmul names both shapes on mismatch") {
  ad::Graph g;
  ad::Var a = g.constant(Tensor({2, 3}));
  ad::Var b = g.constant(Tensor({4, 2}));
  try {
    ad::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("softmax pinned values") {
  ad::Graph g;
  const Tensor& sym = g.value(ad::softmax(g.constant(Tensor::row({0, 0}))));
  CHECK(sym[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sym[1] == doctest::Approx(0.5).epsilon(1e-12));

  const Tensor& forced = g.value(ad::softmax(
      g.constant(Tensor::row({std::log(1.0), std::log(2.0), std::log(3.0)}))));
  CHECK(forced[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(forced[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(forced[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));

  const Tensor& big = g.value(ad::softmax(g.constant(Tensor::row({1000, 0}))));
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(close(big[1], 0.0, 1e-12));
}

TEST_CASE("softmax simplex and shift invariance properties") {
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rows = 1 + rng.next_below(4);
    const std::size_t n = 1 + rng.next_below(9);
    Tensor x = random_tensor(rng, {rows, n}, 3.0);
    ad::Graph g;
    const Tensor& y = g.value(ad::softmax(g.constant(x)));
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(y.at(r, j) >= 0.0);
        sum += y.at(r, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }

    const double c = 10.0 * rng.next_gaussian();
    Tensor shifted = x;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += c;
    const Tensor& ys = g.value(ad::softmax(g.constant(shifted)));
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(std::abs(y[i] - ys[i]) < 1e-12);
  }
}

TEST_CASE("kl divergence pinned values") {
  ad::Graph g;
  ad::Var p = g.constant(Tensor::row({0.3, 0.2, 0.5}));
  CHECK(g.value(ad::kl_divergence(p, p)).item() == 0.0);

  // Closed-form hand evaluation: 0.5 ln 2 + 0.5 ln(2/3).
  ad::Var a = g.constant(Tensor::row({0.5, 0.5}));
  ad::Var b = g.constant(Tensor::row({0.25, 0.75}));
  const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(g.value(ad::kl_divergence(a, b)).item() ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(g.value(ad::kl_divergence(a, b)).item() ==
        doctest::Approx(0.143841).epsilon(1e-5));

  ad::Var onehot = g.constant(Tensor::row({1, 0, 0, 0}));
  ad::Var uniform = g.constant(Tensor::row({0.25, 0.25, 0.25, 0.25}));
  CHECK(g.value(ad::kl_divergence(onehot, uniform)).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));

  CHECK(g.value(ad::kl_divergence(a, a)).item() >= 0.0);
  CHECK_THROWS_AS(
      ad::kl_divergence(g.constant(Tensor::row({0.5, 0.6})),
                        g.constant(Tensor::row({0.5, 0.5}))),
      ContractError);
  CHECK_THROWS_AS(
      ad::kl_divergence(g.constant(Tensor::row({1.4, -0.4})),
                        g.constant(Tensor::row({0.5, 0.5}))),
      ContractError);
}

TEST_CASE("js divergence pinned values and independent oracle") {
  ad::Graph g;
  ad::Var p = g.constant(Tensor::row({0.5, 0.5}));
  CHECK(g.value(ad::js_divergence(p, p)).item() == 0.0);

  ad::Var l = g.constant(Tensor::row({1, 0}));
  ad::Var r = g.constant(Tensor::row({0, 1}));
  CHECK(g.value(ad::js_divergence(l, r)).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  // Independent direct evaluation of the definition, written out by hand.
  auto kl_direct = [](const std::vector<double>& pp, const std::vector<double>& qq) {
    double s = 0.0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
      const double cp = std::max(pp[i], 1e-12);
      const double cq = std::max(qq[i], 1e-12);
      s += cp * std::log(cp / cq);
    }
    return s;
  };
  const std::vector<double> pv{0.5, 0.5}, qv{0.9, 0.1};
  const std::vector<double> mv{0.7, 0.3};
  const double expect = 0.5 * kl_direct(pv, mv) + 0.5 * kl_direct(qv, mv);
  ad::Var q = g.constant(Tensor::row({0.9, 0.1}));
  CHECK(g.value(ad::js_divergence(p, q)).item() ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("js divergence symmetry and range properties") {
  Rng rng(1234);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + rng.next_below(7);
    Tensor lp = random_tensor(rng, {1, n}, 2.0);
    Tensor lq = random_tensor(rng, {1, n}, 2.0);
    ad::Graph g;
    ad::Var p = ad::softmax(g.constant(lp));
    ad::Var q = ad::softmax(g.constant(lq));
    const double pq = g.value(ad::js_divergence(p, q)).item();
    const double qp = g.value(ad::js_divergence(q, p)).item();
    CHECK(std::abs(pq - qp) < 1e-12);
    CHECK(pq >= 0.0);
    CHECK(pq <= std::log(2.0) + 1e-12);
  }
}
