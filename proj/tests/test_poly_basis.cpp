#include <cmath>
#include <vector>

#include "agf/poly_basis.hpp"
#include "agf/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace agf;
using namespace agf::poly;

namespace {

// Monomial coefficients c_0..c_k of B_k^{a,b}, expanded symbolically from the
// three-term recurrence with its constants transcribed independently here.
std::vector<double> jacobi_monomial_coefficients(int k, double a, double b) {
  std::vector<double> prev{1.0};
  if (k == 0) return prev;
  std::vector<double> cur{(a - b) / 2.0, (a + b + 2.0) / 2.0};
  for (int j = 2; j <= k; ++j) {
    const double w = (2 * j + a + b) * (2 * j + a + b + 1) / (2.0 * j * (j + a + b));
    const double w1 = (2 * j + a + b - 1) * (a * a - b * b) / (2.0 * j * (j + a + b) * (2 * j + a + b - 2));
    const double w2 = (j + a - 1) * (j + b - 1) * (2 * j + a + b) / (j * (j + a + b) * (2 * j + a + b - 2));
    std::vector<double> next(cur.size() + 1, 0.0);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      next[i + 1] += w * cur[i];
      next[i] += w1 * cur[i];
    }
    for (std::size_t i = 0; i < prev.size(); ++i) next[i] -= w2 * prev[i];
    prev = std::move(cur);
    cur = std::move(next);
  }
  return cur;
}

double horner(const std::vector<double>& c, double x) {
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + *it;
  return acc;
}

}  // namespace

TEST_SUITE("poly_basis") {

TEST_CASE("jacobi_eval low orders") {
  CHECK(jacobi_eval(0, 0.5, 1.3, 0.3) == 1.0);
  CHECK(jacobi_eval(0, -0.5, -0.5, 0.3) == 1.0);
  CHECK(std::abs(jacobi_eval(1, 0, 0, 0.7) - 0.7) < 1e-15);
  CHECK(std::abs(jacobi_eval(2, 0, 0, 0.5) - 0.125) < 1e-15);
  const auto r = jacobi_recurrence(2, 0, 0);
  CHECK(r.w == 2.5);
  CHECK(r.w_prime == 0.0);
  CHECK(r.w_double_prime == 0.5);
}

TEST_CASE("jacobi domain errors") {
  CHECK_THROWS_AS(jacobi_eval(2, -1.0, 0.0, 0.5), DomainError);
  CHECK_THROWS_AS(jacobi_eval(2, 0.0, -1.5, 0.5), DomainError);
  CHECK_THROWS_AS(BasisSpec::monomial(-1).validate(), DomainError);
}

TEST_CASE("basis_stack examples") {
  const Tensor s = Tensor::from({1}, {0.5});
  const Tensor mono = basis_stack(BasisSpec::monomial(2), s);
  CHECK(mono.shape() == Shape{3, 1});
  CHECK(mono.at(0) == 1.0);
  CHECK(mono.at(1) == 0.5);
  CHECK(mono.at(2) == 0.25);

  const Tensor jac = basis_stack(BasisSpec::jacobi(1, 0, 0), Tensor::from({1}, {0.7}));
  CHECK(jac.at(0) == 1.0);
  CHECK(std::abs(jac.at(1) - 0.7) < 1e-15);

  SplitMix64 rng(1);
  const Tensor v = Tensor::uniform({6}, rng, 0, 1);
  for (const auto& spec : {BasisSpec::monomial(4), BasisSpec::jacobi(4, 1.5, -0.5)}) {
    const Tensor st = basis_stack(spec, v);
    for (std::size_t j = 0; j < 6; ++j) CHECK(st.at(0, j) == 1.0);
  }
}

TEST_CASE("basis_stack rejects singular values outside [0, 1]") {
  CHECK_THROWS_AS(basis_stack(BasisSpec::monomial(2), Tensor::from({2}, {0.5, 1.2})), DomainError);
  CHECK_THROWS_AS(basis_stack(BasisSpec::jacobi(2, 0, 0), Tensor::from({2}, {-0.1, 0.2})), DomainError);
  CHECK_NOTHROW(basis_stack(BasisSpec::jacobi(2, 0, 0), Tensor::from({2}, {0.0, 1.0})));
}

TEST_CASE("monomial rows are exact powers") {
  SplitMix64 rng(2);
  const Tensor s = Tensor::uniform({32}, rng, 0, 1);
  const Tensor st = basis_stack(BasisSpec::monomial(7), s);
  for (int k = 0; k <= 7; ++k)
    for (std::size_t j = 0; j < 32; ++j) CHECK(st.at(k, j) == std::pow(s.at(j), k));
}

TEST_CASE("apply_filter examples") {
  const Tensor s = Tensor::from({3}, {0.1, 0.4, 0.9});
  const Tensor ones = apply_filter(FilterCoefficients::from({1, 0, 0}, false), basis_stack(BasisSpec::jacobi(2, 1, 1), s));
  for (double v : ones.data()) CHECK(v == 1.0);

  const Tensor id = apply_filter(FilterCoefficients::from({0, 1}, false),
                                 basis_stack(BasisSpec::monomial(1), Tensor::from({2}, {0.3, 0.9})));
  CHECK(id.at(0) == 0.3);
  CHECK(id.at(1) == 0.9);

  CHECK_THROWS_AS(apply_filter(FilterCoefficients::from({1, 2}, false), basis_stack(BasisSpec::monomial(2), s)),
                  ShapeError);
}

TEST_CASE("apply_filter matches a Horner oracle") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = 1 + static_cast<int>(rng.below(8));
    std::vector<double> theta(K + 1);
    for (double& t : theta) t = rng.uniform(-2, 2);
    const Tensor s = Tensor::uniform({9}, rng, 0, 1);
    const Tensor f = apply_filter(FilterCoefficients::from(theta, false), basis_stack(BasisSpec::monomial(K), s));
    const auto terms = basis_terms(BasisSpec::monomial(K), s);
    const Tensor g = apply_filter(FilterCoefficients::from(theta, false), terms);
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(std::abs(f.at(j) - horner(theta, s.at(j))) < 1e-12);
      CHECK(std::abs(g.at(j) - horner(theta, s.at(j))) < 1e-12);
    }
  }
}

TEST_CASE("jacobi recurrence equals its symbolic monomial expansion") {
  const std::vector<std::pair<double, double>> params{{0, 0}, {1, 1}, {1.5, -0.5}, {-0.5, -0.5}, {2, 2}};
  for (auto [a, b] : params) {
    for (int K = 0; K <= 6; ++K) {
      const auto coeffs = jacobi_monomial_coefficients(K, a, b);
      std::vector<double> grid(101);
      for (int i = 0; i <= 100; ++i) grid[i] = i / 100.0;
      const Tensor s = Tensor::from({101}, grid);
      const Tensor via_monomial =
          apply_filter(FilterCoefficients::from(coeffs, false), basis_stack(BasisSpec::monomial(K), s));
      const Tensor via_jacobi = basis_stack(BasisSpec::jacobi(K, a, b), s);
      for (int i = 0; i <= 100; ++i) {
        CHECK(std::abs(jacobi_eval(K, a, b, grid[i]) - via_monomial.at(i)) < 1e-10);
        CHECK(std::abs(via_jacobi.at(K, i) - jacobi_eval(K, a, b, grid[i])) < 1e-12);
      }
    }
  }
}

TEST_CASE("printed recurrence differs from the classical Legendre P2") {
  // B_2^{0,0}(x) = 2.5x^2 - 0.5 as transcribed; the classical P_2 is (3x^2 - 1)/2.
  const auto c = jacobi_monomial_coefficients(2, 0, 0);
  CHECK(c[0] == doctest::Approx(-0.5));
  CHECK(c[1] == doctest::Approx(0.0));
  CHECK(c[2] == doctest::Approx(2.5));
}

TEST_CASE("filter gradients match central differences") {
  SplitMix64 rng(4);
  for (const auto& spec : {BasisSpec::monomial(4), BasisSpec::jacobi(4, 0, 0), BasisSpec::jacobi(3, 1.5, -0.5)}) {
    auto coeffs = FilterCoefficients::from({0.3, -0.8, 1.1, 0.4, -0.2}, true);
    if (spec.K == 3) coeffs = FilterCoefficients::from({0.3, -0.8, 1.1, 0.4}, true);
    Tensor s = Tensor::uniform({1, 5}, rng, 0.1, 0.9, true);
    const Tensor r = Tensor::uniform({1, 5}, rng, -1, 1);
    auto loss = [&] { return sum(mul(apply_filter(coeffs, basis_stack(spec, s)), r)); };
    CHECK(agf::test::gradient_error(loss, {coeffs.theta, s}) < 1e-4);
    auto loss_terms = [&] {
      const auto terms = basis_terms(spec, s);
      return sum(mul(apply_filter(coeffs, terms), r));
    };
    CHECK(agf::test::gradient_error(loss_terms, {coeffs.theta, s}) < 1e-4);
  }
}

TEST_CASE("evaluate_filter agrees with the taped path") {
  const auto spec = BasisSpec::jacobi(5, 1, 1);
  const std::vector<double> theta{0.2, -0.4, 0.9, 0.1, -0.3, 0.05};
  const Tensor s = Tensor::from({4}, {0.0, 0.25, 0.6, 1.0});
  const Tensor f = apply_filter(FilterCoefficients::from(theta, false), basis_stack(spec, s));
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(evaluate_filter(theta, spec, s.at(j)) - f.at(j)) < 1e-13);
}

}  // TEST_SUITE
