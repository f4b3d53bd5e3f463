#include <cmath>
#include <numbers>

#include "agf/rng.hpp"
#include "agf/tensor.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace agf;
using agf::test::gradient_error;
using agf::test::max_abs_diff;

TEST_SUITE("tensor_core") {

TEST_CASE("matmul identity and direct arithmetic") {
  const Tensor eye = Tensor::eye(2);
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  CHECK(max_abs_diff(matmul(eye, a), a) == 0.0);
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);
}

TEST_CASE("matmul matches a triple-loop oracle") {
  SplitMix64 rng(7);
  const Tensor a = Tensor::uniform({4, 3}, rng, -2, 2);
  const Tensor b = Tensor::uniform({3, 5}, rng, -2, 2);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(std::abs(c.at(i, j) - acc) < 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  const Tensor a = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("softmax closed forms and normalization") {
  const Tensor half = softmax(Tensor::from({2}, {0.0, 0.0}));
  CHECK(half.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(half.at(1) == doctest::Approx(0.5).epsilon(1e-15));
  const Tensor q = softmax(Tensor::from({2}, {0.0, std::log(3.0)}));
  CHECK(std::abs(q.at(0) - 0.25) < 1e-15);
  CHECK(std::abs(q.at(1) - 0.75) < 1e-15);

  SplitMix64 rng(3);
  const Tensor p = softmax(Tensor::uniform({16, 9}, rng, -5, 5));
  for (std::size_t i = 0; i < 16; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(p.at(i, j) > 0.0);
      CHECK(p.at(i, j) < 1.0);
      s += p.at(i, j);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("sigmoid values, derivative and stability") {
  Tensor x = Tensor::scalar(0.0, true);
  Tensor y = sigmoid(x);
  CHECK(y.item() == 0.5);
  backward(sum(y));
  CHECK(x.grad()[0] == 0.25);

  const double tiny = sigmoid(Tensor::scalar(-50.0)).item();
  CHECK(tiny > 0.0);
  CHECK(tiny <= 1e-20);
  CHECK(sigmoid(Tensor::scalar(50.0)).item() <= 1.0);
}

TEST_CASE("backward of sum of squares") {
  Tensor w = Tensor::matrix({{1, 2}, {3, 4}}, true);
  backward(sum(mul(w, w)));
  const std::vector<double> expected{2, 4, 6, 8};
  for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == expected[i]);
}

TEST_CASE("softmax then sum has a zero gradient") {
  SplitMix64 rng(11);
  Tensor x = Tensor::uniform({1, 6}, rng, -2, 2, true);
  backward(sum(softmax(x)));
  for (double g : x.grad()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("backward contract errors") {
  Tensor w = Tensor::matrix({{1, 2}, {3, 4}}, true);
  CHECK_THROWS_AS(backward(mul(w, w)), ContractError);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0, true)), ContractError);
  Tape::current().reset();
  const Tensor non_leaf = scale(w, 2.0);
  Tensor copy = non_leaf;
  CHECK_THROWS_AS(copy.mutable_data(), ContractError);
  Tape::current().reset();
}

TEST_CASE("tape is topologically ordered and replayed exactly once") {
  Tape::current().reset();
  SplitMix64 rng(5);
  Tensor a = Tensor::uniform({3, 3}, rng, -1, 1, true);
  Tensor b = Tensor::uniform({3, 3}, rng, -1, 1, true);
  const Tensor c = matmul(a, b);
  const Tensor d = softmax(add(c, a));
  const Tensor loss = frobenius_norm(sub(d, mul(c, b)));

  const auto& entries = Tape::current().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (const Tensor& in : entries[i].inputs) {
      if (in.is_leaf()) continue;
      bool produced_before = false;
      for (std::size_t j = 0; j < i; ++j) produced_before |= entries[j].output.id() == in.id();
      CHECK(produced_before);
    }
  }
  const std::size_t recorded = Tape::current().size();
  backward(loss);
  CHECK(Tape::current().last_replay_count() == recorded);
  CHECK(Tape::current().size() == 0);
}

TEST_CASE("no recording under NoGradGuard") {
  Tape::current().reset();
  Tensor w = Tensor::matrix({{1, 2}, {3, 4}}, true);
  {
    NoGradGuard guard;
    const Tensor y = matmul(w, w);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape::current().size() == 0);
  CHECK(matmul(w, w).requires_grad());
  Tape::current().reset();
}

TEST_CASE("non-finite results are errors") {
  CHECK_THROWS_AS(Tensor::from({1}, {std::nan("")}), NumericError);
  CHECK_THROWS_AS(scale(Tensor::scalar(1e308), 10.0), NumericError);
}

TEST_CASE("large finite inputs stay finite") {
  const Tensor big = Tensor::matrix({{1000, -1000, 0}, {-1000, -1000, 999}});
  CHECK_NOTHROW(softmax(big));
  CHECK_NOTHROW(sigmoid(big));
  CHECK_NOTHROW(gelu(big));
  CHECK_NOTHROW(relu(big));
  CHECK_NOTHROW(layer_norm(big, Tensor::full({1, 3}, 1.0), Tensor::zeros({1, 3})));
  CHECK_NOTHROW(frobenius_norm(big));
  const std::vector<int> labels{0, 1};
  CHECK_NOTHROW(cross_entropy(big, labels));
  CHECK(sigmoid(Tensor::scalar(-1000.0)).item() >= 0.0);
}

TEST_CASE("every differentiable op matches central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SplitMix64 rng(100 + seed);
    Tensor a = Tensor::uniform({3, 4}, rng, -2, 2, true);
    Tensor b = Tensor::uniform({3, 4}, rng, -2, 2, true);
    Tensor m = Tensor::uniform({4, 2}, rng, -2, 2, true);
    Tensor row = Tensor::uniform({1, 4}, rng, -2, 2, true);
    Tensor gamma = Tensor::uniform({1, 4}, rng, 0.5, 2, true);
    Tensor w3 = Tensor::uniform({3}, rng, -2, 2, true);
    Tensor pos = Tensor::uniform({3, 4}, rng, 0.1, 2, true);
    const Tensor r34 = Tensor::uniform({3, 4}, rng, -1, 1);
    const Tensor r43 = Tensor::uniform({4, 3}, rng, -1, 1);
    const Tensor r32 = Tensor::uniform({3, 2}, rng, -1, 1);
    const Tensor r14 = Tensor::uniform({1, 4}, rng, -1, 1);
    auto probe = [&](const Tensor& t, const Tensor& r) { return sum(mul(t, r)); };
    const std::vector<int> labels{1, 3, 0};

    const double tol = 1e-4;
    CHECK(gradient_error([&] { return probe(matmul(a, m), r32); }, {a, m}) < tol);
    CHECK(gradient_error([&] { return probe(transpose(a), r43); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(reshape(a, {4, 3}), r43); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(add(a, b), r34); }, {a, b}) < tol);
    CHECK(gradient_error([&] { return probe(sub(a, b), r34); }, {a, b}) < tol);
    CHECK(gradient_error([&] { return probe(mul(a, b), r34); }, {a, b}) < tol);
    CHECK(gradient_error([&] { return probe(scale(a, -1.7), r34); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(add_scalar(a, 0.3), r34); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(add_bias(a, row), r34); }, {a, row}) < tol);
    CHECK(gradient_error([&] { return probe(powi(pos, 3), r34); }, {pos}) < tol);
    CHECK(gradient_error([&] { return scale(sum(mul(a, a)), 0.5); }, {a}) < tol);
    CHECK(gradient_error([&] { return mean(mul(a, b)); }, {a, b}) < tol);
    CHECK(gradient_error([&] { return probe(mean_rows(a), r14); }, {a}) < tol);
    CHECK(gradient_error([&] { return frobenius_norm(a); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(relu(a), r34); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(gelu(a), r34); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(sigmoid(a), r34); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(softmax(a), r34); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(layer_norm(a, gamma, row), r34); }, {a, gamma, row}) < tol);
    CHECK(gradient_error([&] { return probe(slice_cols(a, 1, 2), r32); }, {a}) < tol);
    CHECK(gradient_error([&] { return probe(concat_cols({a, b}), concat_cols({r34, r34})); }, {a, b}) < tol);
    CHECK(gradient_error([&] { return probe(concat_rows({a, row}), concat_rows({r34, r14})); }, {a, row}) < tol);
    CHECK(gradient_error(
              [&] {
                const std::vector<Tensor> terms{a, b, pos};
                return probe(weighted_sum(w3, terms), r34);
              },
              {w3, a, b, pos}) < tol);
    CHECK(gradient_error([&] { return cross_entropy(a, labels); }, {a}) < tol);
  }
}

TEST_CASE("cross entropy of uniform logits is ln C") {
  const Tensor logits = Tensor::zeros({3, 5});
  const std::vector<int> labels{0, 4, 2};
  CHECK(std::abs(cross_entropy(logits, labels).item() - std::log(5.0)) < 1e-15);
  const std::vector<int> bad{0, 5, 2};
  CHECK_THROWS_AS(cross_entropy(logits, bad), DomainError);
}

TEST_CASE("allocation stats record the largest buffer") {
  AllocationStats::reset();
  const Tensor a = Tensor::zeros({3, 7});
  CHECK(AllocationStats::peak_numel() == 21);
  const Tensor b = matmul(transpose(a), a);
  CHECK(AllocationStats::peak_numel() == 49);
}

}  // TEST_SUITE
