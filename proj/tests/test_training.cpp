#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "agf/attention.hpp"
#include "agf/errors.hpp"
#include "agf/spectral.hpp"
#include "agf/training.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace agf;
using namespace agf::training;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("agf_test_" + name);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

TrainConfig tiny_config(attn::AttentionKind kind = attn::AttentionKind::AGF) {
  TrainConfig c;
  c.variant = kind;
  c.d = 8;
  c.heads = 2;
  c.layers = 1;
  c.K = 3;
  c.gamma = 0.1;
  c.lr = 5e-3;
  c.epochs = 3;
  c.batch_size = 16;
  c.seed = 11;
  return c;
}

// x -> x^2 with a deliberately wrong derivative (3x instead of 2x).
Tensor bad_square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * x.at(i);
  return record_op("bad_square", x.shape(), std::move(out), {x}, [x](std::span<const double> g) {
    auto gx = grad_sink(x);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * 3.0 * x.at(i);
  });
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.gamma = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.K = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.a = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(attention_kind_from_string("vanilla") == attn::AttentionKind::Vanilla);
  CHECK_THROWS_AS(attention_kind_from_string("linear"), ConfigError);
}

TEST_CASE("total loss examples") {
  const Tensor logits = Tensor::matrix({{0.2, -1.0, 3.0}, {1.5, 0.0, -0.5}});
  const std::vector<int> labels{2, 0};
  const Tensor ortho = Tensor::scalar(std::sqrt(2.0) / 9.0);
  CHECK(total_loss(logits, labels, ortho, 0.0).item() == cross_entropy(logits, labels).item());
  const double with = total_loss(logits, labels, ortho, 0.1).item();
  CHECK(std::abs(with - cross_entropy(logits, labels).item() - 0.1 * std::sqrt(2.0) / 9.0) < 1e-15);

  const Tensor flat = Tensor::zeros({4, 5});
  const std::vector<int> four{0, 1, 2, 4};
  CHECK(std::abs(total_loss(flat, four, Tensor::scalar(0.0), 1.0).item() - std::log(5.0)) < 1e-15);
  const std::vector<int> bad{0, 5, 1, 1};
  CHECK_THROWS_AS(total_loss(flat, bad, Tensor::scalar(0.0), 0.0), DomainError);
}

TEST_CASE("adam examples and reference trace") {
  AdamState state;
  std::vector<Tensor> zero{Tensor::from({2}, {0.7, -0.2}, true)};
  zero[0].zero_grad();
  adam_step(zero, state, 0.1);
  CHECK(zero[0].at(0) == 0.7);
  CHECK(zero[0].at(1) == -0.2);

  for (double g : {1e-4, 0.3, 50.0, -7.0}) {
    AdamState s;
    std::vector<Tensor> p{Tensor::from({1}, {1.0}, true)};
    Tensor handle = p[0];
    handle.zero_grad();
    grad_sink(handle)[0] = g;
    adam_step(p, s, 0.01);
    CHECK(std::abs(std::abs(p[0].at(0) - 1.0) - 0.01) < 1e-6);
  }

  AdamState s;
  std::vector<Tensor> p{Tensor::from({2}, {0.5, -1.25}, true)};
  const double expect[2][2] = {{0.4900000003333333, -1.24000000005}, {0.4800000006666667, -1.2300000001}};
  for (int step = 0; step < 2; ++step) {
    Tensor handle = p[0];
    handle.zero_grad();
    grad_sink(handle)[0] = 0.3;
    grad_sink(handle)[1] = -2.0;
    adam_step(p, s, 0.01);
    CHECK(std::abs(p[0].at(0) - expect[step][0]) < 1e-12);
    CHECK(std::abs(p[0].at(1) - expect[step][1]) < 1e-12);
  }
  CHECK(s.step == 2);

  Tensor handle = p[0];
  handle.zero_grad();
  grad_sink(handle)[1] = std::nan("");
  const double before = p[0].at(0);
  CHECK_THROWS_AS(adam_step(p, s, 0.01), NumericError);
  CHECK(p[0].at(0) == before);
  CHECK(s.step == 2);
}

TEST_CASE("grad check on a quadratic and a broken op") {
  SplitMix64 rng(3);
  const Tensor x = Tensor::uniform({3, 4}, rng, -2, 2, true);
  const Tensor A = Tensor::uniform({4, 4}, rng, -1, 1, true);
  auto quad = [&] { return sum(mul(matmul(x, A), x)); };
  const auto ok = grad_check(quad, {{"x", x}, {"A", A}}, 1e-5, 1e-9);
  CHECK(ok.passed);
  CHECK(ok.max_rel_error < 1e-9);
  CHECK(ok.entries.size() == 2);
  CHECK(ok.entries[0].count == 12);

  const auto broken = grad_check([&] { return sum(bad_square(x)); }, {{"x", x}}, 1e-5, 1e-4);
  CHECK_FALSE(broken.passed);
  CHECK(std::abs(broken.max_rel_error - 1.0 / 3.0) < 1e-6);
  CHECK_THROWS_AS(grad_check(quad, {{"x", x}}, 0.0, 1e-4), DomainError);
}

TEST_CASE("grad check passes for full classifiers of both kinds") {
  const Dataset data = gen_frequency_task(5, 3, 16);
  const std::vector<std::size_t> batch{0, 1, 2};
  for (auto kind : {attn::AttentionKind::AGF, attn::AttentionKind::Vanilla}) {
    const auto model = SequenceClassifier::init(tiny_config(kind), data.features(), data.num_classes);
    const auto report = grad_check(model, data, batch, 0.1, 1e-5, 1e-4);
    for (const auto& e : report.entries) {
      INFO(e.name << " " << e.max_rel_error);
      CHECK(e.passed);
    }
    CHECK(report.passed);
    const bool has_theta = std::ranges::any_of(report.entries, [](const auto& e) {
      return e.name.find("theta") != std::string::npos;
    });
    CHECK(has_theta == (kind == attn::AttentionKind::AGF));
  }
}

TEST_CASE("frequency task is deterministic, balanced and peaks where designed") {
  const Dataset a = gen_frequency_task(7, 201, 64);
  const Dataset b = gen_frequency_task(7, 201, 64);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.labels[i] == b.labels[i]);
    CHECK(agf::test::max_abs_diff(a.sequences[i].data(), b.sequences[i].data()) == 0.0);
  }
  const auto ones = std::count(a.labels.begin(), a.labels.end(), 1);
  CHECK(std::abs(2 * static_cast<long>(ones) - 201) <= 1);
  CHECK(a.seq_len() == 64);
  CHECK(a.features() == 1);
  CHECK_NOTHROW(a.validate());

  std::vector<std::vector<double>> power(2, std::vector<double>(33, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto X = spectral::dft(a.sequences[i].data());
    for (std::size_t k = 0; k <= 32; ++k) power[a.labels[i]][k] += std::norm(X[k]);
  }
  for (int c = 0; c < 2; ++c) {
    const auto peak = std::max_element(power[c].begin() + 1, power[c].end()) - power[c].begin();
    if (c == 0) CHECK((peak == 1 || peak == 2));
    else CHECK((peak == 30 || peak == 31));
  }

  const Dataset other = gen_frequency_task(8, 10, 64);
  CHECK(agf::test::max_abs_diff(other.sequences[0].data(), a.sequences[0].data()) > 0.0);
  CHECK_THROWS_AS(gen_frequency_task(0, 4, 7), DomainError);

  const Dataset split = frequency_task_split(1, 40, 10, 32);
  CHECK(split.indices(Split::Train).size() == 40);
  CHECK(split.indices(Split::Test).size() == 10);
}

TEST_CASE("csv fixtures and round trip") {
  const auto fixture = temp_file("two.csv");
  write_text(fixture, "label,t0_f0,t0_f1,t1_f0,t1_f1,t2_f0,t2_f1\n1,0.5,1,2,3,4,5\n0,-1,-2,-3,-4,-5,1e-3\n");
  const Dataset d = load_csv_dataset(fixture);
  CHECK(d.size() == 2);
  CHECK(d.seq_len() == 3);
  CHECK(d.features() == 2);
  CHECK(d.labels == std::vector<int>{1, 0});
  CHECK(d.sequences[0].at(0, 0) == 0.5);
  CHECK(d.sequences[0].at(2, 1) == 5.0);
  CHECK(d.sequences[1].at(2, 1) == 1e-3);
  CHECK(d.num_classes == 2);

  auto expect_error = [](const std::string& text, const std::string& fragment) {
    const auto path = temp_file("bad.csv");
    write_text(path, text);
    try {
      load_csv_dataset(path);
      FAIL("expected a dataset error");
    } catch (const DatasetError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  expect_error("", "is empty");
  expect_error("label,t0_f0,t1_f0\n", "no rows");
  expect_error("label,t0_f0,t1_f0\n0,1,2\n1,3\n", ":3: expected 3 fields");
  expect_error("label,t0_f0,t1_f0\n0,1,abc\n", ":2: column 3 is not a finite number");
  expect_error("label,t0_f0,t1_f0\ncat,1,2\n", ":2: unknown label 'cat'");
  expect_error("label,t0_f0,t1_f0\n-1,1,2\n", "unknown label '-1'");
  expect_error("label,t0_f0,t2_f0\n0,1,2\n", "should be 't1_f0'");
  CHECK_THROWS_AS(load_csv_dataset(temp_file("does_not_exist.csv")), DatasetError);

  const Dataset gen = gen_frequency_task(3, 5, 16);
  const auto rt = temp_file("roundtrip.csv");
  write_csv_dataset(rt, gen);
  const Dataset back = load_csv_dataset(rt);
  CHECK(back.labels == gen.labels);
  for (std::size_t i = 0; i < gen.size(); ++i) {
    CHECK(agf::test::max_abs_diff(back.sequences[i].data(), gen.sequences[i].data()) == 0.0);
  }
}

TEST_CASE("classifier shapes and positional code") {
  const Tensor pe = positional_encoding(5, 4);
  CHECK(pe.shape() == Shape{5, 4});
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(std::abs(pe.at(3, 0) - std::sin(3.0)) < 1e-15);
  CHECK(std::abs(pe.at(3, 3) - std::cos(3.0 / 100.0)) < 1e-15);

  auto cfg = tiny_config();
  cfg.layers = 3;
  const auto model = SequenceClassifier::init(cfg, 2, 4);
  SplitMix64 rng(1);
  const auto out = model.forward(Tensor::randn({10, 2}, rng));
  CHECK(out.logits.shape() == Shape{1, 4});
  CHECK(out.hidden.size() == 4);
  CHECK(out.hidden.back().shape() == Shape{10, 8});
  CHECK(out.ortho.item() > 0.0);
  CHECK_THROWS_AS(model.forward(Tensor::zeros({10, 3})), ShapeError);
}

TEST_CASE("training with lr = 0 leaves accuracy constant") {
  const Dataset data = frequency_task_split(2, 48, 16, 16);
  auto cfg = tiny_config();
  cfg.lr = 0.0;
  const auto r = train(cfg, data);
  REQUIRE(r.history.size() == 3);
  for (const auto& m : r.history) {
    CHECK(m.test_accuracy == r.history[0].test_accuracy);
    CHECK(m.train_accuracy == r.history[0].train_accuracy);
  }
}

TEST_CASE("training is bit-for-bit deterministic") {
  const Dataset data = frequency_task_split(4, 48, 16, 16);
  const auto cfg = tiny_config();
  const auto r1 = train(cfg, data);
  const auto r2 = train(cfg, data);
  const auto p1 = r1.model.parameters(), p2 = r2.model.parameters();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].name == p2[i].name);
    CHECK(agf::test::max_abs_diff(p1[i].tensor.data(), p2[i].tensor.data()) == 0.0);
  }
  for (std::size_t e = 0; e < r1.history.size(); ++e) {
    CHECK(r1.history[e].task_loss == r2.history[e].task_loss);
    CHECK(r1.history[e].ortho_loss == r2.history[e].ortho_loss);
  }
  auto cfg2 = cfg;
  cfg2.seed = 12;
  const auto r3 = train(cfg2, data);
  CHECK(r3.history.back().task_loss != r1.history.back().task_loss);
}

TEST_CASE("the ortho weight pushes the penalty toward its floor") {
  // Rows of U sum to one, so the entries of U^T U sum to n and it cannot equal
  // I when n > d_h. The nearest admissible Gram matrix is I + t 11^T with
  // t = (n - d_h) / d_h^2, giving ||U^T U - I||_F >= (n - d_h) / d_h per head.
  const std::size_t n = 16;
  const Dataset data = frequency_task_split(6, 32, 8, n);
  auto cfg = tiny_config();
  cfg.heads = 1;
  cfg.epochs = 50;
  cfg.batch_size = 4;
  cfg.lr = 1e-2;
  const double dh = static_cast<double>(cfg.d / cfg.heads);
  const double floor = static_cast<double>(cfg.heads) * (n - dh) / dh / static_cast<double>(n * n);

  std::vector<double> final_ortho;
  for (double gamma : {0.0, 10.0, 100.0}) {
    cfg.gamma = gamma;
    const auto r = train(cfg, data);
    for (const auto& m : r.history) CHECK(m.ortho_loss >= floor - 1e-12);
    CHECK(std::isfinite(r.history.back().task_loss));
    if (gamma > 0.0) CHECK(r.history.back().ortho_loss < r.history.front().ortho_loss);
    final_ortho.push_back(r.history.back().ortho_loss);
  }
  INFO("floor " << floor << " final " << final_ortho[0] << " " << final_ortho[1] << " " << final_ortho[2]);
  CHECK(final_ortho[1] < final_ortho[0]);
  CHECK(final_ortho[2] < final_ortho[1]);
  CHECK(final_ortho[2] - floor < 0.5 * (final_ortho[0] - floor));
}

TEST_CASE("divergence is reported") {
  const Dataset data = frequency_task_split(6, 16, 4, 16);
  auto cfg = tiny_config();
  cfg.lr = 1e200;
  CHECK_THROWS_AS(train(cfg, data), TrainingDiverged);
}

TEST_CASE("snapshots feed the cosine metric") {
  const Dataset data = frequency_task_split(9, 16, 12, 16);
  auto cfg = tiny_config();
  cfg.layers = 2;
  cfg.epochs = 1;
  const auto r = train(cfg, data);
  CHECK(r.snapshots.size() == 8);
  CHECK(r.snapshots[0].size() == 3);
  const auto cos = mean_cosine_by_layer(r.snapshots);
  CHECK(cos.size() == 3);
  for (double c : cos) CHECK((c >= -1.0 && c <= 1.0));
  CHECK(accuracy(r.model, data, Split::Test) == r.history.back().test_accuracy);
}

}  // TEST_SUITE
