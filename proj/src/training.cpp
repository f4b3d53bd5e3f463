#include "agf/training.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "agf/errors.hpp"
#include "agf/spectral.hpp"

namespace agf::training {

std::string to_string(attn::AttentionKind kind) { return kind == attn::AttentionKind::AGF ? "agf" : "vanilla"; }

attn::AttentionKind attention_kind_from_string(const std::string& name) {
  if (name == "agf") return attn::AttentionKind::AGF;
  if (name == "vanilla") return attn::AttentionKind::Vanilla;
  throw ConfigError("unknown attention variant '" + name + "' (expected 'agf' or 'vanilla')");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid training config: " + msg); };
  if (d == 0) fail("d must be positive");
  if (heads == 0 || d % heads != 0) fail("heads must divide d");
  if (layers == 0) fail("layers must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!std::isfinite(lr) || lr < 0.0) fail("lr must be finite and non-negative");
  if (!std::isfinite(gamma) || gamma < 0.0) fail("gamma must be finite and non-negative");
  try {
    basis_spec().validate();
  } catch (const DomainError& e) {
    fail(e.what());
  }
}

// ---------------------------------------------------------------------------
// Data

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (sequences.empty()) throw DatasetError("dataset is empty");
  if (labels.size() != sequences.size() || splits.size() != sequences.size()) {
    throw DatasetError("dataset has mismatched sequence, label and split counts");
  }
  if (num_classes < 2) throw DatasetError("dataset needs at least two classes");
  const Shape shape = sequences.front().shape();
  if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0) throw DatasetError("sequences must be non-empty matrices");
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].shape() != shape) {
      throw DatasetError("sequence " + std::to_string(i) + " has shape " + shape_str(sequences[i].shape()) +
                         ", expected " + shape_str(shape));
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DatasetError("sequence " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                         " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset gen_frequency_task(std::uint64_t seed, std::size_t n_samples, std::size_t seq_len,
                           const FrequencyTaskOptions& options) {
  const std::size_t C = options.classes;
  if (C < 2) throw DomainError("frequency task needs at least two classes");
  if (seq_len < 8) throw DomainError("frequency task needs seq_len >= 8");
  if (!(options.noise >= 0.0) || !std::isfinite(options.noise)) throw DomainError("noise must be finite and >= 0");
  const std::size_t top = seq_len / 2 - 2;  // lowest cycle count of the last band
  if (top < 2 * C - 1) throw DomainError("seq_len too short for the requested number of classes");

  SplitMix64 rng(seed);
  std::vector<int> labels(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) labels[i] = static_cast<int>(i % C);
  for (std::size_t i = n_samples; i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);

  Dataset data;
  data.num_classes = C;
  data.labels = labels;
  data.splits.assign(n_samples, Split::Train);
  data.sequences.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t c = static_cast<std::size_t>(labels[i]);
    const std::size_t base = 1 + (c * (top - 1) + (C - 1) / 2) / (C - 1);
    const double cycles = static_cast<double>(base + rng.below(2));
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<double> x(seq_len);
    for (std::size_t t = 0; t < seq_len; ++t) {
      const double angle = 2.0 * std::numbers::pi * cycles * static_cast<double>(t) / static_cast<double>(seq_len);
      x[t] = options.amplitude * std::sin(angle + phase) + options.noise * rng.normal();
    }
    data.sequences.push_back(Tensor::from({seq_len, 1}, std::move(x)));
  }
  return data;
}

Dataset frequency_task_split(std::uint64_t seed, std::size_t n_train, std::size_t n_test, std::size_t seq_len,
                             const FrequencyTaskOptions& options) {
  Dataset data = gen_frequency_task(seed, n_train, seq_len, options);
  Dataset test = gen_frequency_task(seed ^ 0x9E3779B97F4A7C15ULL, n_test, seq_len, options);
  for (std::size_t i = 0; i < test.size(); ++i) {
    data.sequences.push_back(test.sequences[i]);
    data.labels.push_back(test.labels[i]);
    data.splits.push_back(Split::Test);
  }
  return data;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

std::string at_line(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split_csv_line(trim(line));
      break;
    }
  }
  if (header.empty()) throw DatasetError("dataset '" + path.string() + "' is empty");
  if (trim(header[0]) != "label") throw DatasetError(at_line(path, lineno) + "first column must be 'label'");

  // Recover seq_len x features from t{i}_f{j} names laid out time-major.
  std::size_t features = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (trim(header[c]) == "t0_f" + std::to_string(c - 1)) features = c;
    else break;
  }
  const std::size_t cells = header.size() - 1;
  if (features == 0 || cells % features != 0) {
    throw DatasetError(at_line(path, lineno) + "header must be label,t0_f0,...,t{n-1}_f{m-1}");
  }
  const std::size_t seq_len = cells / features;
  for (std::size_t t = 0; t < seq_len; ++t) {
    for (std::size_t f = 0; f < features; ++f) {
      const std::string expect = "t" + std::to_string(t) + "_f" + std::to_string(f);
      if (trim(header[1 + t * features + f]) != expect) {
        throw DatasetError(at_line(path, lineno) + "header column " + std::to_string(2 + t * features + f) +
                           " should be '" + expect + "'");
      }
    }
  }

  Dataset data;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string row = trim(line);
    if (row.empty()) continue;
    const auto fields = split_csv_line(row);
    if (fields.size() != header.size()) {
      throw DatasetError(at_line(path, lineno) + "expected " + std::to_string(header.size()) + " fields, got " +
                         std::to_string(fields.size()));
    }
    const std::string label_text = trim(fields[0]);
    int label = -1;
    const auto [lp, lerr] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (lerr != std::errc() || lp != label_text.data() + label_text.size() || label < 0) {
      throw DatasetError(at_line(path, lineno) + "unknown label '" + label_text +
                         "' (labels are non-negative integers)");
    }
    std::vector<double> values(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      const std::string cell = trim(fields[c + 1]);
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v)) {
        throw DatasetError(at_line(path, lineno) + "column " + std::to_string(c + 2) + " is not a finite number: '" +
                           cell + "'");
      }
      values[c] = v;
    }
    data.sequences.push_back(Tensor::from({seq_len, features}, std::move(values)));
    data.labels.push_back(label);
    data.splits.push_back(Split::Train);
    max_label = std::max(max_label, label);
  }
  if (data.sequences.empty()) throw DatasetError("dataset '" + path.string() + "' has a header but no rows");
  data.num_classes = static_cast<std::size_t>(std::max(max_label + 1, 2));
  return data;
}

void write_csv_dataset(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  std::FILE* out = std::fopen(path.string().c_str(), "w");
  if (!out) throw DatasetError("cannot write dataset '" + path.string() + "'");
  const std::size_t n = data.seq_len(), f = data.features();
  std::fputs("label", out);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < f; ++j) std::fprintf(out, ",t%zu_f%zu", t, j);
  std::fputc('\n', out);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::fprintf(out, "%d", data.labels[i]);
    for (double v : data.sequences[i].data()) std::fprintf(out, ",%.17g", v);
    std::fputc('\n', out);
  }
  if (std::fclose(out) != 0) throw DatasetError("failed writing dataset '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Model

Tensor positional_encoding(std::size_t n, std::size_t d) {
  std::vector<double> pe(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * rate;
      pe[t * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({n, d}, std::move(pe));
}

SequenceClassifier SequenceClassifier::init(const TrainConfig& config, std::size_t features, std::size_t classes) {
  config.validate();
  if (features == 0 || classes < 2) throw ConfigError("classifier needs features >= 1 and classes >= 2");
  SplitMix64 rng(config.seed);
  const std::size_t d = config.d;
  SequenceClassifier m;
  m.W_in_ = Tensor::randn({features, d}, rng, 1.0 / std::sqrt(static_cast<double>(features)), true);
  m.b_in_ = Tensor::zeros({1, d}, true);
  for (std::size_t l = 0; l < config.layers; ++l) {
    m.blocks_.push_back(attn::BlockParams::init(d, config.variant, config.heads, config.basis_spec(), rng,
                                                config.freeze_theta));
  }
  m.lnf_gamma_ = Tensor::full({1, d}, 1.0, true);
  m.lnf_beta_ = Tensor::zeros({1, d}, true);
  m.W_out_ = Tensor::randn({d, classes}, rng, 1.0 / std::sqrt(static_cast<double>(d)), true);
  m.b_out_ = Tensor::zeros({1, classes}, true);
  return m;
}

SequenceClassifier::Output SequenceClassifier::forward(const Tensor& sequence) const {
  if (sequence.rank() != 2 || sequence.cols() != W_in_.rows()) {
    throw ShapeError("classifier: expected an n x " + std::to_string(W_in_.rows()) + " sequence, got " +
                     shape_str(sequence.shape()));
  }
  Output out;
  Tensor h = add(add_bias(matmul(sequence, W_in_), b_in_), positional_encoding(sequence.rows(), W_in_.cols()));
  out.hidden.push_back(h);
  out.ortho = Tensor::scalar(0.0);
  for (const auto& block : blocks_) {
    auto r = attn::block_forward(h, block);
    h = r.out;
    out.ortho = add(out.ortho, r.ortho);
    out.hidden.push_back(h);
  }
  const Tensor pooled = mean_rows(layer_norm(h, lnf_gamma_, lnf_beta_));
  out.logits = add_bias(matmul(pooled, W_out_), b_out_);
  return out;
}

std::vector<NamedParam> SequenceClassifier::parameters() const {
  std::vector<NamedParam> p{{"embed.W_in", W_in_}, {"embed.b_in", b_in_}};
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    auto named = blocks_[l].named("layer" + std::to_string(l) + ".");
    p.insert(p.end(), named.begin(), named.end());
  }
  p.push_back({"final_ln.gamma", lnf_gamma_});
  p.push_back({"final_ln.beta", lnf_beta_});
  p.push_back({"head.W_out", W_out_});
  p.push_back({"head.b_out", b_out_});
  return p;
}

// ---------------------------------------------------------------------------
// Objective and optimizer

Tensor total_loss(const Tensor& logits, std::span<const int> labels, const Tensor& ortho, double gamma) {
  if (ortho.numel() != 1) throw ShapeError("total_loss: ortho must be a scalar");
  return add(cross_entropy(logits, labels), scale(ortho, gamma));
}

BatchLoss batch_loss(const SequenceClassifier& model, const Dataset& data, std::span<const std::size_t> batch,
                     double gamma) {
  if (batch.empty()) throw DomainError("batch_loss: empty batch");
  std::vector<Tensor> logits;
  std::vector<int> labels;
  Tensor ortho = Tensor::scalar(0.0);
  for (std::size_t i : batch) {
    auto out = model.forward(data.sequences.at(i));
    logits.push_back(out.logits);
    labels.push_back(data.labels.at(i));
    ortho = add(ortho, out.ortho);
  }
  ortho = scale(ortho, 1.0 / static_cast<double>(batch.size()));
  BatchLoss r;
  r.logits = concat_rows(logits);
  const Tensor task = cross_entropy(r.logits, labels);
  r.loss = add(task, scale(ortho, gamma));
  r.task = task.item();
  r.ortho = ortho.item();
  return r;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamOptions& options) {
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel()) throw ContractError("adam_step: parameter size changed");
    if (!params[i].has_grad()) continue;
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = params[i].has_grad();
    auto grad = has ? params[i].grad() : std::span<const double>{};
    auto w = params[i].mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = has ? grad[j] : 0.0;
      m[j] = options.beta1 * m[j] + (1.0 - options.beta1) * g;
      v[j] = options.beta2 * v[j] + (1.0 - options.beta2) * g * g;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options.eps);
    }
  }
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedParam>& params,
                           double h, double tolerance) {
  if (!(h > 0.0)) throw DomainError("grad_check: step h must be positive");
  Tape::current().reset();
  for (auto p : params) p.tensor.clear_grad();
  backward(loss_fn());

  GradCheckReport report;
  report.h = h;
  report.tolerance = tolerance;
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    analytic.emplace_back(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) std::ranges::copy(p.tensor.grad(), analytic.back().begin());
  }

  NoGradGuard guard;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto w = t.mutable_data();
    GradCheckEntry entry{params[i].name, w.size(), 0.0, true};
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      w[j] = orig + h;
      const double up = loss_fn().item();
      w[j] = orig - h;
      const double down = loss_fn().item();
      w[j] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
    }
    entry.passed = entry.max_rel_error < tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  report.passed = std::ranges::all_of(report.entries, [](const auto& e) { return e.passed; });
  return report;
}

GradCheckReport grad_check(const SequenceClassifier& model, const Dataset& data, std::span<const std::size_t> batch,
                           double gamma, double h, double tolerance) {
  return grad_check([&] { return batch_loss(model, data, batch, gamma).loss; }, model.parameters(), h, tolerance);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
}

}  // namespace

double accuracy(const SequenceClassifier& model, const Dataset& data, Split split) {
  const auto idx = data.indices(split);
  if (idx.empty()) return 0.0;
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    const auto out = model.forward(data.sequences[i]);
    correct += argmax_row(out.logits.data()) == static_cast<std::size_t>(data.labels[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

std::vector<double> mean_cosine_by_layer(const std::vector<std::vector<Tensor>>& snapshots) {
  if (snapshots.empty()) throw DomainError("mean_cosine_by_layer: no snapshots");
  std::vector<double> mean;
  for (const auto& probe : snapshots) {
    const auto s = spectral::cosine_similarity_by_layer(probe);
    if (mean.empty()) mean.assign(s.means.size(), 0.0);
    if (s.means.size() != mean.size()) throw ShapeError("mean_cosine_by_layer: probes disagree on depth");
    for (std::size_t l = 0; l < mean.size(); ++l) mean[l] += s.means[l] / static_cast<double>(snapshots.size());
  }
  return mean;
}

TrainResult train(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch) {
  config.validate();
  data.validate();
  TrainResult result{SequenceClassifier::init(config, data.features(), data.num_classes), {}, {}};
  auto named = result.model.parameters();
  std::vector<Tensor> params;
  for (const auto& p : named) params.push_back(p.tensor);

  auto order = data.indices(Split::Train);
  if (order.empty()) throw DatasetError("training split is empty");
  const auto test = data.indices(Split::Test);
  SplitMix64 shuffle(config.seed ^ 0xD1B54A32D192ED03ULL);
  AdamState adam;

  auto diverged = [&](std::size_t epoch, const char* where, const std::exception& e) {
    Tape::current().reset();
    return TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", " + where + " (step " +
                            std::to_string(adam.step) + ", lr=" + std::to_string(config.lr) + "): " + e.what());
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double task_sum = 0.0, ortho_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, count);
      Tape::current().reset();
      for (Tensor p : params) p.clear_grad();
      try {
        const auto bl = batch_loss(result.model, data, batch, config.gamma);
        backward(bl.loss);
        adam_step(params, adam, config.lr);
        task_sum += bl.task * static_cast<double>(count);
        ortho_sum += bl.ortho * static_cast<double>(count);
        for (std::size_t r = 0; r < count; ++r) {
          const auto row = bl.logits.data().subspan(r * data.num_classes, data.num_classes);
          correct += argmax_row(row) == static_cast<std::size_t>(data.labels[batch[r]]) ? 1 : 0;
        }
      } catch (const NumericError& e) {
        throw diverged(epoch, "training step", e);
      }
    }
    EpochMetrics m;
    m.epoch = epoch;
    const double n = static_cast<double>(order.size());
    m.train_accuracy = static_cast<double>(correct) / n;
    try {
      m.test_accuracy = accuracy(result.model, data, Split::Test);
    } catch (const NumericError& e) {
      throw diverged(epoch, "evaluation", e);
    }
    m.task_loss = task_sum / n;
    m.ortho_loss = ortho_sum / n;
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }

  NoGradGuard guard;
  const auto& probes = test.empty() ? order : test;
  for (std::size_t p = 0; p < std::min<std::size_t>(8, probes.size()); ++p) {
    auto out = result.model.forward(data.sequences[probes[p]]);
    std::vector<Tensor> hidden;
    for (const Tensor& h : out.hidden) hidden.push_back(h.detach());
    result.snapshots.push_back(std::move(hidden));
  }
  return result;
}

}  // namespace agf::training
