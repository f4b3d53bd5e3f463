#pragma once

// Sequence classification around the attention blocks: configuration, data,
// joint objective, Adam, finite-difference gradient checks and the training
// loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "agf/attention.hpp"
#include "agf/poly_basis.hpp"
#include "agf/rng.hpp"
#include "agf/tensor.hpp"

namespace agf::training {

struct TrainConfig {
  attn::AttentionKind variant = attn::AttentionKind::AGF;
  std::size_t d = 64;
  std::size_t heads = 8;
  std::size_t layers = 2;
  int K = 3;
  poly::BasisKind basis = poly::BasisKind::Jacobi;
  double a = 0.0;
  double b = 0.0;
  double gamma = 0.01;
  double lr = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Keeps theta at [1, 0, ..., 0]: the unfiltered U V^T ablation.
  bool freeze_theta = false;

  poly::BasisSpec basis_spec() const { return {basis, a, b, K}; }
  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

std::string to_string(attn::AttentionKind kind);
attn::AttentionKind attention_kind_from_string(const std::string& name);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Test };

struct Dataset {
  std::vector<Tensor> sequences;  // each seq_len x features
  std::vector<int> labels;
  std::vector<Split> splits;
  std::size_t num_classes = 0;

  std::size_t size() const { return sequences.size(); }
  std::size_t seq_len() const { return sequences.empty() ? 0 : sequences.front().rows(); }
  std::size_t features() const { return sequences.empty() ? 0 : sequences.front().cols(); }
  std::vector<std::size_t> indices(Split split) const;
  // Throws DatasetError when lengths, shapes or labels are inconsistent.
  void validate() const;
};

struct FrequencyTaskOptions {
  std::size_t classes = 2;
  double amplitude = 1.0;
  double noise = 1.0;  // stddev of additive Gaussian noise
};

// Class c is a sinusoid with a whole number of cycles per window drawn from a
// two-cycle band; class 0 sits at 1-2 cycles and the last class just below
// Nyquist. Random phase, matched amplitude, additive noise. Deterministic in
// the seed; labels are balanced to within one sample.
Dataset gen_frequency_task(std::uint64_t seed, std::size_t n_samples, std::size_t seq_len,
                           const FrequencyTaskOptions& options = {});

// Train and test sets drawn from independent streams derived from `seed`.
Dataset frequency_task_split(std::uint64_t seed, std::size_t n_train, std::size_t n_test, std::size_t seq_len,
                             const FrequencyTaskOptions& options = {});

// CSV: header `label,t0_f0,t0_f1,...`, one time-major flattened sequence per row.
Dataset load_csv_dataset(const std::filesystem::path& path);
void write_csv_dataset(const std::filesystem::path& path, const Dataset& data);

// Fixed sinusoidal position code, n x d.
Tensor positional_encoding(std::size_t n, std::size_t d);

// Input projection + position code, pre-norm blocks, final layer norm, mean
// pooling over tokens, linear classification head.
class SequenceClassifier {
 public:
  static SequenceClassifier init(const TrainConfig& config, std::size_t features, std::size_t classes);

  struct Output {
    Tensor logits;                // 1 x classes
    Tensor ortho;                 // scalar, summed over layers
    std::vector<Tensor> hidden;   // embedding, then each block output
  };
  Output forward(const Tensor& sequence) const;

  // Trainable parameters with stable names.
  std::vector<NamedParam> parameters() const;
  std::size_t classes() const { return W_out_.cols(); }
  const std::vector<attn::BlockParams>& blocks() const { return blocks_; }

 private:
  Tensor W_in_, b_in_;
  std::vector<attn::BlockParams> blocks_;
  Tensor lnf_gamma_, lnf_beta_;
  Tensor W_out_, b_out_;
};

// L = cross_entropy(logits, labels) + gamma * ortho.
Tensor total_loss(const Tensor& logits, std::span<const int> labels, const Tensor& ortho, double gamma);

// Mean total loss over a batch of samples; also exposes its parts.
struct BatchLoss {
  Tensor loss;
  Tensor logits;  // batch x classes
  double task = 0.0;
  double ortho = 0.0;
};
BatchLoss batch_loss(const SequenceClassifier& model, const Dataset& data, std::span<const std::size_t> batch,
                     double gamma);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

// One bias-corrected Adam update on every parameter from its .grad (absent
// grads count as zero). Throws NumericError, leaving everything untouched,
// if any gradient is non-finite.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamOptions& options = {});

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double h = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Central differences (L(p+h) - L(p-h)) / 2h against autodiff for every
// element of every parameter; relative error uses max(|a|, |b|, 1e-8).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedParam>& params,
                           double h, double tolerance);

GradCheckReport grad_check(const SequenceClassifier& model, const Dataset& data, std::span<const std::size_t> batch,
                           double gamma, double h, double tolerance);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double task_loss = 0.0;
  double ortho_loss = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  SequenceClassifier model;
  std::vector<EpochMetrics> history;
  // Hidden states of the first few test sequences after training:
  // snapshots[probe][layer], layer 0 being the embedding.
  std::vector<std::vector<Tensor>> snapshots;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Mini-batch Adam on total_loss. Deterministic in config.seed.
TrainResult train(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch = {});

// Accuracy of argmax(logits) over a split.
double accuracy(const SequenceClassifier& model, const Dataset& data, Split split);

// Per-layer mean pairwise cosine similarity averaged over snapshot probes.
std::vector<double> mean_cosine_by_layer(const std::vector<std::vector<Tensor>>& snapshots);

}  // namespace agf::training
