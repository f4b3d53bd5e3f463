#pragma once

// Command layer behind the `agf` CLI: strict config parsing, experiment
// drivers, timing and slope fitting, and JSON run reports checked against the
// published schema.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agf/training.hpp"
#include "json.hpp"

namespace agf::harness {

using Json = nlohmann::ordered_json;

inline constexpr const char* kArtifactName = "agf";
inline constexpr const char* kArtifactVersion = "0.1.0";

enum ExitCode : int { kExitPass = 0, kExitFail = 1, kExitUsage = 2 };

enum class VerdictStatus { Pass, Fail, Skipped };
std::string to_string(VerdictStatus status);

struct Verdict {
  std::string name;
  VerdictStatus status = VerdictStatus::Skipped;
  Json measured = Json::object();  // evidence: measured values and thresholds
  std::string note;
};

Json to_json(const Verdict& v);

// ---------------------------------------------------------------------------
// Slope fitting

// Ordinary least squares slope and intercept of y on x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LineFit least_squares(std::span<const double> x, std::span<const double> y);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_low = 0.0;   // 95% percentile bootstrap interval
  double ci_high = 0.0;
  std::size_t points = 0;
};

// Fits log(median time) against log(n). The interval resamples the repeats
// at every n with replacement (seeded) and refits on the resampled medians.
SlopeFit fit_loglog(std::span<const double> n, const std::vector<std::vector<double>>& samples,
                    std::uint64_t seed = 0, std::size_t resamples = 2000);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Benchmark

struct BenchOptions {
  std::vector<std::size_t> n_list{512, 1024, 2048, 4096, 8192};
  std::size_t d = 64;
  std::size_t heads = 1;
  int K = 3;
  std::size_t repeats = 7;
  std::size_t warmups = 2;
  std::uint64_t seed = 0;
  std::vector<attn::AttentionKind> variants{attn::AttentionKind::AGF, attn::AttentionKind::Vanilla};
  void validate() const;
};

struct BenchRow {
  attn::AttentionKind variant{};
  std::size_t n = 0;
  std::vector<double> seconds;  // one per repeat
  double median_s = 0.0;
  double mean_s = 0.0;
  double std_s = 0.0;
  bool dropped = false;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<std::pair<attn::AttentionKind, SlopeFit>> fits;  // variants with >= 2 usable points
  std::vector<std::string> notes;
  double timer_resolution_s = 0.0;
  // Largest single buffer of an AGF forward at the largest n, and n^2.
  std::size_t agf_peak_numel = 0;
  std::size_t largest_n_squared = 0;
};

// Forward passes only, under NoGradGuard, on N(0,1) inputs, monotonic clock,
// `warmups` untimed passes then `repeats` timed ones per (variant, n).
BenchResult run_benchmark(const BenchOptions& options);

double timer_resolution();

// ---------------------------------------------------------------------------
// Experiments shared by the CLI and the acceptance suite

struct FrequencyStudyOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  training::TrainConfig base;  // variant, freeze_theta and seed are overridden per arm
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::size_t seq_len = 64;
  training::FrequencyTaskOptions task;
};

// 1-layer AGF (d=16, K=4) on the 2000/500 frequency task, noise 1.1, 40 epochs.
FrequencyStudyOptions default_frequency_study();
// The same model with 4 layers on a 500/200 split at noise 0.5, where both
// attention variants learn the task within the epoch budget.
FrequencyStudyOptions default_oversmoothing_study();

struct ArmResult {
  std::uint64_t seed = 0;
  std::vector<training::EpochMetrics> history;
  double best_test_accuracy = 0.0;
  std::vector<double> cosine_by_layer;
};

// Trains the AGF arm and the frozen-theta ablation arm on the same data per seed.
struct AblationStudy {
  std::vector<ArmResult> agf;
  std::vector<ArmResult> ablation;
};
AblationStudy run_ablation_study(const FrequencyStudyOptions& options);

// AGF and vanilla models with the same depth per seed.
struct OversmoothingStudy {
  std::vector<ArmResult> agf;
  std::vector<ArmResult> vanilla;
  double agf_final_mean = 0.0;      // final-layer cosine averaged over seeds
  double vanilla_final_mean = 0.0;
};
OversmoothingStudy run_oversmoothing_study(const FrequencyStudyOptions& options);

ArmResult train_arm(const training::TrainConfig& config, const training::Dataset& data);

// ---------------------------------------------------------------------------
// Reports

struct CommandOutput {
  std::vector<Json> reports;
  std::vector<std::filesystem::path> files;  // everything written
  int exit_code = kExitPass;
};

// Published schema (schema/run_report.schema.json, embedded at build time).
const Json& report_schema();

// Errors of `report` against `schema`; empty when valid. Supports the subset
// of JSON Schema the published schema uses.
std::vector<std::string> validate_report(const Json& report, const Json& schema);
std::vector<std::string> validate_report(const Json& report);

// Strict parsing: unknown keys and wrong types raise ConfigError.
training::TrainConfig parse_train_config(const Json& config);

// Commands. `seed` overrides the config seed. Each report is validated
// against the schema before it is written to `out_dir`.
CommandOutput cmd_train(const Json& config, const std::filesystem::path& out_dir,
                        std::optional<std::uint64_t> seed = std::nullopt);
CommandOutput cmd_bench(const Json& config, const std::filesystem::path& out_dir,
                        std::optional<std::uint64_t> seed = std::nullopt);
CommandOutput cmd_spectral(const Json& config, const std::filesystem::path& out_dir,
                           std::optional<std::uint64_t> seed = std::nullopt);
CommandOutput cmd_gradcheck(const Json& config, const std::filesystem::path& out_dir,
                            std::optional<std::uint64_t> seed = std::nullopt);

// Reads a JSON object from disk; ConfigError when unreadable or not an object.
Json load_config(const std::filesystem::path& path);

// Dispatch by command name; ConfigError for an unknown command.
CommandOutput run_command(const std::string& command, const Json& config, const std::filesystem::path& out_dir,
                          std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace agf::harness
