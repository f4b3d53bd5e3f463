#include "agf/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>
#include <set>

#include "agf/attention.hpp"
#include "agf/errors.hpp"
#include "agf/report_schema.hpp"
#include "agf/spectral.hpp"

namespace agf::harness {

using attn::AttentionKind;
using training::TrainConfig;

std::string to_string(VerdictStatus status) {
  switch (status) {
    case VerdictStatus::Pass: return "pass";
    case VerdictStatus::Fail: return "fail";
    case VerdictStatus::Skipped: return "skipped";
  }
  return "skipped";
}

Json to_json(const Verdict& v) {
  return Json{{"name", v.name}, {"status", to_string(v.status)}, {"measured", v.measured}, {"note", v.note}};
}

namespace {

Verdict make_verdict(std::string name, bool ok, Json measured, std::string note = {}) {
  return {std::move(name), ok ? VerdictStatus::Pass : VerdictStatus::Fail, std::move(measured), std::move(note)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Slope fitting

LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("least_squares: need >= 2 paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw DomainError("least_squares: x values are all equal");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

double median(std::vector<double> values) {
  if (values.empty()) throw DomainError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

SlopeFit fit_loglog(std::span<const double> n, const std::vector<std::vector<double>>& samples, std::uint64_t seed,
                    std::size_t resamples) {
  if (n.size() != samples.size() || n.size() < 2) throw DomainError("fit_loglog: need >= 2 points");
  std::vector<double> lx(n.size()), ly(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!(n[i] > 0.0) || samples[i].empty()) throw DomainError("fit_loglog: n must be positive with samples");
    for (double t : samples[i])
      if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("fit_loglog: times must be positive and finite");
    lx[i] = std::log(n[i]);
    ly[i] = std::log(median(samples[i]));
  }
  const LineFit base = least_squares(lx, ly);
  SlopeFit fit{base.slope, base.intercept, base.slope, base.slope, n.size()};
  if (resamples == 0) return fit;

  SplitMix64 rng(seed);
  std::vector<double> slopes;
  slopes.reserve(resamples);
  std::vector<double> draw;
  for (std::size_t r = 0; r < resamples; ++r) {
    for (std::size_t i = 0; i < n.size(); ++i) {
      const auto& s = samples[i];
      draw.resize(s.size());
      for (double& v : draw) v = s[rng.below(s.size())];
      ly[i] = std::log(median(draw));
    }
    slopes.push_back(least_squares(lx, ly).slope);
  }
  std::sort(slopes.begin(), slopes.end());
  auto pct = [&](double q) {
    const double pos = q * static_cast<double>(slopes.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, slopes.size() - 1);
    return slopes[lo] + (pos - static_cast<double>(lo)) * (slopes[hi] - slopes[lo]);
  };
  fit.ci_low = pct(0.025);
  fit.ci_high = pct(0.975);
  return fit;
}

// ---------------------------------------------------------------------------
// Benchmark

void BenchOptions::validate() const {
  if (n_list.size() < 4) throw ConfigError("bench: n_list needs at least 4 sizes");
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    if (n_list[i] == 0) throw ConfigError("bench: sizes must be positive");
    if (i > 0 && n_list[i] <= n_list[i - 1]) throw ConfigError("bench: n_list must be strictly ascending");
  }
  if (d == 0 || heads == 0 || d % heads != 0) throw ConfigError("bench: heads must divide d");
  if (K < 0) throw ConfigError("bench: K must be >= 0");
  if (repeats == 0) throw ConfigError("bench: repeats must be positive");
  if (variants.empty()) throw ConfigError("bench: no variants selected");
}

double timer_resolution() {
  using clock = std::chrono::steady_clock;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 200; ++i) {
    const auto a = clock::now();
    auto b = clock::now();
    while (b == a) b = clock::now();
    best = std::min(best, std::chrono::duration<double>(b - a).count());
  }
  return best;
}

BenchResult run_benchmark(const BenchOptions& options) {
  options.validate();
  using clock = std::chrono::steady_clock;
  BenchResult result;
  result.timer_resolution_s = timer_resolution();
  const double min_time = 100.0 * result.timer_resolution_s;

  SplitMix64 rng(options.seed);
  const auto agf = attn::AGFParams::init(options.d, options.heads, poly::BasisSpec::jacobi(options.K, 0, 0), rng);
  const auto vanilla = attn::VanillaParams::init(options.d, options.heads, rng);

  NoGradGuard guard;
  for (AttentionKind kind : options.variants) {
    for (std::size_t n : options.n_list) {
      const Tensor X = Tensor::randn({n, options.d}, rng);
      auto run = [&] {
        return kind == AttentionKind::AGF ? attn::agf_forward(X, agf) : attn::vanilla_sa(X, vanilla);
      };
      for (std::size_t w = 0; w < options.warmups; ++w) run();
      BenchRow row;
      row.variant = kind;
      row.n = n;
      for (std::size_t r = 0; r < options.repeats; ++r) {
        const auto t0 = clock::now();
        const Tensor out = run();
        const auto t1 = clock::now();
        row.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
      }
      row.median_s = median(row.seconds);
      row.mean_s = std::accumulate(row.seconds.begin(), row.seconds.end(), 0.0) / row.seconds.size();
      double var = 0.0;
      for (double s : row.seconds) var += (s - row.mean_s) * (s - row.mean_s);
      row.std_s = row.seconds.size() > 1 ? std::sqrt(var / (row.seconds.size() - 1)) : 0.0;
      if (row.median_s < min_time) {
        row.dropped = true;
        result.notes.push_back(training::to_string(kind) + " n=" + std::to_string(n) + " dropped: median " +
                               std::to_string(row.median_s) + " s is below 100x the timer resolution");
      }
      result.rows.push_back(std::move(row));
    }
  }

  for (AttentionKind kind : options.variants) {
    std::vector<double> ns;
    std::vector<std::vector<double>> samples;
    for (const auto& row : result.rows) {
      if (row.variant != kind || row.dropped) continue;
      ns.push_back(static_cast<double>(row.n));
      samples.push_back(row.seconds);
    }
    if (ns.size() < 2) {
      result.notes.push_back(training::to_string(kind) + ": fewer than 2 usable sizes, no slope fitted");
      continue;
    }
    result.fits.emplace_back(kind, fit_loglog(ns, samples, options.seed));
  }

  const std::size_t n_max = options.n_list.back();
  const Tensor X = Tensor::randn({n_max, options.d}, rng);
  AllocationStats::reset();
  attn::agf_forward(X, agf);
  result.agf_peak_numel = AllocationStats::peak_numel();
  result.largest_n_squared = n_max * n_max;
  return result;
}

// ---------------------------------------------------------------------------
// Studies

FrequencyStudyOptions default_frequency_study() {
  FrequencyStudyOptions o;
  o.base.variant = AttentionKind::AGF;
  o.base.d = 16;
  o.base.heads = 2;
  o.base.layers = 1;
  o.base.K = 4;
  o.base.basis = poly::BasisKind::Jacobi;
  o.base.gamma = 0.01;
  o.base.lr = 5e-3;
  o.base.epochs = 40;
  o.base.batch_size = 32;
  o.task.noise = 1.1;
  return o;
}

FrequencyStudyOptions default_oversmoothing_study() {
  FrequencyStudyOptions o = default_frequency_study();
  o.base.layers = 4;
  o.n_train = 500;
  o.n_test = 200;
  o.task.noise = 0.5;
  return o;
}

ArmResult train_arm(const TrainConfig& config, const training::Dataset& data) {
  const auto r = training::train(config, data);
  ArmResult arm;
  arm.seed = config.seed;
  arm.history = r.history;
  for (const auto& m : r.history) arm.best_test_accuracy = std::max(arm.best_test_accuracy, m.test_accuracy);
  arm.cosine_by_layer = training::mean_cosine_by_layer(r.snapshots);
  return arm;
}

AblationStudy run_ablation_study(const FrequencyStudyOptions& options) {
  AblationStudy study;
  for (std::uint64_t seed : options.seeds) {
    const auto data =
        training::frequency_task_split(seed, options.n_train, options.n_test, options.seq_len, options.task);
    TrainConfig cfg = options.base;
    cfg.variant = AttentionKind::AGF;
    cfg.seed = seed;
    cfg.freeze_theta = false;
    study.agf.push_back(train_arm(cfg, data));
    cfg.freeze_theta = true;
    study.ablation.push_back(train_arm(cfg, data));
  }
  return study;
}

OversmoothingStudy run_oversmoothing_study(const FrequencyStudyOptions& options) {
  OversmoothingStudy study;
  for (std::uint64_t seed : options.seeds) {
    const auto data =
        training::frequency_task_split(seed, options.n_train, options.n_test, options.seq_len, options.task);
    TrainConfig cfg = options.base;
    cfg.seed = seed;
    cfg.freeze_theta = false;
    cfg.variant = AttentionKind::AGF;
    study.agf.push_back(train_arm(cfg, data));
    cfg.variant = AttentionKind::Vanilla;
    study.vanilla.push_back(train_arm(cfg, data));
  }
  for (std::size_t i = 0; i < options.seeds.size(); ++i) {
    study.agf_final_mean += study.agf[i].cosine_by_layer.back() / static_cast<double>(options.seeds.size());
    study.vanilla_final_mean += study.vanilla[i].cosine_by_layer.back() / static_cast<double>(options.seeds.size());
  }
  return study;
}

// ---------------------------------------------------------------------------
// Schema validation

const Json& report_schema() {
  static const Json schema = Json::parse(detail::kReportSchemaText);
  return schema;
}

namespace {

std::string json_type(const Json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

bool type_matches(const Json& v, const std::string& type) {
  const std::string actual = json_type(v);
  if (type == actual) return true;
  if (type == "number" && actual == "integer") return true;
  // 3.0 is an integer under JSON Schema.
  if (type == "integer" && v.is_number_float()) return std::isfinite(v.get<double>()) && std::floor(v.get<double>()) == v.get<double>();
  return false;
}

void validate_node(const Json& v, const Json& schema, const Json& root, const std::string& path,
                   std::vector<std::string>& errors) {
  if (schema.contains("$ref")) {
    const std::string ref = schema["$ref"].get<std::string>();
    const std::string prefix = "#/$defs/";
    if (ref.rfind(prefix, 0) != 0 || !root["$defs"].contains(ref.substr(prefix.size()))) {
      errors.push_back(path + ": unresolvable $ref " + ref);
      return;
    }
    validate_node(v, root["$defs"][ref.substr(prefix.size())], root, path, errors);
    return;
  }
  if (v.is_number_float() && !std::isfinite(v.get<double>())) {
    errors.push_back(path + ": number is not finite");
    return;
  }
  if (schema.contains("type")) {
    const auto& t = schema["type"];
    bool ok = false;
    if (t.is_string()) ok = type_matches(v, t.get<std::string>());
    else for (const auto& alt : t) ok |= type_matches(v, alt.get<std::string>());
    if (!ok) {
      errors.push_back(path + ": expected " + t.dump() + ", got " + json_type(v));
      return;
    }
  }
  if (schema.contains("enum")) {
    if (std::none_of(schema["enum"].begin(), schema["enum"].end(), [&](const Json& e) { return e == v; })) {
      errors.push_back(path + ": value " + v.dump() + " not in " + schema["enum"].dump());
    }
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>())
      errors.push_back(path + ": " + v.dump() + " below minimum " + schema["minimum"].dump());
    if (schema.contains("maximum") && x > schema["maximum"].get<double>())
      errors.push_back(path + ": " + v.dump() + " above maximum " + schema["maximum"].dump());
    if (schema.contains("exclusiveMinimum") && !(x > schema["exclusiveMinimum"].get<double>()))
      errors.push_back(path + ": " + v.dump() + " not above " + schema["exclusiveMinimum"].dump());
  }
  if (v.is_string() && schema.contains("minLength") &&
      v.get<std::string>().size() < schema["minLength"].get<std::size_t>()) {
    errors.push_back(path + ": string shorter than " + schema["minLength"].dump());
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>())
      errors.push_back(path + ": fewer than " + schema["minItems"].dump() + " items");
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i)
        validate_node(v[i], schema["items"], root, path + "[" + std::to_string(i) + "]", errors);
    }
  }
  if (v.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema["required"])
        if (!v.contains(key.get<std::string>())) errors.push_back(path + ": missing required '" + key.get<std::string>() + "'");
    }
    const Json props = schema.value("properties", Json::object());
    for (const auto& [key, value] : v.items()) {
      const std::string child = path + "." + key;
      if (props.contains(key)) {
        validate_node(value, props[key], root, child, errors);
      } else if (schema.contains("additionalProperties")) {
        const auto& extra = schema["additionalProperties"];
        if (extra.is_boolean()) {
          if (!extra.get<bool>()) errors.push_back(path + ": unexpected property '" + key + "'");
        } else {
          validate_node(value, extra, root, child, errors);
        }
      } else {
        validate_node(value, Json::object(), root, child, errors);
      }
    }
  }
}

}  // namespace

std::vector<std::string> validate_report(const Json& report, const Json& schema) {
  std::vector<std::string> errors;
  validate_node(report, schema, schema, "$", errors);
  return errors;
}

std::vector<std::string> validate_report(const Json& report) { return validate_report(report, report_schema()); }

// ---------------------------------------------------------------------------
// Strict config access

namespace {

class Keys {
 public:
  Keys(const Json& obj, std::string context) : obj_(obj), context_(std::move(context)) {
    if (!obj_.is_object()) throw ConfigError(context_ + ": config must be a JSON object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return obj_.contains(key);
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    if (!has(key)) return fallback;
    return as_count(obj_[key], key);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_[key];
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw wrong(key, "a non-negative integer");
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_[key];
    if (!v.is_number_integer()) throw wrong(key, "an integer");
    return v.get<int>();
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_[key];
    if (!v.is_number()) throw wrong(key, "a number");
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_[key];
    if (!v.is_boolean()) throw wrong(key, "true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_[key];
    if (!v.is_string()) throw wrong(key, "a string");
    return v.get<std::string>();
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_[key];
    if (!v.is_array()) throw wrong(key, "an array of non-negative integers");
    std::vector<std::size_t> out;
    for (const auto& e : v) out.push_back(as_count(e, key));
    return out;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_[key];
    if (!v.is_array()) throw wrong(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw wrong(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key, std::vector<std::string> fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_[key];
    if (!v.is_array()) throw wrong(key, "an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw wrong(key, "an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  // Rejects every key that was never asked for.
  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.count(key)) throw ConfigError(context_ + ": unknown config key '" + key + "'");
    }
  }

 private:
  std::size_t as_count(const Json& v, const std::string& key) const {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::size_t>(v.get<std::int64_t>());
    throw wrong(key, "a non-negative integer");
  }

  ConfigError wrong(const std::string& key, const std::string& expected) const {
    return ConfigError(context_ + ": '" + key + "' must be " + expected + ", got " + obj_[key].dump());
  }

  const Json& obj_;
  std::string context_;
  std::set<std::string> used_;
};

void read_model_keys(Keys& k, TrainConfig& c) {
  c.variant = training::attention_kind_from_string(k.string("variant", training::to_string(c.variant)));
  c.d = k.count("d", c.d);
  c.heads = k.count("heads", c.heads);
  c.layers = k.count("layers", c.layers);
  c.K = k.integer("K", c.K);
  c.basis = poly::basis_kind_from_string(k.string("basis", poly::to_string(c.basis)));
  c.a = k.number("a", c.a);
  c.b = k.number("b", c.b);
  c.gamma = k.number("gamma", c.gamma);
  c.seed = k.u64("seed", c.seed);
}

void read_optimizer_keys(Keys& k, TrainConfig& c) {
  c.lr = k.number("lr", c.lr);
  c.epochs = k.count("epochs", c.epochs);
  c.batch_size = k.count("batch_size", c.batch_size);
  c.freeze_theta = k.boolean("freeze_theta", c.freeze_theta);
}

void read_task_keys(Keys& k, FrequencyStudyOptions& o) {
  o.n_train = k.count("n_train", o.n_train);
  o.n_test = k.count("n_test", o.n_test);
  o.seq_len = k.count("seq_len", o.seq_len);
  o.task.noise = k.number("noise", o.task.noise);
  o.task.classes = k.count("classes", o.task.classes);
}

struct TrainSpec {
  TrainConfig config;
  std::string dataset = "synthetic";
  FrequencyStudyOptions synthetic;  // task keys only
  double test_fraction = 0.2;
  std::vector<std::size_t> sweep_K;
  std::optional<double> target_accuracy;
};

TrainSpec parse_train_spec(const Json& json) {
  Keys k(json, "train config");
  TrainSpec spec;
  read_model_keys(k, spec.config);
  read_optimizer_keys(k, spec.config);
  spec.dataset = k.string("dataset", spec.dataset);
  read_task_keys(k, spec.synthetic);
  spec.test_fraction = k.number("test_fraction", spec.test_fraction);
  spec.sweep_K = k.counts("sweep_K", {});
  if (k.has("target_accuracy")) spec.target_accuracy = k.number("target_accuracy", 0.0);
  k.finish();
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0)) throw ConfigError("test_fraction must be in [0, 1)");
  spec.config.validate();
  for (std::size_t K : spec.sweep_K) {
    TrainConfig c = spec.config;
    c.K = static_cast<int>(K);
    c.validate();
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Output helpers

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json base_report(const std::string& command, std::uint64_t seed, const Json& config) {
  Json r;
  r["schema_version"] = 1;
  r["artifact"] = {{"name", kArtifactName}, {"version", kArtifactVersion}};
  r["command"] = command;
  r["timestamp"] = utc_timestamp();
  r["seed"] = seed;
  r["config"] = config;
  r["status"] = "skipped";
  r["verdicts"] = Json::array();
  r["epochs"] = Json::array();
  r["curves"] = Json::array();
  return r;
}

// Sets "status" from the verdicts and returns the matching exit code.
int finalize(Json& report, const std::vector<Verdict>& verdicts) {
  bool any_fail = false, any_pass = false;
  for (const auto& v : verdicts) {
    report["verdicts"].push_back(to_json(v));
    any_fail |= v.status == VerdictStatus::Fail;
    any_pass |= v.status == VerdictStatus::Pass;
  }
  report["status"] = any_fail ? "fail" : (any_pass ? "pass" : "skipped");
  return any_fail ? kExitFail : kExitPass;
}

class OutputDir {
 public:
  OutputDir(std::filesystem::path dir, CommandOutput& out) : dir_(std::move(dir)), out_(out) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  // Writes rows as CSV with full-precision numbers.
  std::string csv(const std::string& name, const std::vector<std::string>& header,
                  const std::vector<std::vector<std::string>>& rows) {
    const auto path = dir_ / name;
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    for (std::size_t i = 0; i < header.size(); ++i) std::fprintf(f, "%s%s", i ? "," : "", header[i].c_str());
    std::fputc('\n', f);
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) std::fprintf(f, "%s%s", i ? "," : "", row[i].c_str());
      std::fputc('\n', f);
    }
    std::fclose(f);
    out_.files.push_back(path);
    return name;
  }

  void report(const std::string& name, const Json& report) {
    const auto errors = validate_report(report);
    if (!errors.empty()) {
      std::string msg = "report '" + name + "' violates the schema:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw ContractError(msg);
    }
    const auto path = dir_ / name;
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    f << report.dump(2) << '\n';
    out_.files.push_back(path);
    out_.reports.push_back(report);
  }

 private:
  std::filesystem::path dir_;
  CommandOutput& out_;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json epoch_json(const training::EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"train_accuracy", m.train_accuracy},
          {"test_accuracy", m.test_accuracy},
          {"task_loss", m.task_loss},
          {"ortho_loss", m.ortho_loss}};
}

std::vector<std::vector<std::string>> metric_rows(const std::vector<training::EpochMetrics>& history) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& m : history) {
    rows.push_back({std::to_string(m.epoch), num(m.train_accuracy), num(m.test_accuracy), num(m.task_loss),
                    num(m.ortho_loss)});
  }
  return rows;
}

const std::vector<std::string> kMetricHeader{"epoch", "train_accuracy", "test_accuracy", "task_loss", "ortho_loss"};

}  // namespace

TrainConfig parse_train_config(const Json& config) { return parse_train_spec(config).config; }

Json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config '" + path.string() + "' must be a JSON object");
  return j;
}

// ---------------------------------------------------------------------------
// train

CommandOutput cmd_train(const Json& config, const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed) {
  TrainSpec spec = parse_train_spec(config);
  if (seed) spec.config.seed = *seed;

  training::Dataset data;
  if (spec.dataset == "synthetic") {
    const auto& s = spec.synthetic;
    try {
      data = training::frequency_task_split(spec.config.seed, s.n_train, s.n_test, s.seq_len, s.task);
    } catch (const DomainError& e) {
      throw ConfigError(std::string("synthetic dataset: ") + e.what());
    }
  } else {
    try {
      data = training::load_csv_dataset(spec.dataset);
    } catch (const training::DatasetError& e) {
      throw ConfigError(e.what());
    }
    const auto test_count = static_cast<std::size_t>(std::floor(spec.test_fraction * data.size()));
    for (std::size_t i = data.size() - test_count; i < data.size(); ++i) data.splits[i] = training::Split::Test;
  }

  CommandOutput out;
  OutputDir dir(out_dir, out);
  std::vector<std::size_t> ks = spec.sweep_K;
  const bool sweep = !ks.empty();
  if (!sweep) ks.push_back(static_cast<std::size_t>(spec.config.K));

  for (std::size_t K : ks) {
    TrainConfig cfg = spec.config;
    cfg.K = static_cast<int>(K);
    const std::string suffix = sweep ? "_K" + std::to_string(K) : "";
    Json echo = config;
    echo["seed"] = cfg.seed;
    if (sweep) echo["K"] = K;
    Json report = base_report("train", cfg.seed, echo);

    std::vector<training::EpochMetrics> history;
    std::vector<Verdict> verdicts;
    try {
      training::train(cfg, data, [&](const training::EpochMetrics& m) { history.push_back(m); });
      verdicts.push_back(make_verdict("training_completed", true, {{"epochs", history.size()}}));
    } catch (const training::TrainingDiverged& e) {
      verdicts.push_back(make_verdict("training_completed", false, {{"epochs", history.size()}}, e.what()));
    }
    double best = 0.0;
    for (const auto& m : history) {
      report["epochs"].push_back(epoch_json(m));
      best = std::max(best, m.test_accuracy);
    }
    if (!history.empty()) {
      report["final"] = {{"train_accuracy", history.back().train_accuracy},
                         {"test_accuracy", history.back().test_accuracy},
                         {"best_test_accuracy", best}};
    }
    if (spec.target_accuracy) {
      verdicts.push_back(make_verdict("target_accuracy", best >= *spec.target_accuracy,
                                      {{"best_test_accuracy", best}, {"threshold", *spec.target_accuracy}}));
    }
    report["curves"].push_back(dir.csv("metrics" + suffix + ".csv", kMetricHeader, metric_rows(history)));
    out.exit_code = std::max(out.exit_code, finalize(report, verdicts));
    dir.report("report" + suffix + ".json", report);
  }
  return out;
}

// ---------------------------------------------------------------------------
// bench

CommandOutput cmd_bench(const Json& config, const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed) {
  Keys k(config, "bench config");
  BenchOptions o;
  o.n_list = k.counts("n_list", o.n_list);
  o.d = k.count("d", o.d);
  o.heads = k.count("heads", o.heads);
  o.K = k.integer("K", o.K);
  o.repeats = k.count("repeats", o.repeats);
  o.warmups = k.count("warmups", o.warmups);
  o.seed = k.u64("seed", o.seed);
  std::vector<std::string> names;
  for (auto v : o.variants) names.push_back(training::to_string(v));
  o.variants.clear();
  for (const auto& name : k.strings("variants", names)) o.variants.push_back(training::attention_kind_from_string(name));
  const auto agf_range = k.numbers("agf_slope_range", {0.8, 1.3});
  const auto vanilla_range = k.numbers("vanilla_slope_range", {1.7, 2.2});
  k.finish();
  if (agf_range.size() != 2 || vanilla_range.size() != 2) throw ConfigError("bench: slope ranges need [low, high]");
  if (seed) o.seed = *seed;

  const BenchResult r = run_benchmark(o);
  CommandOutput out;
  OutputDir dir(out_dir, out);
  Json echo = config;
  echo["seed"] = o.seed;
  Json report = base_report("bench", o.seed, echo);

  Json rows = Json::array();
  std::vector<std::vector<std::string>> csv_rows, sample_rows;
  for (const auto& row : r.rows) {
    const std::string v = training::to_string(row.variant);
    rows.push_back({{"variant", v}, {"n", row.n}, {"median_s", row.median_s}, {"mean_s", row.mean_s},
                    {"std_s", row.std_s}, {"repeats", row.seconds.size()}, {"dropped", row.dropped}});
    csv_rows.push_back({v, std::to_string(row.n), num(row.median_s), num(row.mean_s), num(row.std_s),
                        std::to_string(row.seconds.size()), row.dropped ? "1" : "0"});
    for (std::size_t i = 0; i < row.seconds.size(); ++i)
      sample_rows.push_back({v, std::to_string(row.n), std::to_string(i), num(row.seconds[i])});
  }
  Json fits = Json::array();
  std::vector<Verdict> verdicts;
  for (AttentionKind kind : o.variants) {
    const auto& range = kind == AttentionKind::AGF ? agf_range : vanilla_range;
    const std::string v = training::to_string(kind);
    const auto it = std::find_if(r.fits.begin(), r.fits.end(), [&](const auto& f) { return f.first == kind; });
    if (it == r.fits.end()) {
      verdicts.push_back({v + "_slope", VerdictStatus::Skipped, {{"range", range}}, "not enough usable sizes"});
      continue;
    }
    const SlopeFit& f = it->second;
    fits.push_back({{"variant", v}, {"slope", f.slope}, {"intercept", f.intercept}, {"ci_low", f.ci_low},
                    {"ci_high", f.ci_high}, {"points", f.points}});
    verdicts.push_back(make_verdict(v + "_slope", f.slope >= range[0] && f.slope <= range[1],
                                    {{"slope", f.slope}, {"ci95", {f.ci_low, f.ci_high}}, {"range", range}}));
  }
  if (std::find(o.variants.begin(), o.variants.end(), AttentionKind::AGF) != o.variants.end()) {
    verdicts.push_back(make_verdict("agf_no_quadratic_buffer", r.agf_peak_numel < r.largest_n_squared,
                                    {{"peak_numel", r.agf_peak_numel}, {"n_squared", r.largest_n_squared}}));
  }
  report["benchmark"] = {{"timer_resolution_s", r.timer_resolution_s}, {"rows", rows}, {"fits", fits},
                         {"notes", r.notes}};
  report["curves"].push_back(
      dir.csv("bench.csv", {"variant", "n", "median_s", "mean_s", "std_s", "repeats", "dropped"}, csv_rows));
  report["curves"].push_back(dir.csv("bench_samples.csv", {"variant", "n", "repeat", "seconds"}, sample_rows));
  out.exit_code = finalize(report, verdicts);
  dir.report("report.json", report);
  return out;
}

// ---------------------------------------------------------------------------
// spectral

namespace {

void spectral_theorem1(Keys& k, std::uint64_t seed, OutputDir& dir, Json& report, std::vector<Verdict>& verdicts) {
  const std::size_t trials = k.count("trials", 10);
  const std::size_t n = k.count("n", 32);
  const std::size_t steps = k.count("steps", 64);
  const std::size_t c = k.count("c", 1);
  const double threshold = k.number("threshold", 1e-3);
  k.finish();
  if (trials == 0 || steps == 0) throw ConfigError("theorem1: trials and steps must be positive");
  if (c < 1 || c > n) throw ConfigError("theorem1: c must lie in [1, n]");

  std::vector<std::vector<std::string>> rows;
  std::size_t passed = 0;
  Json finals = Json::array();
  for (std::size_t i = 0; i < trials; ++i) {
    const auto t = spectral::softmax_lowpass_trial(seed + i, n, steps, c, threshold);
    passed += t.passed ? 1 : 0;
    finals.push_back({{"seed", t.seed}, {"first", t.ratios.front()}, {"last", t.ratios.back()}});
    for (std::size_t s = 0; s < t.ratios.size(); ++s)
      rows.push_back({std::to_string(t.seed), std::to_string(s + 1), num(t.ratios[s])});
  }
  report["results"] = {{"trials", finals}};
  report["curves"].push_back(dir.csv("theorem1.csv", {"seed", "t", "ratio"}, rows));
  verdicts.push_back(make_verdict("softmax_lowpass", passed == trials,
                                  {{"passed", passed}, {"trials", trials}, {"threshold", threshold}, {"t", steps}}));
}

void spectral_theorem2(Keys& k, std::uint64_t seed, OutputDir& dir, Json& report, std::vector<Verdict>& verdicts) {
  const std::size_t filters = k.count("filters", 1000);
  const int max_order = k.integer("max_order", 8);
  const std::size_t spectrum = k.count("spectrum_size", 64);
  const auto alphas = k.numbers("alphas", {0.5, 0.9});
  const int K = k.integer("K", 200);
  const double tol = k.number("tolerance", 1e-6);
  k.finish();
  if (max_order < 1 || K < 0) throw ConfigError("theorem2: max_order >= 1 and K >= 0 required");

  const auto sweep = spectral::simplex_filter_sweep(seed, filters, max_order, spectrum);
  verdicts.push_back(make_verdict("simplex_filters_lowpass", sweep.violations == 0,
                                  {{"filters", sweep.filters}, {"violations", sweep.violations},
                                   {"max_ratio", sweep.max_ratio}}));

  SplitMix64 rng(seed ^ 0xA5A5A5A5ULL);
  std::vector<double> lambdas{1.0, 0.999, -0.999, 0.0};
  for (std::size_t i = 0; i < spectrum; ++i) lambdas.push_back(rng.uniform(-0.9999, 0.9999));
  std::vector<std::vector<std::string>> rows;
  Json checks = Json::array();
  for (double alpha : alphas) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("theorem2: alphas must lie in (0, 1)");
    const auto c = spectral::alternating_filter_check(alpha, K, lambdas);
    checks.push_back({{"alpha", alpha}, {"min_ratio", c.min_ratio}, {"max_closed_form_error", c.max_closed_form_error}});
    verdicts.push_back(make_verdict("alternating_highpass_alpha_" + num(alpha),
                                    c.min_ratio > 1.0 && c.max_closed_form_error < tol,
                                    {{"alpha", alpha}, {"K", K}, {"min_ratio", c.min_ratio},
                                     {"max_closed_form_error", c.max_closed_form_error}, {"tolerance", tol}}));
    std::vector<double> theta(static_cast<std::size_t>(K) + 1);
    double p = 1.0;
    for (double& t : theta) {
      t = p;
      p *= -alpha;
    }
    const auto resp = spectral::filter_response(theta, poly::BasisSpec::monomial(K), lambdas);
    for (std::size_t i = 0; i < resp.lambdas.size(); ++i) {
      rows.push_back({num(alpha), num(resp.lambdas[i]), num(resp.responses[i]),
                      num(1.0 / (1.0 + alpha * resp.lambdas[i])), num(resp.ratios[i])});
    }
  }
  report["results"] = {{"lowpass", {{"filters", sweep.filters}, {"violations", sweep.violations},
                                    {"max_ratio", sweep.max_ratio}}},
                       {"highpass", checks}};
  report["curves"].push_back(dir.csv("theorem2.csv", {"alpha", "lambda", "response", "closed_form", "ratio"}, rows));
}

void spectral_response(Keys& k, std::uint64_t seed, OutputDir& dir, Json& report, std::vector<Verdict>& verdicts) {
  TrainConfig model;
  model.K = 4;
  model.d = 16;
  model.heads = 1;
  const auto basis_name = k.string("basis", poly::to_string(model.basis));
  model.basis = poly::basis_kind_from_string(basis_name);
  model.a = k.number("a", model.a);
  model.b = k.number("b", model.b);
  auto theta = k.numbers("theta", {});
  const std::size_t points = k.count("points", 101);
  const std::size_t n = k.count("n", 64);
  model.d = k.count("d", model.d);
  const std::size_t probes = k.count("probes", 4);
  k.finish();
  if (theta.empty()) {
    theta.assign(5, 0.0);
    theta[0] = 1.0;
  }
  model.K = static_cast<int>(theta.size()) - 1;
  const auto basis = model.basis_spec();
  try {
    basis.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("response: ") + e.what());
  }
  if (points < 2 || n < 2 || model.d == 0 || probes == 0) throw ConfigError("response: sizes must be positive");

  // Filter curve g(s) over singular values s in [0, 1].
  std::vector<std::vector<std::string>> rows;
  bool finite = true;
  for (std::size_t i = 0; i < points; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(points - 1);
    const double g = poly::evaluate_filter(theta, basis, s);
    finite &= std::isfinite(g);
    rows.push_back({num(s), num(g)});
  }
  report["curves"].push_back(dir.csv("filter_response.csv", {"s", "g"}, rows));

  // Empirical token-frequency response of one random layer of each kind.
  SplitMix64 rng(seed);
  const auto agf = attn::AGFParams::init(model.d, 1, basis, rng);
  const auto vanilla = attn::VanillaParams::init(model.d, 1, rng);
  const Tensor X = Tensor::randn({n, model.d}, rng);
  Tensor H;
  {
    NoGradGuard guard;
    auto coeffs = poly::FilterCoefficients::from(theta, false);
    auto p = agf;
    p.theta = coeffs;
    H = attn::agf_materialize_h(X, p).front();
  }
  const auto agf_curve = spectral::layer_frequency_response(H, probes);
  const auto vanilla_curve = spectral::layer_frequency_response(attn::vanilla_attention_matrix(X, vanilla), probes);
  std::vector<std::vector<std::string>> layer_rows;
  for (std::size_t b = 0; b < agf_curve.size(); ++b) {
    finite &= std::isfinite(agf_curve[b]) && std::isfinite(vanilla_curve[b]);
    layer_rows.push_back({std::to_string(b), num(agf_curve[b]), num(vanilla_curve[b])});
  }
  report["curves"].push_back(dir.csv("layer_response.csv", {"bin", "agf", "vanilla"}, layer_rows));
  report["results"] = {{"vanilla_dc_gain", vanilla_curve.front()}, {"agf_dc_gain", agf_curve.front()}};
  verdicts.push_back(make_verdict("curves_finite", finite, {{"points", points}, {"bins", agf_curve.size()}}));
  verdicts.push_back(make_verdict("softmax_attention_passes_dc", std::abs(vanilla_curve.front() - 1.0) < 1e-9,
                                  {{"dc_gain", vanilla_curve.front()}}));
}

void spectral_oversmoothing(Keys& k, std::uint64_t seed, OutputDir& dir, Json& report,
                            std::vector<Verdict>& verdicts) {
  FrequencyStudyOptions o = default_oversmoothing_study();
  read_model_keys(k, o.base);
  read_optimizer_keys(k, o.base);
  read_task_keys(k, o);
  const auto seeds = k.counts("seeds", {0, 1, 2});
  k.finish();
  o.base.validate();
  o.seeds.clear();
  for (auto s : seeds) o.seeds.push_back(seed + s);
  if (o.seeds.empty()) throw ConfigError("oversmoothing: seeds must not be empty");

  const auto study = run_oversmoothing_study(o);
  std::vector<std::vector<std::string>> rows;
  auto emit = [&](const std::vector<ArmResult>& arms, const std::string& name) {
    for (const auto& arm : arms)
      for (std::size_t l = 0; l < arm.cosine_by_layer.size(); ++l)
        rows.push_back({name, std::to_string(arm.seed), std::to_string(l), num(arm.cosine_by_layer[l])});
  };
  emit(study.agf, "agf");
  emit(study.vanilla, "vanilla");
  report["curves"].push_back(dir.csv("oversmoothing.csv", {"variant", "seed", "layer", "cosine"}, rows));
  report["results"] = {{"agf_final_layer_cosine", study.agf_final_mean},
                       {"vanilla_final_layer_cosine", study.vanilla_final_mean}};
  verdicts.push_back(make_verdict("agf_less_oversmoothed", study.agf_final_mean < study.vanilla_final_mean,
                                  {{"agf", study.agf_final_mean}, {"vanilla", study.vanilla_final_mean},
                                   {"seeds", o.seeds.size()}, {"layers", o.base.layers}}));
}

}  // namespace

CommandOutput cmd_spectral(const Json& config, const std::filesystem::path& out_dir,
                           std::optional<std::uint64_t> seed) {
  Keys k(config, "spectral config");
  const std::string mode = k.string("mode", "theorem1");
  std::uint64_t s = k.u64("seed", 0);
  if (seed) s = *seed;
  CommandOutput out;
  Json echo = config;
  echo["seed"] = s;
  echo["mode"] = mode;
  Json report = base_report("spectral", s, echo);
  std::vector<Verdict> verdicts;
  if (mode != "theorem1" && mode != "theorem2" && mode != "response" && mode != "oversmoothing") {
    throw ConfigError("spectral: unknown mode '" + mode + "' (theorem1|theorem2|response|oversmoothing)");
  }
  OutputDir dir(out_dir, out);
  if (mode == "theorem1") spectral_theorem1(k, s, dir, report, verdicts);
  else if (mode == "theorem2") spectral_theorem2(k, s, dir, report, verdicts);
  else if (mode == "response") spectral_response(k, s, dir, report, verdicts);
  else spectral_oversmoothing(k, s, dir, report, verdicts);
  out.exit_code = finalize(report, verdicts);
  dir.report("report.json", report);
  return out;
}

// ---------------------------------------------------------------------------
// gradcheck

namespace {

// x -> x^2 whose recorded derivative is 3x: exercises the failing path.
Tensor miscalibrated_square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * x.at(i);
  return record_op("miscalibrated_square", x.shape(), std::move(out), {x}, [x](std::span<const double> g) {
    auto gx = grad_sink(x);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * 3.0 * x.at(i);
  });
}

}  // namespace

CommandOutput cmd_gradcheck(const Json& config, const std::filesystem::path& out_dir,
                            std::optional<std::uint64_t> seed) {
  Keys k(config, "gradcheck config");
  TrainConfig base;
  base.d = 8;
  base.heads = 2;
  base.layers = 1;
  base.K = 3;
  base.gamma = 0.1;
  read_model_keys(k, base);
  if (seed) base.seed = *seed;
  std::vector<std::string> names = k.strings("variants", {"agf", "vanilla"});
  if (k.has("variant")) names = {training::to_string(base.variant)};
  const std::size_t n = k.count("n", 16);
  const std::size_t batch = k.count("batch", 2);
  const double h = k.number("h", 1e-5);
  const double tol = k.number("tolerance", 1e-4);
  const bool corrupt = k.boolean("corrupt_gradient", false);
  k.finish();
  base.validate();
  if (n < 8 || batch == 0) throw ConfigError("gradcheck: n must be >= 8 and batch >= 1");
  if (!(h > 0.0) || !(tol > 0.0)) throw ConfigError("gradcheck: h and tolerance must be positive");

  const auto data = training::gen_frequency_task(base.seed, batch, n);
  std::vector<std::size_t> idx(batch);
  std::iota(idx.begin(), idx.end(), 0);

  CommandOutput out;
  OutputDir dir(out_dir, out);
  Json echo = config;
  echo["seed"] = base.seed;
  Json report = base_report("gradcheck", base.seed, echo);
  Json params = Json::array();
  std::vector<Verdict> verdicts;
  std::vector<std::vector<std::string>> rows;
  double worst = 0.0;
  for (const auto& name : names) {
    TrainConfig cfg = base;
    cfg.variant = training::attention_kind_from_string(name);
    const auto model = training::SequenceClassifier::init(cfg, data.features(), data.num_classes);
    const auto named = model.parameters();
    auto loss = [&] {
      Tensor l = training::batch_loss(model, data, idx, cfg.gamma).loss;
      if (corrupt) l = add(l, scale(sum(miscalibrated_square(named.front().tensor)), 1e-2));
      return l;
    };
    const auto r = training::grad_check(loss, named, h, tol);
    for (const auto& e : r.entries) {
      params.push_back({{"name", name + "/" + e.name}, {"count", e.count}, {"max_rel_error", e.max_rel_error},
                        {"passed", e.passed}});
      rows.push_back({name, e.name, std::to_string(e.count), num(e.max_rel_error), e.passed ? "1" : "0"});
    }
    worst = std::max(worst, r.max_rel_error);
    verdicts.push_back(make_verdict(name + "_gradients", r.passed,
                                    {{"max_rel_error", r.max_rel_error}, {"tolerance", tol},
                                     {"parameters", r.entries.size()}}));
  }
  report["gradcheck"] = {{"h", h}, {"tolerance", tol}, {"max_rel_error", worst}, {"parameters", params}};
  report["curves"].push_back(
      dir.csv("gradcheck.csv", {"variant", "parameter", "count", "max_rel_error", "passed"}, rows));
  out.exit_code = finalize(report, verdicts);
  dir.report("report.json", report);
  return out;
}

CommandOutput run_command(const std::string& command, const Json& config, const std::filesystem::path& out_dir,
                          std::optional<std::uint64_t> seed) {
  if (command == "train") return cmd_train(config, out_dir, seed);
  if (command == "bench") return cmd_bench(config, out_dir, seed);
  if (command == "spectral") return cmd_spectral(config, out_dir, seed);
  if (command == "gradcheck") return cmd_gradcheck(config, out_dir, seed);
  throw ConfigError("unknown command '" + command + "' (train|bench|spectral|gradcheck)");
}

}  // namespace agf::harness
