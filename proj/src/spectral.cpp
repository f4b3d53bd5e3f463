#include "agf/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace agf::spectral {

namespace {

// e^{sign * 2 pi i m / n} for m = 0..n-1, with the index reduced mod n so
// large products jk do not lose accuracy in the angle.
std::vector<Complex> twiddles(std::size_t n, double sign) {
  std::vector<Complex> w(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
    w[m] = {std::cos(angle), std::sin(angle)};
  }
  return w;
}

std::vector<Complex> transform(std::span<const Complex> x, double sign) {
  const std::size_t n = x.size();
  const auto w = twiddles(n, sign);
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<Complex> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    Complex acc{0.0, 0.0};
    for (std::size_t k = 0; k < n; ++k) acc += x[k] * w[(j * k) % n];
    out[j] = acc * norm;
  }
  return out;
}

std::vector<double> apply_matrix(const Tensor& M, std::span<const double> x) {
  const std::size_t n = M.rows();
  auto m = M.data();
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += m[i * n + j] * x[j];
    y[i] = acc;
  }
  return y;
}

void require_square(const char* op, const Tensor& M) {
  if (M.rank() != 2 || M.rows() != M.cols()) {
    throw ShapeError(std::string(op) + ": expected a square matrix, got " + shape_str(M.shape()));
  }
}

}  // namespace

std::vector<Complex> dft(std::span<const double> x) {
  std::vector<Complex> c(x.begin(), x.end());
  return transform(c, -1.0);
}

std::vector<Complex> dft(std::span<const Complex> x) { return transform(x, -1.0); }

std::vector<Complex> idft_complex(std::span<const Complex> spectrum) { return transform(spectrum, 1.0); }

std::vector<double> idft(std::span<const Complex> spectrum) {
  const auto c = idft_complex(spectrum);
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

std::vector<std::size_t> frequency_order(std::size_t n) {
  std::vector<std::size_t> order{0};
  for (std::size_t k = 1; order.size() < n; ++k) {
    order.push_back(k);
    if (order.size() < n && n - k != k) order.push_back(n - k);
  }
  return order;
}

std::vector<bool> low_frequency_mask(std::size_t n, std::size_t c) {
  if (c < 1 || c > n) {
    throw DomainError("cutoff c=" + std::to_string(c) + " outside [1, " + std::to_string(n) + "]");
  }
  const auto order = frequency_order(n);
  std::vector<bool> low(n, false);
  for (std::size_t i = 0; i < c; ++i) low[order[i]] = true;
  const std::size_t last = order[c - 1];
  low[(n - last) % n] = true;
  return low;
}

SpectrumSplit lfc_hfc_split(std::span<const double> x, std::size_t c) {
  const std::size_t n = x.size();
  if (n == 0) throw DomainError("lfc_hfc_split: empty signal");
  const auto low = low_frequency_mask(n, c);
  const auto spectrum = dft(x);
  std::vector<Complex> lo(n), hi(n);
  for (std::size_t k = 0; k < n; ++k) (low[k] ? lo : hi)[k] = spectrum[k];
  return {idft(lo), idft(hi), c};
}

double l2_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

std::vector<double> lowpass_trajectory(const Tensor& M, std::span<const double> x, std::size_t steps,
                                       std::size_t c) {
  require_square("lowpass_trajectory", M);
  const std::size_t n = M.rows();
  if (x.size() != n) throw ShapeError("lowpass_trajectory: signal length does not match the matrix");
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(M.at(i, j) > 0.0)) throw DomainError("lowpass_trajectory: matrix entries must be positive");
      row += M.at(i, j);
    }
    if (std::abs(row - 1.0) > 1e-9) throw DomainError("lowpass_trajectory: rows must sum to 1");
  }
  std::vector<double> y(x.begin(), x.end());
  std::vector<double> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    y = apply_matrix(M, y);
    const auto split = lfc_hfc_split(y, c);
    const double lo = l2_norm(split.lfc);
    out.push_back(lo == 0.0 ? kInfiniteRatio : l2_norm(split.hfc) / lo);
  }
  return out;
}

Tensor random_softmax_matrix(std::size_t n, SplitMix64& rng, double scale) {
  NoGradGuard guard;
  return softmax(Tensor::randn({n, n}, rng, scale)).detach();
}

FilterResponse filter_response(std::span<const double> theta, const poly::BasisSpec& basis,
                               std::span<const double> lambdas) {
  if (lambdas.empty()) throw DomainError("filter_response: empty spectrum");
  FilterResponse r;
  r.lambdas.assign(lambdas.begin(), lambdas.end());
  std::sort(r.lambdas.begin(), r.lambdas.end(), std::greater<>());
  if (std::abs(r.lambdas.front() - 1.0) > 1e-12) {
    throw DomainError("filter_response: the largest singular value must be 1");
  }
  for (std::size_t i = 1; i < r.lambdas.size(); ++i) {
    if (!(std::abs(r.lambdas[i]) < 1.0)) throw DomainError("filter_response: |lambda_i| must be < 1 for i >= 2");
  }
  r.responses.reserve(r.lambdas.size());
  for (double l : r.lambdas) r.responses.push_back(poly::evaluate_filter(theta, basis, l));
  const double g1 = r.responses.front();
  if (g1 == 0.0) throw DegenerateFilterError("filter_response: g(lambda_1) = 0");
  for (double g : r.responses) r.ratios.push_back(std::abs(g / g1));
  return r;
}

CosineSummary cosine_similarity_by_layer(const std::vector<Tensor>& hidden) {
  if (hidden.empty()) throw DomainError("cosine_similarity_by_layer: no layers");
  CosineSummary out;
  for (const Tensor& h : hidden) {
    const std::size_t n = h.rows(), d = h.cols();
    if (n < 2) throw DomainError("cosine_similarity_by_layer: need at least two tokens");
    auto x = h.data();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) norms[i] = l2_norm(x.subspan(i * d, d));
    double total = 0.0;
    std::size_t used = 0, skipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (norms[i] == 0.0 || norms[j] == 0.0) {
          ++skipped;
          continue;
        }
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += x[i * d + k] * x[j * d + k];
        total += dot / (norms[i] * norms[j]);
        ++used;
      }
    }
    if (used == 0) throw DomainError("cosine_similarity_by_layer: every token vector has zero norm");
    out.means.push_back(total / static_cast<double>(used));
    out.skipped.push_back(skipped);
  }
  return out;
}

std::vector<double> layer_frequency_response(const Tensor& H, std::size_t probe_count) {
  require_square("layer_frequency_response", H);
  if (probe_count == 0) throw DomainError("layer_frequency_response: need at least one probe");
  const std::size_t n = H.rows();
  const std::size_t bins = n / 2 + 1;
  std::vector<double> curve(bins, 0.0);
  for (std::size_t k = 0; k < bins; ++k) {
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t p = 0; p < probe_count; ++p) {
      const double phase = std::numbers::pi * static_cast<double>(p) / static_cast<double>(probe_count);
      std::vector<double> x(n);
      for (std::size_t t = 0; t < n; ++t) {
        x[t] = std::cos(2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n) + phase);
      }
      const double in = std::abs(dft(x)[k]);
      if (in < 1e-9 * std::sqrt(static_cast<double>(n))) continue;
      acc += std::abs(dft(apply_matrix(H, x))[k]) / in;
      ++used;
    }
    curve[k] = acc / static_cast<double>(used);
  }
  return curve;
}

// ---------------------------------------------------------------------------

LowpassTrial softmax_lowpass_trial(std::uint64_t seed, std::size_t n, std::size_t steps, std::size_t c,
                                   double threshold) {
  SplitMix64 rng(seed);
  const Tensor M = random_softmax_matrix(n, rng);
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  LowpassTrial trial;
  trial.seed = seed;
  trial.ratios = lowpass_trajectory(M, x, steps, c);
  trial.passed = !trial.ratios.empty() && trial.ratios.back() < threshold &&
                 trial.ratios.back() < trial.ratios.front();
  return trial;
}

LowpassSweep simplex_filter_sweep(std::uint64_t seed, std::size_t filters, int max_order,
                                  std::size_t spectrum_size) {
  SplitMix64 rng(seed);
  LowpassSweep sweep;
  std::vector<double> grid;
  for (int i = -99; i <= 99; i += 9) grid.push_back(i / 100.0);
  grid.push_back(0.999);
  grid.push_back(-0.999);
  for (std::size_t f = 0; f < filters; ++f) {
    const int K = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_order)));
    // Dirichlet(1, ..., 1) through normalized exponentials.
    std::vector<double> theta(K + 1);
    double total = 0.0;
    for (double& t : theta) {
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      total += (t = -std::log(u));
    }
    for (double& t : theta) t /= total;

    std::vector<double> lambdas{1.0};
    lambdas.insert(lambdas.end(), grid.begin(), grid.end());
    for (std::size_t i = 0; i < spectrum_size; ++i) lambdas.push_back(rng.uniform(-0.9999, 0.9999));

    const auto r = filter_response(theta, poly::BasisSpec::monomial(K), lambdas);
    ++sweep.filters;
    bool violated = false;
    for (std::size_t i = 1; i < r.ratios.size(); ++i) {
      sweep.max_ratio = std::max(sweep.max_ratio, r.ratios[i]);
      violated |= !(r.ratios[i] < 1.0);
    }
    sweep.violations += violated ? 1 : 0;
  }
  return sweep;
}

HighpassCheck alternating_filter_check(double alpha, int K, std::span<const double> lambdas) {
  std::vector<double> theta(static_cast<std::size_t>(K) + 1);
  double p = 1.0;
  for (double& t : theta) {
    t = p;
    p *= -alpha;
  }
  const auto r = filter_response(theta, poly::BasisSpec::monomial(K), lambdas);
  HighpassCheck check{alpha, K, std::numeric_limits<double>::infinity(), 0.0};
  for (std::size_t i = 0; i < r.lambdas.size(); ++i) {
    if (i > 0) check.min_ratio = std::min(check.min_ratio, r.ratios[i]);
    const double closed = 1.0 / (1.0 + alpha * r.lambdas[i]);
    check.max_closed_form_error = std::max(check.max_closed_form_error, std::abs(r.responses[i] - closed));
  }
  return check;
}

}  // namespace agf::spectral
