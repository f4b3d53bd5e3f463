#pragma once

// Frequency-domain analysis: unitary DFT, low/high-frequency splits, low-pass
// trajectories of stochastic matrices, polynomial filter responses over a
// singular value spectrum, and over-smoothing metrics.

#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "agf/poly_basis.hpp"
#include "agf/rng.hpp"
#include "agf/tensor.hpp"

namespace agf::spectral {

using Complex = std::complex<double>;

// X_j = n^{-1/2} sum_k x_k e^{-2 pi i j k / n}
std::vector<Complex> dft(std::span<const double> x);
std::vector<Complex> dft(std::span<const Complex> x);
// Inverse of dft(); idft() keeps the real part.
std::vector<Complex> idft_complex(std::span<const Complex> spectrum);
std::vector<double> idft(std::span<const Complex> spectrum);

// Bins from lowest to highest frequency: 0, 1, n-1, 2, n-2, ...
std::vector<std::size_t> frequency_order(std::size_t n);

// Bins treated as low frequency for cutoff c: the first c bins in
// frequency_order(), widened to include the conjugate partner of the last one.
std::vector<bool> low_frequency_mask(std::size_t n, std::size_t c);

struct SpectrumSplit {
  std::vector<double> lfc;
  std::vector<double> hfc;
  std::size_t cutoff_c = 1;
};

// Throws DomainError unless 1 <= c <= n.
SpectrumSplit lfc_hfc_split(std::span<const double> x, std::size_t c);

double l2_norm(std::span<const double> x);

inline constexpr double kInfiniteRatio = std::numeric_limits<double>::infinity();

// ||HFC[M^t x]|| / ||LFC[M^t x]|| for t = 1..steps; kInfiniteRatio when the
// low-frequency part vanishes. M must be row-stochastic with positive entries.
std::vector<double> lowpass_trajectory(const Tensor& M, std::span<const double> x, std::size_t steps,
                                       std::size_t c);

// softmax(Z) with Z_ij ~ N(0, scale^2).
Tensor random_softmax_matrix(std::size_t n, SplitMix64& rng, double scale = 1.0);

class DegenerateFilterError : public DomainError {
 public:
  using DomainError::DomainError;
};

struct FilterResponse {
  std::vector<double> lambdas;    // descending, lambdas[0] == 1
  std::vector<double> responses;  // g(lambda_i)
  std::vector<double> ratios;     // |g(lambda_i) / g(lambda_1)|
};

// Requires lambda_1 = 1 and |lambda_i| < 1 otherwise (input order is free).
FilterResponse filter_response(std::span<const double> theta, const poly::BasisSpec& basis,
                               std::span<const double> lambdas);

struct CosineSummary {
  std::vector<double> means;           // per layer
  std::vector<std::size_t> skipped;    // zero-norm pairs per layer
};

// Mean cosine similarity over token pairs i < j of each n x d hidden state.
CosineSummary cosine_similarity_by_layer(const std::vector<Tensor>& hidden);

// Empirical transfer curve of an n x n operator, one value per bin
// 0..floor(n/2): |DFT(H x)_k| / |DFT(x)_k| averaged over `probe_count`
// phase-shifted sinusoids at bin k.
std::vector<double> layer_frequency_response(const Tensor& H, std::size_t probe_count);

// ---------------------------------------------------------------------------
// Seeded experiments on the two filter theorems.

struct LowpassTrial {
  std::uint64_t seed = 0;
  std::vector<double> ratios;  // t = 1..steps
  bool passed = false;         // final < threshold and final < first
};

LowpassTrial softmax_lowpass_trial(std::uint64_t seed, std::size_t n, std::size_t steps, std::size_t c,
                                   double threshold);

struct LowpassSweep {
  std::size_t filters = 0;
  std::size_t violations = 0;
  double max_ratio = 0.0;  // over every lambda_i, i >= 2
};

// Random simplex-constrained theta (K drawn from 1..max_order, monomial
// basis) over random spectra with lambda_1 = 1 and |lambda_i| < 1.
LowpassSweep simplex_filter_sweep(std::uint64_t seed, std::size_t filters, int max_order,
                                  std::size_t spectrum_size);

struct HighpassCheck {
  double alpha = 0.0;
  int K = 0;
  double min_ratio = 0.0;          // over lambda_i, i >= 2
  double max_closed_form_error = 0.0;  // |g(lambda) - 1/(1 + alpha lambda)|
};

// theta_k = (-alpha)^k, monomial basis, evaluated on `lambdas`.
HighpassCheck alternating_filter_check(double alpha, int K, std::span<const double> lambdas);

}  // namespace agf::spectral
