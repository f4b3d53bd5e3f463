#pragma once

// Polynomial bases T_k evaluated on singular values, and the filtered response
// g(s) = sum_k theta_k T_k(s).

#include <span>
#include <string>
#include <vector>

#include "agf/tensor.hpp"

namespace agf::poly {

enum class BasisKind { Monomial, Jacobi };

std::string to_string(BasisKind kind);
BasisKind basis_kind_from_string(const std::string& name);

struct BasisSpec {
  BasisKind kind = BasisKind::Jacobi;
  double a = 0.0;  // Jacobi only, > -1
  double b = 0.0;  // Jacobi only, > -1
  int K = 0;       // max order

  static BasisSpec monomial(int K) { return {BasisKind::Monomial, 0.0, 0.0, K}; }
  static BasisSpec jacobi(int K, double a, double b) { return {BasisKind::Jacobi, a, b, K}; }

  // Throws DomainError when K < 0 or (Jacobi) a <= -1 or b <= -1.
  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(K) + 1; }
};

// Learnable theta_0..theta_K, stored as a rank-1 tensor of length K+1.
struct FilterCoefficients {
  Tensor theta;

  static FilterCoefficients from(std::vector<double> values, bool requires_grad = true);
  // theta = [1, 0, ..., 0]: the unfiltered (all singular values one) start.
  static FilterCoefficients identity(int K, bool requires_grad = true);

  std::size_t size() const { return theta.numel(); }
  // Throws ShapeError unless there is exactly one coefficient per basis order.
  void check_matches(const BasisSpec& spec) const;
};

// Coefficients of B_k = (w x + w') B_{k-1} - w'' B_{k-2}, k >= 2.
struct JacobiRecurrence {
  double w;
  double w_prime;
  double w_double_prime;
};
JacobiRecurrence jacobi_recurrence(int k, double a, double b);

// B_k^{a,b}(x): B_0 = 1, B_1 = (a-b)/2 + (a+b+2)x/2, then the recurrence above.
double jacobi_eval(int k, double a, double b, double x);

// T_0(x)..T_K(x) for any finite x; not taped.
std::vector<double> basis_values(const BasisSpec& spec, double x);

// sum_k theta[k] T_k(x), not taped.
double evaluate_filter(std::span<const double> theta, const BasisSpec& spec, double x);

// T_0(s)..T_K(s) elementwise, each with the shape of s, built from taped ops.
// Every entry of s must lie in [0, 1].
std::vector<Tensor> basis_terms(const BasisSpec& spec, const Tensor& s);

// (K+1) x d matrix whose row k holds T_k(s_j) for a length-d vector s.
Tensor basis_stack(const BasisSpec& spec, const Tensor& s);

// f_j = sum_k theta_k stack[k, j]; returns a 1 x d row.
Tensor apply_filter(const FilterCoefficients& coeffs, const Tensor& stack);

// sum_k theta_k terms[k], keeping the shape of the terms.
Tensor apply_filter(const FilterCoefficients& coeffs, std::span<const Tensor> terms);

}  // namespace agf::poly
