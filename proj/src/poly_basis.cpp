#include "agf/poly_basis.hpp"

#include <cmath>

namespace agf::poly {

std::string to_string(BasisKind kind) { return kind == BasisKind::Monomial ? "monomial" : "jacobi"; }

BasisKind basis_kind_from_string(const std::string& name) {
  if (name == "monomial") return BasisKind::Monomial;
  if (name == "jacobi") return BasisKind::Jacobi;
  throw ConfigError("unknown basis '" + name + "' (expected monomial or jacobi)");
}

void BasisSpec::validate() const {
  if (K < 0) throw DomainError("polynomial order K must be non-negative");
  if (kind == BasisKind::Jacobi && (a <= -1.0 || b <= -1.0)) {
    throw DomainError("Jacobi parameters require a > -1 and b > -1");
  }
}

FilterCoefficients FilterCoefficients::from(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return {Tensor::from({n}, std::move(values), requires_grad)};
}

FilterCoefficients FilterCoefficients::identity(int K, bool requires_grad) {
  if (K < 0) throw DomainError("polynomial order K must be non-negative");
  std::vector<double> v(static_cast<std::size_t>(K) + 1, 0.0);
  v[0] = 1.0;
  return from(std::move(v), requires_grad);
}

void FilterCoefficients::check_matches(const BasisSpec& spec) const {
  if (!theta.defined() || theta.numel() != spec.size()) {
    throw ShapeError("filter has " + std::to_string(theta.numel()) + " coefficients but basis order " +
                     std::to_string(spec.K) + " needs " + std::to_string(spec.size()));
  }
}

JacobiRecurrence jacobi_recurrence(int k, double a, double b) {
  const double kd = k;
  const double s = 2.0 * kd + a + b;
  return {
      s * (s + 1.0) / (2.0 * kd * (kd + a + b)),
      (s - 1.0) * (a * a - b * b) / (2.0 * kd * (kd + a + b) * (s - 2.0)),
      (kd + a - 1.0) * (kd + b - 1.0) * s / (kd * (kd + a + b) * (s - 2.0)),
  };
}

double jacobi_eval(int k, double a, double b, double x) {
  BasisSpec::jacobi(k, a, b).validate();
  double prev = 1.0;
  if (k == 0) return prev;
  double cur = 0.5 * (a - b) + 0.5 * (a + b + 2.0) * x;
  for (int i = 2; i <= k; ++i) {
    const auto r = jacobi_recurrence(i, a, b);
    const double next = (r.w * x + r.w_prime) * cur - r.w_double_prime * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

std::vector<double> basis_values(const BasisSpec& spec, double x) {
  spec.validate();
  std::vector<double> out(spec.size());
  if (spec.kind == BasisKind::Monomial) {
    for (int k = 0; k <= spec.K; ++k) out[k] = k == 0 ? 1.0 : std::pow(x, k);
    return out;
  }
  out[0] = 1.0;
  if (spec.K >= 1) out[1] = 0.5 * (spec.a - spec.b) + 0.5 * (spec.a + spec.b + 2.0) * x;
  for (int k = 2; k <= spec.K; ++k) {
    const auto r = jacobi_recurrence(k, spec.a, spec.b);
    out[k] = (r.w * x + r.w_prime) * out[k - 1] - r.w_double_prime * out[k - 2];
  }
  return out;
}

double evaluate_filter(std::span<const double> theta, const BasisSpec& spec, double x) {
  if (theta.size() != spec.size()) throw ShapeError("evaluate_filter: coefficient count mismatch");
  const auto t = basis_values(spec, x);
  double acc = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) acc += theta[k] * t[k];
  return acc;
}

std::vector<Tensor> basis_terms(const BasisSpec& spec, const Tensor& s) {
  spec.validate();
  for (double v : s.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("singular values must lie in [0, 1]");
  }
  std::vector<Tensor> terms;
  terms.reserve(spec.size());
  terms.push_back(Tensor::full(s.shape(), 1.0));
  if (spec.K == 0) return terms;

  if (spec.kind == BasisKind::Monomial) {
    for (int k = 1; k <= spec.K; ++k) terms.push_back(powi(s, k));
    return terms;
  }
  terms.push_back(add_scalar(scale(s, 0.5 * (spec.a + spec.b + 2.0)), 0.5 * (spec.a - spec.b)));
  for (int k = 2; k <= spec.K; ++k) {
    const auto r = jacobi_recurrence(k, spec.a, spec.b);
    Tensor lead = mul(add_scalar(scale(s, r.w), r.w_prime), terms[k - 1]);
    terms.push_back(sub(lead, scale(terms[k - 2], r.w_double_prime)));
  }
  return terms;
}

Tensor basis_stack(const BasisSpec& spec, const Tensor& s) {
  const std::size_t d = s.numel();
  Tensor row = s.rank() == 2 && s.rows() == 1 ? s : reshape(s, {1, d});
  return concat_rows(basis_terms(spec, row));
}

Tensor apply_filter(const FilterCoefficients& coeffs, const Tensor& stack) {
  if (stack.rank() != 2 || coeffs.size() != stack.rows()) {
    throw ShapeError("apply_filter: " + std::to_string(coeffs.size()) + " coefficients for a stack of shape " +
                     shape_str(stack.shape()));
  }
  return matmul(reshape(coeffs.theta, {1, coeffs.size()}), stack);
}

Tensor apply_filter(const FilterCoefficients& coeffs, std::span<const Tensor> terms) {
  if (coeffs.size() != terms.size()) {
    throw ShapeError("apply_filter: " + std::to_string(coeffs.size()) + " coefficients for " +
                     std::to_string(terms.size()) + " basis terms");
  }
  return weighted_sum(coeffs.theta, terms);
}

}  // namespace agf::poly
