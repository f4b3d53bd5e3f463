#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "agf/parallel.hpp"
#include "agf/tensor.hpp"

namespace agf {

namespace {

constexpr std::size_t kParallelWork = 1u << 20;

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

// C[m x p] += A[m x k] * B[k x p]
void gemm_nn(std::size_t m, std::size_t k, std::size_t p, const double* A, const double* B,
             double* C) {
  parallel_for(m, m * k * p, kParallelWork, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* __restrict c = C + i * p;
      const double* a = A + i * k;
      for (std::size_t t = 0; t < k; ++t) {
        const double av = a[t];
        const double* __restrict b = B + t * p;
        for (std::size_t j = 0; j < p; ++j) c[j] += av * b[j];
      }
    }
  });
}

// C[m x p] += A[m x k] * B[p x k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t p, const double* A, const double* B,
             double* C) {
  parallel_for(m, m * k * p, kParallelWork, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const double* a = A + i * k;
      for (std::size_t j = 0; j < p; ++j) {
        const double* b = B + j * k;
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) acc += a[t] * b[t];
        C[i * p + j] += acc;
      }
    }
  });
}

// C[m x p] += A[k x m]^T * B[k x p]
void gemm_tn(std::size_t m, std::size_t k, std::size_t p, const double* A, const double* B,
             double* C) {
  parallel_for(m, m * k * p, kParallelWork, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t t = 0; t < k; ++t) {
      const double* b = B + t * p;
      for (std::size_t i = r0; i < r1; ++i) {
        const double av = A[t * m + i];
        if (av == 0.0) continue;
        double* __restrict c = C + i * p;
        for (std::size_t j = 0; j < p; ++j) c[j] += av * b[j];
      }
    }
  });
}

// Elementwise op with derivative computed from (input, output).
template <class Fwd, class Dydx>
Tensor elementwise(const char* name, const Tensor& a, Fwd fwd, Dydx dydx) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  auto holder = std::make_shared<Tensor>();
  Tensor y = record_op(name, a.shape(), std::move(out), {a},
                       [a, holder, dydx](std::span<const double> g) {
                         auto ga = grad_sink(a);
                         if (ga.empty()) return;
                         auto xv = a.data();
                         auto yv = holder->data();
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(xv[i], yv[i]);
                       });
  // The closure reads the output through a handle filled in after creation;
  // only the tape entry owns it.
  if (y.requires_grad()) *holder = y;
  return y;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != k) shape_fail("matmul", a, b);
  std::vector<double> out(m * p, 0.0);
  gemm_nn(m, k, p, a.data().data(), b.data().data(), out.data());
  return record_op("matmul", {m, p}, std::move(out), {a, b},
                   [a, b, m, k, p](std::span<const double> g) {
                     if (auto ga = grad_sink(a); !ga.empty())
                       gemm_nt(m, p, k, g.data(), b.data().data(), ga.data());
                     if (auto gb = grad_sink(b); !gb.empty())
                       gemm_tn(k, m, p, a.data().data(), g.data(), gb.data());
                   });
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  auto x = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return record_op("transpose", {c, r}, std::move(out), {a}, [a, r, c](std::span<const double> g) {
    auto ga = grad_sink(a);
    if (ga.empty()) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto x = a.data();
  return record_op("reshape", std::move(shape), std::vector<double>(x.begin(), x.end()), {a},
                   [a](std::span<const double> g) {
                     auto ga = grad_sink(a);
                     for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("add", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return record_op("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    for (const Tensor* t : {&a, &b}) {
      auto gt = grad_sink(*t);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("sub", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return record_op("sub", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = grad_sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return record_op("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      auto y = b.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (auto gb = grad_sink(b); !gb.empty()) {
      auto x = a.data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = factor * x[i];
  return record_op("scale", a.shape(), std::move(out), {a}, [a, factor](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + value;
  return record_op("add_scalar", a.shape(), std::move(out), {a}, [a](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.rows(), d = x.cols();
  if (bias.numel() != d || bias.rows() != 1) shape_fail("add_bias", x, bias);
  auto xv = x.data(), bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
  return record_op("add_bias", x.shape(), std::move(out), {x, bias},
                   [x, bias, n, d](std::span<const double> g) {
                     auto gx = grad_sink(x);
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                     if (auto gb = grad_sink(bias); !gb.empty()) {
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
                     }
                   });
}

Tensor powi(const Tensor& x, int k) {
  if (k < 0) throw DomainError("powi: exponent must be non-negative");
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = k == 0 ? 1.0 : std::pow(xv[i], k);
  return record_op("powi", x.shape(), std::move(out), {x}, [x, k](std::span<const double> g) {
    auto gx = grad_sink(x);
    if (gx.empty() || k == 0) return;
    auto xv = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += g[i] * k * (k == 1 ? 1.0 : std::pow(xv[i], k - 1));
  });
}

Tensor sum(const Tensor& a) {
  auto x = a.data();
  double s = 0.0;
  for (double v : x) s += v;
  return record_op("sum", {1}, {s}, {a}, [a](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (double& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  auto x = a.data();
  double s = 0.0;
  for (double v : x) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  return record_op("mean", {1}, {s * inv}, {a}, [a, inv](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (double& v : ga) v += g[0] * inv;
  });
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t n = a.rows(), d = a.cols();
  auto x = a.data();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= inv;
  return record_op("mean_rows", {1, d}, std::move(out), {a}, [a, n, d, inv](std::span<const double> g) {
    auto ga = grad_sink(a);
    if (ga.empty()) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += g[j] * inv;
  });
}

Tensor frobenius_norm(const Tensor& a) {
  auto x = a.data();
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double norm = std::sqrt(ss);
  return record_op("frobenius_norm", {1}, {norm}, {a}, [a, norm](std::span<const double> g) {
    auto ga = grad_sink(a);
    // The norm is not differentiable at 0; use the zero subgradient there.
    if (ga.empty() || norm == 0.0) return;
    auto x = a.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * x[i] / norm;
  });
}

Tensor relu(const Tensor& a) {
  return elementwise(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return elementwise(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

Tensor sigmoid(const Tensor& a) {
  return elementwise("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& a) {
  const std::size_t n = a.rows(), d = a.cols();
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * d;
    double* yi = out.data() + i * d;
    const double mx = *std::max_element(xi, xi + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < d; ++j) yi[j] *= inv;
  }
  auto holder = std::make_shared<Tensor>();
  Tensor y = record_op("softmax", a.shape(), std::move(out), {a},
                       [a, holder, n, d](std::span<const double> g) {
                         auto ga = grad_sink(a);
                         if (ga.empty()) return;
                         auto yv = holder->data();
                         for (std::size_t i = 0; i < n; ++i) {
                           const double* yi = yv.data() + i * d;
                           const double* gi = g.data() + i * d;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < d; ++j) dot += gi[j] * yi[j];
                           for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += yi[j] * (gi[j] - dot);
                         }
                       });
  if (y.requires_grad()) *holder = y;
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) shape_fail("layer_norm", x, gamma);
  auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xi[j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  return record_op(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g) {
        auto gv = gamma.data();
        if (auto gg = grad_sink(gamma); !gg.empty()) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
        }
        if (auto gb = grad_sink(beta); !gb.empty()) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
        if (auto gx = grad_sink(x); !gx.empty()) {
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < n; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * gv[j];
              m1 += dxh;
              m2 += dxh * xhat[i * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * gv[j];
              gx[i * d + j] += inv_std[i] * (dxh - m1 - xhat[i * d + j] * m2);
            }
          }
        }
      });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix("slice_cols", a);
  const std::size_t n = a.rows(), d = a.cols();
  if (count == 0 || start + count > d) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_str(a.shape()));
  }
  auto x = a.data();
  std::vector<double> out(n * count);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.data() + i * d + start, count, out.data() + i * count);
  return record_op("slice_cols", {n, count}, std::move(out), {a},
                   [a, n, d, start, count](std::span<const double> g) {
                     auto ga = grad_sink(a);
                     if (ga.empty()) return;
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < count; ++j) ga[i * d + start + j] += g[i * count + j];
                   });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    require_matrix("concat_cols", p);
    if (p.rows() != n) shape_fail("concat_cols", parts.front(), p);
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(n * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].cols();
    auto x = parts[k].data();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.data() + i * c, c, out.data() + i * total + offsets[k]);
  }
  return record_op("concat_cols", {n, total}, std::move(out), parts,
                   [parts, offsets, n, total](std::span<const double> g) {
                     for (std::size_t k = 0; k < parts.size(); ++k) {
                       auto gp = grad_sink(parts[k]);
                       if (gp.empty()) continue;
                       const std::size_t c = parts[k].cols();
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + offsets[k] + j];
                     }
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != d) shape_fail("concat_rows", parts.front(), p);
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * d);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return record_op("concat_rows", {total, d}, std::move(out), parts, [parts](std::span<const double> g) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      auto gp = grad_sink(p);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      offset += p.numel();
    }
  });
}

Tensor weighted_sum(const Tensor& weights, std::span<const Tensor> terms) {
  if (terms.empty()) throw ShapeError("weighted_sum: no terms");
  if (weights.numel() != terms.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.numel()) + " weights for " +
                     std::to_string(terms.size()) + " terms");
  }
  const Shape& shape = terms.front().shape();
  for (const Tensor& t : terms) {
    if (t.shape() != shape) shape_fail("weighted_sum", terms.front(), t);
  }
  auto w = weights.data();
  std::vector<double> out(shape_numel(shape), 0.0);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    auto x = terms[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * x[i];
  }
  std::vector<Tensor> inputs{weights};
  inputs.insert(inputs.end(), terms.begin(), terms.end());
  std::vector<Tensor> saved(terms.begin(), terms.end());
  return record_op("weighted_sum", shape, std::move(out), std::move(inputs),
                   [weights, saved](std::span<const double> g) {
                     auto w = weights.data();
                     auto gw = grad_sink(weights);
                     for (std::size_t k = 0; k < saved.size(); ++k) {
                       auto x = saved[k].data();
                       if (!gw.empty()) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
                         gw[k] += acc;
                       }
                       auto gt = grad_sink(saved[k]);
                       for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += w[k] * g[i];
                     }
                   });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_matrix("cross_entropy", logits);
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw DomainError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(c) + ")");
    }
  }
  auto z = logits.data();
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* zi = z.data() + i * c;
    const double mx = *std::max_element(zi, zi + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (probs[i * c + j] = std::exp(zi[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    loss += -(zi[labels[i]] - mx - std::log(s));
  }
  loss /= static_cast<double>(b);
  std::vector<int> ys(labels.begin(), labels.end());
  return record_op("cross_entropy", {1}, {loss}, {logits},
                   [logits, probs = std::move(probs), ys = std::move(ys), b, c](std::span<const double> g) {
                     auto gl = grad_sink(logits);
                     if (gl.empty()) return;
                     const double s = g[0] / static_cast<double>(b);
                     for (std::size_t i = 0; i < b; ++i)
                       for (std::size_t j = 0; j < c; ++j)
                         gl[i * c + j] += s * (probs[i * c + j] - (static_cast<int>(j) == ys[i] ? 1.0 : 0.0));
                   });
}

}  // namespace agf
