#include "agf/attention.hpp"

#include <cmath>
#include <string>

namespace agf::attn {

namespace {

void require_square(const char* what, const Tensor& w, std::size_t d) {
  if (!w.defined() || w.rank() != 2 || w.rows() != d || w.cols() != d) {
    throw ShapeError(std::string(what) + " must be " + std::to_string(d) + "x" + std::to_string(d));
  }
}

void require_heads(std::size_t d, std::size_t heads) {
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("model dimension " + std::to_string(d) + " is not divisible by " +
                     std::to_string(heads) + " heads");
  }
}

void require_input(const Tensor& X, std::size_t d) {
  if (X.rank() != 2 || X.cols() != d) {
    throw ShapeError("attention input must be n x " + std::to_string(d) + ", got " + shape_str(X.shape()));
  }
}

Tensor weight(std::size_t rows, std::size_t cols, SplitMix64& rng, double variance) {
  return Tensor::randn({rows, cols}, rng, std::sqrt(variance), true);
}

Tensor head_cols(const Tensor& x, std::size_t heads, std::size_t h) {
  if (heads == 1) return x;
  const std::size_t dh = x.cols() / heads;
  return slice_cols(x, h * dh, dh);
}

Tensor join_heads(std::vector<Tensor> parts) {
  if (parts.size() == 1) return parts.front();
  return concat_cols(parts);
}

}  // namespace

// ---------------------------------------------------------------------------

VanillaParams VanillaParams::init(std::size_t d, std::size_t heads, SplitMix64& rng) {
  require_heads(d, heads);
  const double var = 1.0 / static_cast<double>(d);
  VanillaParams p;
  p.W_qry = weight(d, d, rng, var);
  p.W_key = weight(d, d, rng, var);
  p.W_val = weight(d, d, rng, var);
  p.heads = heads;
  return p;
}

std::vector<NamedParam> VanillaParams::named(const std::string& prefix) const {
  return {{prefix + "W_qry", W_qry}, {prefix + "W_key", W_key}, {prefix + "W_val", W_val}};
}

void VanillaParams::validate() const {
  const std::size_t d = W_qry.defined() ? W_qry.rows() : 0;
  require_square("W_qry", W_qry, d);
  require_square("W_key", W_key, d);
  require_square("W_val", W_val, d);
  require_heads(d, heads);
}

AGFParams AGFParams::init(std::size_t d, std::size_t heads, const poly::BasisSpec& basis, SplitMix64& rng,
                          bool freeze_theta) {
  require_heads(d, heads);
  basis.validate();
  const double var = 1.0 / static_cast<double>(d);
  AGFParams p;
  p.W_U = weight(d, d, rng, var);
  p.W_Sigma = weight(d, d, rng, var);
  p.W_V = weight(d, d, rng, var);
  p.W_val = weight(d, d, rng, var);
  p.basis = basis;
  p.theta = poly::FilterCoefficients::identity(basis.K, !freeze_theta);
  p.heads = heads;
  return p;
}

std::vector<NamedParam> AGFParams::named(const std::string& prefix) const {
  std::vector<NamedParam> out{{prefix + "W_U", W_U},
                              {prefix + "W_Sigma", W_Sigma},
                              {prefix + "W_V", W_V},
                              {prefix + "W_val", W_val}};
  if (theta.theta.requires_grad()) out.push_back({prefix + "theta", theta.theta});
  return out;
}

void AGFParams::validate() const {
  const std::size_t d = W_U.defined() ? W_U.rows() : 0;
  require_square("W_U", W_U, d);
  require_square("W_Sigma", W_Sigma, d);
  require_square("W_V", W_V, d);
  require_square("W_val", W_val, d);
  require_heads(d, heads);
  basis.validate();
  theta.check_matches(basis);
}

// ---------------------------------------------------------------------------

Tensor vanilla_attention_matrix(const Tensor& X, const VanillaParams& p, std::size_t head) {
  p.validate();
  require_input(X, p.dim());
  if (head >= p.heads) throw ShapeError("head index out of range");
  const std::size_t dh = p.dim() / p.heads;
  Tensor q = head_cols(matmul(X, p.W_qry), p.heads, head);
  Tensor k = head_cols(matmul(X, p.W_key), p.heads, head);
  Tensor scores = matmul(q, transpose(k));
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
  return softmax(scores);
}

Tensor vanilla_sa(const Tensor& X, const VanillaParams& p) {
  p.validate();
  require_input(X, p.dim());
  const std::size_t dh = p.dim() / p.heads;
  const Tensor q = matmul(X, p.W_qry);
  const Tensor k = matmul(X, p.W_key);
  const Tensor v = matmul(X, p.W_val);
  std::vector<Tensor> outs;
  outs.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Tensor scores = matmul(head_cols(q, p.heads, h), transpose(head_cols(k, p.heads, h)));
    scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
    scores = softmax(scores);
    outs.push_back(matmul(scores, head_cols(v, p.heads, h)));
  }
  return join_heads(std::move(outs));
}

std::vector<Singulars> agf_singulars(const Tensor& X, const AGFParams& p) {
  p.validate();
  require_input(X, p.dim());
  const Tensor xu = matmul(X, p.W_U);
  const Tensor xs = matmul(X, p.W_Sigma);
  const Tensor xv = matmul(X, p.W_V);
  std::vector<Singulars> out;
  out.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Singulars sv;
    sv.U = softmax(head_cols(xu, p.heads, h));
    sv.s = sigmoid(head_cols(xs, p.heads, h));
    const auto terms = poly::basis_terms(p.basis, sv.s);
    sv.f = poly::apply_filter(p.theta, terms);
    sv.Vt = softmax(transpose(head_cols(xv, p.heads, h)));
    out.push_back(std::move(sv));
  }
  return out;
}

AGFOutput agf_forward_with_ortho(const Tensor& X, const AGFParams& p) {
  const auto factors = agf_singulars(X, p);
  const Tensor value = matmul(X, p.W_val);
  std::vector<Tensor> outs;
  outs.reserve(p.heads);
  Tensor ortho;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Singulars& sv = factors[h];
    // d_h x d_h, then n x d_h: O(n d^2) overall.
    const Tensor mixed = matmul(sv.Vt, head_cols(value, p.heads, h));
    outs.push_back(matmul(mul(sv.U, sv.f), mixed));
    Tensor o = ortho_loss(sv.U, sv.Vt);
    ortho = ortho.defined() ? add(ortho, o) : o;
  }
  return {join_heads(std::move(outs)), ortho};
}

Tensor agf_forward(const Tensor& X, const AGFParams& p) {
  const auto factors = agf_singulars(X, p);
  const Tensor value = matmul(X, p.W_val);
  std::vector<Tensor> outs;
  outs.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Singulars& sv = factors[h];
    const Tensor mixed = matmul(sv.Vt, head_cols(value, p.heads, h));
    outs.push_back(matmul(mul(sv.U, sv.f), mixed));
  }
  return join_heads(std::move(outs));
}

std::vector<Tensor> agf_materialize_h(const Tensor& X, const AGFParams& p) {
  const auto factors = agf_singulars(X, p);
  std::vector<Tensor> out;
  out.reserve(factors.size());
  for (const Singulars& sv : factors) out.push_back(matmul(mul(sv.U, sv.f), sv.Vt));
  return out;
}

Tensor ortho_loss(const Tensor& U, const Tensor& Vt) {
  if (U.rank() != 2 || Vt.rank() != 2 || U.cols() != Vt.rows() || U.rows() != Vt.cols()) {
    throw ShapeError("ortho_loss: expected U n x d and V^T d x n, got " + shape_str(U.shape()) + " and " +
                     shape_str(Vt.shape()));
  }
  const std::size_t n = U.rows(), d = U.cols();
  const Tensor eye = Tensor::eye(d);
  const Tensor u_term = frobenius_norm(sub(matmul(transpose(U), U), eye));
  const Tensor v_term = frobenius_norm(sub(matmul(Vt, transpose(Vt)), eye));
  return scale(add(u_term, v_term), 1.0 / static_cast<double>(n * n));
}

// ---------------------------------------------------------------------------

BlockParams BlockParams::init(std::size_t d, AttentionKind kind, std::size_t heads, const poly::BasisSpec& basis,
                              SplitMix64& rng, bool freeze_theta) {
  BlockParams p;
  if (kind == AttentionKind::Vanilla) {
    p.attention = VanillaParams::init(d, heads, rng);
  } else {
    p.attention = AGFParams::init(d, heads, basis, rng, freeze_theta);
  }
  p.ln1_gamma = Tensor::full({1, d}, 1.0, true);
  p.ln1_beta = Tensor::zeros({1, d}, true);
  p.ln2_gamma = Tensor::full({1, d}, 1.0, true);
  p.ln2_beta = Tensor::zeros({1, d}, true);
  p.W1 = weight(d, 4 * d, rng, 1.0 / static_cast<double>(d));
  p.b1 = Tensor::zeros({1, 4 * d}, true);
  p.W2 = weight(4 * d, d, rng, 1.0 / static_cast<double>(4 * d));
  p.b2 = Tensor::zeros({1, d}, true);
  return p;
}

AttentionKind BlockParams::kind() const {
  return std::holds_alternative<VanillaParams>(attention) ? AttentionKind::Vanilla : AttentionKind::AGF;
}

std::vector<NamedParam> BlockParams::named(const std::string& prefix) const {
  std::vector<NamedParam> out = std::visit([&](const auto& a) { return a.named(prefix + "attn."); }, attention);
  out.push_back({prefix + "ln1.gamma", ln1_gamma});
  out.push_back({prefix + "ln1.beta", ln1_beta});
  out.push_back({prefix + "ln2.gamma", ln2_gamma});
  out.push_back({prefix + "ln2.beta", ln2_beta});
  out.push_back({prefix + "ffn.W1", W1});
  out.push_back({prefix + "ffn.b1", b1});
  out.push_back({prefix + "ffn.W2", W2});
  out.push_back({prefix + "ffn.b2", b2});
  return out;
}

BlockOutput block_forward(const Tensor& X, const BlockParams& p) {
  require_input(X, p.dim());
  const Tensor normed = layer_norm(X, p.ln1_gamma, p.ln1_beta);
  Tensor attended;
  Tensor ortho;
  if (const auto* agf = std::get_if<AGFParams>(&p.attention)) {
    auto r = agf_forward_with_ortho(normed, *agf);
    attended = std::move(r.out);
    ortho = std::move(r.ortho);
  } else {
    attended = vanilla_sa(normed, std::get<VanillaParams>(p.attention));
    ortho = Tensor::scalar(0.0);
  }
  const Tensor h = add(X, attended);
  const Tensor hidden = gelu(add_bias(matmul(layer_norm(h, p.ln2_gamma, p.ln2_beta), p.W1), p.b1));
  const Tensor y = add(h, add_bias(matmul(hidden, p.W2), p.b2));
  return {y, ortho};
}

}  // namespace agf::attn
