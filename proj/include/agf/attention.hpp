#pragma once

// Vanilla softmax self-attention and the attentive graph filter (AGF) layer.
//
// AGF(X) = U(X) diag(f(X)) V(X)^T X W_val with
//   U   = softmax(X W_U)            n x d, each row a distribution over features
//   s   = sigmoid(X W_Sigma)        n x d, token-specific singular values in (0, 1)
//   f   = sum_k theta_k T_k(s)      filtered singular values
//   V^T = softmax((X W_V)^T)        d x n, each row a distribution over tokens
// evaluated as (U * f) (V^T (X W_val)) so that no n x n matrix is formed.

#include <cstddef>
#include <variant>
#include <vector>

#include "agf/poly_basis.hpp"
#include "agf/rng.hpp"
#include "agf/tensor.hpp"

namespace agf::attn {

enum class AttentionKind { Vanilla, AGF };

struct VanillaParams {
  Tensor W_qry, W_key, W_val;  // d x d
  std::size_t heads = 1;

  static VanillaParams init(std::size_t d, std::size_t heads, SplitMix64& rng);
  std::size_t dim() const { return W_qry.rows(); }
  std::vector<NamedParam> named(const std::string& prefix) const;
  void validate() const;
};

struct AGFParams {
  Tensor W_U, W_Sigma, W_V, W_val;  // d x d; head h owns columns [h*d/heads, (h+1)*d/heads)
  poly::BasisSpec basis;
  poly::FilterCoefficients theta;  // shared by all heads
  std::size_t heads = 1;

  // theta starts at [1, 0, ..., 0]; freeze_theta keeps it there.
  static AGFParams init(std::size_t d, std::size_t heads, const poly::BasisSpec& basis, SplitMix64& rng,
                        bool freeze_theta = false);
  std::size_t dim() const { return W_U.rows(); }
  std::vector<NamedParam> named(const std::string& prefix) const;
  void validate() const;
};

// Row-stochastic n x n attention map of one head.
Tensor vanilla_attention_matrix(const Tensor& X, const VanillaParams& p, std::size_t head = 0);

Tensor vanilla_sa(const Tensor& X, const VanillaParams& p);

struct Singulars {
  Tensor U;   // n x d_h
  Tensor s;   // n x d_h, pre-filter singular values
  Tensor f;   // n x d_h, filtered singular values
  Tensor Vt;  // d_h x n
};

// One entry per head.
std::vector<Singulars> agf_singulars(const Tensor& X, const AGFParams& p);

struct AGFOutput {
  Tensor out;    // n x d
  Tensor ortho;  // scalar, orthogonality penalty summed over heads
};

// Linear-cost forward; also returns the orthogonality penalty of the factors
// it generated.
AGFOutput agf_forward_with_ortho(const Tensor& X, const AGFParams& p);
Tensor agf_forward(const Tensor& X, const AGFParams& p);

// Explicit per-head filter H = (U * f) V^T, n x n. Analysis and test path.
std::vector<Tensor> agf_materialize_h(const Tensor& X, const AGFParams& p);

// (1/n^2) (||U^T U - I||_F + ||V^T (V^T)^T - I||_F) with I the d_h x d_h identity.
Tensor ortho_loss(const Tensor& U, const Tensor& Vt);

// Pre-norm residual block: H = X + Attn(LN1(X)); Y = H + FFN(LN2(H)).
struct BlockParams {
  std::variant<VanillaParams, AGFParams> attention;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;  // 1 x d
  Tensor W1, b1;                                     // d x 4d, 1 x 4d
  Tensor W2, b2;                                     // 4d x d, 1 x d

  static BlockParams init(std::size_t d, AttentionKind kind, std::size_t heads, const poly::BasisSpec& basis,
                          SplitMix64& rng, bool freeze_theta = false);
  AttentionKind kind() const;
  std::size_t dim() const { return ln1_gamma.numel(); }
  std::vector<NamedParam> named(const std::string& prefix) const;
};

struct BlockOutput {
  Tensor out;    // n x d
  Tensor ortho;  // scalar; exactly 0 for vanilla attention
};

BlockOutput block_forward(const Tensor& X, const BlockParams& p);

}  // namespace agf::attn
