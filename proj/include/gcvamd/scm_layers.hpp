#pragma once

#include <Eigen/Dense>

#include "gcvamd/causal_graph.hpp"
#include "gcvamd/nn.hpp"
#include "gcvamd/rng.hpp"

namespace gcvamd {

/// Per-node additive MLP: widths d -> d*m -> d*m -> d with ELU, ELU, linear.
/// Hidden units are assigned to nodes in contiguous groups of m, and a weight
/// (r, c) exists only when both units belong to the same node, so output i
/// depends on input i alone.
class MaskedBlockMLP {
 public:
  MaskedBlockMLP() = default;
  /// Zero weights and biases.
  MaskedBlockMLP(int d, int hidden_multiplier);
  /// Weights uniform in [-0.5, 0.5] / sqrt(block fan-in), biases zero.
  MaskedBlockMLP(int d, int hidden_multiplier, Engine& engine);

  int d() const { return d_; }
  int hidden_multiplier() const { return m_; }

  /// Batch forward; x is d x N.
  Matrix forward(const Matrix& x, nn::StackCache* cache = nullptr) const { return stack_.forward(x, cache); }
  Matrix backward(const Matrix& dout, const nn::StackCache& cache, MaskedBlockMLP* grad, bool want_input_grad) const;

  nn::Stack& stack() { return stack_; }
  const nn::Stack& stack() const { return stack_; }
  MaskedBlockMLP zeros_like() const;
  void apply_masks() { stack_.apply_masks(); }

 private:
  int d_ = 0;
  int m_ = 0;
  nn::Stack stack_;
};

/// z = f4((I - A^T)^-1 f3(eps)).
struct NoiseToLatent {
  MaskedBlockMLP f3;
  MaskedBlockMLP f4;
};

/// z_hat = g2(A^T g1(z)); the additive exogenous term is added by the model.
struct CausalLayerGAE {
  MaskedBlockMLP g1;
  MaskedBlockMLP g2;
};

NoiseToLatent make_noise_to_latent(int d, int hidden_multiplier, Engine& engine);
CausalLayerGAE make_causal_layer(int d, int hidden_multiplier, Engine& engine);

/// Single-vector forward of a masked block MLP.
Vector masked_forward(const MaskedBlockMLP& mlp, const Vector& x);

/// Intermediate values of the noise -> latent map for a d x N batch.
struct NoiseToLatentCache {
  nn::StackCache f3;
  nn::StackCache f4;
  Matrix solved;  // (I - A^T)^-1 f3(eps)
  Matrix z;
};

/// Throws SingularSystemError when I - A^T cannot be inverted.
Matrix noise_to_latent(const NoiseToLatent& ntl, const WeightedAdjacency& a, const Matrix& eps,
                       NoiseToLatentCache* cache = nullptr);
Vector noise_to_latent(const NoiseToLatent& ntl, const WeightedAdjacency& a, const Vector& eps);

struct CausalLayerCache {
  nn::StackCache g1;
  nn::StackCache g2;
  Matrix embedded;  // g1(z)
  Matrix mixed;     // A^T g1(z)
  Matrix output;
};

Matrix causal_reconstruct(const CausalLayerGAE& layer, const WeightedAdjacency& a, const Matrix& z,
                          CausalLayerCache* cache = nullptr);
Vector causal_reconstruct(const CausalLayerGAE& layer, const WeightedAdjacency& a, const Vector& z);

/// Sum over samples of ||z - g2(A^T g1(z))||^2; z_batch is N x d.
double lz_loss(const CausalLayerGAE& layer, const WeightedAdjacency& a, const Matrix& z_batch);

/// Backward pass through the noise -> latent map. Accumulates into the
/// optional gradient targets and returns d(loss)/d(eps) when requested.
Matrix noise_to_latent_backward(const NoiseToLatent& ntl, const WeightedAdjacency& a,
                                const NoiseToLatentCache& cache, const Matrix& dz, NoiseToLatent* grad,
                                Matrix* grad_adjacency, bool want_eps_grad);

/// Backward pass through the causal layer given d(loss)/d(output). Returns
/// d(loss)/d(z) through the layer (excluding any direct dependence).
Matrix causal_reconstruct_backward(const CausalLayerGAE& layer, const WeightedAdjacency& a,
                                   const CausalLayerCache& cache, const Matrix& dout, CausalLayerGAE* grad,
                                   Matrix* grad_adjacency);

}  // namespace gcvamd
