#include "gcvamd/scm_layers.hpp"

#include <cmath>
#include <stdexcept>

#include "gcvamd/errors.hpp"

namespace gcvamd {

namespace {

// Node owning unit `unit` of a layer of the given width.
int node_of(int unit, int width, int d, int m) { return width == d ? unit : unit / m; }

nn::Dense masked_dense(int in, int out, nn::Activation act, int d, int m) {
  nn::Dense layer(in, out, act);
  layer.mask = Matrix::Zero(out, in);
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c)
      if (node_of(r, out, d, m) == node_of(c, in, d, m)) layer.mask(r, c) = 1.0;
  return layer;
}

Eigen::PartialPivLU<Matrix> factor_system(const WeightedAdjacency& a) {
  const Matrix system = Matrix::Identity(a.d(), a.d()) - a.weights().transpose();
  Eigen::PartialPivLU<Matrix> lu(system);
  // PartialPivLU reports a finite rcond estimate even for singular inputs, so
  // the determinant is checked as well.
  if (!std::isfinite(lu.rcond()) || lu.rcond() < 1e-12 || std::abs(lu.determinant()) < 1e-12)
    throw SingularSystemError("I - A^T is singular; the adjacency contains a unit-gain cycle");
  return lu;
}

}  // namespace

MaskedBlockMLP::MaskedBlockMLP(int d, int hidden_multiplier) : d_(d), m_(hidden_multiplier) {
  if (d <= 0 || hidden_multiplier <= 0)
    throw std::invalid_argument("masked MLP needs positive node count and multiplier");
  const int hidden = d * hidden_multiplier;
  stack_.layers.emplace_back(masked_dense(d, hidden, nn::Activation::kElu, d, m_));
  stack_.layers.emplace_back(masked_dense(hidden, hidden, nn::Activation::kElu, d, m_));
  stack_.layers.emplace_back(masked_dense(hidden, d, nn::Activation::kLinear, d, m_));
}

MaskedBlockMLP::MaskedBlockMLP(int d, int hidden_multiplier, Engine& engine) : MaskedBlockMLP(d, hidden_multiplier) {
  const double fan_in[3] = {1.0, static_cast<double>(hidden_multiplier), static_cast<double>(hidden_multiplier)};
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (int l = 0; l < 3; ++l) {
    auto& layer = std::get<nn::Dense>(stack_.layers[l]);
    const double scale = 1.0 / std::sqrt(fan_in[l]);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      const double draw = dist(engine);
      layer.weight.data()[i] = layer.mask.data()[i] * draw * scale;
    }
  }
}

Matrix MaskedBlockMLP::backward(const Matrix& dout, const nn::StackCache& cache, MaskedBlockMLP* grad,
                                bool want_input_grad) const {
  return stack_.backward(dout, cache, grad ? &grad->stack_ : nullptr, want_input_grad);
}

MaskedBlockMLP MaskedBlockMLP::zeros_like() const {
  MaskedBlockMLP copy = *this;
  copy.stack_ = stack_.zeros_like();
  return copy;
}

NoiseToLatent make_noise_to_latent(int d, int hidden_multiplier, Engine& engine) {
  NoiseToLatent ntl;
  ntl.f3 = MaskedBlockMLP(d, hidden_multiplier, engine);
  ntl.f4 = MaskedBlockMLP(d, hidden_multiplier, engine);
  return ntl;
}

CausalLayerGAE make_causal_layer(int d, int hidden_multiplier, Engine& engine) {
  CausalLayerGAE layer;
  layer.g1 = MaskedBlockMLP(d, hidden_multiplier, engine);
  layer.g2 = MaskedBlockMLP(d, hidden_multiplier, engine);
  return layer;
}

Vector masked_forward(const MaskedBlockMLP& mlp, const Vector& x) {
  if (x.size() != mlp.d()) throw std::invalid_argument("masked MLP input length must equal node count");
  if (!x.allFinite()) throw std::invalid_argument("masked MLP input must be finite");
  return mlp.forward(Matrix(x)).col(0);
}

Matrix noise_to_latent(const NoiseToLatent& ntl, const WeightedAdjacency& a, const Matrix& eps,
                       NoiseToLatentCache* cache) {
  if (eps.rows() != a.d() || ntl.f3.d() != a.d() || ntl.f4.d() != a.d())
    throw std::invalid_argument("noise_to_latent dimension mismatch");
  const auto lu = factor_system(a);
  nn::StackCache* f3_cache = cache ? &cache->f3 : nullptr;
  const Matrix base = ntl.f3.forward(eps, f3_cache);
  Matrix solved = lu.solve(base);
  Matrix z = ntl.f4.forward(solved, cache ? &cache->f4 : nullptr);
  if (cache) {
    cache->solved = std::move(solved);
    cache->z = z;
  }
  return z;
}

Vector noise_to_latent(const NoiseToLatent& ntl, const WeightedAdjacency& a, const Vector& eps) {
  if (eps.size() != a.d()) throw std::invalid_argument("noise length must equal node count");
  return noise_to_latent(ntl, a, Matrix(eps)).col(0);
}

Matrix causal_reconstruct(const CausalLayerGAE& layer, const WeightedAdjacency& a, const Matrix& z,
                          CausalLayerCache* cache) {
  if (z.rows() != a.d() || layer.g1.d() != a.d() || layer.g2.d() != a.d())
    throw std::invalid_argument("causal_reconstruct dimension mismatch");
  if (!z.allFinite()) throw std::invalid_argument("causal_reconstruct input must be finite");
  Matrix embedded = layer.g1.forward(z, cache ? &cache->g1 : nullptr);
  Matrix mixed = a.weights().transpose() * embedded;
  Matrix out = layer.g2.forward(mixed, cache ? &cache->g2 : nullptr);
  if (cache) {
    cache->embedded = std::move(embedded);
    cache->mixed = std::move(mixed);
    cache->output = out;
  }
  return out;
}

Vector causal_reconstruct(const CausalLayerGAE& layer, const WeightedAdjacency& a, const Vector& z) {
  if (z.size() != a.d()) throw std::invalid_argument("latent length must equal node count");
  return causal_reconstruct(layer, a, Matrix(z)).col(0);
}

double lz_loss(const CausalLayerGAE& layer, const WeightedAdjacency& a, const Matrix& z_batch) {
  if (z_batch.rows() == 0) throw std::invalid_argument("lz_loss needs a nonempty batch");
  if (z_batch.cols() != a.d()) throw std::invalid_argument("lz_loss batch must be N x d");
  const Matrix z = z_batch.transpose();
  return (z - causal_reconstruct(layer, a, z)).squaredNorm();
}

Matrix noise_to_latent_backward(const NoiseToLatent& ntl, const WeightedAdjacency& a,
                                const NoiseToLatentCache& cache, const Matrix& dz, NoiseToLatent* grad,
                                Matrix* grad_adjacency, bool want_eps_grad) {
  const Matrix dsolved = ntl.f4.backward(dz, cache.f4, grad ? &grad->f4 : nullptr, true);
  const Matrix system = Matrix::Identity(a.d(), a.d()) - a.weights().transpose();
  // d/d(base) = (I - A^T)^-T d/d(solved).
  const Matrix dbase = system.transpose().partialPivLu().solve(dsolved);
  if (grad_adjacency) *grad_adjacency += cache.solved * dbase.transpose();
  if (!grad && !want_eps_grad) return Matrix();
  return ntl.f3.backward(dbase, cache.f3, grad ? &grad->f3 : nullptr, want_eps_grad);
}

Matrix causal_reconstruct_backward(const CausalLayerGAE& layer, const WeightedAdjacency& a,
                                   const CausalLayerCache& cache, const Matrix& dout, CausalLayerGAE* grad,
                                   Matrix* grad_adjacency) {
  const Matrix dmixed = layer.g2.backward(dout, cache.g2, grad ? &grad->g2 : nullptr, true);
  if (grad_adjacency) *grad_adjacency += cache.embedded * dmixed.transpose();
  const Matrix dembedded = a.weights() * dmixed;
  return layer.g1.backward(dembedded, cache.g1, grad ? &grad->g1 : nullptr, true);
}

}  // namespace gcvamd
