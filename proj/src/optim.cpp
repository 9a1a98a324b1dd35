#include "gcvamd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gcvamd {

namespace {

void check_pairing(const std::vector<nn::ParamView>& params, const std::vector<nn::ParamView>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("parameter and gradient lists differ in length");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].rows != grads[i].rows || params[i].cols != grads[i].cols)
      throw std::invalid_argument("gradient shape mismatch for " + params[i].name);
}

}  // namespace

void adam_step(const std::vector<nn::ParamView>& params, const std::vector<nn::ParamView>& grads, AdamState& state,
               const AdamConfig& config) {
  check_pairing(params, grads);
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(nn::Matrix::Zero(p.rows, p.cols));
      state.v.push_back(nn::Matrix::Zero(p.rows, p.cols));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("Adam state does not match parameter list");
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    const auto g = grads[i].map().array();
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = config.beta1 * m.array() + (1.0 - config.beta1) * g;
    v = config.beta2 * v.array() + (1.0 - config.beta2) * g.square();
    params[i].map().array() -= config.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.eps_hat);
  }
}

void sgd_step(const std::vector<nn::ParamView>& params, const std::vector<nn::ParamView>& grads,
              const std::function<double(const nn::ParamView&)>& learning_rate) {
  check_pairing(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    const double lr = learning_rate(params[i]);
    if (lr == 0.0) continue;
    params[i].map() -= lr * grads[i].map();
  }
}

}  // namespace gcvamd
