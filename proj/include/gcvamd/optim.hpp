#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gcvamd/nn.hpp"

namespace gcvamd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

/// First and second moment estimates, one entry per parameter array.
struct AdamState {
  std::vector<nn::Matrix> m;
  std::vector<nn::Matrix> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update. `grads` must list arrays of the same
/// shapes in the same order as `params`; non-trainable entries are skipped.
void adam_step(const std::vector<nn::ParamView>& params, const std::vector<nn::ParamView>& grads, AdamState& state,
               const AdamConfig& config);

/// Plain gradient descent with a learning rate chosen per parameter array.
/// A rate of zero leaves the array untouched.
void sgd_step(const std::vector<nn::ParamView>& params, const std::vector<nn::ParamView>& grads,
              const std::function<double(const nn::ParamView&)>& learning_rate);

}  // namespace gcvamd
