#include "gcvamd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gcvamd::nn {

namespace {

// Upper bound on im2col buffer elements; batches are processed in sample
// chunks so the full 224 x 224 geometry stays within memory.
constexpr Index kMaxPatchElements = Index{1} << 22;

Index chunk_samples(Index per_sample) { return std::max<Index>(1, kMaxPatchElements / per_sample); }

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

void fill_uniform(Matrix& m, double limit, Engine& engine) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(engine);
}

// --- dense ---------------------------------------------------------------

Matrix dense_pre(const Dense& layer, const Matrix& x) {
  Matrix pre = layer.weight * x;
  pre.colwise() += layer.bias;
  return pre;
}

void dense_backward(const Dense& layer, const Matrix& dpre, const Matrix& x, Dense* grad, Matrix* dx) {
  if (grad) {
    if (layer.mask.size() == 0) {
      grad->weight.noalias() += dpre * x.transpose();
    } else {
      grad->weight += (dpre * x.transpose()).cwiseProduct(layer.mask);
    }
    grad->bias += dpre.rowwise().sum();
  }
  if (dx) dx->noalias() = layer.weight.transpose() * dpre;
}

// --- convolution -----------------------------------------------------------

void im2col(const Conv2D& layer, const Matrix& x, Index first, Index count, Matrix& patches) {
  const Index hw_out = static_cast<Index>(layer.out.h) * layer.out.w;
  const Index k = layer.patch_size();
  const Index row_span = static_cast<Index>(layer.kernel) * layer.in.c;
  patches.resize(k, hw_out * count);
  for (Index n = 0; n < count; ++n) {
    const double* src = x.data() + (first + n) * layer.in.size();
    double* dst_sample = patches.data() + n * hw_out * k;
    for (int oy = 0; oy < layer.out.h; ++oy) {
      for (int ox = 0; ox < layer.out.w; ++ox) {
        double* dst = dst_sample + (static_cast<Index>(oy) * layer.out.w + ox) * k;
        for (int ky = 0; ky < layer.kernel; ++ky) {
          const double* row =
              src + (static_cast<Index>(oy * layer.stride + ky) * layer.in.w + ox * layer.stride) * layer.in.c;
          std::copy_n(row, row_span, dst + ky * row_span);
        }
      }
    }
  }
}

void col2im_add(const Conv2D& layer, const Matrix& dpatches, Index first, Index count, Matrix& dx) {
  const Index hw_out = static_cast<Index>(layer.out.h) * layer.out.w;
  const Index k = layer.patch_size();
  const Index row_span = static_cast<Index>(layer.kernel) * layer.in.c;
  for (Index n = 0; n < count; ++n) {
    double* dst_sample = dx.data() + (first + n) * layer.in.size();
    const double* src_sample = dpatches.data() + n * hw_out * k;
    for (int oy = 0; oy < layer.out.h; ++oy) {
      for (int ox = 0; ox < layer.out.w; ++ox) {
        const double* src = src_sample + (static_cast<Index>(oy) * layer.out.w + ox) * k;
        for (int ky = 0; ky < layer.kernel; ++ky) {
          double* row = dst_sample +
                        (static_cast<Index>(oy * layer.stride + ky) * layer.in.w + ox * layer.stride) * layer.in.c;
          const double* s = src + ky * row_span;
          for (Index t = 0; t < row_span; ++t) row[t] += s[t];
        }
      }
    }
  }
}

Matrix conv_pre(const Conv2D& layer, const Matrix& x) {
  const Index n = x.cols();
  const Index hw_out = static_cast<Index>(layer.out.h) * layer.out.w;
  const Index filters = layer.out.c;
  Matrix y(layer.out.size(), n);
  Matrix patches;
  const Index chunk = chunk_samples(layer.patch_size() * hw_out);
  for (Index first = 0; first < n; first += chunk) {
    const Index count = std::min(chunk, n - first);
    im2col(layer, x, first, count, patches);
    Eigen::Map<Matrix> out(y.data() + first * layer.out.size(), filters, hw_out * count);
    out.noalias() = layer.weight * patches;
    out.colwise() += layer.bias;
  }
  return y;
}

void conv_backward(const Conv2D& layer, const Matrix& dpre, const Matrix& x, Conv2D* grad, Matrix* dx) {
  const Index n = x.cols();
  const Index hw_out = static_cast<Index>(layer.out.h) * layer.out.w;
  const Index filters = layer.out.c;
  if (dx) dx->setZero(layer.in.size(), n);
  Matrix patches;
  Matrix dpatches;
  const Index chunk = chunk_samples(layer.patch_size() * hw_out);
  for (Index first = 0; first < n; first += chunk) {
    const Index count = std::min(chunk, n - first);
    Eigen::Map<const Matrix> dy(dpre.data() + first * layer.out.size(), filters, hw_out * count);
    if (grad) {
      im2col(layer, x, first, count, patches);
      grad->weight.noalias() += dy * patches.transpose();
      grad->bias += dy.rowwise().sum();
    }
    if (dx) {
      dpatches.noalias() = layer.weight.transpose() * dy;
      col2im_add(layer, dpatches, first, count, *dx);
    }
  }
}

// --- transposed convolution --------------------------------------------------

Matrix convt_pre(const ConvTranspose2D& layer, const Matrix& x) {
  const Index n = x.cols();
  const Index hw_in = static_cast<Index>(layer.in.h) * layer.in.w;
  const Index k = layer.column_size();
  const Index row_span = static_cast<Index>(layer.kernel) * layer.out.c;
  Matrix y(layer.out.size(), n);
  {
    Eigen::Map<Matrix> all(y.data(), layer.out.c, y.size() / layer.out.c);
    all.colwise() = layer.bias;
  }
  Matrix cols;
  const Index chunk = chunk_samples(k * hw_in);
  for (Index first = 0; first < n; first += chunk) {
    const Index count = std::min(chunk, n - first);
    Eigen::Map<const Matrix> in(x.data() + first * layer.in.size(), layer.in.c, hw_in * count);
    cols.noalias() = layer.weight.transpose() * in;
    for (Index s = 0; s < count; ++s) {
      double* dst_sample = y.data() + (first + s) * layer.out.size();
      const double* src_sample = cols.data() + s * hw_in * k;
      for (int iy = 0; iy < layer.in.h; ++iy) {
        for (int ix = 0; ix < layer.in.w; ++ix) {
          const double* src = src_sample + (static_cast<Index>(iy) * layer.in.w + ix) * k;
          for (int ky = 0; ky < layer.kernel; ++ky) {
            double* row = dst_sample + (static_cast<Index>(iy * layer.stride + ky) * layer.out.w +
                                        ix * layer.stride) * layer.out.c;
            const double* c = src + ky * row_span;
            for (Index t = 0; t < row_span; ++t) row[t] += c[t];
          }
        }
      }
    }
  }
  return y;
}

void convt_backward(const ConvTranspose2D& layer, const Matrix& dpre, const Matrix& x, ConvTranspose2D* grad,
                    Matrix* dx) {
  const Index n = x.cols();
  const Index hw_in = static_cast<Index>(layer.in.h) * layer.in.w;
  const Index k = layer.column_size();
  const Index row_span = static_cast<Index>(layer.kernel) * layer.out.c;
  if (dx) dx->resize(layer.in.size(), n);
  if (grad) {
    Eigen::Map<const Matrix> all(dpre.data(), layer.out.c, dpre.size() / layer.out.c);
    grad->bias += all.rowwise().sum();
  }
  Matrix dcols;
  const Index chunk = chunk_samples(k * hw_in);
  for (Index first = 0; first < n; first += chunk) {
    const Index count = std::min(chunk, n - first);
    dcols.resize(k, hw_in * count);
    for (Index s = 0; s < count; ++s) {
      const double* src_sample = dpre.data() + (first + s) * layer.out.size();
      double* dst_sample = dcols.data() + s * hw_in * k;
      for (int iy = 0; iy < layer.in.h; ++iy) {
        for (int ix = 0; ix < layer.in.w; ++ix) {
          double* dst = dst_sample + (static_cast<Index>(iy) * layer.in.w + ix) * k;
          for (int ky = 0; ky < layer.kernel; ++ky) {
            const double* row = src_sample + (static_cast<Index>(iy * layer.stride + ky) * layer.out.w +
                                              ix * layer.stride) * layer.out.c;
            std::copy_n(row, row_span, dst + ky * row_span);
          }
        }
      }
    }
    Eigen::Map<const Matrix> in(x.data() + first * layer.in.size(), layer.in.c, hw_in * count);
    if (grad) grad->weight.noalias() += in * dcols.transpose();
    if (dx) {
      Eigen::Map<Matrix> out(dx->data() + first * layer.in.size(), layer.in.c, hw_in * count);
      out.noalias() = layer.weight * dcols;
    }
  }
}

// --- batch normalization -------------------------------------------------

Matrix batchnorm_forward(const BatchNorm& layer, const Matrix& x, Mode mode, StackCache* cache) {
  Vector mean;
  Vector var;
  if (mode == Mode::kTraining) {
    mean = x.rowwise().mean();
    var = (x.colwise() - mean).array().square().rowwise().mean();
  } else {
    mean = layer.running_mean;
    var = layer.running_var;
  }
  const Vector inv_std = (var.array() + layer.epsilon).rsqrt();
  Matrix xhat = (x.colwise() - mean).array().colwise() * inv_std.array();
  Matrix y = (xhat.array().colwise() * layer.gamma.array()).colwise() + layer.beta.array();
  if (cache) {
    cache->pre.push_back(std::move(xhat));
    cache->batch_mean.push_back(mean);
    cache->batch_var.push_back(var);
    cache->batch_inv_std.push_back(inv_std);
  }
  return y;
}

void batchnorm_backward(const BatchNorm& layer, const Matrix& dy, const Matrix& xhat, const Vector& inv_std,
                        Mode mode, BatchNorm* grad, Matrix* dx) {
  if (grad) {
    grad->gamma += dy.cwiseProduct(xhat).rowwise().sum();
    grad->beta += dy.rowwise().sum();
  }
  if (!dx) return;
  const Matrix dxhat = dy.array().colwise() * layer.gamma.array();
  if (mode == Mode::kTraining) {
    const auto n = static_cast<double>(dy.cols());
    const Vector sum_dxhat = dxhat.rowwise().sum();
    const Vector sum_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().sum();
    Matrix centered = (n * dxhat).colwise() - sum_dxhat;
    centered.array() -= xhat.array().colwise() * sum_dxhat_xhat.array();
    *dx = (centered.array().colwise() * (inv_std.array() / n)).matrix();
  } else {
    *dx = (dxhat.array().colwise() * inv_std.array()).matrix();
  }
}

Activation activation_of(const Layer& layer) {
  return std::visit(Overloaded{[](const BatchNorm&) { return Activation::kLinear; },
                               [](const auto& l) { return l.act; }},
                    layer);
}

}  // namespace

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kDecoder: return "decoder";
    case ParamGroup::kNoiseToLatent: return "noise_to_latent";
    case ParamGroup::kCausalLayer: return "causal_layer";
    case ParamGroup::kAdjacency: return "adjacency";
    case ParamGroup::kDownstream: return "downstream";
  }
  return "unknown";
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }

void activate(Activation act, const Matrix& pre, Matrix& out) {
  switch (act) {
    case Activation::kLinear: out = pre; return;
    case Activation::kElu: out = pre.unaryExpr([](double v) { return elu(v); }); return;
    case Activation::kSilu: out = pre.unaryExpr([](double v) { return silu(v); }); return;
    case Activation::kSigmoid: out = pre.unaryExpr([](double v) { return sigmoid(v); }); return;
  }
}

void activation_backward(Activation act, const Matrix& pre, const Matrix& out, Matrix& grad) {
  switch (act) {
    case Activation::kLinear: return;
    case Activation::kElu:
      grad = grad.binaryExpr(pre, [](double g, double p) { return p > 0.0 ? g : g * std::exp(p); });
      return;
    case Activation::kSilu:
      grad = grad.binaryExpr(pre, [](double g, double p) {
        const double s = sigmoid(p);
        return g * s * (1.0 + p * (1.0 - s));
      });
      return;
    case Activation::kSigmoid:
      grad = grad.binaryExpr(out, [](double g, double y) { return g * y * (1.0 - y); });
      return;
  }
}

Dense::Dense(int in_width, int out_width, Activation activation)
    : in(in_width), out(out_width), act(activation) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("dense layer widths must be positive");
  weight = Matrix::Zero(out, in);
  bias = Vector::Zero(out);
}

Conv2D::Conv2D(Shape3 input, int filters, int kernel_size, int stride_size, Activation activation)
    : in(input), kernel(kernel_size), stride(stride_size), act(activation) {
  if (filters <= 0 || kernel <= 0 || stride <= 0 || in.c <= 0)
    throw std::invalid_argument("convolution needs positive filters, kernel, stride and channels");
  if (in.h < kernel || in.w < kernel)
    throw std::invalid_argument("convolution kernel " + std::to_string(kernel) + " does not fit input " +
                                std::to_string(in.h) + "x" + std::to_string(in.w));
  out = {(in.h - kernel) / stride + 1, (in.w - kernel) / stride + 1, filters};
  weight = Matrix::Zero(filters, patch_size());
  bias = Vector::Zero(filters);
}

ConvTranspose2D::ConvTranspose2D(Shape3 input, int filters, int kernel_size, int stride_size, int padding,
                                 Activation activation)
    : in(input), kernel(kernel_size), stride(stride_size), output_padding(padding), act(activation) {
  if (filters <= 0 || kernel <= 0 || stride <= 0 || in.c <= 0 || in.h <= 0 || in.w <= 0)
    throw std::invalid_argument("transposed convolution needs positive sizes");
  if (output_padding < 0 || output_padding >= stride)
    throw std::invalid_argument("output padding must lie in [0, stride)");
  out = {(in.h - 1) * stride + kernel + output_padding, (in.w - 1) * stride + kernel + output_padding, filters};
  weight = Matrix::Zero(in.c, column_size());
  bias = Vector::Zero(filters);
}

BatchNorm::BatchNorm(int features) : width(features) {
  if (features <= 0) throw std::invalid_argument("batchnorm width must be positive");
  gamma = Vector::Ones(features);
  beta = Vector::Zero(features);
  running_mean = Vector::Zero(features);
  running_var = Vector::Ones(features);
}

Index Stack::input_width() const {
  if (layers.empty()) return 0;
  return std::visit(Overloaded{[](const Dense& l) -> Index { return l.in; },
                               [](const Conv2D& l) -> Index { return l.in.size(); },
                               [](const ConvTranspose2D& l) -> Index { return l.in.size(); },
                               [](const BatchNorm& l) -> Index { return l.width; }},
                    layers.front());
}

Index Stack::output_width() const {
  if (layers.empty()) return 0;
  return std::visit(Overloaded{[](const Dense& l) -> Index { return l.out; },
                               [](const Conv2D& l) -> Index { return l.out.size(); },
                               [](const ConvTranspose2D& l) -> Index { return l.out.size(); },
                               [](const BatchNorm& l) -> Index { return l.width; }},
                    layers.back());
}

Matrix Stack::forward(const Matrix& x, StackCache* cache, Mode mode) const {
  if (x.rows() != input_width())
    throw std::invalid_argument("stack input has " + std::to_string(x.rows()) + " rows, expected " +
                                std::to_string(input_width()));
  if (cache) {
    *cache = StackCache{};
    cache->mode = mode;
  }
  Matrix current = x;
  for (const Layer& layer : layers) {
    Matrix out;
    if (const auto* bn = std::get_if<BatchNorm>(&layer)) {
      if (cache) cache->inputs.push_back(current);
      out = batchnorm_forward(*bn, current, mode, cache);
    } else {
      Matrix pre = std::visit(Overloaded{[&](const Dense& l) { return dense_pre(l, current); },
                                         [&](const Conv2D& l) { return conv_pre(l, current); },
                                         [&](const ConvTranspose2D& l) { return convt_pre(l, current); },
                                         [](const BatchNorm&) { return Matrix(); }},
                              layer);
      activate(activation_of(layer), pre, out);
      if (cache) {
        cache->inputs.push_back(std::move(current));
        cache->pre.push_back(std::move(pre));
        cache->batch_mean.emplace_back();
        cache->batch_var.emplace_back();
        cache->batch_inv_std.emplace_back();
      }
    }
    current = std::move(out);
  }
  if (cache) cache->output = current;
  return current;
}

Matrix Stack::backward(const Matrix& dout, const StackCache& cache, Stack* grad, bool want_input_grad) const {
  Matrix delta = dout;
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const Layer& layer = layers[idx];
    const Matrix& input = cache.inputs[idx];
    const Matrix& output = idx + 1 < layers.size() ? cache.inputs[idx + 1] : cache.output;
    const bool need_dx = want_input_grad || idx > 0;
    Matrix dx;
    Layer* grad_layer = grad ? &grad->layers[idx] : nullptr;
    if (const auto* bn = std::get_if<BatchNorm>(&layer)) {
      batchnorm_backward(*bn, delta, cache.pre[idx], cache.batch_inv_std[idx], cache.mode,
                         grad_layer ? &std::get<BatchNorm>(*grad_layer) : nullptr, need_dx ? &dx : nullptr);
    } else {
      activation_backward(activation_of(layer), cache.pre[idx], output, delta);
      std::visit(Overloaded{[&](const Dense& l) {
                              dense_backward(l, delta, input, grad_layer ? &std::get<Dense>(*grad_layer) : nullptr,
                                             need_dx ? &dx : nullptr);
                            },
                            [&](const Conv2D& l) {
                              conv_backward(l, delta, input, grad_layer ? &std::get<Conv2D>(*grad_layer) : nullptr,
                                            need_dx ? &dx : nullptr);
                            },
                            [&](const ConvTranspose2D& l) {
                              convt_backward(l, delta, input,
                                             grad_layer ? &std::get<ConvTranspose2D>(*grad_layer) : nullptr,
                                             need_dx ? &dx : nullptr);
                            },
                            [](const BatchNorm&) {}},
                 layer);
    }
    if (!need_dx) return Matrix();
    delta = std::move(dx);
  }
  return delta;
}

void Stack::collect_params(const std::string& prefix, ParamGroup group, std::vector<ParamView>& out) {
  for (std::size_t idx = 0; idx < layers.size(); ++idx) {
    const std::string base = prefix + "/" + std::to_string(idx) + "/";
    std::visit(Overloaded{[&](BatchNorm& l) {
                            out.push_back({base + "gamma", l.gamma.data(), l.gamma.size(), 1, group, true});
                            out.push_back({base + "beta", l.beta.data(), l.beta.size(), 1, group, true});
                            out.push_back({base + "running_mean", l.running_mean.data(), l.running_mean.size(), 1,
                                           group, false});
                            out.push_back({base + "running_var", l.running_var.data(), l.running_var.size(), 1,
                                           group, false});
                          },
                          [&](auto& l) {
                            out.push_back({base + "weight", l.weight.data(), l.weight.rows(), l.weight.cols(), group,
                                           true});
                            out.push_back({base + "bias", l.bias.data(), l.bias.size(), 1, group, true});
                          }},
               layers[idx]);
  }
}

Stack Stack::zeros_like() const {
  Stack copy = *this;
  for (Layer& layer : copy.layers) {
    std::visit(Overloaded{[](BatchNorm& l) {
                            l.gamma.setZero();
                            l.beta.setZero();
                            l.running_mean.setZero();
                            l.running_var.setZero();
                          },
                          [](auto& l) {
                            l.weight.setZero();
                            l.bias.setZero();
                          }},
               layer);
  }
  return copy;
}

void Stack::apply_masks() {
  for (Layer& layer : layers) {
    if (auto* dense = std::get_if<Dense>(&layer); dense && dense->mask.size() != 0)
      dense->weight = dense->weight.cwiseProduct(dense->mask);
  }
}

void Stack::update_batchnorm_stats(const StackCache& cache) {
  if (cache.mode != Mode::kTraining) return;
  for (std::size_t idx = 0; idx < layers.size(); ++idx) {
    if (auto* bn = std::get_if<BatchNorm>(&layers[idx])) {
      bn->running_mean = bn->momentum * bn->running_mean + (1.0 - bn->momentum) * cache.batch_mean[idx];
      bn->running_var = bn->momentum * bn->running_var + (1.0 - bn->momentum) * cache.batch_var[idx];
    }
  }
}

void Stack::init_glorot(Engine& engine) {
  for (Layer& layer : layers) {
    std::visit(Overloaded{[&](Dense& l) { fill_uniform(l.weight, std::sqrt(6.0 / (l.in + l.out)), engine); },
                          [&](Conv2D& l) {
                            const double area = static_cast<double>(l.kernel) * l.kernel;
                            fill_uniform(l.weight, std::sqrt(6.0 / (area * (l.in.c + l.out.c))), engine);
                          },
                          [&](ConvTranspose2D& l) {
                            const double area = static_cast<double>(l.kernel) * l.kernel;
                            fill_uniform(l.weight, std::sqrt(6.0 / (area * (l.in.c + l.out.c))), engine);
                          },
                          [](BatchNorm&) {}},
               layer);
  }
  apply_masks();
}

}  // namespace gcvamd::nn
