#pragma once

// Minimal feed-forward building blocks with hand-written backpropagation.
//
// Batches are column-major Eigen matrices with one sample per column. Image
// tensors are flattened per sample in height-width-channel order, so a
// convolution over a whole batch is a single im2col + GEMM.

#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "gcvamd/rng.hpp"

namespace gcvamd::nn {

using Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kLinear, kElu, kSilu, kSigmoid };
enum class Mode { kInference, kTraining };

/// Which optimizer group a parameter belongs to.
enum class ParamGroup { kEncoder, kDecoder, kNoiseToLatent, kCausalLayer, kAdjacency, kDownstream };

const char* to_string(ParamGroup group);

/// Non-owning view of one named parameter array.
struct ParamView {
  std::string name;
  double* data = nullptr;
  Index rows = 0;
  Index cols = 0;
  ParamGroup group = ParamGroup::kDownstream;
  bool trainable = true;

  Index size() const { return rows * cols; }
  Eigen::Map<Matrix> map() const { return {data, rows, cols}; }
};

struct Shape3 {
  int h = 0;
  int w = 0;
  int c = 0;
  Index size() const { return static_cast<Index>(h) * w * c; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct Dense {
  int in = 0;
  int out = 0;
  Activation act = Activation::kLinear;
  Matrix weight;  // out x in
  Vector bias;
  Matrix mask;  // empty, or out x in with entries in {0, 1}

  Dense() = default;
  Dense(int in_width, int out_width, Activation activation);
};

struct Conv2D {
  Shape3 in;
  Shape3 out;
  int kernel = 0;
  int stride = 1;
  Activation act = Activation::kLinear;
  Matrix weight;  // filters x (kernel * kernel * in.c), patch order (ky, kx, c)
  Vector bias;

  Conv2D() = default;
  /// Valid padding. Throws std::invalid_argument when the kernel does not fit.
  Conv2D(Shape3 input, int filters, int kernel_size, int stride_size, Activation activation);
  Index patch_size() const { return static_cast<Index>(kernel) * kernel * in.c; }
};

struct ConvTranspose2D {
  Shape3 in;
  Shape3 out;
  int kernel = 0;
  int stride = 1;
  int output_padding = 0;
  Activation act = Activation::kLinear;
  Matrix weight;  // in.c x (kernel * kernel * filters), column order (ky, kx, filter)
  Vector bias;

  ConvTranspose2D() = default;
  /// Output size is (n - 1) * stride + kernel + output_padding, with
  /// 0 <= output_padding < stride.
  ConvTranspose2D(Shape3 input, int filters, int kernel_size, int stride_size, int padding,
                  Activation activation);
  Index column_size() const { return static_cast<Index>(kernel) * kernel * out.c; }
};

struct BatchNorm {
  int width = 0;
  double momentum = 0.99;
  double epsilon = 1e-3;
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;

  BatchNorm() = default;
  explicit BatchNorm(int features);
};

using Layer = std::variant<Dense, Conv2D, ConvTranspose2D, BatchNorm>;

struct StackCache {
  Mode mode = Mode::kInference;
  std::vector<Matrix> inputs;  // input of each layer
  std::vector<Matrix> pre;     // pre-activation (normalized input for batchnorm)
  std::vector<Vector> batch_mean;
  std::vector<Vector> batch_inv_std;
  std::vector<Vector> batch_var;
  Matrix output;
};

/// An ordered sequence of layers.
class Stack {
 public:
  std::vector<Layer> layers;

  Index input_width() const;
  Index output_width() const;

  Matrix forward(const Matrix& x, StackCache* cache = nullptr, Mode mode = Mode::kInference) const;

  /// Backpropagates d(loss)/d(output). Parameter gradients are accumulated
  /// into `grad` (same architecture) when it is non-null; d(loss)/d(input)
  /// is returned when `want_input_grad` is set, otherwise an empty matrix.
  Matrix backward(const Matrix& dout, const StackCache& cache, Stack* grad, bool want_input_grad) const;

  void collect_params(const std::string& prefix, ParamGroup group, std::vector<ParamView>& out);
  Stack zeros_like() const;
  /// Re-zeroes masked weights of every masked dense layer.
  void apply_masks();
  /// Folds the batch statistics recorded in a training-mode cache into the
  /// running averages.
  void update_batchnorm_stats(const StackCache& cache);
  void init_glorot(Engine& engine);
};

void activate(Activation act, const Matrix& pre, Matrix& out);
/// grad <- grad o act'(pre), with `out` the activation output.
void activation_backward(Activation act, const Matrix& pre, const Matrix& out, Matrix& grad);

double elu(double x);
double silu(double x);
double sigmoid(double x);

}  // namespace gcvamd::nn
