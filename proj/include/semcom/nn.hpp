#pragma once

// Minimal dense-network toolkit with hand-written backward passes.
// Matrices are feature x batch: one column per sample.

#include <Eigen/Core>

#include <string>
#include <vector>

#include "semcom/rng.hpp"

namespace semcom::nn {

using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  // Adam moments, lazily sized.
  Matrix m;
  Matrix v;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}
};

using ParamList = std::vector<Param*>;

std::size_t parameter_count(const ParamList& params);

enum class Activation { Identity, Silu, Sigmoid, Tanh, Relu };

Matrix activate(Activation act, const Matrix& pre);
/// dL/dpre given dL/dpost.
Matrix activation_backward(Activation act, const Matrix& pre, const Matrix& dpost);

class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, int in, int out, CounterRng& rng);

  int in() const noexcept { return static_cast<int>(weight_.value.cols()); }
  int out() const noexcept { return static_cast<int>(weight_.value.rows()); }

  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy);
  /// Gradient w.r.t. the input only; parameters untouched.
  Matrix input_grad(const Matrix& dy) const;

  Param& weight() noexcept { return weight_; }
  Param& bias() noexcept { return bias_; }
  const Param& weight() const noexcept { return weight_; }
  ParamList params() { return {&weight_, &bias_}; }

 private:
  Param weight_;
  Param bias_;
};

/// Stack of Dense layers; `hidden` after every layer but the last, `output` after the last.
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  Mlp(const std::string& name, std::vector<int> widths, Activation hidden, Activation output,
      CounterRng& rng);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
  Matrix input_grad(const Matrix& dy, const Cache& cache) const;

  int in() const noexcept { return layers_.front().in(); }
  int out() const noexcept { return layers_.back().out(); }
  std::size_t depth() const noexcept { return layers_.size(); }
  ParamList params();
  std::size_t parameter_count() const;
  const std::vector<int>& widths() const noexcept { return widths_; }

 private:
  std::vector<int> widths_;
  std::vector<Dense> layers_;
  Activation hidden_ = Activation::Silu;
  Activation output_ = Activation::Identity;
};

struct AdamOptions {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  /// Global gradient-norm clip; <= 0 disables.
  float clip_norm = 0.0f;
};

class Adam {
 public:
  Adam(ParamList params, AdamOptions options);

  void zero_grad();
  /// Applies one update and clears gradients.
  void step();
  void set_learning_rate(float lr) noexcept { options_.learning_rate = lr; }
  float learning_rate() const noexcept { return options_.learning_rate; }
  long steps() const noexcept { return step_; }

 private:
  ParamList params_;
  AdamOptions options_;
  long step_ = 0;
};

/// Sinusoidal embedding of a scalar position, `dim` even.
Vector sinusoidal_embedding(float position, int dim, float max_period = 1000.0f);

}  // namespace semcom::nn
