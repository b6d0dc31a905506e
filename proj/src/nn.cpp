#include "semcom/nn.hpp"

#include <cmath>

namespace semcom::nn {

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const Param* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

Matrix activate(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::Identity: return pre;
    case Activation::Silu: return pre.unaryExpr([](float v) { return v / (1.0f + std::exp(-v)); });
    case Activation::Sigmoid: return pre.unaryExpr([](float v) { return 1.0f / (1.0f + std::exp(-v)); });
    case Activation::Tanh: return pre.array().tanh().matrix();
    case Activation::Relu: return pre.cwiseMax(0.0f);
  }
  return pre;
}

Matrix activation_backward(Activation act, const Matrix& pre, const Matrix& dpost) {
  switch (act) {
    case Activation::Identity: return dpost;
    case Activation::Silu:
      return dpost.binaryExpr(pre, [](float g, float v) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        return g * s * (1.0f + v * (1.0f - s));
      });
    case Activation::Sigmoid:
      return dpost.binaryExpr(pre, [](float g, float v) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        return g * s * (1.0f - s);
      });
    case Activation::Tanh:
      return dpost.binaryExpr(pre, [](float g, float v) {
        const float t = std::tanh(v);
        return g * (1.0f - t * t);
      });
    case Activation::Relu:
      return dpost.binaryExpr(pre, [](float g, float v) { return v > 0.0f ? g : 0.0f; });
  }
  return dpost;
}

Dense::Dense(const std::string& name, int in, int out, CounterRng& rng)
    : weight_(name + ".weight", out, in), bias_(name + ".bias", out, 1) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  for (Eigen::Index i = 0; i < weight_.value.size(); ++i) {
    weight_.value.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
  for (Eigen::Index i = 0; i < bias_.value.size(); ++i) {
    bias_.value.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
}

Matrix Dense::forward(const Matrix& x) const {
  Matrix y = weight_.value * x;
  y.colwise() += bias_.value.col(0);
  return y;
}

Matrix Dense::backward(const Matrix& x, const Matrix& dy) {
  weight_.grad.noalias() += dy * x.transpose();
  bias_.grad.col(0) += dy.rowwise().sum();
  return weight_.value.transpose() * dy;
}

Matrix Dense::input_grad(const Matrix& dy) const { return weight_.value.transpose() * dy; }

Mlp::Mlp(const std::string& name, std::vector<int> widths, Activation hidden, Activation output,
         CounterRng& rng)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), widths_[i], widths_[i + 1], rng);
  }
}

Matrix Mlp::forward(const Matrix& x, Cache* cache) const {
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Matrix pre = layers_[i].forward(h);
    const Activation act = i + 1 == layers_.size() ? output_ : hidden_;
    Matrix post = activate(act, pre);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(std::move(pre));
    }
    h = std::move(post);
  }
  return h;
}

Matrix Mlp::backward(const Matrix& dy, const Cache& cache) {
  Matrix g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Activation act = i + 1 == layers_.size() ? output_ : hidden_;
    g = activation_backward(act, cache.pre[i], g);
    g = layers_[i].backward(cache.inputs[i], g);
  }
  return g;
}

Matrix Mlp::input_grad(const Matrix& dy, const Cache& cache) const {
  Matrix g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Activation act = i + 1 == layers_.size() ? output_ : hidden_;
    g = activation_backward(act, cache.pre[i], g);
    g = layers_[i].input_grad(g);
  }
  return g;
}

ParamList Mlp::params() {
  ParamList out;
  for (auto& layer : layers_) {
    for (Param* p : layer.params()) out.push_back(p);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.in() + 1) * layer.out();
  return n;
}

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (Param* p : params_) {
    p->m = Matrix::Zero(p->value.rows(), p->value.cols());
    p->v = Matrix::Zero(p->value.rows(), p->value.cols());
    p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->grad.setZero();
}

void Adam::step() {
  ++step_;
  float scale = 1.0f;
  if (options_.clip_norm > 0.0f) {
    double sq = 0.0;
    for (const Param* p : params_) sq += static_cast<double>(p->grad.squaredNorm());
    const double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) scale = static_cast<float>(options_.clip_norm / norm);
  }
  const float b1 = options_.beta1;
  const float b2 = options_.beta2;
  const float bc1 = 1.0f - std::pow(b1, static_cast<float>(step_));
  const float bc2 = 1.0f - std::pow(b2, static_cast<float>(step_));
  const float lr = options_.learning_rate;
  const float eps = options_.epsilon;
  for (Param* p : params_) {
    const auto g = (p->grad.array() * scale).eval();
    p->m.array() = b1 * p->m.array() + (1.0f - b1) * g;
    p->v.array() = b2 * p->v.array() + (1.0f - b2) * g.square();
    p->value.array() -= lr * (p->m.array() / bc1) / ((p->v.array() / bc2).sqrt() + eps);
    p->grad.setZero();
  }
}

Vector sinusoidal_embedding(float position, int dim, float max_period) {
  Vector out(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const float freq = std::exp(-std::log(max_period) * static_cast<float>(i) / static_cast<float>(half));
    out[i] = std::sin(position * freq);
    out[half + i] = std::cos(position * freq);
  }
  return out;
}

}  // namespace semcom::nn
