#pragma once

// Minimal layer toolkit with hand-written backward passes. Activations are
// stored channels x time (column-major Eigen), so one column is one sample
// and a conv over time is a sum of shifted GEMMs.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "diffse/types.hpp"

namespace diffse::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct Tensor {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
};

/// Named parameters in declaration order.
template <typename S>
class ParamSet {
 public:
  int add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    tensors_.push_back({std::move(name), Mat<S>::Zero(rows, cols), Mat<S>::Zero(rows, cols)});
    return int(tensors_.size()) - 1;
  }
  Mat<S>& value(int i) { return tensors_[std::size_t(i)].value; }
  const Mat<S>& value(int i) const { return tensors_[std::size_t(i)].value; }
  Mat<S>& grad(int i) { return tensors_[std::size_t(i)].grad; }

  std::vector<Tensor<S>>& tensors() { return tensors_; }
  const std::vector<Tensor<S>>& tensors() const { return tensors_; }

  void zero_grad() {
    for (auto& t : tensors_) t.grad.setZero();
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += std::size_t(t.value.size());
    return n;
  }

  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (const auto& t : tensors_) {
      const int i = out.add(t.name, t.value.rows(), t.value.cols());
      out.value(i) = t.value.template cast<T>();
    }
    return out;
  }

  /// Copies values from a set with identical names and shapes.
  template <typename T>
  void assign_from(const ParamSet<T>& other) {
    if (other.tensors().size() != tensors_.size()) throw std::invalid_argument("parameter count mismatch");
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      const auto& src = other.tensors()[i];
      auto& dst = tensors_[i];
      if (src.name != dst.name || src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols()) {
        throw std::invalid_argument(fmt::format("parameter mismatch at '{}'", dst.name));
      }
      dst.value = src.value.template cast<S>();
    }
  }

 private:
  std::vector<Tensor<S>> tensors_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <typename S>
void init_uniform(Mat<S>& m, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = S(u(rng));
}

// ---- element-wise activations ----

template <typename S>
Mat<S> sigmoid(const Mat<S>& x) {
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}

template <typename S>
Mat<S> tanh(const Mat<S>& x) {
  return x.array().tanh().matrix();
}

template <typename S>
Mat<S> relu(const Mat<S>& x) {
  return x.array().max(S(0)).matrix();
}

template <typename S>
Mat<S> relu_backward(const Mat<S>& grad, const Mat<S>& pre) {
  return (pre.array() > S(0)).select(grad.array(), S(0)).matrix();
}

template <typename S>
Mat<S> silu(const Mat<S>& x) {
  return (x.array() * sigmoid<S>(x).array()).matrix();
}

template <typename S>
Mat<S> silu_backward(const Mat<S>& grad, const Mat<S>& pre) {
  const Mat<S> sg = sigmoid<S>(pre);
  return (grad.array() * (sg.array() * (S(1) + pre.array() * (S(1) - sg.array())))).matrix();
}

// ---- dense / pointwise layers (W: out x in, b: out x 1) ----

template <typename S>
Mat<S> affine(const Mat<S>& w, const Mat<S>& b, const Mat<S>& x) {
  Mat<S> y(w.rows(), x.cols());
  y.noalias() = w * x;
  y.colwise() += b.col(0);
  return y;
}

/// Accumulates dW, db and returns dX.
template <typename S>
Mat<S> affine_backward(const Mat<S>& w, const Mat<S>& x, const Mat<S>& dy, Mat<S>& dw, Mat<S>& db) {
  dw.noalias() += dy * x.transpose();
  db.col(0) += dy.rowwise().sum();
  Mat<S> dx(w.cols(), dy.cols());
  dx.noalias() = w.transpose() * dy;
  return dx;
}

// ---- dilated 1-D convolution, kernel 3, zero padding, same length ----
// Weight layout: out x (3*in), tap k occupies columns [k*in, (k+1)*in) and
// reads x[:, t + (k-1)*dilation].

template <typename S>
Mat<S> conv3_forward(const Mat<S>& w, const Mat<S>& b, const Mat<S>& x, int dilation) {
  const Eigen::Index in = x.rows(), len = x.cols();
  Mat<S> y(w.rows(), len);
  y.colwise() = b.col(0);
  for (int k = 0; k < 3; ++k) {
    const Eigen::Index off = Eigen::Index(k - 1) * dilation;
    const Eigen::Index n = len - std::abs(off);
    if (n <= 0) continue;
    const Eigen::Index dst = off < 0 ? -off : 0, src = off > 0 ? off : 0;
    y.middleCols(dst, n).noalias() += w.middleCols(k * in, in) * x.middleCols(src, n);
  }
  return y;
}

template <typename S>
Mat<S> conv3_backward(const Mat<S>& w, const Mat<S>& x, const Mat<S>& dy, int dilation, Mat<S>& dw, Mat<S>& db) {
  const Eigen::Index in = x.rows(), len = x.cols();
  db.col(0) += dy.rowwise().sum();
  Mat<S> dx = Mat<S>::Zero(in, len);
  for (int k = 0; k < 3; ++k) {
    const Eigen::Index off = Eigen::Index(k - 1) * dilation;
    const Eigen::Index n = len - std::abs(off);
    if (n <= 0) continue;
    const Eigen::Index dst = off < 0 ? -off : 0, src = off > 0 ? off : 0;
    dw.middleCols(k * in, in).noalias() += dy.middleCols(dst, n) * x.middleCols(src, n).transpose();
    dx.middleCols(src, n).noalias() += w.middleCols(k * in, in).transpose() * dy.middleCols(dst, n);
  }
  return dx;
}

/// Direct triple-loop convolution used as the reference in tests and benchmarks.
template <typename S>
Mat<S> conv3_forward_reference(const Mat<S>& w, const Mat<S>& b, const Mat<S>& x, int dilation) {
  const Eigen::Index in = x.rows(), len = x.cols(), out = w.rows();
  Mat<S> y(out, len);
  for (Eigen::Index t = 0; t < len; ++t) {
    for (Eigen::Index o = 0; o < out; ++o) {
      S acc = b(o, 0);
      for (int k = 0; k < 3; ++k) {
        const Eigen::Index src = t + Eigen::Index(k - 1) * dilation;
        if (src < 0 || src >= len) continue;
        for (Eigen::Index c = 0; c < in; ++c) acc += w(o, k * in + c) * x(c, src);
      }
      y(o, t) = acc;
    }
  }
  return y;
}

// ---- sinusoidal timestep embedding ----

template <typename S>
Mat<S> timestep_embedding(int t, int dim) {
  Mat<S> e(dim, 1);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    e(i, 0) = S(std::sin(double(t) * freq));
    e(half + i, 0) = S(std::cos(double(t) * freq));
  }
  return e;
}

// ---- optimizer ----

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
class Adam {
 public:
  Adam(const ParamSet<S>& params, AdamConfig config) : config_(config) {
    for (const auto& t : params.tensors()) {
      m_.push_back(Mat<S>::Zero(t.value.rows(), t.value.cols()));
      v_.push_back(Mat<S>::Zero(t.value.rows(), t.value.cols()));
    }
  }

  void step(ParamSet<S>& params) {
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, double(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, double(steps_));
    const S lr = S(config_.lr * std::sqrt(c2) / c1);
    const S b1 = S(config_.beta1), b2 = S(config_.beta2), eps = S(config_.eps * std::sqrt(c2));
    auto& ts = params.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      m_[i] = b1 * m_[i] + (S(1) - b1) * ts[i].grad;
      v_[i] = b2 * v_[i] + (S(1) - b2) * ts[i].grad.cwiseAbs2();
      ts[i].value.array() -= lr * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }

  long steps() const { return steps_; }

 private:
  AdamConfig config_;
  std::vector<Mat<S>> m_, v_;
  long steps_ = 0;
};

template <typename S>
bool all_finite(const ParamSet<S>& params) {
  for (const auto& t : params.tensors()) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

}  // namespace diffse::nn
