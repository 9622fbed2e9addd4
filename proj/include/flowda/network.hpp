#pragma once

// Periodic convolutional residual network used as the velocity body.
//
//   a_0     = conv_in(x)
//   a_{b+1} = a_b + conv_b(silu(a_b))        b = 0 .. depth-1
//   y       = conv_out(silu(a_depth))
//
// Activations are (channels x batch*points) column-major matrices; column
// index = sample * H * W + h * W + w. Convolutions wrap around both axes.
//
// Parameter layout per conv layer: weights as a row-major
// (out x taps*in) matrix where the column index is tap * in + in_channel and
// tap = a * kw + b enumerates kernel offsets (a - kh/2, b - kw/2), followed by
// `out` biases. Layers are stored in the order conv_in, conv_0..conv_{depth-1},
// conv_out.

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "flowda/error.hpp"

namespace flowda {

template <class Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

template <class Real>
using RowMajorMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class Real>
using ConstRowMajorMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvLayerShape {
  int in = 1;
  int out = 1;
  int kh = 1;
  int kw = 1;

  int taps() const noexcept { return kh * kw; }
  std::size_t weight_count() const noexcept { return static_cast<std::size_t>(out) * taps() * in; }
  std::size_t parameter_count() const noexcept { return weight_count() + static_cast<std::size_t>(out); }
};

template <class Real>
Real silu(Real x) {
  return x / (Real(1) + std::exp(-x));
}

template <class Real>
Real silu_grad(Real x) {
  const Real s = Real(1) / (Real(1) + std::exp(-x));
  return s * (Real(1) + x * (Real(1) - s));
}

/// Column-gather for a periodic convolution (im2col).
template <class Real>
void periodic_im2col(const Matrix<Real>& a, int H, int W, int batch, const ConvLayerShape& s, Matrix<Real>& cols) {
  const int C = s.in;
  const int N = H * W;
  cols.resize(static_cast<Eigen::Index>(s.taps()) * C, static_cast<Eigen::Index>(batch) * N);
  const int ph = s.kh / 2;
  const int pw = s.kw / 2;
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const Eigen::Index col = static_cast<Eigen::Index>(b) * N + h * W + w;
        for (int ta = 0; ta < s.kh; ++ta) {
          const int sh = ((h + ta - ph) % H + H) % H;
          for (int tb = 0; tb < s.kw; ++tb) {
            const int sw = ((w + tb - pw) % W + W) % W;
            const int tap = ta * s.kw + tb;
            cols.block(static_cast<Eigen::Index>(tap) * C, col, C, 1) =
                a.col(static_cast<Eigen::Index>(b) * N + sh * W + sw);
          }
        }
      }
    }
  }
}

/// Adjoint of periodic_im2col (scatter-add).
template <class Real>
void periodic_col2im(const Matrix<Real>& cols, int H, int W, int batch, const ConvLayerShape& s, Matrix<Real>& a) {
  const int C = s.in;
  const int N = H * W;
  a.setZero(C, static_cast<Eigen::Index>(batch) * N);
  const int ph = s.kh / 2;
  const int pw = s.kw / 2;
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const Eigen::Index col = static_cast<Eigen::Index>(b) * N + h * W + w;
        for (int ta = 0; ta < s.kh; ++ta) {
          const int sh = ((h + ta - ph) % H + H) % H;
          for (int tb = 0; tb < s.kw; ++tb) {
            const int sw = ((w + tb - pw) % W + W) % W;
            const int tap = ta * s.kw + tb;
            a.col(static_cast<Eigen::Index>(b) * N + sh * W + sw) +=
                cols.block(static_cast<Eigen::Index>(tap) * C, col, C, 1);
          }
        }
      }
    }
  }
}

struct ConvNetArch {
  int in_channels = 1;
  int out_channels = 1;
  int width = 64;
  int depth = 6;
  int kh = 1;  ///< kernel rows (1 on single-row grids)
  int kw = 5;  ///< kernel columns
};

template <class Real>
class ConvResNet {
public:
  ConvResNet() = default;
  ConvResNet(ConvNetArch arch, int H, int W) : arch_(arch), H_(H), W_(W) {
    if (arch.width < 1 || arch.depth < 0 || arch.kh < 1 || arch.kw < 1 || arch.kh % 2 == 0 || arch.kw % 2 == 0)
      throw ConfigError("invalid network architecture (width >= 1, depth >= 0, odd kernel sizes)");
    layers_.push_back({arch.in_channels, arch.width, arch.kh, arch.kw});
    for (int b = 0; b < arch.depth; ++b) layers_.push_back({arch.width, arch.width, arch.kh, arch.kw});
    layers_.push_back({arch.width, arch.out_channels, arch.kh, arch.kw});
    std::size_t off = 0;
    for (const auto& l : layers_) {
      offsets_.push_back(off);
      off += l.parameter_count();
    }
    count_ = off;
  }

  const ConvNetArch& arch() const noexcept { return arch_; }
  std::size_t parameter_count() const noexcept { return count_; }
  const std::vector<ConvLayerShape>& layers() const noexcept { return layers_; }
  std::size_t layer_offset(std::size_t l) const noexcept { return offsets_[l]; }

  struct Tape {
    int batch = 0;
    std::vector<Matrix<Real>> cols;  // im2col input of every conv layer
    std::vector<Matrix<Real>> pre;   // a_b for b = 0..depth (inputs to silu)
  };

  /// x: in_channels x (batch * H * W). Returns out_channels x (batch * H * W).
  Matrix<Real> forward(std::span<const Real> theta, const Matrix<Real>& x, int batch, Tape* tape = nullptr) const {
    if (x.rows() != arch_.in_channels || x.cols() != static_cast<Eigen::Index>(batch) * H_ * W_)
      throw ShapeError("network input has shape " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
    Tape local;
    Tape& t = tape ? *tape : local;
    t.batch = batch;
    t.cols.resize(layers_.size());
    t.pre.resize(static_cast<std::size_t>(arch_.depth) + 1);

    Matrix<Real> a = conv(theta, 0, x, batch, t.cols[0]);
    check_finite(a, 0);
    Matrix<Real> act;
    for (int b = 0; b < arch_.depth; ++b) {
      t.pre[static_cast<std::size_t>(b)] = a;
      act = a.unaryExpr([](Real v) { return silu(v); });
      a += conv(theta, static_cast<std::size_t>(b) + 1, act, batch, t.cols[static_cast<std::size_t>(b) + 1]);
      check_finite(a, static_cast<std::size_t>(b) + 1);
    }
    t.pre.back() = a;
    act = a.unaryExpr([](Real v) { return silu(v); });
    Matrix<Real> y = conv(theta, layers_.size() - 1, act, batch, t.cols.back());
    check_finite(y, layers_.size() - 1);
    return y;
  }

  /// Accumulates dL/dtheta into grad and returns dL/dx.
  Matrix<Real> backward(std::span<const Real> theta, const Tape& t, const Matrix<Real>& g_out, std::span<Real> grad) const {
    const int batch = t.batch;
    Matrix<Real> g_act = conv_backward(theta, layers_.size() - 1, t.cols.back(), g_out, batch, grad);
    Matrix<Real> g_a = g_act.cwiseProduct(t.pre.back().unaryExpr([](Real v) { return silu_grad(v); }));
    for (int b = arch_.depth; b-- > 0;) {
      g_act = conv_backward(theta, static_cast<std::size_t>(b) + 1, t.cols[static_cast<std::size_t>(b) + 1], g_a, batch, grad);
      g_a += g_act.cwiseProduct(t.pre[static_cast<std::size_t>(b)].unaryExpr([](Real v) { return silu_grad(v); }));
    }
    return conv_backward(theta, 0, t.cols[0], g_a, batch, grad);
  }

private:
  Matrix<Real> conv(std::span<const Real> theta, std::size_t l, const Matrix<Real>& in, int batch, Matrix<Real>& cols) const {
    const auto& s = layers_[l];
    periodic_im2col(in, H_, W_, batch, s, cols);
    const Real* p = theta.data() + offsets_[l];
    ConstRowMajorMap<Real> Wt(p, s.out, static_cast<Eigen::Index>(s.taps()) * s.in);
    Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> bias(p + s.weight_count(), s.out);
    Matrix<Real> out = Wt * cols;
    out.colwise() += bias;
    return out;
  }

  Matrix<Real> conv_backward(std::span<const Real> theta, std::size_t l, const Matrix<Real>& cols, const Matrix<Real>& g,
                             int batch, std::span<Real> grad) const {
    const auto& s = layers_[l];
    const Real* p = theta.data() + offsets_[l];
    Real* gp = grad.data() + offsets_[l];
    const auto K = static_cast<Eigen::Index>(s.taps()) * s.in;
    ConstRowMajorMap<Real> Wt(p, s.out, K);
    RowMajorMap<Real> gW(gp, s.out, K);
    Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>> gb(gp + s.weight_count(), s.out);
    gW.noalias() += g * cols.transpose();
    gb += g.rowwise().sum();
    Matrix<Real> g_cols = Wt.transpose() * g;
    Matrix<Real> g_in;
    periodic_col2im(g_cols, H_, W_, batch, s, g_in);
    return g_in;
  }

  static void check_finite(const Matrix<Real>& a, std::size_t layer) {
    if (!a.allFinite()) throw NumericalError("non-finite activation at network layer " + std::to_string(layer));
  }

  ConvNetArch arch_{};
  int H_ = 1;
  int W_ = 2;
  std::vector<ConvLayerShape> layers_;
  std::vector<std::size_t> offsets_;
  std::size_t count_ = 0;
};

}  // namespace flowda
