#pragma once

// Minimal tensor kernels for the encoder-decoder and recurrent models.
//
// Activations are Eigen column-major matrices of shape channels x pixels,
// one column per pixel, pixels ordered (sample, x, y). That is exactly the
// memory layout of a batch of Fields stacked end to end, so batches are
// built by copying frames and flattening is a reinterpretation.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsovt/error.hpp"
#include "dsovt/random.hpp"

namespace dsovt::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;

/// Batch geometry: n samples of h x w pixels (h runs along x, w along y).
struct Geometry {
  int n = 1;
  int h = 0;
  int w = 0;
  int pixels() const { return n * h * w; }
  int plane() const { return h * w; }
  Geometry halved() const { return {n, h / 2, w / 2}; }
  Geometry doubled() const { return {n, h * 2, w * 2}; }
};

// ---------------------------------------------------------------------------
// Parameters

/// Flat parameter vector with named row-major blocks and a matching gradient
/// buffer. Block order is the serialization order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  };

  int add(std::string name, int rows, int cols) {
    entries_.push_back({std::move(name), values_.size(), rows, cols});
    values_.resize(values_.size() + entries_.back().size(), T(0));
    grads_.resize(values_.size(), T(0));
    return static_cast<int>(entries_.size()) - 1;
  }

  RowMap<T> mat(int i) { return {values_.data() + entries_[i].offset, entries_[i].rows, entries_[i].cols}; }
  ConstRowMap<T> mat(int i) const {
    return {values_.data() + entries_[i].offset, entries_[i].rows, entries_[i].cols};
  }
  RowMap<T> grad(int i) { return {grads_.data() + entries_[i].offset, entries_[i].rows, entries_[i].cols}; }
  Eigen::Map<const Vec<T>> vec(int i) const {
    return {values_.data() + entries_[i].offset, static_cast<Eigen::Index>(entries_[i].size())};
  }
  Eigen::Map<Vec<T>> grad_vec(int i) {
    return {grads_.data() + entries_[i].offset, static_cast<Eigen::Index>(entries_[i].size())};
  }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }
  std::vector<T>& grads() { return grads_; }
  const std::vector<T>& grads() const { return grads_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return values_.size(); }
  void zero_grad() { std::fill(grads_.begin(), grads_.end(), T(0)); }

  /// Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out))) for
  /// entry `i`; biases stay zero.
  void glorot(int i, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto& e = entries_[i];
    for (std::size_t k = 0; k < e.size(); ++k) {
      values_[e.offset + k] = static_cast<T>(rng.uniform(-limit, limit));
    }
  }

 private:
  std::vector<Entry> entries_;
  std::vector<T> values_;
  std::vector<T> grads_;
};

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<T> params, std::span<const T> grads) {
    if (m_.size() != params.size()) {
      m_.assign(params.size(), T(0));
      v_.assign(params.size(), T(0));
      t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    const T step_size = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T eps_hat = static_cast<T>(eps_ * std::sqrt(c2));
    const T b1 = static_cast<T>(beta1_);
    const T b2 = static_cast<T>(beta2_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grads[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) + eps_hat);
    }
  }

  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<T> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Convolution (k x k, stride 1, zero "same" padding) via im2col + GEMM.
// Weight rows are output channels; columns are ordered (dx, dy, in_channel).

template <typename T>
void im2col(const Mat<T>& x, const Geometry& g, int k, Mat<T>& cols) {
  const int c = static_cast<int>(x.rows());
  const int r = k / 2;
  cols.resize(static_cast<Eigen::Index>(k) * k * c, g.pixels());
  for (int n = 0; n < g.n; ++n) {
    for (int px = 0; px < g.h; ++px) {
      for (int py = 0; py < g.w; ++py) {
        const int p = (n * g.h + px) * g.w + py;
        T* dst = cols.col(p).data();
        for (int dx = -r; dx <= r; ++dx) {
          const int sx = px + dx;
          for (int dy = -r; dy <= r; ++dy, dst += c) {
            const int sy = py + dy;
            if (sx < 0 || sx >= g.h || sy < 0 || sy >= g.w) {
              std::fill(dst, dst + c, T(0));
            } else {
              const T* src = x.col((n * g.h + sx) * g.w + sy).data();
              std::copy(src, src + c, dst);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Mat<T>& cols, const Geometry& g, int k, int c, Mat<T>& dx) {
  const int r = k / 2;
  for (int n = 0; n < g.n; ++n) {
    for (int px = 0; px < g.h; ++px) {
      for (int py = 0; py < g.w; ++py) {
        const int p = (n * g.h + px) * g.w + py;
        const T* src = cols.col(p).data();
        for (int ddx = -r; ddx <= r; ++ddx) {
          const int sx = px + ddx;
          for (int ddy = -r; ddy <= r; ++ddy, src += c) {
            const int sy = py + ddy;
            if (sx < 0 || sx >= g.h || sy < 0 || sy >= g.w) continue;
            T* dst = dx.col((n * g.h + sx) * g.w + sy).data();
            for (int i = 0; i < c; ++i) dst[i] += src[i];
          }
        }
      }
    }
  }
}

template <typename T, typename WMap, typename BMap>
void conv_forward(const Mat<T>& x, const Geometry& g, int k, const WMap& w, const BMap& b,
                  Mat<T>& y, Mat<T>& scratch) {
  if (k == 1) {
    y.noalias() = w * x;
  } else {
    im2col(x, g, k, scratch);
    y.noalias() = w * scratch;
  }
  y.colwise() += b;
}

/// Accumulates dW/db; writes dx when `dx` is non-null.
template <typename T, typename WMap, typename GMap, typename GBMap>
void conv_backward(const Mat<T>& x, const Geometry& g, int k, const WMap& w, const Mat<T>& dy,
                   GMap* dw, GBMap* db, Mat<T>* dx, Mat<T>& scratch) {
  const int c = static_cast<int>(x.rows());
  if (k == 1) {
    if (dw) dw->noalias() += dy * x.transpose();
    if (db) *db += dy.rowwise().sum();
    if (dx) dx->noalias() = w.transpose() * dy;
    return;
  }
  if (dw) {
    im2col(x, g, k, scratch);
    dw->noalias() += dy * scratch.transpose();
  }
  if (db) *db += dy.rowwise().sum();
  if (dx) {
    scratch.noalias() = w.transpose() * dy;
    dx->setZero(c, g.pixels());
    col2im_add(scratch, g, k, c, *dx);
  }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling and nearest-neighbour upsampling.

template <typename T>
void maxpool2_forward(const Mat<T>& x, const Geometry& g, Mat<T>& y, std::vector<int>& argmax) {
  const Geometry o = g.halved();
  const int c = static_cast<int>(x.rows());
  y.resize(c, o.pixels());
  argmax.resize(static_cast<std::size_t>(c) * o.pixels());
  for (int n = 0; n < o.n; ++n) {
    for (int ox = 0; ox < o.h; ++ox) {
      for (int oy = 0; oy < o.w; ++oy) {
        const int q = (n * o.h + ox) * o.w + oy;
        const int p00 = (n * g.h + 2 * ox) * g.w + 2 * oy;
        const int cand[4] = {p00, p00 + 1, p00 + g.w, p00 + g.w + 1};
        for (int ch = 0; ch < c; ++ch) {
          int best = cand[0];
          T bv = x(ch, best);
          for (int m = 1; m < 4; ++m) {
            if (x(ch, cand[m]) > bv) {
              bv = x(ch, cand[m]);
              best = cand[m];
            }
          }
          y(ch, q) = bv;
          argmax[static_cast<std::size_t>(q) * c + ch] = best;
        }
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const Mat<T>& dy, const std::vector<int>& argmax, const Geometry& g,
                       Mat<T>& dx) {
  const int c = static_cast<int>(dy.rows());
  dx.setZero(c, g.pixels());
  for (Eigen::Index q = 0; q < dy.cols(); ++q) {
    for (int ch = 0; ch < c; ++ch) {
      dx(ch, argmax[static_cast<std::size_t>(q) * c + ch]) += dy(ch, q);
    }
  }
}

/// g is the geometry of the (smaller) input.
template <typename T>
void upsample2_forward(const Mat<T>& x, const Geometry& g, Mat<T>& y) {
  const Geometry o = g.doubled();
  y.resize(x.rows(), o.pixels());
  for (int n = 0; n < o.n; ++n) {
    for (int ox = 0; ox < o.h; ++ox) {
      for (int oy = 0; oy < o.w; ++oy) {
        y.col((n * o.h + ox) * o.w + oy) = x.col((n * g.h + ox / 2) * g.w + oy / 2);
      }
    }
  }
}

template <typename T>
void upsample2_backward(const Mat<T>& dy, const Geometry& g, Mat<T>& dx) {
  const Geometry o = g.doubled();
  dx.setZero(dy.rows(), g.pixels());
  for (int n = 0; n < o.n; ++n) {
    for (int ox = 0; ox < o.h; ++ox) {
      for (int oy = 0; oy < o.w; ++oy) {
        dx.col((n * g.h + ox / 2) * g.w + oy / 2) += dy.col((n * o.h + ox) * o.w + oy);
      }
    }
  }
}

template <typename Derived>
void relu_inplace(Eigen::MatrixBase<Derived>& x) {
  x = x.cwiseMax(typename Derived::Scalar(0));
}

/// dx = dy where the forward output was positive.
template <typename T>
void relu_backward_inplace(Mat<T>& d, const Mat<T>& out) {
  d = (out.array() > T(0)).select(d, T(0));
}

// ---------------------------------------------------------------------------
// LSTM pointwise part. Pre-activation gates are stacked (i, f, g, o) in row
// blocks of `hidden` rows.

template <typename T>
struct LstmStepCache {
  Mat<T> gates;   // activated i, f, g, o
  Mat<T> c_prev;
  Mat<T> c;
  Mat<T> tanh_c;
  Mat<T> h;
};

template <typename T>
inline T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
void lstm_pointwise_forward(Mat<T>& pre, const Mat<T>& c_prev, int hidden, LstmStepCache<T>& out) {
  const auto cols = pre.cols();
  auto i = pre.topRows(hidden);
  auto f = pre.middleRows(hidden, hidden);
  auto gg = pre.middleRows(2 * hidden, hidden);
  auto o = pre.bottomRows(hidden);
  i = i.unaryExpr([](T v) { return sigmoid(v); });
  f = f.unaryExpr([](T v) { return sigmoid(v); });
  gg = gg.array().tanh();
  o = o.unaryExpr([](T v) { return sigmoid(v); });
  out.c_prev = c_prev;
  out.c.resize(hidden, cols);
  out.c.array() = f.array() * c_prev.array() + i.array() * gg.array();
  out.tanh_c = out.c.array().tanh();
  out.h = o.array() * out.tanh_c.array();
  out.gates = std::move(pre);
}

/// Given dh and the incoming cell-state gradient dc (updated in place to
/// d c_prev), returns d(pre-activation gates).
template <typename T>
Mat<T> lstm_pointwise_backward(const LstmStepCache<T>& s, const Mat<T>& dh, Mat<T>& dc, int hidden) {
  const auto i = s.gates.topRows(hidden).array();
  const auto f = s.gates.middleRows(hidden, hidden).array();
  const auto gg = s.gates.middleRows(2 * hidden, hidden).array();
  const auto o = s.gates.bottomRows(hidden).array();
  const auto tc = s.tanh_c.array();
  Mat<T> dct = dc.array() + dh.array() * o * (T(1) - tc * tc);
  Mat<T> dpre(4 * hidden, dh.cols());
  dpre.topRows(hidden).array() = dct.array() * gg * i * (T(1) - i);
  dpre.middleRows(hidden, hidden).array() = dct.array() * s.c_prev.array() * f * (T(1) - f);
  dpre.middleRows(2 * hidden, hidden).array() = dct.array() * i * (T(1) - gg * gg);
  dpre.bottomRows(hidden).array() = dh.array() * tc * o * (T(1) - o);
  dc = dct.array() * f;
  return dpre;
}

}  // namespace dsovt::nn
