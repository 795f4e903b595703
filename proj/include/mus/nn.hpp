#pragma once

// Convolution engine behind the autoencoder. Activations are stored as
// C x (N*H*W) column-major matrices: every pixel's channels are contiguous,
// and pixel j = (n*H + y)*W + x. A 3x3 / stride 2 / pad 1 "down" convolution
// maps H x W to H/2 x W/2; the mirrored transposed "up" convolution maps
// h x w back to 2h x 2w (output padding 1).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mus/rng.hpp"

namespace mus::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr int kKernel = 3;
inline constexpr int kTaps = kKernel * kKernel;
inline constexpr int kStride = 2;
inline constexpr int kPad = 1;

inline int down_size(int n) { return (n + 2 * kPad - kKernel) / kStride + 1; }

/// Both directions share one parameter shape: rows = channels on the
/// low-resolution side, cols = 9 * channels on the high-resolution side,
/// with column index (ky*3 + kx)*C + c.
template <typename T>
struct ConvParams {
  Mat<T> weight;
  Vec<T> bias;

  void zero_like(const ConvParams& other) {
    weight = Mat<T>::Zero(other.weight.rows(), other.weight.cols());
    bias = Vec<T>::Zero(other.bias.size());
  }
};

/// x: C x (N*H*W) -> 9C x (N*Ho*Wo)
template <typename T>
Mat<T> im2col(const Mat<T>& x, int batch, int h, int w) {
  const int c = static_cast<int>(x.rows());
  const int ho = down_size(h), wo = down_size(w);
  Mat<T> cols = Mat<T>::Zero(static_cast<Eigen::Index>(kTaps) * c, static_cast<Eigen::Index>(batch) * ho * wo);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index col = (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox;
        for (int ky = 0; ky < kKernel; ++ky) {
          const int iy = oy * kStride - kPad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kKernel; ++kx) {
            const int ix = ox * kStride - kPad + kx;
            if (ix < 0 || ix >= w) continue;
            const Eigen::Index pix = (static_cast<Eigen::Index>(n) * h + iy) * w + ix;
            cols.col(col).segment((ky * kKernel + kx) * c, c) = x.col(pix);
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters 9C x (N*Ho*Wo) back onto C x (N*H*W).
template <typename T>
Mat<T> col2im(const Mat<T>& cols, int channels, int batch, int h, int w) {
  const int ho = down_size(h), wo = down_size(w);
  Mat<T> x = Mat<T>::Zero(channels, static_cast<Eigen::Index>(batch) * h * w);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index col = (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox;
        for (int ky = 0; ky < kKernel; ++ky) {
          const int iy = oy * kStride - kPad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kKernel; ++kx) {
            const int ix = ox * kStride - kPad + kx;
            if (ix < 0 || ix >= w) continue;
            const Eigen::Index pix = (static_cast<Eigen::Index>(n) * h + iy) * w + ix;
            x.col(pix) += cols.col(col).segment((ky * kKernel + kx) * channels, channels);
          }
        }
      }
    }
  }
  return x;
}

template <typename T>
void relu_inplace(Mat<T>& m) {
  m = m.cwiseMax(T(0));
}

/// Zeroes gradient entries whose forward activation was clamped.
template <typename T>
void relu_backward_inplace(Mat<T>& grad, const Mat<T>& activated) {
  grad = (activated.array() > T(0)).select(grad, T(0));
}

/// Mirrored encoder/decoder stack over a channel progression
/// c0 -> c1 -> ... -> cL. Encoder layer k is a down convolution c_k -> c_{k+1}
/// followed by ReLU; decoder layers run the progression in reverse with up
/// convolutions, ReLU between them and a linear output layer.
template <typename T>
class Network {
public:
  Network() = default;

  explicit Network(std::vector<int> channels) : channels_(std::move(channels)) {
    if (channels_.size() < 2) throw std::invalid_argument("Network: need at least one layer");
    const int depth = this->depth();
    encoder.resize(depth);
    decoder.resize(depth);
    for (int k = 0; k < depth; ++k) {
      encoder[k].weight = Mat<T>::Zero(channels_[k + 1], kTaps * channels_[k]);
      encoder[k].bias = Vec<T>::Zero(channels_[k + 1]);
      const int j = depth - 1 - k;  // decoder layer k mirrors encoder layer j
      decoder[k].weight = Mat<T>::Zero(channels_[j + 1], kTaps * channels_[j]);
      decoder[k].bias = Vec<T>::Zero(channels_[j]);
    }
  }

  int depth() const { return static_cast<int>(channels_.size()) - 1; }
  const std::vector<int>& channels() const { return channels_; }

  /// Weights uniform in +-sqrt(6 / fan_in); biases zero.
  void init_uniform(std::uint64_t seed) {
    Rng rng(seed);
    auto fill = [&](Mat<T>& m, int fan_in) {
      const double bound = std::sqrt(6.0 / fan_in);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (int k = 0; k < depth(); ++k) {
      fill(encoder[k].weight, kTaps * channels_[k]);
      encoder[k].bias.setZero();
    }
    for (int k = 0; k < depth(); ++k) {
      const int j = depth() - 1 - k;
      fill(decoder[k].weight, kTaps * channels_[j + 1]);
      decoder[k].bias.setZero();
    }
  }

  struct Trace {
    std::vector<Mat<T>> cols;     // im2col of each encoder input
    std::vector<Mat<T>> enc_out;  // post-ReLU encoder outputs
    std::vector<Mat<T>> dec_out;  // decoder outputs (post-ReLU except the last)
  };

  /// x: c0 x (batch*size*size). Returns c_L x (batch*(size/2^L)^2).
  Mat<T> encode(const Mat<T>& x, int batch, int size, Trace* trace = nullptr) const {
    check_rows(x, channels_.front(), "encode input");
    Mat<T> act = x;
    int s = size;
    for (int k = 0; k < depth(); ++k) {
      Mat<T> cols = im2col(act, batch, s, s);
      act = encoder[k].weight * cols;
      act.colwise() += encoder[k].bias;
      relu_inplace(act);
      s = down_size(s);
      if (trace) {
        trace->cols.push_back(std::move(cols));
        trace->enc_out.push_back(act);
      }
    }
    return act;
  }

  /// z: c_L x (batch*latent*latent). Returns c0 x (batch*(latent*2^L)^2).
  Mat<T> decode(const Mat<T>& z, int batch, int latent, Trace* trace = nullptr) const {
    check_rows(z, channels_.back(), "decode input");
    Mat<T> act = z;
    int s = latent;
    for (int k = 0; k < depth(); ++k) {
      const int j = depth() - 1 - k;
      Mat<T> cols = decoder[k].weight.transpose() * act;
      act = col2im(cols, channels_[j], batch, 2 * s, 2 * s);
      act.colwise() += decoder[k].bias;
      if (k + 1 < depth()) relu_inplace(act);
      s *= 2;
      if (trace) trace->dec_out.push_back(act);
    }
    return act;
  }

  /// Mean squared reconstruction error of x.
  T loss(const Mat<T>& x, int batch, int size) const {
    const int latent = size >> depth();
    Mat<T> out = decode(encode(x, batch, size), batch, latent);
    return (out - x).squaredNorm() / static_cast<T>(x.size());
  }

  /// Loss plus gradients with respect to every parameter; `genc`/`gdec`
  /// are overwritten and shaped like `encoder`/`decoder`.
  T loss_and_gradient(const Mat<T>& x, int batch, int size, std::vector<ConvParams<T>>& genc,
                      std::vector<ConvParams<T>>& gdec) const {
    const int L = depth();
    const int latent = size >> L;
    Trace tr;
    Mat<T> z = encode(x, batch, size, &tr);
    Mat<T> out = decode(z, batch, latent, &tr);
    const T n = static_cast<T>(x.size());
    Mat<T> diff = out - x;
    const T value = diff.squaredNorm() / n;

    genc.resize(L);
    gdec.resize(L);
    Mat<T> grad = diff * (T(2) / n);
    int s = size;  // spatial size of the current decoder output
    for (int k = L - 1; k >= 0; --k) {
      if (k + 1 < L) relu_backward_inplace(grad, tr.dec_out[k]);
      const Mat<T>& input = k == 0 ? z : tr.dec_out[k - 1];
      Mat<T> gcols = im2col(grad, batch, s, s);
      gdec[k].bias = grad.rowwise().sum();
      gdec[k].weight = input * gcols.transpose();
      grad = decoder[k].weight * gcols;
      s /= 2;
    }
    s = latent;
    for (int k = L - 1; k >= 0; --k) {
      relu_backward_inplace(grad, tr.enc_out[k]);
      genc[k].bias = grad.rowwise().sum();
      genc[k].weight = grad * tr.cols[k].transpose();
      if (k > 0) {
        Mat<T> dcols = encoder[k].weight.transpose() * grad;
        grad = col2im(dcols, channels_[k], batch, 2 * s, 2 * s);
      }
      s *= 2;
    }
    return value;
  }

  std::vector<ConvParams<T>> encoder;
  std::vector<ConvParams<T>> decoder;

private:
  static void check_rows(const Mat<T>& m, int rows, const char* what) {
    if (m.rows() != rows) throw std::invalid_argument(std::string(what) + ": channel count mismatch");
  }

  std::vector<int> channels_;
};

/// Adaptive-moment optimizer over a Network's parameters.
template <typename T>
class Adam {
public:
  Adam(const Network<T>& net, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    auto init = [](std::vector<ConvParams<T>>& dst, const std::vector<ConvParams<T>>& src) {
      dst.resize(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) dst[i].zero_like(src[i]);
    };
    init(m_enc_, net.encoder);
    init(v_enc_, net.encoder);
    init(m_dec_, net.decoder);
    init(v_dec_, net.decoder);
  }

  void step(Network<T>& net, const std::vector<ConvParams<T>>& genc, const std::vector<ConvParams<T>>& gdec) {
    ++t_;
    const T c1 = static_cast<T>(1.0 - std::pow(beta1_, t_));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2_, t_));
    for (std::size_t i = 0; i < net.encoder.size(); ++i) {
      update(net.encoder[i].weight, genc[i].weight, m_enc_[i].weight, v_enc_[i].weight, c1, c2);
      update(net.encoder[i].bias, genc[i].bias, m_enc_[i].bias, v_enc_[i].bias, c1, c2);
    }
    for (std::size_t i = 0; i < net.decoder.size(); ++i) {
      update(net.decoder[i].weight, gdec[i].weight, m_dec_[i].weight, v_dec_[i].weight, c1, c2);
      update(net.decoder[i].bias, gdec[i].bias, m_dec_[i].bias, v_dec_[i].bias, c1, c2);
    }
  }

private:
  template <typename M>
  void update(M& param, const M& grad, M& m, M& v, T c1, T c2) {
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    m = b1 * m + (T(1) - b1) * grad;
    v = b2 * v + (T(1) - b2) * grad.cwiseProduct(grad);
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<ConvParams<T>> m_enc_, v_enc_, m_dec_, v_dec_;
};

}  // namespace mus::nn
