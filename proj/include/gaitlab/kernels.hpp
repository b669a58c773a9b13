#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gaitlab/error.hpp"
#include "gaitlab/tensor.hpp"

// Deterministic single-sample kernels. Every output element is accumulated in
// a fixed order (input channel major, then kernel offsets in row-major order),
// and the bias is added last, so results are bitwise reproducible.

namespace gaitlab {

enum class Mode { train, eval };

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad) {
  require(stride >= 1, ErrorKind::config, "stride must be >= 1");
  require(kernel >= 1 && kernel <= in + 2 * pad, ErrorKind::dimension,
          "kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
              std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv1d

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                         std::size_t stride, std::size_t padding) {
  require(input.rank() == 2, ErrorKind::dimension, "conv1d input must be [C_in, L]");
  require(kernels.rank() == 3, ErrorKind::dimension, "conv1d kernels must be [C_out, C_in, K]");
  const std::size_t cin = input.extent(0), len = input.extent(1);
  const std::size_t cout = kernels.extent(0), ksize = kernels.extent(2);
  require(kernels.extent(1) == cin, ErrorKind::dimension,
          "conv1d kernel channels " + std::to_string(kernels.extent(1)) + " vs input channels " +
              std::to_string(cin));
  require(bias.size() == cout, ErrorKind::dimension, "conv1d bias length mismatch");
  const std::size_t lout = conv_out_extent(len, ksize, stride, padding);

  Tensor<T> out({cout, lout});
  const T* x = input.data().data();
  const T* w = kernels.data().data();
  T* y = out.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    T* yrow = y + co * lout;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xrow = x + ci * len;
      for (std::size_t k = 0; k < ksize; ++k) {
        const T wv = w[(co * cin + ci) * ksize + k];
        for (std::size_t lo = 0; lo < lout; ++lo) {
          const std::ptrdiff_t li = static_cast<std::ptrdiff_t>(lo * stride + k) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (li < 0 || li >= static_cast<std::ptrdiff_t>(len)) continue;
          yrow[lo] += xrow[li] * wv;
        }
      }
    }
    const T b = bias.data()[co];
    for (std::size_t lo = 0; lo < lout; ++lo) yrow[lo] += b;
  }
  return out;
}

/// Accumulates into grad_kernels / grad_bias and returns the input gradient.
template <typename T>
Tensor<T> conv1d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                          const Tensor<T>& grad_out, std::size_t stride, std::size_t padding,
                          Tensor<T>& grad_kernels, Tensor<T>& grad_bias) {
  const std::size_t cin = input.extent(0), len = input.extent(1);
  const std::size_t cout = kernels.extent(0), ksize = kernels.extent(2);
  const std::size_t lout = grad_out.extent(1);
  require(grad_out.extent(0) == cout, ErrorKind::dimension, "conv1d grad channel mismatch");
  Tensor<T> grad_in(input.shape());
  const T* x = input.data().data();
  const T* w = kernels.data().data();
  const T* gy = grad_out.data().data();
  T* gx = grad_in.data().data();
  T* gw = grad_kernels.data().data();
  T* gb = grad_bias.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    const T* gyrow = gy + co * lout;
    for (std::size_t lo = 0; lo < lout; ++lo) gb[co] += gyrow[lo];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xrow = x + ci * len;
      T* gxrow = gx + ci * len;
      for (std::size_t k = 0; k < ksize; ++k) {
        const std::size_t widx = (co * cin + ci) * ksize + k;
        const T wv = w[widx];
        T acc = 0;
        for (std::size_t lo = 0; lo < lout; ++lo) {
          const std::ptrdiff_t li = static_cast<std::ptrdiff_t>(lo * stride + k) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (li < 0 || li >= static_cast<std::ptrdiff_t>(len)) continue;
          acc += gyrow[lo] * xrow[li];
          gxrow[li] += gyrow[lo] * wv;
        }
        gw[widx] += acc;
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// conv3d

using Triple = std::array<std::size_t, 3>;

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                         Triple strides, Triple paddings) {
  require(input.rank() == 4, ErrorKind::dimension, "conv3d input must be [C_in, D, H, W]");
  require(kernels.rank() == 5, ErrorKind::dimension,
          "conv3d kernels must be [C_out, C_in, Kd, Kh, Kw]");
  const std::size_t cin = input.extent(0);
  const std::size_t cout = kernels.extent(0);
  require(kernels.extent(1) == cin, ErrorKind::dimension,
          "conv3d kernel channels " + std::to_string(kernels.extent(1)) + " vs input channels " +
              std::to_string(cin));
  require(bias.size() == cout, ErrorKind::dimension, "conv3d bias length mismatch");
  const Triple in{input.extent(1), input.extent(2), input.extent(3)};
  const Triple k{kernels.extent(2), kernels.extent(3), kernels.extent(4)};
  Triple o{};
  for (std::size_t a = 0; a < 3; ++a) o[a] = conv_out_extent(in[a], k[a], strides[a], paddings[a]);

  Tensor<T> out({cout, o[0], o[1], o[2]});
  const T* x = input.data().data();
  const T* w = kernels.data().data();
  T* y = out.data().data();
  const std::size_t in_vol = in[0] * in[1] * in[2];
  const std::size_t out_vol = o[0] * o[1] * o[2];
  const auto pd = static_cast<std::ptrdiff_t>(paddings[0]);
  const auto ph = static_cast<std::ptrdiff_t>(paddings[1]);
  const auto pw = static_cast<std::ptrdiff_t>(paddings[2]);
  for (std::size_t co = 0; co < cout; ++co) {
    T* ych = y + co * out_vol;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xch = x + ci * in_vol;
      for (std::size_t kd = 0; kd < k[0]; ++kd)
        for (std::size_t kh = 0; kh < k[1]; ++kh)
          for (std::size_t kw = 0; kw < k[2]; ++kw) {
            const T wv = w[(((co * cin + ci) * k[0] + kd) * k[1] + kh) * k[2] + kw];
            for (std::size_t od = 0; od < o[0]; ++od) {
              const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * strides[0] + kd) - pd;
              if (id < 0 || id >= static_cast<std::ptrdiff_t>(in[0])) continue;
              for (std::size_t oh = 0; oh < o[1]; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * strides[1] + kh) - ph;
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in[1])) continue;
                const T* xrow = xch + (static_cast<std::size_t>(id) * in[1] +
                                       static_cast<std::size_t>(ih)) * in[2];
                T* yrow = ych + (od * o[1] + oh) * o[2];
                for (std::size_t ow = 0; ow < o[2]; ++ow) {
                  const std::ptrdiff_t iw =
                      static_cast<std::ptrdiff_t>(ow * strides[2] + kw) - pw;
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in[2])) continue;
                  yrow[ow] += xrow[iw] * wv;
                }
              }
            }
          }
    }
    const T b = bias.data()[co];
    for (std::size_t i = 0; i < out_vol; ++i) ych[i] += b;
  }
  return out;
}

template <typename T>
Tensor<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                          const Tensor<T>& grad_out, Triple strides, Triple paddings,
                          Tensor<T>& grad_kernels, Tensor<T>& grad_bias) {
  const std::size_t cin = input.extent(0);
  const std::size_t cout = kernels.extent(0);
  const Triple in{input.extent(1), input.extent(2), input.extent(3)};
  const Triple k{kernels.extent(2), kernels.extent(3), kernels.extent(4)};
  const Triple o{grad_out.extent(1), grad_out.extent(2), grad_out.extent(3)};
  Tensor<T> grad_in(input.shape());
  const T* x = input.data().data();
  const T* w = kernels.data().data();
  const T* gy = grad_out.data().data();
  T* gx = grad_in.data().data();
  T* gw = grad_kernels.data().data();
  T* gb = grad_bias.data().data();
  const std::size_t in_vol = in[0] * in[1] * in[2];
  const std::size_t out_vol = o[0] * o[1] * o[2];
  const auto pd = static_cast<std::ptrdiff_t>(paddings[0]);
  const auto ph = static_cast<std::ptrdiff_t>(paddings[1]);
  const auto pw = static_cast<std::ptrdiff_t>(paddings[2]);
  for (std::size_t co = 0; co < cout; ++co) {
    const T* gych = gy + co * out_vol;
    for (std::size_t i = 0; i < out_vol; ++i) gb[co] += gych[i];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xch = x + ci * in_vol;
      T* gxch = gx + ci * in_vol;
      for (std::size_t kd = 0; kd < k[0]; ++kd)
        for (std::size_t kh = 0; kh < k[1]; ++kh)
          for (std::size_t kw = 0; kw < k[2]; ++kw) {
            const std::size_t widx = (((co * cin + ci) * k[0] + kd) * k[1] + kh) * k[2] + kw;
            const T wv = w[widx];
            T acc = 0;
            for (std::size_t od = 0; od < o[0]; ++od) {
              const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * strides[0] + kd) - pd;
              if (id < 0 || id >= static_cast<std::ptrdiff_t>(in[0])) continue;
              for (std::size_t oh = 0; oh < o[1]; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * strides[1] + kh) - ph;
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in[1])) continue;
                const std::size_t row = (static_cast<std::size_t>(id) * in[1] +
                                         static_cast<std::size_t>(ih)) * in[2];
                const T* xrow = xch + row;
                T* gxrow = gxch + row;
                const T* gyrow = gych + (od * o[1] + oh) * o[2];
                for (std::size_t ow = 0; ow < o[2]; ++ow) {
                  const std::ptrdiff_t iw =
                      static_cast<std::ptrdiff_t>(ow * strides[2] + kw) - pw;
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in[2])) continue;
                  acc += gyrow[ow] * xrow[iw];
                  gxrow[iw] += gyrow[ow] * wv;
                }
              }
            }
            gw[widx] += acc;
          }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// max pooling over an arbitrary subset of axes

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Max pooling with the same window/stride on every axis in `axes`; other axes
/// pass through. Ties resolve to the lowest flat input index.
template <typename T>
PoolResult<T> maxpool(const Tensor<T>& input, std::size_t window, std::size_t stride,
                      const std::vector<std::size_t>& axes) {
  require(window >= 1, ErrorKind::config, "pool window must be >= 1");
  require(stride >= 1, ErrorKind::config, "pool stride must be >= 1");
  const std::size_t rank = input.rank();
  std::vector<std::size_t> win(rank, 1), str(rank, 1);
  for (std::size_t a : axes) {
    require(a < rank, ErrorKind::dimension, "pool axis out of range");
    require(window <= input.extent(a), ErrorKind::dimension,
            "pool window " + std::to_string(window) + " exceeds extent " +
                std::to_string(input.extent(a)) + " on axis " + std::to_string(a));
    win[a] = window;
    str[a] = stride;
  }
  Shape out_shape(rank);
  for (std::size_t a = 0; a < rank; ++a)
    out_shape[a] = (input.extent(a) - win[a]) / str[a] + 1;

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t a = rank; a-- > 1;) in_strides[a - 1] = in_strides[a] * input.extent(a);

  // Window-relative flat offsets in increasing order.
  std::vector<std::size_t> offsets{0};
  for (std::size_t a = 0; a < rank; ++a) {
    std::vector<std::size_t> next;
    next.reserve(offsets.size() * win[a]);
    for (std::size_t off : offsets)
      for (std::size_t j = 0; j < win[a]; ++j) next.push_back(off + j * in_strides[a]);
    offsets = std::move(next);
  }

  PoolResult<T> res{Tensor<T>(out_shape), std::vector<std::size_t>(shape_size(out_shape))};
  const T* x = input.data().data();
  T* y = res.output.data().data();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < res.argmax.size(); ++o) {
    std::size_t base = 0;
    for (std::size_t a = 0; a < rank; ++a) base += idx[a] * str[a] * in_strides[a];
    std::size_t best = base + offsets[0];
    for (std::size_t off : offsets)
      if (x[base + off] > x[best]) best = base + off;
    y[o] = x[best];
    res.argmax[o] = best;
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < out_shape[a]) break;
      idx[a] = 0;
    }
  }
  return res;
}

template <typename T>
Tensor<T> maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                           const Tensor<T>& grad_out) {
  require(argmax.size() == grad_out.size(), ErrorKind::dimension, "pool grad size mismatch");
  Tensor<T> grad_in(input_shape);
  T* gx = grad_in.data().data();
  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += grad_out.data()[o];
  return grad_in;
}

// ---------------------------------------------------------------------------
// batch normalization over [N, C, ...]

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;     // x_hat
  std::vector<T> inv_std;   // per channel
  Mode mode = Mode::eval;
};

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Mode mode, BatchNormStats<T>& stats, T momentum, T epsilon,
                            BatchNormCache<T>* cache = nullptr) {
  require(input.rank() >= 2, ErrorKind::dimension, "batchnorm input must be [N, C, ...]");
  require(epsilon > 0, ErrorKind::config, "batchnorm epsilon must be > 0");
  const std::size_t n = input.extent(0), c = input.extent(1);
  require(gamma.size() == c && beta.size() == c, ErrorKind::dimension,
          "batchnorm gamma/beta length mismatch");
  require(stats.running_mean.size() == c && stats.running_var.size() == c,
          ErrorKind::dimension, "batchnorm running stats length mismatch");
  if (mode == Mode::train)
    require(n >= 2, ErrorKind::degenerate_batch,
            "batchnorm in train mode needs a batch of at least 2, got " + std::to_string(n));
  const std::size_t inner = input.size() / (n * c);
  const std::size_t count = n * inner;

  Tensor<T> out(input.shape());
  Tensor<T> xhat(input.shape());
  std::vector<T> inv_std(c);
  const T* x = input.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean = 0, var = 0;
    if (mode == Mode::train) {
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < inner; ++i) mean += x[(s * c + ch) * inner + i];
      mean /= static_cast<T>(count);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < inner; ++i) {
          const T d = x[(s * c + ch) * inner + i] - mean;
          var += d * d;
        }
      var /= static_cast<T>(count);
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      auto& rm = stats.running_mean.data()[ch];
      auto& rv = stats.running_var.data()[ch];
      rm = (1 - momentum) * rm + momentum * mean;
      rv = (1 - momentum) * rv + momentum * unbiased;
    } else {
      mean = stats.running_mean.data()[ch];
      var = stats.running_var.data()[ch];
    }
    const T istd = T{1} / std::sqrt(var + epsilon);
    inv_std[ch] = istd;
    const T g = gamma.data()[ch], b = beta.data()[ch];
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t at = (s * c + ch) * inner + i;
        const T xh = (x[at] - mean) * istd;
        xhat.data()[at] = xh;
        out.data()[at] = g * xh + b;
      }
  }
  if (cache) *cache = BatchNormCache<T>{std::move(xhat), std::move(inv_std), mode};
  return out;
}

template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                             const Tensor<T>& grad_out, Tensor<T>& grad_gamma,
                             Tensor<T>& grad_beta) {
  const Tensor<T>& xhat = cache.normalized;
  require(grad_out.shape() == xhat.shape(), ErrorKind::dimension, "batchnorm grad shape");
  const std::size_t n = xhat.extent(0), c = xhat.extent(1);
  const std::size_t inner = xhat.size() / (n * c);
  const T count = static_cast<T>(n * inner);
  Tensor<T> grad_in(xhat.shape());
  const T* gy = grad_out.data().data();
  const T* xh = xhat.data().data();
  T* gx = grad_in.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum_gy = 0, sum_gy_xh = 0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t at = (s * c + ch) * inner + i;
        sum_gy += gy[at];
        sum_gy_xh += gy[at] * xh[at];
      }
    grad_gamma.data()[ch] += sum_gy_xh;
    grad_beta.data()[ch] += sum_gy;
    const T scale = gamma.data()[ch] * cache.inv_std[ch];
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t at = (s * c + ch) * inner + i;
        if (cache.mode == Mode::train)
          gx[at] = scale / count * (count * gy[at] - sum_gy - xh[at] * sum_gy_xh);
        else
          gx[at] = scale * gy[at];
      }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// activations

enum class Activation { relu, sigmoid, tanh, softmax };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  if (s == "softmax") return Activation::softmax;
  throw Error(ErrorKind::config, "unknown activation '" + s + "'");
}

template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& input, Activation kind) {
  Tensor<T> out(input.shape());
  const T* x = input.data().data();
  T* y = out.data().data();
  const std::size_t n = input.size();
  switch (kind) {
    case Activation::relu:
      // NaN passes through so numeric failures stay visible downstream
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0 || x[i] != x[i] ? x[i] : T{0};
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
    case Activation::softmax: {
      const std::size_t width = input.shape().back();
      for (std::size_t r = 0; r < n / width; ++r) {
        const T* xr = x + r * width;
        T* yr = y + r * width;
        T mx = xr[0];
        for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, xr[j]);
        T sum = 0;
        for (std::size_t j = 0; j < width; ++j) {
          yr[j] = std::exp(xr[j] - mx);
          sum += yr[j];
        }
        for (std::size_t j = 0; j < width; ++j) yr[j] /= sum;
      }
      break;
    }
  }
  return out;
}

/// Input gradient given the forward input and output.
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& input, const Tensor<T>& output, Activation kind,
                              const Tensor<T>& grad_out) {
  require(grad_out.shape() == output.shape(), ErrorKind::dimension, "activation grad shape");
  Tensor<T> grad_in(input.shape());
  const T* x = input.data().data();
  const T* y = output.data().data();
  const T* gy = grad_out.data().data();
  T* gx = grad_in.data().data();
  const std::size_t n = input.size();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) gx[i] = x[i] > 0 ? gy[i] : T{0};
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) gx[i] = gy[i] * y[i] * (1 - y[i]);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) gx[i] = gy[i] * (1 - y[i] * y[i]);
      break;
    case Activation::softmax: {
      const std::size_t width = input.shape().back();
      for (std::size_t r = 0; r < n / width; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < width; ++j) dot += gy[r * width + j] * y[r * width + j];
        for (std::size_t j = 0; j < width; ++j)
          gx[r * width + j] = y[r * width + j] * (gy[r * width + j] - dot);
      }
      break;
    }
  }
  return grad_in;
}

}  // namespace gaitlab
