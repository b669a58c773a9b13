#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gaitlab/error.hpp"
#include "gaitlab/kernels.hpp"
#include "gaitlab/lstm.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/tensor.hpp"

namespace gaitlab {

enum class LayerKind {
  conv1d,
  conv3d,
  batchnorm,
  pool,
  dropout,
  dense,
  lstm,
  activation,
  permute,
  unsqueeze,
  frame_pool,
  temporal_mean,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::pool: return "pool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::dense: return "dense";
    case LayerKind::lstm: return "lstm";
    case LayerKind::activation: return "activation";
    case LayerKind::permute: return "permute";
    case LayerKind::unsqueeze: return "unsqueeze";
    case LayerKind::frame_pool: return "frame_pool";
    case LayerKind::temporal_mean: return "temporal_mean";
  }
  return "?";
}

/// A named parameter and its gradient. Non-trainable entries (batchnorm
/// running statistics) are checkpointed but skipped by the optimizer.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

template <typename T>
Param<T> make_param(std::string name, Shape shape, bool trainable = true) {
  return Param<T>{std::move(name), Tensor<T>(shape), Tensor<T>(shape), trainable};
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double bound) {
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

/**
 * Differentiable layer over batched tensors (leading axis = batch).
 *
 * `forward` caches whatever `backward` needs; `backward` overwrites the
 * parameter gradients with those of the most recent forward batch and
 * returns the input gradient.
 */
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  /// Per-sample output shape for a per-sample input shape (no batch axis).
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& input, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Space-separated key=value description written to checkpoint manifests.
  virtual std::string describe() const { return to_string(kind()); }

  virtual std::vector<Param<T>*> params() { return {}; }
  virtual void initialize(Rng&) {}
  virtual void set_seed(std::uint64_t) {}

 protected:
  void require_forward() const {
    require(has_forward_, ErrorKind::state,
            std::string("backward called before forward on ") + to_string(kind()) + " layer");
  }
  static void require_batch(const Tensor<T>& t, std::size_t rank, const char* what) {
    require(t.rank() == rank, ErrorKind::dimension,
            std::string(what) + " expects a rank-" + std::to_string(rank) + " batch, got " +
                shape_str(t.shape()));
  }

  bool has_forward_ = false;
};

// ---------------------------------------------------------------------------

template <typename T>
class Conv1d final : public Layer<T> {
 public:
  Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel = 3,
         std::size_t stride = 1, std::size_t padding = 1)
      : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding),
        weight_(make_param<T>("weight", {out_channels, in_channels, kernel})),
        bias_(make_param<T>("bias", {out_channels})) {}

  LayerKind kind() const override { return LayerKind::conv1d; }
  std::size_t out_channels() const { return out_; }

  Shape output_shape(const Shape& in) const override {
    require(in.size() == 2 && in[0] == in_, ErrorKind::dimension,
            "conv1d expects [" + std::to_string(in_) + ", L], got " + shape_str(in));
    return {out_, conv_out_extent(in[1], kernel_, stride_, padding_)};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->require_batch(x, 3, "conv1d");
    input_ = x;
    const Shape os = output_shape({x.extent(1), x.extent(2)});
    Tensor<T> y({x.extent(0), os[0], os[1]});
    for (std::size_t n = 0; n < x.extent(0); ++n)
      y.set_slice(n, conv1d_forward(x.slice(n), weight_.value, bias_.value, stride_, padding_));
    this->has_forward_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    weight_.grad.fill(0);
    bias_.grad.fill(0);
    Tensor<T> gx(input_.shape());
    for (std::size_t n = 0; n < input_.extent(0); ++n)
      gx.set_slice(n, conv1d_backward(input_.slice(n), weight_.value, gy.slice(n), stride_,
                                       padding_, weight_.grad, bias_.grad));
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void initialize(Rng& rng) override {
    fill_uniform(weight_.value, rng, std::sqrt(6.0 / double((in_ + out_) * kernel_)));
    bias_.value.fill(0);
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv1d>(*this); }
  std::string describe() const override {
    std::ostringstream os;
    os << "conv1d in=" << in_ << " out=" << out_ << " kernel=" << kernel_ << " stride=" << stride_
       << " padding=" << padding_;
    return os.str();
  }

 private:
  std::size_t in_, out_, kernel_, stride_, padding_;
  Param<T> weight_, bias_;
  Tensor<T> input_;
};

template <typename T>
class Conv3d final : public Layer<T> {
 public:
  Conv3d(std::size_t in_channels, std::size_t out_channels, Triple kernel = {3, 3, 3},
         Triple stride = {1, 1, 1}, Triple padding = {1, 1, 1})
      : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding),
        weight_(make_param<T>("weight", {out_channels, in_channels, kernel[0], kernel[1], kernel[2]})),
        bias_(make_param<T>("bias", {out_channels})) {}

  LayerKind kind() const override { return LayerKind::conv3d; }
  std::size_t out_channels() const { return out_; }

  Shape output_shape(const Shape& in) const override {
    require(in.size() == 4 && in[0] == in_, ErrorKind::dimension,
            "conv3d expects [" + std::to_string(in_) + ", D, H, W], got " + shape_str(in));
    Shape out{out_, 0, 0, 0};
    for (std::size_t a = 0; a < 3; ++a)
      out[a + 1] = conv_out_extent(in[a + 1], kernel_[a], stride_[a], padding_[a]);
    return out;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->require_batch(x, 5, "conv3d");
    input_ = x;
    Shape os = output_shape({x.extent(1), x.extent(2), x.extent(3), x.extent(4)});
    os.insert(os.begin(), x.extent(0));
    Tensor<T> y(os);
    for (std::size_t n = 0; n < x.extent(0); ++n)
      y.set_slice(n, conv3d_forward(x.slice(n), weight_.value, bias_.value, stride_, padding_));
    this->has_forward_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    weight_.grad.fill(0);
    bias_.grad.fill(0);
    Tensor<T> gx(input_.shape());
    for (std::size_t n = 0; n < input_.extent(0); ++n)
      gx.set_slice(n, conv3d_backward(input_.slice(n), weight_.value, gy.slice(n), stride_,
                                       padding_, weight_.grad, bias_.grad));
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void initialize(Rng& rng) override {
    const double vol = double(kernel_[0] * kernel_[1] * kernel_[2]);
    fill_uniform(weight_.value, rng, std::sqrt(6.0 / (double(in_ + out_) * vol)));
    bias_.value.fill(0);
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv3d>(*this); }
  std::string describe() const override {
    std::ostringstream os;
    os << "conv3d in=" << in_ << " out=" << out_ << " kernel=" << kernel_[0] << 'x' << kernel_[1]
       << 'x' << kernel_[2] << " stride=" << stride_[0] << 'x' << stride_[1] << 'x' << stride_[2]
       << " padding=" << padding_[0] << 'x' << padding_[1] << 'x' << padding_[2];
    return os.str();
  }

 private:
  std::size_t in_, out_;
  Triple kernel_, stride_, padding_;
  Param<T> weight_, bias_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t channels, T momentum = T(0.1), T epsilon = T(1e-5))
      : channels_(channels), momentum_(momentum), epsilon_(epsilon),
        gamma_(make_param<T>("gamma", {channels})), beta_(make_param<T>("beta", {channels})),
        running_mean_(make_param<T>("running_mean", {channels}, false)),
        running_var_(make_param<T>("running_var", {channels}, false)) {
    gamma_.value.fill(1);
    running_var_.value.fill(1);
  }

  LayerKind kind() const override { return LayerKind::batchnorm; }

  Shape output_shape(const Shape& in) const override {
    require(in.size() >= 1 && in[0] == channels_, ErrorKind::dimension,
            "batchnorm expects " + std::to_string(channels_) + " channels, got " + shape_str(in));
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    require(x.rank() >= 2 && x.extent(1) == channels_, ErrorKind::dimension,
            "batchnorm channel mismatch for " + shape_str(x.shape()));
    BatchNormStats<T> stats{running_mean_.value, running_var_.value};
    Tensor<T> y = batchnorm_forward(x, gamma_.value, beta_.value, mode, stats, momentum_,
                                    epsilon_, &cache_);
    running_mean_.value = std::move(stats.running_mean);
    running_var_.value = std::move(stats.running_var);
    this->has_forward_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    gamma_.grad.fill(0);
    beta_.grad.fill(0);
    return batchnorm_backward(cache_, gamma_.value, gy, gamma_.grad, beta_.grad);
  }

  std::vector<Param<T>*> params() override {
    return {&gamma_, &beta_, &running_mean_, &running_var_};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }
  std::string describe() const override {
    std::ostringstream os;
    os << "batchnorm channels=" << channels_ << " momentum=" << momentum_
       << " epsilon=" << epsilon_;
    return os.str();
  }

 private:
  std::size_t channels_;
  T momentum_, epsilon_;
  Param<T> gamma_, beta_, running_mean_, running_var_;
  BatchNormCache<T> cache_;
};

/// Max pooling over `axes` of each sample (axes exclude the batch axis).
template <typename T>
class MaxPool final : public Layer<T> {
 public:
  MaxPool(std::size_t window, std::size_t stride, std::vector<std::size_t> axes)
      : window_(window), stride_(stride), axes_(std::move(axes)) {}

  LayerKind kind() const override { return LayerKind::pool; }

  Shape output_shape(const Shape& in) const override {
    Shape out = in;
    for (std::size_t a : axes_) {
      require(a < in.size(), ErrorKind::dimension, "pool axis out of range for " + shape_str(in));
      require(window_ <= in[a], ErrorKind::dimension,
              "pool window " + std::to_string(window_) + " exceeds extent " +
                  std::to_string(in[a]) + " of " + shape_str(in));
      out[a] = (in[a] - window_) / stride_ + 1;
    }
    return out;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    const Shape sample(x.shape().begin() + 1, x.shape().end());
    Shape os = output_shape(sample);
    os.insert(os.begin(), x.extent(0));
    Tensor<T> y(os);
    argmax_.assign(x.extent(0), {});
    for (std::size_t n = 0; n < x.extent(0); ++n) {
      auto r = maxpool(x.slice(n).reshaped(sample), window_, stride_, axes_);
      y.set_slice(n, r.output);
      argmax_[n] = std::move(r.argmax);
    }
    this->has_forward_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    Tensor<T> gx(in_shape_);
    const Shape sample(in_shape_.begin() + 1, in_shape_.end());
    for (std::size_t n = 0; n < in_shape_[0]; ++n)
      gx.set_slice(n, maxpool_backward(sample, argmax_[n], gy.slice(n)));
    return gx;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool>(*this); }
  std::string describe() const override {
    std::ostringstream os;
    os << "pool window=" << window_ << " stride=" << stride_ << " axes=";
    for (std::size_t i = 0; i < axes_.size(); ++i) os << (i ? "," : "") << axes_[i];
    return os.str();
  }

 private:
  std::size_t window_, stride_;
  std::vector<std::size_t> axes_;
  Shape in_shape_;
  std::vector<std::vector<std::size_t>> argmax_;
};

// ---------------------------------------------------------------------------
// dropout

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // 0 or 1/(1-rate) per element
};

/// Inverted dropout; eval mode and rate 0 are the identity.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, Mode mode,
                                 std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::config,
          "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  DropoutResult<T> res{input, Tensor<T>(input.shape(), T{1})};
  if (mode == Mode::eval || rate == 0.0) return res;
  Rng rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T m = rng.uniform() < rate ? T{0} : keep_scale;
    res.mask.data()[i] = m;
    res.output.data()[i] = input.data()[i] * m;
  }
  return res;
}

template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    require(rate >= 0.0 && rate < 1.0, ErrorKind::config,
            "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }

  LayerKind kind() const override { return LayerKind::dropout; }
  Shape output_shape(const Shape& in) const override { return in; }
  double rate() const { return rate_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    auto r = dropout_forward(x, rate_, mode, seed_);
    mask_ = std::move(r.mask);
    this->has_forward_ = true;
    return std::move(r.output);
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    require(gy.shape() == mask_.shape(), ErrorKind::dimension, "dropout grad shape");
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx.data()[i] = gy.data()[i] * mask_.data()[i];
    return gx;
  }

  void set_seed(std::uint64_t seed) override { seed_ = seed; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }
  std::string describe() const override {
    std::ostringstream os;
    os << "dropout rate=" << rate_;
    return os.str();
  }

 private:
  double rate_;
  std::uint64_t seed_ = 0;
  Tensor<T> mask_;
};

// ---------------------------------------------------------------------------
// dense

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  require(input.rank() == 2 && weights.rank() == 2, ErrorKind::dimension,
          "dense expects input [N, F_in] and weights [F_in, F_out]");
  const std::size_t n = input.extent(0), fin = input.extent(1), fout = weights.extent(1);
  require(weights.extent(0) == fin, ErrorKind::dimension,
          "dense inner dimensions disagree: " + shape_str(input.shape()) + " x " +
              shape_str(weights.shape()));
  require(bias.size() == fout, ErrorKind::dimension, "dense bias length mismatch");
  Tensor<T> out({n, fout});
  const T* x = input.data().data();
  const T* w = weights.data().data();
  T* y = out.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    T* yr = y + r * fout;
    for (std::size_t k = 0; k < fin; ++k) {
      const T xv = x[r * fin + k];
      const T* wk = w + k * fout;
      for (std::size_t j = 0; j < fout; ++j) yr[j] += xv * wk[j];
    }
    for (std::size_t j = 0; j < fout; ++j) yr[j] += bias.data()[j];
  }
  return out;
}

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in_features, std::size_t out_features)
      : in_(in_features), out_(out_features),
        weight_(make_param<T>("weight", {in_features, out_features})),
        bias_(make_param<T>("bias", {out_features})) {}

  LayerKind kind() const override { return LayerKind::dense; }

  Shape output_shape(const Shape& in) const override {
    require(in.size() == 1 && in[0] == in_, ErrorKind::dimension,
            "dense expects [" + std::to_string(in_) + "], got " + shape_str(in));
    return {out_};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->require_batch(x, 2, "dense");
    input_ = x;
    this->has_forward_ = true;
    return dense_forward(x, weight_.value, bias_.value);
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    const std::size_t n = input_.extent(0);
    require(gy.shape() == Shape{n, out_}, ErrorKind::dimension, "dense grad shape");
    weight_.grad.fill(0);
    bias_.grad.fill(0);
    Tensor<T> gx({n, in_});
    const T* x = input_.data().data();
    const T* w = weight_.value.data().data();
    const T* g = gy.data().data();
    T* gw = weight_.grad.data().data();
    T* gb = bias_.grad.data().data();
    T* gxp = gx.data().data();
    for (std::size_t r = 0; r < n; ++r) {
      const T* gr = g + r * out_;
      for (std::size_t j = 0; j < out_; ++j) gb[j] += gr[j];
      for (std::size_t k = 0; k < in_; ++k) {
        const T xv = x[r * in_ + k];
        const T* wk = w + k * out_;
        T* gwk = gw + k * out_;
        T acc = 0;
        for (std::size_t j = 0; j < out_; ++j) {
          gwk[j] += xv * gr[j];
          acc += wk[j] * gr[j];
        }
        gxp[r * in_ + k] = acc;
      }
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void initialize(Rng& rng) override {
    fill_uniform(weight_.value, rng, std::sqrt(6.0 / double(in_ + out_)));
    bias_.value.fill(0);
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }
  std::string describe() const override {
    std::ostringstream os;
    os << "dense in=" << in_ << " out=" << out_;
    return os.str();
  }

 private:
  std::size_t in_, out_;
  Param<T> weight_, bias_;
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------

/// LSTM over [N, T, F]. With `return_sequences` the output is [N, T, H·dirs];
/// otherwise [N, H·dirs] holding the final state of each direction.
template <typename T>
class Lstm final : public Layer<T> {
 public:
  Lstm(std::size_t input_size, std::size_t hidden_size, bool bidirectional, bool return_sequences)
      : input_(input_size), hidden_(hidden_size), bidirectional_(bidirectional),
        return_sequences_(return_sequences) {
    add_direction("");
    if (bidirectional_) add_direction("_rev");
  }

  LayerKind kind() const override { return LayerKind::lstm; }
  std::size_t output_width() const { return hidden_ * (bidirectional_ ? 2 : 1); }

  Shape output_shape(const Shape& in) const override {
    require(in.size() == 2 && in[1] == input_, ErrorKind::dimension,
            "lstm expects [T, " + std::to_string(input_) + "], got " + shape_str(in));
    if (return_sequences_) return {in[0], output_width()};
    return {output_width()};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->require_batch(x, 3, "lstm");
    require(x.extent(2) == input_, ErrorKind::dimension,
            "lstm feature width " + std::to_string(x.extent(2)) + " vs " + std::to_string(input_));
    const std::size_t n = x.extent(0), steps = x.extent(1), width = output_width();
    in_shape_ = x.shape();
    traces_.assign(n * directions(), {});
    Tensor<T> y(return_sequences_ ? Shape{n, steps, width} : Shape{n, width});
    for (std::size_t d = 0; d < directions(); ++d) {
      const LstmCell<T> c = cell(d);
      for (std::size_t s = 0; s < n; ++s) {
        Tensor<T> h = lstm_pass(x.slice(s), c, d == 1, &traces_[s * directions() + d]);
        const std::size_t off = d * hidden_;
        if (return_sequences_) {
          for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t k = 0; k < hidden_; ++k)
              y.data()[(s * steps + t) * width + off + k] = h.data()[t * hidden_ + k];
        } else {
          const std::size_t last = d == 0 ? steps - 1 : 0;
          for (std::size_t k = 0; k < hidden_; ++k)
            y.data()[s * width + off + k] = h.data()[last * hidden_ + k];
        }
      }
    }
    this->has_forward_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    const std::size_t n = in_shape_[0], steps = in_shape_[1], width = output_width();
    for (auto& p : params_) p.grad.fill(0);
    Tensor<T> gx(in_shape_);
    for (std::size_t d = 0; d < directions(); ++d) {
      const LstmCell<T> c = cell(d);
      LstmGrads<T> grads{params_[3 * d].grad, params_[3 * d + 1].grad, params_[3 * d + 2].grad};
      for (std::size_t s = 0; s < n; ++s) {
        Tensor<T> gh({steps, hidden_});
        const std::size_t off = d * hidden_;
        if (return_sequences_) {
          for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t k = 0; k < hidden_; ++k)
              gh.data()[t * hidden_ + k] = gy.data()[(s * steps + t) * width + off + k];
        } else {
          const std::size_t last = d == 0 ? steps - 1 : 0;
          for (std::size_t k = 0; k < hidden_; ++k)
            gh.data()[last * hidden_ + k] = gy.data()[s * width + off + k];
        }
        Tensor<T> gxs = lstm_pass_backward(c, traces_[s * directions() + d], gh, d == 1, grads);
        for (std::size_t i = 0; i < gxs.size(); ++i)
          gx.data()[s * steps * input_ + i] += gxs.data()[i];
      }
      params_[3 * d].grad = std::move(grads.w_input);
      params_[3 * d + 1].grad = std::move(grads.w_hidden);
      params_[3 * d + 2].grad = std::move(grads.bias);
    }
    return gx;
  }

  std::vector<Param<T>*> params() override {
    std::vector<Param<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  void initialize(Rng& rng) override {
    const double bound = 1.0 / std::sqrt(double(hidden_));
    for (std::size_t d = 0; d < directions(); ++d) {
      fill_uniform(params_[3 * d].value, rng, bound);
      fill_uniform(params_[3 * d + 1].value, rng, bound);
      auto& b = params_[3 * d + 2].value;
      b.fill(0);
      for (std::size_t k = 0; k < hidden_; ++k) b.data()[hidden_ + k] = 1;  // forget gate
    }
  }

  LstmCell<T> cell(std::size_t direction) const {
    return LstmCell<T>{input_, hidden_, params_[3 * direction].value,
                       params_[3 * direction + 1].value, params_[3 * direction + 2].value};
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Lstm>(*this); }
  std::string describe() const override {
    std::ostringstream os;
    os << "lstm in=" << input_ << " hidden=" << hidden_
       << " bidirectional=" << (bidirectional_ ? 1 : 0)
       << " return_sequences=" << (return_sequences_ ? 1 : 0);
    return os.str();
  }

 private:
  std::size_t directions() const { return bidirectional_ ? 2 : 1; }
  void add_direction(const std::string& suffix) {
    params_.push_back(make_param<T>("w_input" + suffix, {4 * hidden_, input_}));
    params_.push_back(make_param<T>("w_hidden" + suffix, {4 * hidden_, hidden_}));
    params_.push_back(make_param<T>("bias" + suffix, {4 * hidden_}));
  }

  std::size_t input_, hidden_;
  bool bidirectional_, return_sequences_;
  std::vector<Param<T>> params_;
  Shape in_shape_;
  std::vector<std::vector<LstmStepCache<T>>> traces_;
};

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(Activation a) : act_(a) {}

  LayerKind kind() const override { return LayerKind::activation; }
  Activation activation() const { return act_; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    input_ = x;
    output_ = apply_activation(x, act_);
    this->has_forward_ = true;
    return output_;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    return activation_backward(input_, output_, act_, gy);
  }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<ActivationLayer>(*this);
  }
  std::string describe() const override {
    return std::string("activation fn=") + to_string(act_);
  }

 private:
  Activation act_;
  Tensor<T> input_, output_;
};

/// [N, A, B] -> [N, B, A]: switches between channel-major (conv) and
/// time-major (recurrent) layouts.
template <typename T>
class Permute final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::permute; }
  Shape output_shape(const Shape& in) const override {
    require(in.size() == 2, ErrorKind::dimension, "permute expects [A, B], got " + shape_str(in));
    return {in[1], in[0]};
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->require_batch(x, 3, "permute");
    this->has_forward_ = true;
    return transpose(x);
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    return transpose(gy);
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Permute>(*this); }

 private:
  static Tensor<T> transpose(const Tensor<T>& x) {
    const std::size_t n = x.extent(0), a = x.extent(1), b = x.extent(2);
    Tensor<T> y({n, b, a});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
          y.data()[(s * b + j) * a + i] = x.data()[(s * a + i) * b + j];
    return y;
  }
};

/// [N, ...] -> [N, 1, ...]
template <typename T>
class Unsqueeze final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::unsqueeze; }
  Shape output_shape(const Shape& in) const override {
    Shape out = in;
    out.insert(out.begin(), 1);
    return out;
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    Shape s = x.shape();
    s.insert(s.begin() + 1, 1);
    this->has_forward_ = true;
    return x.reshaped(s);
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    return gy.reshaped(in_shape_);
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Unsqueeze>(*this); }

 private:
  Shape in_shape_;
};

/// [N, C, D, H, W] -> [N, D, C]: spatial mean per frame and channel.
template <typename T>
class FramePool final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::frame_pool; }
  Shape output_shape(const Shape& in) const override {
    require(in.size() == 4, ErrorKind::dimension,
            "frame_pool expects [C, D, H, W], got " + shape_str(in));
    return {in[1], in[0]};
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->require_batch(x, 5, "frame_pool");
    in_shape_ = x.shape();
    const std::size_t n = x.extent(0), c = x.extent(1), d = x.extent(2);
    const std::size_t area = x.extent(3) * x.extent(4);
    Tensor<T> y({n, d, c});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t f = 0; f < d; ++f) {
          const T* p = x.data().data() + ((s * c + ch) * d + f) * area;
          T acc = 0;
          for (std::size_t i = 0; i < area; ++i) acc += p[i];
          y.data()[(s * d + f) * c + ch] = acc / static_cast<T>(area);
        }
    this->has_forward_ = true;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    const std::size_t n = in_shape_[0], c = in_shape_[1], d = in_shape_[2];
    const std::size_t area = in_shape_[3] * in_shape_[4];
    Tensor<T> gx(in_shape_);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t f = 0; f < d; ++f) {
          const T g = gy.data()[(s * d + f) * c + ch] / static_cast<T>(area);
          T* p = gx.data().data() + ((s * c + ch) * d + f) * area;
          for (std::size_t i = 0; i < area; ++i) p[i] = g;
        }
    return gx;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FramePool>(*this); }

 private:
  Shape in_shape_;
};

/// [N, T, F] -> [N, F]: order-free temporal average (CNN-only ablation head).
template <typename T>
class TemporalMean final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::temporal_mean; }
  Shape output_shape(const Shape& in) const override {
    require(in.size() == 2, ErrorKind::dimension,
            "temporal_mean expects [T, F], got " + shape_str(in));
    return {in[1]};
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->require_batch(x, 3, "temporal_mean");
    in_shape_ = x.shape();
    const std::size_t n = x.extent(0), steps = x.extent(1), f = x.extent(2);
    Tensor<T> y({n, f});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t k = 0; k < f; ++k) y.data()[s * f + k] += x.data()[(s * steps + t) * f + k];
    for (T& v : y.data()) v /= static_cast<T>(steps);
    this->has_forward_ = true;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    this->require_forward();
    const std::size_t n = in_shape_[0], steps = in_shape_[1], f = in_shape_[2];
    Tensor<T> gx(in_shape_);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t k = 0; k < f; ++k)
          gx.data()[(s * steps + t) * f + k] = gy.data()[s * f + k] / static_cast<T>(steps);
    return gx;
  }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<TemporalMean>(*this);
  }

 private:
  Shape in_shape_;
};

}  // namespace gaitlab
