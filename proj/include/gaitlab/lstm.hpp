#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "gaitlab/error.hpp"
#include "gaitlab/kernels.hpp"
#include "gaitlab/tensor.hpp"

namespace gaitlab {

/// Gate rows are stacked in the order input, forget, candidate, output.
template <typename T>
struct LstmCell {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Tensor<T> w_input;   // [4H, F]
  Tensor<T> w_hidden;  // [4H, H]
  Tensor<T> bias;      // [4H]

  static LstmCell zeros(std::size_t input_size, std::size_t hidden_size) {
    return LstmCell{input_size, hidden_size, Tensor<T>({4 * hidden_size, input_size}),
                    Tensor<T>({4 * hidden_size, hidden_size}), Tensor<T>({4 * hidden_size})};
  }

  void validate() const {
    require(input_size > 0 && hidden_size > 0, ErrorKind::config, "LSTM sizes must be positive");
    require(w_input.shape() == Shape{4 * hidden_size, input_size}, ErrorKind::dimension,
            "LSTM input weights must be " + shape_str({4 * hidden_size, input_size}));
    require(w_hidden.shape() == Shape{4 * hidden_size, hidden_size}, ErrorKind::dimension,
            "LSTM hidden weights must be " + shape_str({4 * hidden_size, hidden_size}));
    require(bias.shape() == Shape{4 * hidden_size}, ErrorKind::dimension, "LSTM bias shape");
  }
};

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

/// Per-step values kept for backpropagation through time.
template <typename T>
struct LstmStepCache {
  std::vector<T> x, h_prev, c_prev, i, f, g, o, c, tanh_c;
};

namespace detail {

template <typename T>
void lstm_step_raw(const LstmCell<T>& cell, const T* x, const T* h, const T* c, T* h_out,
                   T* c_out, LstmStepCache<T>* cache) {
  const std::size_t hs = cell.hidden_size, fs = cell.input_size;
  const T* wx = cell.w_input.data().data();
  const T* wh = cell.w_hidden.data().data();
  const T* b = cell.bias.data().data();
  std::vector<T> pre(4 * hs);
  for (std::size_t r = 0; r < 4 * hs; ++r) {
    T acc = 0;
    const T* wxr = wx + r * fs;
    for (std::size_t j = 0; j < fs; ++j) acc += wxr[j] * x[j];
    const T* whr = wh + r * hs;
    for (std::size_t j = 0; j < hs; ++j) acc += whr[j] * h[j];
    pre[r] = acc + b[r];
  }
  if (cache) {
    cache->x.assign(x, x + fs);
    cache->h_prev.assign(h, h + hs);
    cache->c_prev.assign(c, c + hs);
    cache->i.resize(hs), cache->f.resize(hs), cache->g.resize(hs), cache->o.resize(hs);
    cache->c.resize(hs), cache->tanh_c.resize(hs);
  }
  for (std::size_t k = 0; k < hs; ++k) {
    const T ig = sigmoid(pre[k]);
    const T fg = sigmoid(pre[hs + k]);
    const T gg = std::tanh(pre[2 * hs + k]);
    const T og = sigmoid(pre[3 * hs + k]);
    const T cn = fg * c[k] + ig * gg;
    const T tc = std::tanh(cn);
    c_out[k] = cn;
    h_out[k] = og * tc;
    if (cache) {
      cache->i[k] = ig, cache->f[k] = fg, cache->g[k] = gg, cache->o[k] = og;
      cache->c[k] = cn, cache->tanh_c[k] = tc;
    }
  }
}

}  // namespace detail

template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& c,
                       const LstmCell<T>& cell) {
  cell.validate();
  require(x.size() == cell.input_size, ErrorKind::dimension,
          "LSTM input length " + std::to_string(x.size()) + " vs cell input size " +
              std::to_string(cell.input_size));
  require(h.size() == cell.hidden_size && c.size() == cell.hidden_size, ErrorKind::dimension,
          "LSTM state length mismatch");
  LstmState<T> next{Tensor<T>({cell.hidden_size}), Tensor<T>({cell.hidden_size})};
  detail::lstm_step_raw(cell, x.data().data(), h.data().data(), c.data().data(),
                        next.h.data().data(), next.c.data().data(),
                        static_cast<LstmStepCache<T>*>(nullptr));
  return next;
}

enum class Direction { forward, bidirectional };

/// One directional pass from a zero state. Output row t holds h_t; in reverse
/// mode time runs from T-1 down to 0 but outputs stay aligned to input time.
template <typename T>
Tensor<T> lstm_pass(const Tensor<T>& seq, const LstmCell<T>& cell, bool reverse,
                    std::vector<LstmStepCache<T>>* trace = nullptr) {
  require(seq.rank() == 2, ErrorKind::dimension, "LSTM sequence must be [T, F]");
  const std::size_t steps = seq.extent(0);
  require(seq.extent(1) == cell.input_size, ErrorKind::dimension,
          "LSTM feature width " + std::to_string(seq.extent(1)) + " vs cell input size " +
              std::to_string(cell.input_size));
  const std::size_t hs = cell.hidden_size;
  Tensor<T> out({steps, hs});
  std::vector<T> h(hs, T{0}), c(hs, T{0}), hn(hs), cn(hs);
  if (trace) trace->assign(steps, {});
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    detail::lstm_step_raw(cell, seq.data().data() + t * cell.input_size, h.data(), c.data(),
                          hn.data(), cn.data(), trace ? &(*trace)[k] : nullptr);
    h.swap(hn);
    c.swap(cn);
    std::copy(h.begin(), h.end(), out.data().begin() + static_cast<std::ptrdiff_t>(t * hs));
  }
  return out;
}

template <typename T>
Tensor<T> lstm_sequence(const Tensor<T>& seq, const LstmCell<T>& cell, Direction direction,
                        const LstmCell<T>* reverse_cell = nullptr) {
  cell.validate();
  require(seq.rank() == 2 && seq.extent(0) >= 1, ErrorKind::dimension,
          "LSTM needs a non-empty [T, F] sequence");
  Tensor<T> fwd = lstm_pass(seq, cell, false);
  if (direction == Direction::forward) return fwd;
  const LstmCell<T>& rc = reverse_cell ? *reverse_cell : cell;
  rc.validate();
  Tensor<T> bwd = lstm_pass(seq, rc, true);
  const std::size_t steps = seq.extent(0), hf = cell.hidden_size, hb = rc.hidden_size;
  Tensor<T> out({steps, hf + hb});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t k = 0; k < hf; ++k) out(t, k) = fwd(t, k);
    for (std::size_t k = 0; k < hb; ++k) out(t, hf + k) = bwd(t, k);
  }
  return out;
}

template <typename T>
struct LstmGrads {
  Tensor<T> w_input, w_hidden, bias;
};

/// Full backpropagation through time for one directional pass. `grad_h` is
/// [T, H] aligned to input time; returns the [T, F] input gradient and
/// accumulates parameter gradients into `grads`.
template <typename T>
Tensor<T> lstm_pass_backward(const LstmCell<T>& cell, const std::vector<LstmStepCache<T>>& trace,
                             const Tensor<T>& grad_h, bool reverse, LstmGrads<T>& grads) {
  const std::size_t steps = trace.size();
  const std::size_t hs = cell.hidden_size, fs = cell.input_size;
  require(grad_h.shape() == Shape{steps, hs}, ErrorKind::dimension, "LSTM grad shape mismatch");
  Tensor<T> grad_x({steps, fs});
  std::vector<T> dh_next(hs, T{0}), dc_next(hs, T{0}), da(4 * hs);
  const T* wx = cell.w_input.data().data();
  const T* wh = cell.w_hidden.data().data();
  T* gwx = grads.w_input.data().data();
  T* gwh = grads.w_hidden.data().data();
  T* gb = grads.bias.data().data();
  for (std::size_t k = steps; k-- > 0;) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    const auto& s = trace[k];
    for (std::size_t j = 0; j < hs; ++j) {
      const T dh = grad_h.data()[t * hs + j] + dh_next[j];
      const T d_o = dh * s.tanh_c[j];
      const T dc = dh * s.o[j] * (1 - s.tanh_c[j] * s.tanh_c[j]) + dc_next[j];
      const T di = dc * s.g[j];
      const T dg = dc * s.i[j];
      const T df = dc * s.c_prev[j];
      dc_next[j] = dc * s.f[j];
      da[j] = di * s.i[j] * (1 - s.i[j]);
      da[hs + j] = df * s.f[j] * (1 - s.f[j]);
      da[2 * hs + j] = dg * (1 - s.g[j] * s.g[j]);
      da[3 * hs + j] = d_o * s.o[j] * (1 - s.o[j]);
    }
    std::fill(dh_next.begin(), dh_next.end(), T{0});
    T* gx = grad_x.data().data() + t * fs;
    for (std::size_t r = 0; r < 4 * hs; ++r) {
      const T a = da[r];
      gb[r] += a;
      for (std::size_t j = 0; j < fs; ++j) {
        gwx[r * fs + j] += a * s.x[j];
        gx[j] += wx[r * fs + j] * a;
      }
      for (std::size_t j = 0; j < hs; ++j) {
        gwh[r * hs + j] += a * s.h_prev[j];
        dh_next[j] += wh[r * hs + j] * a;
      }
    }
  }
  return grad_x;
}

}  // namespace gaitlab
