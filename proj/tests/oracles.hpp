#pragma once

// Independent reference implementations used only by tests. These are written
// as plain nested loops over output elements and share no code with the
// library kernels beyond the Tensor container.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "gaitlab/tensor.hpp"

namespace oracle {

using gaitlab::Tensor;

inline Tensor<double> conv1d(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, std::size_t stride, std::size_t pad) {
  const std::size_t cin = x.shape()[0], len = x.shape()[1];
  const std::size_t cout = w.shape()[0], k = w.shape()[2];
  const std::size_t lout = (len + 2 * pad - k) / stride + 1;
  Tensor<double> y({cout, lout});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t lo = 0; lo < lout; ++lo) {
      double acc = 0;
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t kk = 0; kk < k; ++kk) {
          const long li = long(lo * stride + kk) - long(pad);
          if (li < 0 || li >= long(len)) continue;
          acc += x(ci, std::size_t(li)) * w(co, ci, kk);
        }
      y(co, lo) = acc + b(co);
    }
  return y;
}

inline Tensor<double> conv3d(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, std::array<std::size_t, 3> st,
                             std::array<std::size_t, 3> pd) {
  const std::size_t cin = x.shape()[0];
  const std::size_t cout = w.shape()[0];
  std::array<std::size_t, 3> in{x.shape()[1], x.shape()[2], x.shape()[3]};
  std::array<std::size_t, 3> k{w.shape()[2], w.shape()[3], w.shape()[4]};
  std::array<std::size_t, 3> o{};
  for (int a = 0; a < 3; ++a) o[a] = (in[a] + 2 * pd[a] - k[a]) / st[a] + 1;
  Tensor<double> y({cout, o[0], o[1], o[2]});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t od = 0; od < o[0]; ++od)
      for (std::size_t oh = 0; oh < o[1]; ++oh)
        for (std::size_t ow = 0; ow < o[2]; ++ow) {
          double acc = 0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t a = 0; a < k[0]; ++a)
              for (std::size_t bb = 0; bb < k[1]; ++bb)
                for (std::size_t c = 0; c < k[2]; ++c) {
                  const long id = long(od * st[0] + a) - long(pd[0]);
                  const long ih = long(oh * st[1] + bb) - long(pd[1]);
                  const long iw = long(ow * st[2] + c) - long(pd[2]);
                  if (id < 0 || ih < 0 || iw < 0 || id >= long(in[0]) || ih >= long(in[1]) ||
                      iw >= long(in[2]))
                    continue;
                  acc += x(ci, std::size_t(id), std::size_t(ih), std::size_t(iw)) *
                         w(co, ci, a, bb, c);
                }
          y(co, od, oh, ow) = acc + b(co);
        }
  return y;
}

/// Pools the trailing two axes of a rank-3 tensor with equal window/stride.
inline Tensor<double> maxpool_last2(const Tensor<double>& x, std::size_t win, std::size_t st) {
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = (h - win) / st + 1, ow = (w - win) / st + 1;
  Tensor<double> y({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double best = x(ch, i * st, j * st);
        for (std::size_t a = 0; a < win; ++a)
          for (std::size_t b = 0; b < win; ++b) best = std::max(best, x(ch, i * st + a, j * st + b));
        y(ch, i, j) = best;
      }
  return y;
}

struct Confusion {
  std::vector<std::vector<std::size_t>> m;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
};

/// Brute-force confusion matrix with binary (K == 2, positive class 1) or
/// macro-averaged multiclass metrics.
inline Confusion metrics(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
  Confusion c;
  c.m.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    c.m[truth[i]][pred[i]] += 1;
    if (pred[i] == truth[i]) ++correct;
  }
  c.accuracy = double(correct) / double(pred.size());
  auto prf = [&](int cls, double& p, double& r, double& f) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == cls && truth[i] == cls) tp += 1;
      if (pred[i] == cls && truth[i] != cls) fp += 1;
      if (pred[i] != cls && truth[i] == cls) fn += 1;
    }
    p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  };
  if (k == 2) {
    prf(1, c.precision, c.recall, c.f1);
  } else {
    for (int cls = 0; cls < k; ++cls) {
      double p, r, f;
      prf(cls, p, r, f);
      c.precision += p;
      c.recall += r;
      c.f1 += f;
    }
    c.precision /= k;
    c.recall /= k;
    c.f1 /= k;
  }
  return c;
}

/// Exact Shapley values by direct subset enumeration with factorial weights;
/// `value(mask)` evaluates the game on a coalition bitmask.
inline std::vector<double> shapley(std::size_t n, const std::function<double(unsigned)>& value) {
  std::vector<double> fact(n + 1, 1.0);
  for (std::size_t i = 1; i <= n; ++i) fact[i] = fact[i - 1] * double(i);
  std::vector<double> phi(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (unsigned s = 0; s < (1u << n); ++s) {
      if (s & (1u << i)) continue;
      const std::size_t size = std::size_t(__builtin_popcount(s));
      const double wgt = fact[size] * fact[n - size - 1] / fact[n];
      phi[i] += wgt * (value(s | (1u << i)) - value(s));
    }
  return phi;
}

}  // namespace oracle
