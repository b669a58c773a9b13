#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gaitlab/config.hpp"
#include "gaitlab/error.hpp"
#include "gaitlab/model.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/tensor.hpp"

namespace gaitlab {

/// Class whose score is explained: the requested class, else the predicted
/// one. For the sigmoid head the score is the logit for class 1 and its
/// negation for class 0; for softmax it is the class logit.
struct ExplainTarget {
  int cls = 0;
  double sign = 1.0;
  std::size_t column = 0;
};

template <typename T>
ExplainTarget resolve_target(const ModelConfig& cfg, const Tensor<T>& logits,
                             std::optional<int> requested) {
  ExplainTarget t;
  if (cfg.head == Head::sigmoid_binary) {
    t.cls = requested ? *requested : (logits.data()[0] >= T(0) ? 1 : 0);
    require(t.cls == 0 || t.cls == 1, ErrorKind::config, "binary target class must be 0 or 1");
    t.sign = t.cls == 1 ? 1.0 : -1.0;
  } else {
    const std::size_t k = logits.extent(1);
    const T* row = logits.data().data();
    t.cls = requested ? *requested : int(std::max_element(row, row + k) - row);
    require(t.cls >= 0 && std::size_t(t.cls) < k, ErrorKind::config, "target class out of range");
    t.column = std::size_t(t.cls);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Grad-CAM

struct GradCamMap {
  Tensor<double> map;  // [T, H, W] for silhouettes, [T] for joint sequences
  std::size_t layer = 0;  // conv layer index in the model graph
  int target_class = 0;
  double target_value = 0;  // explained score
};

template <typename T>
std::vector<std::size_t> conv_layers(const ModelGraph<T>& model) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const auto k = model.layer(i).kind();
    if (k == LayerKind::conv1d || k == LayerKind::conv3d) out.push_back(i);
  }
  return out;
}

namespace detail {

inline std::size_t nearest(std::size_t i, std::size_t dst, std::size_t src) {
  return std::min(src - 1, i * src / dst);
}

}  // namespace detail

/// Rectified channel-weighted activation at each non-channel position of a
/// [C, ...] activation. Positions form `slices` equal contiguous blocks (the
/// temporal slices of a [C, D, H, W] map) and each block weights a channel by
/// its mean gradient over that block.
template <typename T>
std::vector<double> cam_from_activation(const Tensor<T>& act, const Tensor<T>& grad,
                                        std::size_t slices = 1) {
  require(act.shape() == grad.shape() && act.rank() >= 2, ErrorKind::dimension,
          "activation and gradient must share a [C, ...] shape");
  const std::size_t channels = act.extent(0);
  const std::size_t positions = act.size() / channels;
  require(slices >= 1 && positions % slices == 0, ErrorKind::dimension,
          "slice count must divide the non-channel positions");
  const std::size_t block = positions / slices;
  std::vector<double> cam(positions, 0.0);
  std::vector<double> weight(channels);
  for (std::size_t sl = 0; sl < slices; ++sl) {
    const std::size_t base = sl * block;
    for (std::size_t c = 0; c < channels; ++c) {
      double g = 0;
      for (std::size_t p = 0; p < block; ++p) g += double(grad.data()[c * positions + base + p]);
      weight[c] = g / double(block);
    }
    for (std::size_t p = base; p < base + block; ++p) {
      double v = 0;
      for (std::size_t c = 0; c < channels; ++c) v += weight[c] * double(act.data()[c * positions + p]);
      cam[p] = std::max(v, 0.0);
    }
  }
  return cam;
}

/// Grad-CAM on the rectified output of the conv block that starts at `layer`
/// (default: the last conv). Channel weights are the spatial mean gradient,
/// taken separately for each temporal slice of a 3D map and over the whole
/// sequence axis of a 1D map. The rectified weighted sum is upsampled to the
/// input grid by nearest neighbour and divided by its global max.
template <typename T>
GradCamMap grad_cam(ModelGraph<T>& model, const Tensor<T>& input,
                    std::optional<std::size_t> layer = {}, std::optional<int> target_class = {}) {
  const auto convs = conv_layers(model);
  const std::size_t conv = layer ? *layer : convs.back();
  require(std::find(convs.begin(), convs.end(), conv) != convs.end(), ErrorKind::config,
          "layer " + std::to_string(conv) + " is not a convolution layer");
  std::size_t tap = conv;
  for (std::size_t i = conv + 1; i < model.layer_count(); ++i) {
    const auto k = model.layer(i).kind();
    if (k == LayerKind::pool || k == LayerKind::conv1d || k == LayerKind::conv3d) break;
    if (k == LayerKind::activation) {
      tap = i;
      break;
    }
  }
  require(input.shape() == model.input_spec(), ErrorKind::dimension,
          "input " + shape_str(input.shape()) + " does not match model input " +
              shape_str(model.input_spec()));

  Shape batched{1};
  batched.insert(batched.end(), input.shape().begin(), input.shape().end());
  model.set_capture(true);
  Tensor<T> logits = model.forward(input.reshaped(batched), Mode::eval);
  const auto target = resolve_target(model.config(), logits, target_class);
  Tensor<T> seed_grad(logits.shape());
  seed_grad.data()[target.column] = static_cast<T>(target.sign);
  model.backward(seed_grad);
  const Tensor<T> act = model.activation(tap).slice(0);
  const Tensor<T> grad = model.output_grad(tap).slice(0);
  model.set_capture(false);

  GradCamMap out;
  out.layer = conv;
  out.target_class = target.cls;
  out.target_value = target.sign * double(logits.data()[target.column]);

  const bool volumetric = model.config().branch == Branch::oumvlp_3d;
  const std::vector<double> cam = cam_from_activation(act, grad, volumetric ? act.extent(1) : 1);

  if (volumetric) {
    const std::size_t d = act.extent(1), h = act.extent(2), w = act.extent(3);
    const std::size_t td = input.extent(0), th = input.extent(1), tw = input.extent(2);
    out.map = Tensor<double>({td, th, tw});
    for (std::size_t t = 0; t < td; ++t)
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j)
          out.map(t, i, j) = cam[(detail::nearest(t, td, d) * h + detail::nearest(i, th, h)) * w +
                                 detail::nearest(j, tw, w)];
  } else {
    const std::size_t l = act.extent(1), td = input.extent(0);
    out.map = Tensor<double>({td});
    for (std::size_t t = 0; t < td; ++t) out.map.data()[t] = cam[detail::nearest(t, td, l)];
  }
  double mx = 0;
  for (double v : out.map.data()) mx = std::max(mx, v);
  if (mx > 0)
    for (double& v : out.map.data()) v /= mx;
  return out;
}

/// Share of heatmap mass inside rows [r0, r1) and columns [c0, c1), summed
/// over every frame. A zero map gives 0.
inline double heatmap_mass_fraction(const Tensor<double>& map, std::size_t r0, std::size_t r1,
                                    std::size_t c0, std::size_t c1) {
  require(map.rank() == 3, ErrorKind::dimension, "mass fraction expects a [T, H, W] map");
  double inside = 0, total = 0;
  for (std::size_t t = 0; t < map.extent(0); ++t)
    for (std::size_t i = 0; i < map.extent(1); ++i)
      for (std::size_t j = 0; j < map.extent(2); ++j) {
        const double v = map(t, i, j);
        total += v;
        if (i >= r0 && i < r1 && j >= c0 && j < c1) inside += v;
      }
  return total > 0 ? inside / total : 0.0;
}

// ---------------------------------------------------------------------------
// rendering

struct RgbImage {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

/// Red overlay: R = round(255(0.5 under + 0.5 map)), G = B = round(255 * 0.5 under).
inline RgbImage render_heatmap(const Tensor<double>& map, const Tensor<double>& underlay) {
  require(map.rank() == 2 && map.shape() == underlay.shape(), ErrorKind::dimension,
          "heatmap " + shape_str(map.shape()) + " does not match underlay " +
              shape_str(underlay.shape()));
  RgbImage img{map.extent(0), map.extent(1), {}};
  img.rgb.reserve(map.size() * 3);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double u = std::clamp(underlay.data()[i], 0.0, 1.0);
    const double m = std::clamp(map.data()[i], 0.0, 1.0);
    const auto gray = static_cast<std::uint8_t>(std::lround(255.0 * 0.5 * u));
    img.rgb.push_back(static_cast<std::uint8_t>(std::lround(255.0 * (0.5 * u + 0.5 * m))));
    img.rgb.push_back(gray);
    img.rgb.push_back(gray);
  }
  return img;
}

inline void write_ppm(const std::filesystem::path& file, const RgbImage& img) {
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + file.string() + "'");
  out << "P6\n" << img.cols << ' ' << img.rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  require(static_cast<bool>(out), ErrorKind::io, "PPM write failed");
}

// ---------------------------------------------------------------------------
// Shapley temporal attribution

enum class ShapMode { exact, sampled };
enum class ShapBaseline { zero, mean_frame };

inline const char* to_string(ShapMode m) { return m == ShapMode::exact ? "exact" : "sampled"; }
inline const char* to_string(ShapBaseline b) { return b == ShapBaseline::zero ? "zero" : "mean_frame"; }
inline ShapMode shap_mode_from_string(const std::string& s) {
  if (s == "exact") return ShapMode::exact;
  if (s == "sampled") return ShapMode::sampled;
  throw Error(ErrorKind::config, "unknown SHAP mode '" + s + "' (exact|sampled)");
}
inline ShapBaseline shap_baseline_from_string(const std::string& s) {
  if (s == "zero") return ShapBaseline::zero;
  if (s == "mean_frame") return ShapBaseline::mean_frame;
  throw Error(ErrorKind::config, "unknown SHAP baseline '" + s + "' (zero|mean_frame)");
}

inline constexpr std::size_t kMaxExactUnits = 12;

/// Coalition value: one output per coalition, each given as a presence mask
/// over attribution units.
using CoalitionValue =
    std::function<std::vector<double>(const std::vector<std::vector<bool>>& coalitions)>;

/// Shapley values of `units` players. Exact mode enumerates all 2^n
/// coalitions; sampled mode averages marginal contributions over `samples`
/// seeded permutations.
inline std::vector<double> shapley_values(const CoalitionValue& value, std::size_t units,
                                          ShapMode mode, std::size_t samples = 256,
                                          std::uint64_t seed = 0) {
  require(units >= 1, ErrorKind::config, "Shapley values need at least one unit");
  std::vector<double> phi(units, 0.0);
  if (mode == ShapMode::exact) {
    require(units <= kMaxExactUnits, ErrorKind::budget,
            "exact Shapley enumeration supports at most " + std::to_string(kMaxExactUnits) +
                " units, got " + std::to_string(units) + "; use sampled mode or group frames");
    const std::size_t total = std::size_t{1} << units;
    std::vector<std::vector<bool>> coalitions(total, std::vector<bool>(units));
    for (std::size_t s = 0; s < total; ++s)
      for (std::size_t u = 0; u < units; ++u) coalitions[s][u] = (s >> u) & 1u;
    const auto v = value(coalitions);
    require(v.size() == total, ErrorKind::state, "coalition value returned the wrong count");
    // weight(|S|) = |S|! (n - |S| - 1)! / n!
    std::vector<double> w(units);
    for (std::size_t k = 0; k < units; ++k)
      w[k] = std::exp(std::lgamma(double(k) + 1) + std::lgamma(double(units - k)) -
                      std::lgamma(double(units) + 1));
    for (std::size_t s = 0; s < total; ++s) {
      const std::size_t size = std::size_t(__builtin_popcountll(s));
      for (std::size_t u = 0; u < units; ++u)
        if (!((s >> u) & 1u)) phi[u] += w[size] * (v[s | (std::size_t{1} << u)] - v[s]);
    }
    return phi;
  }
  require(samples >= 1, ErrorKind::config, "sampled mode needs at least one permutation");
  Rng rng(derive_seed(seed, "shap"));
  for (std::size_t p = 0; p < samples; ++p) {
    const auto order = rng.permutation(units);
    std::vector<std::vector<bool>> chain(units + 1, std::vector<bool>(units, false));
    for (std::size_t i = 0; i < units; ++i) {
      chain[i + 1] = chain[i];
      chain[i + 1][order[i]] = true;
    }
    const auto v = value(chain);
    require(v.size() == units + 1, ErrorKind::state, "coalition value returned the wrong count");
    for (std::size_t i = 0; i < units; ++i) phi[order[i]] += v[i + 1] - v[i];
  }
  for (double& x : phi) x /= double(samples);
  return phi;
}

struct ShapConfig {
  ShapMode mode = ShapMode::sampled;
  ShapBaseline baseline = ShapBaseline::zero;
  std::size_t samples = 128;  // permutations in sampled mode
  std::size_t group = 1;      // frames per attribution unit
  std::uint64_t seed = 0;
  std::optional<int> target_class;
  std::size_t threads = 1;

  void write(FlatConfig& kv) const {
    kv.set("explain.shap_mode", to_string(mode));
    kv.set("explain.shap_baseline", to_string(baseline));
    kv.set("explain.shap_samples", std::uint64_t{samples});
    kv.set("explain.shap_group", std::uint64_t{group});
    kv.set("explain.seed", seed);
  }
  static ShapConfig read(FlatConfig& kv) {
    ShapConfig c;
    c.mode = shap_mode_from_string(kv.get_string("explain.shap_mode", to_string(c.mode)));
    c.baseline =
        shap_baseline_from_string(kv.get_string("explain.shap_baseline", to_string(c.baseline)));
    c.samples = kv.get_uint("explain.shap_samples", c.samples);
    c.group = kv.get_uint("explain.shap_group", c.group);
    c.seed = kv.get_uint("explain.seed", c.seed);
    require(c.group >= 1, ErrorKind::config, "explain.shap_group must be >= 1");
    return c;
  }
};

struct ShapAttribution {
  std::vector<double> phi;       // per frame; a unit's value is split evenly over its frames
  std::vector<double> unit_phi;  // per attribution unit
  std::size_t group = 1;
  ShapMode mode = ShapMode::sampled;
  ShapBaseline baseline = ShapBaseline::zero;
  int target_class = 0;
  double f_x = 0, f_baseline = 0;

  std::string csv() const {
    std::ostringstream os;
    os << "frame_index,phi\n";
    for (std::size_t t = 0; t < phi.size(); ++t) os << t << ',' << format_real(phi[t]) << '\n';
    return os.str();
  }
};

/// Frame-level Shapley attribution of one sequence (axis 0 is time). Absent
/// units take their frames from the baseline; the explained score is the
/// target logit (negated for binary class 0).
template <typename T>
ShapAttribution shap_temporal(ModelGraph<T>& model, const Tensor<T>& seq, const ShapConfig& cfg) {
  require(seq.shape() == model.input_spec(), ErrorKind::dimension,
          "sequence " + shape_str(seq.shape()) + " does not match model input " +
              shape_str(model.input_spec()));
  require(cfg.group >= 1, ErrorKind::config, "frames per unit must be >= 1");
  const std::size_t frames = seq.extent(0), frame_size = seq.size() / frames;
  const std::size_t units = (frames + cfg.group - 1) / cfg.group;

  Tensor<T> base(seq.shape());
  if (cfg.baseline == ShapBaseline::mean_frame) {
    for (std::size_t j = 0; j < frame_size; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < frames; ++t) s += double(seq.data()[t * frame_size + j]);
      for (std::size_t t = 0; t < frames; ++t)
        base.data()[t * frame_size + j] = static_cast<T>(s / double(frames));
    }
  }

  Shape batched{1};
  batched.insert(batched.end(), seq.shape().begin(), seq.shape().end());
  const auto target =
      resolve_target(model.config(), model.forward(seq.reshaped(batched), Mode::eval), cfg.target_class);

  constexpr std::size_t kChunk = 64;
  auto evaluate_range = [&](ModelGraph<T>& m, const std::vector<std::vector<bool>>& coalitions,
                            std::size_t begin, std::size_t end, std::vector<double>& out) {
    for (std::size_t start = begin; start < end; start += kChunk) {
      const std::size_t n = std::min(end, start + kChunk) - start;
      Shape shape{n};
      shape.insert(shape.end(), seq.shape().begin(), seq.shape().end());
      Tensor<T> batch(shape);
      auto dst = batch.data();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t t = 0; t < frames; ++t) {
          const Tensor<T>& src = coalitions[start + b][t / cfg.group] ? seq : base;
          std::copy_n(src.data().begin() + long(t * frame_size), frame_size,
                      dst.begin() + long((b * frames + t) * frame_size));
        }
      Tensor<T> logits = m.forward(batch, Mode::eval);
      const std::size_t width = logits.size() / n;
      for (std::size_t b = 0; b < n; ++b)
        out[start + b] = target.sign * double(logits.data()[b * width + target.column]);
    }
  };

  std::vector<ModelGraph<T>> replicas;
  const std::size_t workers = std::max<std::size_t>(1, cfg.threads);
  for (std::size_t w = 1; w < workers; ++w) replicas.push_back(model);
  CoalitionValue value = [&](const std::vector<std::vector<bool>>& coalitions) {
    std::vector<double> out(coalitions.size());
    const std::size_t chunks = (coalitions.size() + kChunk - 1) / kChunk;
    if (workers == 1 || chunks < 2) {
      evaluate_range(model, coalitions, 0, coalitions.size(), out);
      return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          ModelGraph<T>& m = w == 0 ? model : replicas[w - 1];
          for (std::size_t c = w; c < chunks; c += workers)
            evaluate_range(m, coalitions, c * kChunk, std::min(coalitions.size(), (c + 1) * kChunk),
                           out);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    return out;
  };

  ShapAttribution a;
  a.group = cfg.group;
  a.mode = cfg.mode;
  a.baseline = cfg.baseline;
  a.target_class = target.cls;
  const auto ends = value({std::vector<bool>(units, true), std::vector<bool>(units, false)});
  a.f_x = ends[0];
  a.f_baseline = ends[1];
  a.unit_phi = shapley_values(value, units, cfg.mode, cfg.samples, cfg.seed);
  a.phi.assign(frames, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t u = t / cfg.group;
    const std::size_t width = std::min(frames, (u + 1) * cfg.group) - u * cfg.group;
    a.phi[t] = a.unit_phi[u] / double(width);
  }
  return a;
}

}  // namespace gaitlab
