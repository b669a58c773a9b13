#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gaitlab/config.hpp"
#include "gaitlab/error.hpp"
#include "gaitlab/layers.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/tensor.hpp"

namespace gaitlab {

enum class Branch { gavd_1d, oumvlp_3d };
enum class Head { sigmoid_binary, softmax_multiclass };
/// `none` replaces the recurrent stack by an order-free temporal mean.
enum class Temporal { lstm, none };

inline const char* to_string(Branch b) { return b == Branch::gavd_1d ? "gavd_1d" : "oumvlp_3d"; }
inline const char* to_string(Head h) {
  return h == Head::sigmoid_binary ? "sigmoid" : "softmax";
}
inline const char* to_string(Temporal t) { return t == Temporal::lstm ? "lstm" : "none"; }

inline Branch branch_from_string(const std::string& s) {
  if (s == "gavd_1d") return Branch::gavd_1d;
  if (s == "oumvlp_3d") return Branch::oumvlp_3d;
  throw Error(ErrorKind::config, "unknown branch '" + s + "' (gavd_1d|oumvlp_3d)");
}
inline Head head_from_string(const std::string& s) {
  if (s == "sigmoid") return Head::sigmoid_binary;
  if (s == "softmax") return Head::softmax_multiclass;
  throw Error(ErrorKind::config, "unknown head '" + s + "' (sigmoid|softmax)");
}
inline Temporal temporal_from_string(const std::string& s) {
  if (s == "lstm") return Temporal::lstm;
  if (s == "none") return Temporal::none;
  throw Error(ErrorKind::config, "unknown temporal stage '" + s + "' (lstm|none)");
}

struct ModelConfig {
  Branch branch = Branch::gavd_1d;
  Head head = Head::sigmoid_binary;
  std::size_t num_classes = 2;
  Temporal temporal = Temporal::lstm;

  // joint branch input [seq_len, features]
  std::size_t seq_len = 50;
  std::size_t features = 36;
  // silhouette branch input [frames, height, width]
  std::size_t frames = 50;
  std::size_t height = 44;
  std::size_t width = 64;

  std::vector<std::size_t> conv_channels{128, 256, 512};
  std::vector<std::size_t> lstm_hidden{256, 128};
  bool bidirectional = false;
  std::size_t dense_units = 256;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::size_t pool = 2;
  double dropout = 0.5;
  double width_scale = 1.0;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  std::uint64_t seed = 0;

  std::size_t outputs() const { return head == Head::sigmoid_binary ? 1 : num_classes; }
  std::size_t classes() const { return head == Head::sigmoid_binary ? 2 : num_classes; }

  Shape input_spec() const {
    return branch == Branch::gavd_1d ? Shape{seq_len, features} : Shape{frames, height, width};
  }

  std::size_t scaled(std::size_t units) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(units) * width_scale)));
  }

  static ModelConfig gavd_defaults() { return ModelConfig{}; }

  static ModelConfig oumvlp_defaults() {
    ModelConfig c;
    c.branch = Branch::oumvlp_3d;
    c.conv_channels = {32, 64};
    c.lstm_hidden = {128};
    c.bidirectional = true;
    return c;
  }

  void write(FlatConfig& kv) const {
    auto sizes = [](const std::vector<std::size_t>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    kv.set("model.branch", to_string(branch));
    kv.set("model.head", to_string(head));
    kv.set("model.num_classes", std::uint64_t{num_classes});
    kv.set("model.temporal", to_string(temporal));
    kv.set("model.seq_len", std::uint64_t{seq_len});
    kv.set("model.features", std::uint64_t{features});
    kv.set("model.frames", std::uint64_t{frames});
    kv.set("model.height", std::uint64_t{height});
    kv.set("model.width", std::uint64_t{width});
    kv.set("model.conv_channels", sizes(conv_channels));
    kv.set("model.lstm_hidden", sizes(lstm_hidden));
    kv.set("model.bidirectional", bidirectional);
    kv.set("model.dense_units", std::uint64_t{dense_units});
    kv.set("model.kernel", std::uint64_t{kernel});
    kv.set("model.stride", std::uint64_t{stride});
    kv.set("model.padding", std::uint64_t{padding});
    kv.set("model.pool", std::uint64_t{pool});
    kv.set("model.dropout", dropout);
    kv.set("model.width_scale", width_scale);
    kv.set("model.bn_momentum", bn_momentum);
    kv.set("model.bn_epsilon", bn_epsilon);
    kv.set("model.seed", seed);
  }

  /// Reads `model.*` keys, falling back to the branch defaults; missing keys
  /// are filled into `kv` so the resolved config can be echoed.
  static ModelConfig read(FlatConfig& kv) {
    const Branch b = branch_from_string(kv.get_string("model.branch", "gavd_1d"));
    ModelConfig c = b == Branch::gavd_1d ? gavd_defaults() : oumvlp_defaults();
    c.head = head_from_string(kv.get_string("model.head", to_string(c.head)));
    c.num_classes = kv.get_uint("model.num_classes", c.num_classes);
    c.temporal = temporal_from_string(kv.get_string("model.temporal", to_string(c.temporal)));
    c.seq_len = kv.get_uint("model.seq_len", c.seq_len);
    c.features = kv.get_uint("model.features", c.features);
    c.frames = kv.get_uint("model.frames", c.frames);
    c.height = kv.get_uint("model.height", c.height);
    c.width = kv.get_uint("model.width", c.width);
    c.conv_channels = kv.get_sizes("model.conv_channels", c.conv_channels);
    c.lstm_hidden = kv.get_sizes("model.lstm_hidden", c.lstm_hidden);
    c.bidirectional = kv.get_bool("model.bidirectional", c.bidirectional);
    c.dense_units = kv.get_uint("model.dense_units", c.dense_units);
    c.kernel = kv.get_uint("model.kernel", c.kernel);
    c.stride = kv.get_uint("model.stride", c.stride);
    c.padding = kv.get_uint("model.padding", c.padding);
    c.pool = kv.get_uint("model.pool", c.pool);
    c.dropout = kv.get_real("model.dropout", c.dropout);
    c.width_scale = kv.get_real("model.width_scale", c.width_scale);
    c.bn_momentum = kv.get_real("model.bn_momentum", c.bn_momentum);
    c.bn_epsilon = kv.get_real("model.bn_epsilon", c.bn_epsilon);
    c.seed = kv.get_uint("model.seed", c.seed);
    return c;
  }
};

/**
 * Ordered layer stack with a fixed per-sample input shape.
 *
 * Copies are deep. When capture is enabled, forward keeps every layer output
 * and backward keeps the gradient with respect to every layer output; Grad-CAM
 * reads both.
 */
template <typename T>
class ModelGraph {
 public:
  ModelGraph(ModelConfig config, std::vector<std::unique_ptr<Layer<T>>> layers)
      : config_(std::move(config)), input_spec_(config_.input_spec()), layers_(std::move(layers)) {
    shape_walk();
  }

  ModelGraph(const ModelGraph& other)
      : config_(other.config_), input_spec_(other.input_spec_), capture_(other.capture_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  ModelGraph& operator=(const ModelGraph& other) {
    if (this != &other) *this = ModelGraph(other);
    return *this;
  }
  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  const Shape& input_spec() const { return input_spec_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  /// Per-sample output shape of every layer; throws on any incompatibility.
  std::vector<Shape> shape_walk() const {
    std::vector<Shape> shapes;
    Shape s = input_spec_;
    for (const auto& l : layers_) {
      s = l->output_shape(s);
      shapes.push_back(s);
    }
    return shapes;
  }
  Shape output_shape() const {
    auto w = shape_walk();
    return w.empty() ? input_spec_ : w.back();
  }

  void set_capture(bool on) { capture_ = on; }
  const Tensor<T>& activation(std::size_t i) const {
    require(i < activations_.size(), ErrorKind::state, "no captured activation for layer " +
                                                           std::to_string(i));
    return activations_[i];
  }
  const Tensor<T>& output_grad(std::size_t i) const {
    require(i < output_grads_.size(), ErrorKind::state, "no captured gradient for layer " +
                                                            std::to_string(i));
    return output_grads_[i];
  }

  /// Batched forward. Train mode enables dropout and batch statistics; the
  /// seed fixes every dropout mask.
  Tensor<T> forward(const Tensor<T>& batch, Mode mode, std::uint64_t seed = 0) {
    Shape expect = input_spec_;
    require(batch.rank() == expect.size() + 1 &&
                std::equal(expect.begin(), expect.end(), batch.shape().begin() + 1),
            ErrorKind::dimension,
            "batch shape " + shape_str(batch.shape()) + " does not match [N]+" +
                shape_str(input_spec_));
    if (mode == Mode::train)
      require(batch.extent(0) >= 2, ErrorKind::degenerate_batch,
              "train-mode forward needs at least 2 samples for batch statistics");
    activations_.clear();
    output_grads_.clear();
    Tensor<T> x = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->set_seed(derive_seed(seed, i));
      x = layers_[i]->forward(x, mode);
      if (capture_) activations_.push_back(x);
    }
    return x;
  }

  /// Backpropagates the gradient of the model output; returns the input
  /// gradient. Parameter gradients are left on each layer.
  Tensor<T> backward(const Tensor<T>& grad_output) {
    Tensor<T> g = grad_output;
    if (capture_) output_grads_.assign(layers_.size(), Tensor<T>{});
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (capture_) output_grads_[i] = g;
      g = layers_[i]->backward(g);
    }
    return g;
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  std::vector<Param<T>*> trainable_parameters() {
    std::vector<Param<T>*> out;
    for (auto* p : parameters())
      if (p->trainable) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
      for (const auto* p : l->params())
        if (p->trainable) n += p->value.size();
    return n;
  }

  /// Eval-mode probabilities: [N] for the sigmoid head, [N, K] for softmax.
  Tensor<T> predict_proba(const Tensor<T>& batch) {
    Tensor<T> logits = forward(batch, Mode::eval);
    if (config_.head == Head::softmax_multiclass) return apply_activation(logits, Activation::softmax);
    Tensor<T> p({logits.extent(0)});
    for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = sigmoid(logits.data()[i]);
    return p;
  }

  /// Predicted class per sample (threshold 0.5 for the sigmoid head).
  std::vector<int> predict(const Tensor<T>& batch) {
    Tensor<T> p = predict_proba(batch);
    std::vector<int> out(batch.extent(0));
    if (config_.head == Head::sigmoid_binary) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = p.data()[i] >= T(0.5) ? 1 : 0;
    } else {
      const std::size_t k = p.extent(1);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const T* row = p.data().data() + i * k;
        out[i] = static_cast<int>(std::max_element(row, row + k) - row);
      }
    }
    return out;
  }

  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init"));
    for (auto& l : layers_) l->initialize(rng);
  }

 private:
  ModelConfig config_;
  Shape input_spec_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  bool capture_ = false;
  std::vector<Tensor<T>> activations_;
  std::vector<Tensor<T>> output_grads_;
};

namespace detail {

template <typename T>
void append_head(const ModelConfig& cfg, std::vector<std::unique_ptr<Layer<T>>>& layers,
                 std::size_t width) {
  const std::size_t dense = cfg.scaled(cfg.dense_units);
  if (cfg.temporal == Temporal::lstm) {
    require(!cfg.lstm_hidden.empty(), ErrorKind::build, "at least one LSTM layer is required");
    for (std::size_t i = 0; i < cfg.lstm_hidden.size(); ++i) {
      const std::size_t h = cfg.scaled(cfg.lstm_hidden[i]);
      const bool last = i + 1 == cfg.lstm_hidden.size();
      auto lstm = std::make_unique<Lstm<T>>(width, h, cfg.bidirectional, !last);
      width = lstm->output_width();
      layers.push_back(std::move(lstm));
    }
  } else {
    layers.push_back(std::make_unique<TemporalMean<T>>());
  }
  layers.push_back(std::make_unique<Dense<T>>(width, dense));
  layers.push_back(std::make_unique<ActivationLayer<T>>(Activation::relu));
  layers.push_back(std::make_unique<Dropout<T>>(cfg.dropout));
  layers.push_back(std::make_unique<Dense<T>>(dense, cfg.outputs()));
}

template <typename T>
ModelGraph<T> finish_build(ModelConfig cfg, std::vector<std::unique_ptr<Layer<T>>> layers) {
  try {
    ModelGraph<T> g(std::move(cfg), std::move(layers));
    g.initialize(g.config().seed);
    return g;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::build) throw;
    throw Error(ErrorKind::build, std::string("shape walk failed: ") + e.what());
  }
}

inline void validate_common(const ModelConfig& cfg) {
  require(!cfg.conv_channels.empty(), ErrorKind::build, "at least one conv block is required");
  require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, ErrorKind::build, "dropout must be in [0,1)");
  require(cfg.width_scale > 0.0, ErrorKind::build, "width_scale must be positive");
  require(cfg.head == Head::sigmoid_binary || cfg.num_classes >= 2, ErrorKind::build,
          "softmax head needs at least 2 classes");
  require(cfg.kernel >= 1 && cfg.stride >= 1 && cfg.pool >= 1, ErrorKind::build,
          "kernel, stride and pool must be positive");
}

/// Length after `blocks` conv+pool stages, or 0 if a stage cannot run.
inline std::size_t length_after_blocks(const ModelConfig& cfg, std::size_t len,
                                       std::size_t blocks) {
  for (std::size_t b = 0; b < blocks; ++b) {
    if (cfg.kernel > len + 2 * cfg.padding) return 0;
    len = (len + 2 * cfg.padding - cfg.kernel) / cfg.stride + 1;
    if (cfg.pool > len) return 0;
    len = (len - cfg.pool) / cfg.pool + 1;
  }
  return len;
}

}  // namespace detail

/// Joint-sequence branch: three conv1d blocks, recurrent stack, dense, head.
template <typename T>
ModelGraph<T> build_gavd_branch(ModelConfig cfg) {
  cfg.branch = Branch::gavd_1d;
  detail::validate_common(cfg);
  require(cfg.features >= 1, ErrorKind::build, "feature width must be positive");
  const std::size_t blocks = cfg.conv_channels.size();
  if (detail::length_after_blocks(cfg, cfg.seq_len, blocks) == 0) {
    std::size_t min_len = 1;
    while (detail::length_after_blocks(cfg, min_len, blocks) == 0) ++min_len;
    throw Error(ErrorKind::build, "sequence length T=" + std::to_string(cfg.seq_len) +
                                      " too short for " + std::to_string(blocks) +
                                      " pooling stages; minimum T is " + std::to_string(min_len));
  }
  std::vector<std::unique_ptr<Layer<T>>> layers;
  layers.push_back(std::make_unique<Permute<T>>());  // [T,F] -> [F,T]
  std::size_t ch = cfg.features;
  for (std::size_t c : cfg.conv_channels) {
    const std::size_t out = cfg.scaled(c);
    layers.push_back(std::make_unique<Conv1d<T>>(ch, out, cfg.kernel, cfg.stride, cfg.padding));
    layers.push_back(std::make_unique<BatchNorm<T>>(out, T(cfg.bn_momentum), T(cfg.bn_epsilon)));
    layers.push_back(std::make_unique<ActivationLayer<T>>(Activation::relu));
    layers.push_back(std::make_unique<MaxPool<T>>(cfg.pool, cfg.pool, std::vector<std::size_t>{1}));
    layers.push_back(std::make_unique<Dropout<T>>(cfg.dropout));
    ch = out;
  }
  layers.push_back(std::make_unique<Permute<T>>());  // [C,L] -> [L,C]
  detail::append_head(cfg, layers, ch);
  return detail::finish_build(std::move(cfg), std::move(layers));
}

/// Silhouette branch: conv3d blocks with spatial pooling, per-frame spatial
/// mean, recurrent stack, dense, head.
template <typename T>
ModelGraph<T> build_oumvlp_branch(ModelConfig cfg) {
  cfg.branch = Branch::oumvlp_3d;
  detail::validate_common(cfg);
  require(cfg.frames >= 1 && cfg.height >= 1 && cfg.width >= 1, ErrorKind::build,
          "silhouette input extents must be positive");
  {
    ModelConfig spatial = cfg;
    const std::size_t blocks = cfg.conv_channels.size();
    require(detail::length_after_blocks(spatial, cfg.height, blocks) > 0 &&
                detail::length_after_blocks(spatial, cfg.width, blocks) > 0,
            ErrorKind::build,
            "input " + shape_str(cfg.input_spec()) + " too small for " + std::to_string(blocks) +
                " spatial pooling stages");
  }
  std::vector<std::unique_ptr<Layer<T>>> layers;
  layers.push_back(std::make_unique<Unsqueeze<T>>());  // [D,H,W] -> [1,D,H,W]
  std::size_t ch = 1;
  const Triple k{cfg.kernel, cfg.kernel, cfg.kernel};
  const Triple s{cfg.stride, cfg.stride, cfg.stride};
  const Triple p{cfg.padding, cfg.padding, cfg.padding};
  for (std::size_t c : cfg.conv_channels) {
    const std::size_t out = cfg.scaled(c);
    layers.push_back(std::make_unique<Conv3d<T>>(ch, out, k, s, p));
    layers.push_back(std::make_unique<BatchNorm<T>>(out, T(cfg.bn_momentum), T(cfg.bn_epsilon)));
    layers.push_back(std::make_unique<ActivationLayer<T>>(Activation::relu));
    layers.push_back(
        std::make_unique<MaxPool<T>>(cfg.pool, cfg.pool, std::vector<std::size_t>{2, 3}));
    layers.push_back(std::make_unique<Dropout<T>>(cfg.dropout));
    ch = out;
  }
  layers.push_back(std::make_unique<FramePool<T>>());  // -> [D, C]
  detail::append_head(cfg, layers, ch);
  return detail::finish_build(std::move(cfg), std::move(layers));
}

template <typename T>
ModelGraph<T> build_model(const ModelConfig& cfg) {
  return cfg.branch == Branch::gavd_1d ? build_gavd_branch<T>(cfg) : build_oumvlp_branch<T>(cfg);
}

/// Indices of convolution layers, in order.
template <typename T>
std::vector<std::size_t> conv_layer_indices(const ModelGraph<T>& model) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const auto k = model.layer(i).kind();
    if (k == LayerKind::conv1d || k == LayerKind::conv3d) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints: model.cfg + manifest.txt + one GLTB blob per parameter named
// "<layer_index>.<param_name>".

template <typename T>
void save_checkpoint(ModelGraph<T>& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorKind::io,
          "cannot create checkpoint directory '" + dir.string() + "'");
  FlatConfig kv;
  model.config().write(kv);
  kv.save((dir / "model.cfg").string());

  std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
  require(static_cast<bool>(manifest), ErrorKind::io, "cannot write checkpoint manifest");
  manifest << "precision " << sizeof(T) << '\n';
  manifest << "input " << shape_str(model.input_spec()) << '\n';
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    manifest << "layer " << i << ' ' << model.layer(i).describe() << '\n';
    for (const auto* p : model.layer(i).params()) {
      const std::string name = std::to_string(i) + "." + p->name;
      manifest << "param " << name << ' ' << shape_str(p->value.shape())
               << (p->trainable ? "" : " buffer") << '\n';
      std::ofstream blob(dir / name, std::ios::binary);
      require(static_cast<bool>(blob), ErrorKind::io, "cannot write parameter blob " + name);
      write_tensor(blob, p->value);
    }
  }
  require(static_cast<bool>(manifest), ErrorKind::io, "checkpoint manifest write failed");
}

template <typename T>
ModelGraph<T> load_checkpoint(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir / "model.cfg"), ErrorKind::io,
          "no model.cfg in checkpoint '" + dir.string() + "'");
  FlatConfig kv = FlatConfig::load((dir / "model.cfg").string());
  ModelGraph<T> model = build_model<T>(ModelConfig::read(kv));

  std::ifstream manifest(dir / "manifest.txt");
  require(static_cast<bool>(manifest), ErrorKind::io, "missing checkpoint manifest");
  std::string line;
  std::size_t layer_no = 0;
  while (std::getline(manifest, line)) {
    if (line.rfind("layer ", 0) != 0) continue;
    std::istringstream is(line.substr(6));
    std::size_t idx = 0;
    is >> idx;
    std::string desc;
    std::getline(is, desc);
    desc = trim(desc);
    require(idx == layer_no && idx < model.layer_count() && model.layer(idx).describe() == desc,
            ErrorKind::format,
            "checkpoint layer " + std::to_string(idx) + " '" + desc + "' does not match model.cfg");
    ++layer_no;
  }
  require(layer_no == model.layer_count(), ErrorKind::format, "checkpoint layer count mismatch");

  for (std::size_t i = 0; i < model.layer_count(); ++i)
    for (auto* p : model.layer(i).params()) {
      const std::string name = std::to_string(i) + "." + p->name;
      std::ifstream blob(dir / name, std::ios::binary);
      require(static_cast<bool>(blob), ErrorKind::io, "missing parameter blob " + name);
      Tensor<T> v = read_tensor<T>(blob);
      require(v.shape() == p->value.shape(), ErrorKind::format,
              "parameter " + name + " has shape " + shape_str(v.shape()) + ", expected " +
                  shape_str(p->value.shape()));
      p->value = std::move(v);
    }
  return model;
}

}  // namespace gaitlab
