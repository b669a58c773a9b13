#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gaitlab/config.hpp"
#include "gaitlab/data.hpp"
#include "gaitlab/error.hpp"
#include "gaitlab/kernels.hpp"
#include "gaitlab/model.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/tensor.hpp"

namespace gaitlab {

// ---------------------------------------------------------------------------
// losses

template <typename T>
struct LossResult {
  double loss = 0;
  Tensor<T> grad;
};

/// Mean binary cross-entropy on logits; positive terms scaled by
/// `positive_weight`. Accepts logits shaped [N] or [N, 1].
template <typename T>
LossResult<T> bce_with_logits(const Tensor<T>& logits, const std::vector<int>& targets,
                              double positive_weight = 1.0) {
  require(logits.size() == targets.size() && !targets.empty(), ErrorKind::dimension,
          "logits " + shape_str(logits.shape()) + " do not match " +
              std::to_string(targets.size()) + " targets");
  require(positive_weight > 0.0, ErrorKind::config, "positive weight must be > 0");
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  const double n = double(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    require(targets[i] == 0 || targets[i] == 1, ErrorKind::config,
            "binary target must be 0 or 1, got " + std::to_string(targets[i]));
    const double z = double(logits.data()[i]);
    const double y = double(targets[i]);
    const double w = targets[i] == 1 ? positive_weight : 1.0;
    r.loss += w * (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
    r.grad.data()[i] = static_cast<T>(w * (double(sigmoid(z)) - y) / n);
  }
  r.loss /= n;
  return r;
}

/// Class-weighted mean negative log-likelihood of softmax(logits).
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                                    const std::vector<double>& class_weights = {}) {
  require(logits.rank() == 2 && logits.extent(0) == targets.size() && !targets.empty(),
          ErrorKind::dimension,
          "logits " + shape_str(logits.shape()) + " do not match " +
              std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  require(class_weights.empty() || class_weights.size() == k, ErrorKind::config,
          "class weight count does not match logits width");
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    require(targets[i] >= 0 && std::size_t(targets[i]) < k, ErrorKind::config,
            "target " + std::to_string(targets[i]) + " out of range for " + std::to_string(k) +
                " classes");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, double(logits(i, j)));
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(double(logits(i, j)) - mx);
    const double lse = mx + std::log(sum);
    const std::size_t y = std::size_t(targets[i]);
    const double w = class_weights.empty() ? 1.0 : class_weights[y];
    r.loss += w * (lse - double(logits(i, y)));
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(double(logits(i, j)) - lse);
      r.grad(i, j) = static_cast<T>(w * (p - (j == y ? 1.0 : 0.0)) / double(n));
    }
  }
  r.loss /= double(n);
  return r;
}

/// Inverse-frequency weights N / (K * count_c).
inline std::vector<double> class_weights(const std::vector<int>& labels, std::size_t k) {
  require(!labels.empty() && k >= 1, ErrorKind::config, "class weights need labels");
  std::vector<std::size_t> count(k, 0);
  for (int l : labels) {
    require(l >= 0 && std::size_t(l) < k, ErrorKind::config, "label out of range");
    count[std::size_t(l)] += 1;
  }
  std::vector<double> w(k);
  for (std::size_t c = 0; c < k; ++c) {
    require(count[c] > 0, ErrorKind::config,
            "class " + std::to_string(c) + " has no samples; cannot weight");
    w[c] = double(labels.size()) / (double(k) * double(count[c]));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t t = 0;
};

/// One Adam update of `params` from `grads`. Moments are created on the first
/// call and must keep matching shapes afterwards.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state, double lr) {
  require(params.size() == grads.size(), ErrorKind::dimension, "params and grads differ in count");
  if (state.t == 0 && state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  require(state.m.size() == params.size(), ErrorKind::dimension, "Adam state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i)
    require(params[i]->shape() == grads[i]->shape() && state.m[i].shape() == params[i]->shape(),
            ErrorKind::dimension,
            "Adam shape mismatch at parameter " + std::to_string(i) + ": " +
                shape_str(params[i]->shape()) + " vs " + shape_str(grads[i]->shape()));
  state.t += 1;
  const double b1 = AdamState<T>::beta1, b2 = AdamState<T>::beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.t));
  const double c2 = 1.0 - std::pow(b2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = double(g[j]);
      const double mj = b1 * double(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * double(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(double(p[j]) -
                            lr * (mj / c1) / (std::sqrt(vj / c2) + AdamState<T>::epsilon));
    }
  }
}

template <typename T>
void adam_step(const std::vector<Param<T>*>& params, AdamState<T>& state, double lr) {
  std::vector<Tensor<T>*> values;
  std::vector<const Tensor<T>*> grads;
  for (auto* p : params) {
    if (!p->trainable) continue;
    values.push_back(&p->value);
    grads.push_back(&p->grad);
  }
  adam_step(values, grads, state, lr);
}

// ---------------------------------------------------------------------------
// metrics

struct Metrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// Binary (K == 2) metrics treat class 1 as positive; K > 2 uses macro
/// averages of the per-class values. Zero denominators give 0.
inline Metrics compute_metrics(const std::vector<int>& pred, const std::vector<int>& labels,
                               std::size_t k) {
  require(!labels.empty(), ErrorKind::config, "metrics need at least one sample");
  require(pred.size() == labels.size(), ErrorKind::dimension, "prediction/label count mismatch");
  require(k >= 2, ErrorKind::config, "metrics need at least 2 classes");
  Metrics m;
  m.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && std::size_t(labels[i]) < k && pred[i] >= 0 && std::size_t(pred[i]) < k,
            ErrorKind::config, "class index out of range in metrics");
    m.confusion[std::size_t(labels[i])][std::size_t(pred[i])] += 1;
    correct += pred[i] == labels[i];
  }
  m.accuracy = double(correct) / double(labels.size());
  auto per_class = [&](std::size_t c, double& p, double& r, double& f) {
    double tp = double(m.confusion[c][c]), fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += double(m.confusion[o][c]);
      fn += double(m.confusion[c][o]);
    }
    p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  };
  if (k == 2) {
    per_class(1, m.precision, m.recall, m.f1);
  } else {
    for (std::size_t c = 0; c < k; ++c) {
      double p, r, f;
      per_class(c, p, r, f);
      m.precision += p;
      m.recall += r;
      m.f1 += f;
    }
    m.precision /= double(k);
    m.recall /= double(k);
    m.f1 /= double(k);
  }
  return m;
}

inline std::string confusion_csv(const Metrics& m) {
  std::ostringstream os;
  for (const auto& row : m.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// training loop

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  bool class_weighting = true;
  bool restore_best = true;
  std::vector<double> class_weights;  // empty: computed from the training labels

  void validate() const {
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::config,
            "learning rate must be finite and >= 0");
    require(batch_size >= 2, ErrorKind::config, "batch size must be >= 2");
    require(patience >= 1, ErrorKind::config, "patience must be >= 1");
    require(max_epochs >= 1, ErrorKind::config, "max_epochs must be >= 1");
  }

  void write(FlatConfig& kv) const {
    kv.set("train.learning_rate", learning_rate);
    kv.set("train.batch_size", std::uint64_t{batch_size});
    kv.set("train.max_epochs", std::uint64_t{max_epochs});
    kv.set("train.patience", std::uint64_t{patience});
    kv.set("train.seed", seed);
    kv.set("train.class_weighting", class_weighting);
  }

  /// Branch default learning rates: 1e-3 for joints, 1e-4 for silhouettes.
  static TrainConfig read(FlatConfig& kv, Branch branch) {
    TrainConfig c;
    c.learning_rate = kv.get_real("train.learning_rate", branch == Branch::gavd_1d ? 1e-3 : 1e-4);
    c.batch_size = kv.get_uint("train.batch_size", c.batch_size);
    c.max_epochs = kv.get_uint("train.max_epochs", c.max_epochs);
    c.patience = kv.get_uint("train.patience", c.patience);
    c.seed = kv.get_uint("train.seed", c.seed);
    c.class_weighting = kv.get_bool("train.class_weighting", c.class_weighting);
    return c;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0, val_loss = 0;
  Metrics val;
};

struct EpochHistory {
  std::vector<EpochRecord> records;

  std::vector<double> val_losses() const {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(r.val_loss);
    return out;
  }

  std::string csv() const {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_acc,val_precision,val_recall,val_f1\n";
    for (const auto& r : records)
      os << r.epoch << ',' << format_real(r.train_loss) << ',' << format_real(r.val_loss) << ','
         << format_real(r.val.accuracy) << ',' << format_real(r.val.precision) << ','
         << format_real(r.val.recall) << ',' << format_real(r.val.f1) << '\n';
    return os.str();
  }
};

struct StopDecision {
  bool stop = false;
  std::size_t best_epoch = 0;  // 1-based
};

/// Stops once the validation loss has gone `patience` epochs without a strict
/// improvement (by more than 1e-12) over the best so far.
inline StopDecision early_stopping_check(const std::vector<double>& val_losses, std::size_t patience) {
  require(!val_losses.empty(), ErrorKind::state, "early stopping needs at least one epoch");
  require(patience >= 1, ErrorKind::config, "patience must be >= 1");
  std::size_t best = 0;
  for (std::size_t e = 1; e < val_losses.size(); ++e)
    if (val_losses[e] < val_losses[best] - 1e-12) best = e;
  return {val_losses.size() - 1 - best >= patience, best + 1};
}

struct TrainResult {
  EpochHistory history;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  std::size_t steps = 0;
};

struct Evaluation {
  double loss = 0;  // unweighted
  Metrics metrics;
  std::vector<int> predictions;
};

/// Eval-mode loss, predictions and metrics over a whole dataset.
template <typename T>
Evaluation evaluate(ModelGraph<T>& model, const Dataset& data, std::size_t chunk = 256) {
  require(!data.empty(), ErrorKind::config, "cannot evaluate an empty dataset");
  const bool binary = model.config().head == Head::sigmoid_binary;
  const std::size_t k = model.config().classes();
  Evaluation ev;
  double loss_sum = 0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    std::vector<std::size_t> idx;
    std::vector<int> y;
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) {
      idx.push_back(i);
      y.push_back(data.samples[i].label);
    }
    Tensor<T> logits = model.forward(data.template batch<T>(idx), Mode::eval);
    const auto lr = binary ? bce_with_logits(logits, y) : softmax_cross_entropy(logits, y);
    loss_sum += lr.loss * double(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (binary) {
        ev.predictions.push_back(sigmoid(logits.data()[i]) >= T(0.5) ? 1 : 0);
      } else {
        const T* row = logits.data().data() + i * k;
        ev.predictions.push_back(int(std::max_element(row, row + k) - row));
      }
    }
  }
  ev.loss = loss_sum / double(data.size());
  ev.metrics = compute_metrics(ev.predictions, data.labels(), k);
  return ev;
}

/// Mini-batch training with per-epoch validation and early stopping. The
/// model ends at its best-validation-loss weights when `restore_best` is set.
template <typename T>
TrainResult train_loop(ModelGraph<T>& model, const Dataset& train, const Dataset& val,
                       const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  require(train.size() >= 2, ErrorKind::config, "training needs at least 2 samples");
  require(!val.empty(), ErrorKind::config, "validation set is empty");
  {
    const auto train_ids = subject_ids(train);
    for (const auto& s : subject_ids(val))
      require(std::find(train_ids.begin(), train_ids.end(), s) == train_ids.end(), ErrorKind::split,
              "subject '" + s + "' appears in both training and validation data");
  }
  const bool binary = model.config().head == Head::sigmoid_binary;
  const std::size_t k = model.config().classes();

  std::vector<double> weights(k, 1.0);
  if (cfg.class_weighting)
    weights = cfg.class_weights.empty() ? class_weights(train.labels(), k) : cfg.class_weights;
  require(weights.size() == k, ErrorKind::config, "class weight count does not match classes");
  const double pos_weight = weights[1] / weights[0];

  AdamState<T> adam;
  TrainResult result;
  ModelGraph<T> best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");
  const std::uint64_t dropout_seed = derive_seed(cfg.seed, "dropout");
  const std::size_t bs = std::min(cfg.batch_size, train.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(shuffle_seed, epoch));
    const auto order = rng.permutation(train.size());
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start + 2 <= train.size(); start += bs) {
      const std::size_t end = std::min(train.size(), start + bs);
      if (end - start < 2) break;
      std::vector<std::size_t> idx(order.begin() + long(start), order.begin() + long(end));
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(train.samples[i].label);
      Tensor<T> logits =
          model.forward(train.template batch<T>(idx), Mode::train, derive_seed(dropout_seed, result.steps));
      const auto lr = binary ? bce_with_logits(logits, y, pos_weight)
                             : softmax_cross_entropy(logits, y, weights);
      require(std::isfinite(lr.loss), ErrorKind::numeric,
              "training loss became non-finite at epoch " + std::to_string(epoch));
      model.backward(lr.grad);
      adam_step(model.parameters(), adam, cfg.learning_rate);
      loss_sum += lr.loss * double(idx.size());
      seen += idx.size();
      ++result.steps;
    }
    const Evaluation ev = evaluate(model, val);
    require(std::isfinite(ev.loss), ErrorKind::numeric,
            "validation loss became non-finite at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, loss_sum / double(seen), ev.loss, ev.metrics};
    result.history.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (ev.loss < best_loss - 1e-12) {
      best_loss = ev.loss;
      best = model;
    }
    const auto stop = early_stopping_check(result.history.val_losses(), cfg.patience);
    result.best_epoch = stop.best_epoch;
    if (stop.stop) {
      result.early_stopped = true;
      break;
    }
  }
  if (cfg.restore_best) model = std::move(best);
  return result;
}

// ---------------------------------------------------------------------------
// random search

struct SearchSpace {
  double lr_min = 1e-4;
  double lr_max = 1e-2;
  std::vector<std::size_t> batch_sizes{32, 64, 128};
  std::vector<double> dropouts{0.3, 0.5, 0.7};
};

struct TrialConfig {
  std::size_t index = 0;
  double learning_rate = 0;
  std::size_t batch_size = 0;
  double dropout = 0;
};

/// Seeded trial configurations. Discrete (batch, dropout) combinations are
/// drawn without replacement from a fresh seeded permutation per cycle, so
/// every combination appears once per cycle; lr is log-uniform.
inline std::vector<TrialConfig> sample_trials(std::size_t n, std::uint64_t seed,
                                              const SearchSpace& space = {}) {
  require(n >= 1, ErrorKind::config, "random search needs at least one trial");
  require(space.lr_min > 0 && space.lr_max >= space.lr_min, ErrorKind::config,
          "invalid learning rate range");
  const std::size_t combos = space.batch_sizes.size() * space.dropouts.size();
  require(combos > 0, ErrorKind::config, "empty search grid");
  Rng rng(derive_seed(seed, "search"));
  std::vector<TrialConfig> out;
  std::vector<std::size_t> perm;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % combos == 0) perm = rng.permutation(combos);
    const std::size_t c = perm[i % combos];
    TrialConfig t;
    t.index = i;
    t.batch_size = space.batch_sizes[c / space.dropouts.size()];
    t.dropout = space.dropouts[c % space.dropouts.size()];
    t.learning_rate = std::exp(rng.uniform(std::log(space.lr_min), std::log(space.lr_max)));
    out.push_back(t);
  }
  return out;
}

struct TrialResult {
  TrialConfig config;
  double best_val_loss = 0;
  std::size_t best_epoch = 0;
  double val_accuracy = 0;
};

/// Trains one model per sampled configuration on a shared split and ranks
/// trials by best validation loss (ties by trial index). Trials are
/// independent, so `threads > 1` runs them concurrently with identical results.
template <typename T>
std::vector<TrialResult> random_search(const ModelConfig& base_model, const Dataset& train,
                                       const Dataset& val, const TrainConfig& base_train,
                                       std::size_t n_trials, std::uint64_t seed,
                                       std::size_t budget_epochs, std::size_t threads = 1,
                                       const SearchSpace& space = {}) {
  const auto trials = sample_trials(n_trials, seed, space);
  std::vector<TrialResult> results(trials.size());
  std::vector<std::exception_ptr> errors(trials.size());
  auto run = [&](std::size_t i) {
    try {
      ModelConfig mc = base_model;
      mc.dropout = trials[i].dropout;
      ModelGraph<T> model = build_model<T>(mc);
      TrainConfig tc = base_train;
      tc.learning_rate = trials[i].learning_rate;
      tc.batch_size = trials[i].batch_size;
      tc.max_epochs = budget_epochs;
      auto r = train_loop(model, train, val, tc);
      const auto& best = r.history.records.at(r.best_epoch - 1);
      results[i] = {trials[i], best.val_loss, r.best_epoch, best.val.accuracy};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, trials.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < trials.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < trials.size(); i += workers) run(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::stable_sort(results.begin(), results.end(), [](const TrialResult& a, const TrialResult& b) {
    return a.best_val_loss < b.best_val_loss;
  });
  return results;
}

inline std::string trials_csv(const std::vector<TrialResult>& results) {
  std::ostringstream os;
  os << "rank,trial,learning_rate,batch_size,dropout,best_val_loss,best_epoch,val_acc\n";
  for (std::size_t r = 0; r < results.size(); ++r) {
    const auto& t = results[r];
    os << r + 1 << ',' << t.config.index << ',' << format_real(t.config.learning_rate) << ','
       << t.config.batch_size << ',' << format_real(t.config.dropout) << ','
       << format_real(t.best_val_loss) << ',' << t.best_epoch << ',' << format_real(t.val_accuracy)
       << '\n';
  }
  return os.str();
}

}  // namespace gaitlab
