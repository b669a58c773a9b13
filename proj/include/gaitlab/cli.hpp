#pragma once

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gaitlab/config.hpp"
#include "gaitlab/data.hpp"
#include "gaitlab/error.hpp"
#include "gaitlab/explain.hpp"
#include "gaitlab/io.hpp"
#include "gaitlab/model.hpp"
#include "gaitlab/pipeline.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/synth.hpp"
#include "gaitlab/train.hpp"

namespace gaitlab::cli {

namespace fs = std::filesystem;

/// 0 success, 3 numeric failure, 2 every other error.
inline int exit_code(ErrorKind kind) { return kind == ErrorKind::numeric ? 3 : 2; }

/// Keys that steer execution but never change results; kept out of run.cfg.
inline const std::vector<std::string>& execution_keys() {
  static const std::vector<std::string> keys{"out", "threads"};
  return keys;
}

inline void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + file.string() + "'");
  out << text;
  require(static_cast<bool>(out), ErrorKind::io, "write failed for '" + file.string() + "'");
}

inline fs::path output_dir(FlatConfig& kv) {
  const std::string out = kv.get_string("out", "");
  require(!out.empty(), ErrorKind::config, "no output directory; pass --out or set 'out'");
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec && fs::is_directory(out), ErrorKind::io, "cannot create output directory '" + out + "'");
  const fs::path probe = fs::path(out) / ".gaitlab_write_test";
  {
    std::ofstream f(probe);
    require(static_cast<bool>(f), ErrorKind::io, "output directory '" + out + "' is not writable");
  }
  fs::remove(probe, ec);
  return out;
}

inline std::uint64_t global_seed(FlatConfig& kv) { return kv.get_uint("seed", 0); }

/// Sub-seed `key`, defaulting to derive_seed(seed, name).
inline std::uint64_t sub_seed(FlatConfig& kv, const std::string& key, const std::string& name) {
  return kv.get_uint(key, derive_seed(global_seed(kv), name));
}

inline std::size_t threads(FlatConfig& kv) {
  const auto n = kv.get_uint("threads", 1);
  require(n >= 1, ErrorKind::config, "threads must be >= 1");
  return n;
}

inline void reject_unknown(const FlatConfig& kv) {
  const auto keys = kv.unread();
  if (keys.empty()) return;
  std::string list;
  for (const auto& k : keys) list += (list.empty() ? "" : ", ") + k;
  throw Error(ErrorKind::config, "unknown config key(s): " + list);
}

inline void write_run_cfg(const FlatConfig& kv, const fs::path& dir, const std::string& command) {
  FlatConfig echo = kv;
  for (const auto& k : execution_keys()) echo.erase(k);
  write_text(dir / "run.cfg", "# gaitlab " + command + "\n" + echo.render());
}

inline std::string join(const std::vector<std::string>& v, char sep = ',') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + v[i];
  return s;
}

inline std::string histogram_text(const std::vector<std::string>& classes,
                                  const std::vector<std::size_t>& counts) {
  std::ostringstream os;
  for (std::size_t c = 0; c < classes.size(); ++c) os << "  " << classes[c] << ' ' << counts[c] << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// synth

inline void cmd_synth(FlatConfig& kv, std::ostream& log) {
  const std::uint64_t seed = sub_seed(kv, "synth.seed", "data");
  kv.set("synth.seed", seed);
  const SynthConfig c = SynthConfig::read(kv);
  const fs::path out = output_dir(kv);
  threads(kv);
  reject_unknown(kv);
  const SynthDataset s = synth_generate(c);
  write_synth(s, out);
  write_run_cfg(kv, out, "synth");
  log << "wrote " << s.items.size() << " sequences to " << out.string() << "\n"
      << histogram_text(s.classes, s.histogram());
}

// ---------------------------------------------------------------------------
// shared training setup

struct Preprocess {
  Modality modality = Modality::joints;
  std::vector<std::string> classes;
  LoadOptions load;
  FeatureMask mask;
  FeatureScaler scaler;

  void save(const fs::path& file) const {
    FlatConfig kv;
    kv.set("modality", to_string(modality));
    kv.set("classes", join(classes));
    kv.set("frames", std::uint64_t{load.frames});
    kv.set("rows", std::uint64_t{load.rows});
    kv.set("cols", std::uint64_t{load.cols});
    std::string m;
    for (bool b : mask.keep) m += b ? '1' : '0';
    kv.set("feature_mask", m);
    auto reals = [](const std::vector<double>& v) {
      std::string out;
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_real(v[i]);
      return out;
    };
    kv.set("feature_mean", reals(scaler.mean));
    kv.set("feature_scale", reals(scaler.scale));
    kv.save(file.string());
  }

  static Preprocess load_from(const fs::path& file) {
    require(fs::exists(file), ErrorKind::io, "missing preprocessing record '" + file.string() + "'");
    FlatConfig kv = FlatConfig::load(file.string());
    Preprocess p;
    p.modality = modality_from_string(kv.get_string("modality", "joints"));
    p.classes = split(kv.get_string("classes", ""), ',');
    p.load.frames = kv.get_uint("frames", kFrames);
    p.load.rows = kv.get_uint("rows", kSilhouetteRows);
    p.load.cols = kv.get_uint("cols", kSilhouetteCols);
    p.load.classes = p.classes;
    for (char ch : kv.get_string("feature_mask", "")) {
      require(ch == '0' || ch == '1', ErrorKind::format, "bad feature mask in '" + file.string() + "'");
      p.mask.keep.push_back(ch == '1');
    }
    p.scaler.mean = kv.get_reals("feature_mean", {});
    p.scaler.scale = kv.get_reals("feature_scale", {});
    require(p.scaler.mean.size() == p.scaler.scale.size() &&
                (p.scaler.empty() || p.scaler.mean.size() == p.mask.kept()),
            ErrorKind::format, "bad feature scaler in '" + file.string() + "'");
    return p;
  }
};

struct Setup {
  Preprocess pre;
  PreparedData data;
  ModelConfig model;
  TrainConfig train;
  std::string manifest;
};

inline void default_or_match(FlatConfig& kv, const std::string& key, std::uint64_t value,
                             const std::string& why) {
  if (!kv.has(key)) {
    kv.set(key, value);
    return;
  }
  require(kv.get_uint(key, value) == value, ErrorKind::config,
          key + " = " + kv.get_string(key, "") + " conflicts with the data (" + why + " = " +
              std::to_string(value) + ")");
}

/// Loads the manifest, prepares splits and resolves model and training
/// configs against the data.
inline Setup prepare_setup(FlatConfig& kv, std::ostream& log) {
  Setup s;
  s.manifest = kv.get_string("data.manifest", "");
  require(!s.manifest.empty(), ErrorKind::config, "no dataset; pass --manifest or set data.manifest");
  s.pre.load.frames = kv.get_uint("data.frames", kFrames);
  s.pre.load.rows = kv.get_uint("data.rows", kSilhouetteRows);
  s.pre.load.cols = kv.get_uint("data.cols", kSilhouetteCols);
  const PipelineConfig pc = PipelineConfig::read(kv, derive_seed(global_seed(kv), "data"));

  const DatasetManifest m = read_manifest(s.manifest);
  s.pre.modality = m.modality;
  const Branch expected = m.modality == Modality::joints ? Branch::gavd_1d : Branch::oumvlp_3d;
  if (!kv.has("model.branch")) kv.set("model.branch", to_string(expected));
  const Branch branch = branch_from_string(kv.get_string("model.branch", ""));
  require(branch == expected, ErrorKind::config,
          std::string("manifest holds ") + to_string(m.modality) + " but model.branch is " +
              to_string(branch));

  const Dataset all = load_dataset(m, s.pre.load);
  s.pre.classes = all.classes;
  log << "loaded " << all.size() << " sequences (" << to_string(m.modality) << ", "
      << all.classes.size() << " classes)\n";
  s.data = prepare_data(all, m.modality, pc);
  s.pre.mask = s.data.mask;
  s.pre.scaler = s.data.scaler;
  log << "split: train " << s.data.train.size() << " (" << s.data.synthetic << " synthetic), validation "
      << s.data.val.size() << ", test " << s.data.test.size() << "\n";

  const std::size_t k = all.classes.size();
  if (!kv.has("model.head")) kv.set("model.head", k == 2 ? "sigmoid" : "softmax");
  default_or_match(kv, "model.num_classes", k, "classes in manifest");
  if (branch == Branch::gavd_1d) {
    default_or_match(kv, "model.seq_len", s.pre.load.frames, "data.frames");
    default_or_match(kv, "model.features", s.pre.mask.kept(), "features kept by the variance filter");
  } else {
    default_or_match(kv, "model.frames", s.pre.load.frames, "data.frames");
    default_or_match(kv, "model.height", s.pre.load.rows, "data.rows");
    default_or_match(kv, "model.width", s.pre.load.cols, "data.cols");
  }
  if (!kv.has("model.seed")) kv.set("model.seed", derive_seed(global_seed(kv), "init"));
  s.model = ModelConfig::read(kv);
  require(s.model.head == Head::softmax_multiclass || k == 2, ErrorKind::config,
          "sigmoid head needs exactly 2 classes, manifest has " + std::to_string(k));

  if (!kv.has("train.seed")) kv.set("train.seed", derive_seed(global_seed(kv), "dropout"));
  s.train = TrainConfig::read(kv, branch);
  s.train.validate();
  if (s.train.class_weighting) s.train.class_weights = s.data.class_weights;
  return s;
}

inline std::string metrics_header() { return "split,samples,loss,accuracy,precision,recall,f1\n"; }

inline std::string metrics_row(const std::string& split, std::size_t n, const Evaluation& e) {
  std::ostringstream os;
  os << split << ',' << n << ',' << format_real(e.loss) << ',' << format_real(e.metrics.accuracy)
     << ',' << format_real(e.metrics.precision) << ',' << format_real(e.metrics.recall) << ','
     << format_real(e.metrics.f1) << '\n';
  return os.str();
}

inline std::string confusion_table(const Metrics& m, const std::vector<std::string>& classes) {
  std::ostringstream os;
  os << "true\\predicted";
  for (const auto& c : classes) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < m.confusion.size(); ++i) {
    os << classes[i];
    for (auto v : m.confusion[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// train

inline void cmd_train(FlatConfig& kv, std::ostream& log) {
  const fs::path out = output_dir(kv);
  threads(kv);
  Setup s = prepare_setup(kv, log);
  reject_unknown(kv);
  write_run_cfg(kv, out, "train");

  ModelGraph<double> model = build_model<double>(s.model);
  log << "model: " << model.layer_count() << " layers, " << model.parameter_count()
      << " trainable parameters\n";
  const TrainResult r = train_loop(model, s.data.train, s.data.val, s.train, [&](const EpochRecord& e) {
    log << "epoch " << e.epoch << " train_loss " << format_real(e.train_loss) << " val_loss "
        << format_real(e.val_loss) << " val_acc " << format_real(e.val.accuracy) << "\n";
  });
  log << "best epoch " << r.best_epoch << (r.early_stopped ? " (early stop)" : "") << "\n";

  save_checkpoint(model, out / "checkpoint");
  s.pre.save(out / "preprocess.cfg");
  write_text(out / "history.csv", r.history.csv());
  const Evaluation val = evaluate(model, s.data.val);
  const Evaluation test = evaluate(model, s.data.test);
  write_text(out / "metrics.csv", metrics_header() + metrics_row("validation", s.data.val.size(), val) +
                                      metrics_row("test", s.data.test.size(), test));
  write_text(out / "confusion.csv", confusion_table(test.metrics, s.pre.classes));
  write_text(out / "confusion_validation.csv", confusion_table(val.metrics, s.pre.classes));
  std::ostringstream split;
  split << "subject_id,split\n";
  for (const auto& id : s.data.inner.train) split << id << ",train\n";
  for (const auto& id : s.data.inner.test) split << id << ",validation\n";
  for (const auto& id : s.data.outer.test) split << id << ",test\n";
  write_text(out / "split.csv", split.str());
  log << "test accuracy " << format_real(test.metrics.accuracy) << " f1 "
      << format_real(test.metrics.f1) << "\n";
}

// ---------------------------------------------------------------------------
// eval

inline std::map<std::string, std::string> read_split(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorKind::io, "cannot read '" + file.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    auto cols = split(trim(line), ',');
    if (cols.size() == 2) out[cols[0]] = cols[1];
  }
  return out;
}

/// Dataset from a manifest, shaped like the training data of `run`.
inline Dataset load_for_run(const DatasetManifest& m, const Preprocess& pre) {
  require(m.modality == pre.modality, ErrorKind::config,
          std::string("manifest holds ") + to_string(m.modality) + " but the checkpoint expects " +
              to_string(pre.modality));
  return apply_scaler(apply_mask(load_dataset(m, pre.load), pre.mask), pre.scaler);
}

inline void cmd_eval(FlatConfig& kv, std::ostream& log) {
  const fs::path out = output_dir(kv);
  threads(kv);
  const fs::path run = kv.get_string("run", "");
  require(!run.empty(), ErrorKind::config, "no training run; pass --run or set 'run'");
  const std::string manifest = kv.get_string("data.manifest", "");
  require(!manifest.empty(), ErrorKind::config, "no dataset; pass --manifest or set data.manifest");
  const std::string subset = kv.get_string("eval.split", "all");
  require(subset == "all" || subset == "train" || subset == "validation" || subset == "test",
          ErrorKind::config, "eval.split must be all|train|validation|test");
  reject_unknown(kv);

  const Preprocess pre = Preprocess::load_from(run / "preprocess.cfg");
  ModelGraph<double> model = load_checkpoint<double>(run / "checkpoint");
  Dataset d = load_for_run(read_manifest(manifest), pre);
  if (subset != "all") {
    const auto assignment = read_split(run / "split.csv");
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < d.size(); ++i) {
      auto it = assignment.find(d.samples[i].subject_id);
      if (it != assignment.end() && it->second == subset) keep.push_back(i);
    }
    d = d.subset(keep);
  }
  require(!d.empty(), ErrorKind::config, "no samples to evaluate");
  require(d.samples[0].x.shape() == model.input_spec(), ErrorKind::config,
          "data shape " + shape_str(d.samples[0].x.shape()) + " does not fit checkpoint input " +
              shape_str(model.input_spec()));
  write_run_cfg(kv, out, "eval");

  const Evaluation e = evaluate(model, d);
  write_text(out / "metrics.csv", metrics_header() + metrics_row(subset, d.size(), e));
  write_text(out / "confusion.csv", confusion_table(e.metrics, pre.classes));
  std::ostringstream pred;
  pred << "index,subject_id,label,predicted\n";
  for (std::size_t i = 0; i < d.size(); ++i)
    pred << i << ',' << d.samples[i].subject_id << ',' << pre.classes[std::size_t(d.samples[i].label)]
         << ',' << pre.classes[std::size_t(e.predictions[i])] << '\n';
  write_text(out / "predictions.csv", pred.str());
  log << "evaluated " << d.size() << " sequences: accuracy " << format_real(e.metrics.accuracy)
      << " f1 " << format_real(e.metrics.f1) << "\n";
}

// ---------------------------------------------------------------------------
// explain

inline void cmd_explain(FlatConfig& kv, std::ostream& log) {
  const fs::path out = output_dir(kv);
  const std::size_t n_threads = threads(kv);
  const fs::path run = kv.get_string("run", "");
  require(!run.empty(), ErrorKind::config, "no training run; pass --run or set 'run'");
  const std::string manifest = kv.get_string("data.manifest", "");
  require(!manifest.empty(), ErrorKind::config, "no dataset; pass --manifest or set data.manifest");
  const Preprocess pre = Preprocess::load_from(run / "preprocess.cfg");
  const std::size_t index = kv.get_uint("explain.sample", 0);
  const std::string tool = kv.get_string(
      "explain.tool", pre.modality == Modality::silhouettes ? "gradcam" : "shap");
  require(tool == "gradcam" || tool == "shap", ErrorKind::config, "explain.tool must be gradcam|shap");
  const std::string target_s = kv.get_string("explain.target", "predicted");
  std::optional<int> target;
  if (target_s != "predicted") target = int(kv.get_uint("explain.target", 0));
  if (!kv.has("explain.seed")) kv.set("explain.seed", derive_seed(global_seed(kv), "explain"));
  ShapConfig shap;
  std::string layer_s;
  if (tool == "shap") {
    shap = ShapConfig::read(kv);
    shap.target_class = target;
    shap.threads = n_threads;
  } else {
    kv.get_uint("explain.seed", 0);
    layer_s = kv.get_string("explain.layer", "last");
  }
  reject_unknown(kv);

  DatasetManifest m = read_manifest(manifest);
  require(index < m.entries.size(), ErrorKind::config,
          "explain.sample " + std::to_string(index) + " out of range for " +
              std::to_string(m.entries.size()) + " manifest entries");
  const ManifestEntry entry = m.entries[index];
  m.entries = {entry};
  const Dataset d = load_for_run(m, pre);
  ModelGraph<double> model = load_checkpoint<double>(run / "checkpoint");
  const Tensor<double>& x = d.samples[0].x;
  require(x.shape() == model.input_spec(), ErrorKind::config,
          "sample shape " + shape_str(x.shape()) + " does not fit checkpoint input " +
              shape_str(model.input_spec()));
  write_run_cfg(kv, out, "explain");

  FlatConfig record;
  record.set("checkpoint", (run / "checkpoint").string());
  record.set("sample", std::uint64_t{index});
  record.set("sample_path", entry.path);
  record.set("subject_id", entry.subject_id);
  record.set("label", entry.label);
  record.set("tool", tool);
  record.set("seed", kv.get_uint("explain.seed", 0));

  if (tool == "shap") {
    const ShapAttribution a = shap_temporal(model, x, shap);
    write_text(out / "attributions.csv", a.csv());
    double sum = 0;
    for (double p : a.phi) sum += p;
    record.set("mode", to_string(a.mode));
    record.set("baseline", to_string(a.baseline));
    record.set("samples", std::uint64_t{shap.samples});
    record.set("group", std::uint64_t{a.group});
    record.set("target_class", pre.classes.at(std::size_t(a.target_class)));
    record.set("f_x", a.f_x);
    record.set("f_baseline", a.f_baseline);
    record.set("phi_sum", sum);
    record.set("efficiency_residual", std::abs(sum - (a.f_x - a.f_baseline)));
    log << "shap (" << to_string(a.mode) << ") over " << a.phi.size()
        << " frames; efficiency residual " << format_real(std::abs(sum - (a.f_x - a.f_baseline)))
        << "\n";
  } else {
    std::optional<std::size_t> layer;
    if (layer_s != "last") layer = std::size_t(kv.get_uint("explain.layer", 0));
    const GradCamMap g = grad_cam(model, x, layer, target);
    record.set("layer", std::uint64_t{g.layer});
    record.set("target_class", pre.classes.at(std::size_t(g.target_class)));
    record.set("target_value", g.target_value);
    if (g.map.rank() == 3) {
      for (std::size_t t = 0; t < g.map.extent(0); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "heatmap_%03zu.ppm", t);
        write_ppm(out / name, render_heatmap(g.map.slice(t), x.slice(t)));
      }
      record.set("frames", std::uint64_t{g.map.extent(0)});
      log << "grad-cam: wrote " << g.map.extent(0) << " heatmaps\n";
    } else {
      std::ostringstream os;
      os << "frame_index,cam\n";
      for (std::size_t t = 0; t < g.map.size(); ++t) os << t << ',' << format_real(g.map.data()[t]) << '\n';
      write_text(out / "gradcam.csv", os.str());
      log << "grad-cam: wrote temporal map over " << g.map.size() << " frames\n";
    }
  }
  write_text(out / "explain_manifest.txt", record.render());
}

// ---------------------------------------------------------------------------
// search

inline void cmd_search(FlatConfig& kv, std::ostream& log) {
  const fs::path out = output_dir(kv);
  const std::size_t n_threads = threads(kv);
  const std::size_t trials = kv.get_uint("search.trials", 10);
  const std::size_t epochs = kv.get_uint("search.epochs", 10);
  require(trials >= 1 && epochs >= 1, ErrorKind::config, "search.trials and search.epochs must be >= 1");
  const std::uint64_t seed = sub_seed(kv, "search.seed", "search");
  SearchSpace space;
  space.lr_min = kv.get_real("search.lr_min", space.lr_min);
  space.lr_max = kv.get_real("search.lr_max", space.lr_max);
  space.batch_sizes = kv.get_sizes("search.batch_sizes", space.batch_sizes);
  space.dropouts = kv.get_reals("search.dropouts", space.dropouts);
  Setup s = prepare_setup(kv, log);
  reject_unknown(kv);
  write_run_cfg(kv, out, "search");

  const auto results =
      random_search<double>(s.model, s.data.train, s.data.val, s.train, trials, seed, epochs, n_threads, space);
  write_text(out / "trials.csv", trials_csv(results));
  const auto& best = results.front();
  log << "best trial " << best.config.index << ": lr " << format_real(best.config.learning_rate)
      << " batch " << best.config.batch_size << " dropout " << format_real(best.config.dropout)
      << " val_loss " << format_real(best.best_val_loss) << "\n";
}

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"synth", "train", "eval", "explain", "search"};
  return c;
}

/// Runs one command on a resolved config and maps failures to exit codes.
inline int run_command(const std::string& command, FlatConfig kv, std::ostream& log,
                       std::ostream& err) {
  try {
    if (command == "synth") cmd_synth(kv, log);
    else if (command == "train") cmd_train(kv, log);
    else if (command == "eval") cmd_eval(kv, log);
    else if (command == "explain") cmd_explain(kv, log);
    else if (command == "search") cmd_search(kv, log);
    else throw Error(ErrorKind::config, "unknown command '" + command + "'");
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace gaitlab::cli
