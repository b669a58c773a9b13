#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gaitlab/error.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/tensor.hpp"

namespace gaitlab {

inline constexpr std::size_t kJoints = 18;
inline constexpr std::size_t kJointFeatures = 2 * kJoints;
inline constexpr std::size_t kFrames = 50;
inline constexpr std::size_t kSilhouetteRows = 44;
inline constexpr std::size_t kSilhouetteCols = 64;

enum class Modality { joints, silhouettes };

inline const char* to_string(Modality m) { return m == Modality::joints ? "joints" : "silhouettes"; }

inline Modality modality_from_string(const std::string& s) {
  if (s == "joints") return Modality::joints;
  if (s == "silhouettes") return Modality::silhouettes;
  throw Error(ErrorKind::config, "unknown modality '" + s + "'");
}

/// The five gait classes, normal first.
inline const std::vector<std::string>& gait_class_names() {
  static const std::vector<std::string> names{"normal", "antalgic", "lurch", "spastic", "steppage"};
  return names;
}

/// Orders label strings: known gait names (with "abnormal" right after
/// "normal") in their fixed order, anything else alphabetically after them.
inline std::vector<std::string> ordered_classes(const std::set<std::string>& labels) {
  std::vector<std::string> known{"normal", "abnormal", "antalgic", "lurch", "spastic", "steppage"};
  std::vector<std::string> out;
  for (const auto& k : known)
    if (labels.count(k)) out.push_back(k);
  for (const auto& l : labels)
    if (std::find(known.begin(), known.end(), l) == known.end()) out.push_back(l);
  return out;
}

struct JointSequence {
  Tensor<double> frames;  // [T, 36], x0,y0,...,x17,y17
  std::string subject_id;
  std::string label;

  void validate() const {
    require(frames.rank() == 2 && frames.extent(1) == kJointFeatures, ErrorKind::format,
            "joint sequence must be [T, 36], got " + shape_str(frames.shape()));
    require(frames.extent(0) >= 1, ErrorKind::format, "joint sequence has no frames");
    for (double v : frames.data())
      require(std::isfinite(v), ErrorKind::format, "non-finite joint coordinate");
  }
};

struct SilhouetteSequence {
  Tensor<double> frames;  // [50, 44, 64], values in {0,1}
  std::string subject_id;
  std::string label;

  void validate() const {
    require(frames.shape() == Shape{kFrames, kSilhouetteRows, kSilhouetteCols}, ErrorKind::format,
            "silhouette sequence must be [50, 44, 64], got " + shape_str(frames.shape()));
    for (double v : frames.data())
      require(v == 0.0 || v == 1.0, ErrorKind::format, "silhouette values must be binary");
  }
};

/// One model-ready example.
struct Sample {
  Tensor<double> x;
  int label = 0;
  std::string subject_id;
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
  }

  std::vector<std::size_t> histogram() const {
    std::vector<std::size_t> h(classes.size(), 0);
    for (const auto& s : samples) h.at(static_cast<std::size_t>(s.label)) += 1;
    return h;
  }

  /// Stacks the selected samples along a new leading axis.
  template <typename T = double>
  Tensor<T> batch(const std::vector<std::size_t>& idx) const {
    require(!idx.empty(), ErrorKind::state, "empty batch");
    const Shape& s0 = samples.at(idx[0]).x.shape();
    Shape shape{idx.size()};
    shape.insert(shape.end(), s0.begin(), s0.end());
    Tensor<T> out(shape);
    const std::size_t per = shape_size(s0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& x = samples.at(idx[i]).x;
      require(x.shape() == s0, ErrorKind::dimension, "ragged batch");
      for (std::size_t j = 0; j < per; ++j) out.data()[i * per + j] = static_cast<T>(x.data()[j]);
    }
    return out;
  }

  template <typename T = double>
  Tensor<T> all() const {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return batch<T>(idx);
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d{classes, {}};
    for (std::size_t i : idx) d.samples.push_back(samples.at(i));
    return d;
  }
};

// ---------------------------------------------------------------------------
// keypoints

inline Tensor<double> flatten_keypoints(const Tensor<double>& keypoints) {
  require(keypoints.rank() == 3 && keypoints.extent(2) == 2, ErrorKind::format,
          "keypoints must be [T, joints, 2], got " + shape_str(keypoints.shape()));
  require(keypoints.extent(1) == kJoints, ErrorKind::format,
          "expected 18 joints, got " + std::to_string(keypoints.extent(1)));
  return keypoints.reshaped({keypoints.extent(0), kJointFeatures});
}

inline Tensor<double> unflatten_keypoints(const Tensor<double>& flat) {
  require(flat.rank() == 2 && flat.extent(1) == kJointFeatures, ErrorKind::format,
          "flattened keypoints must be [T, 36], got " + shape_str(flat.shape()));
  return flat.reshaped({flat.extent(0), kJoints, 2});
}

// ---------------------------------------------------------------------------
// variance filter

struct FeatureMask {
  std::vector<bool> keep;

  std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

  /// Applies the mask to the last axis.
  Tensor<double> apply(const Tensor<double>& x) const {
    require(x.rank() >= 1 && x.extent(x.rank() - 1) == keep.size(), ErrorKind::dimension,
            "feature mask of width " + std::to_string(keep.size()) + " does not fit " +
                shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape.back() = kept();
    Tensor<double> out(out_shape);
    const std::size_t rows = x.size() / keep.size();
    std::size_t o = 0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < keep.size(); ++c)
        if (keep[c]) out.data()[o++] = x.data()[r * keep.size() + c];
    return out;
  }
};

struct VarianceFilterResult {
  FeatureMask mask;
  Tensor<double> filtered;
};

/// Keeps columns of an [N, F] matrix whose population variance exceeds the
/// threshold.
inline VarianceFilterResult variance_filter(const Tensor<double>& train, double threshold = 1e-8) {
  require(train.rank() == 2, ErrorKind::dimension, "variance filter expects [N, F]");
  require(threshold >= 0.0, ErrorKind::config, "variance threshold must be >= 0");
  const std::size_t n = train.extent(0), f = train.extent(1);
  require(n >= 2, ErrorKind::degenerate_feature, "variance filter needs at least 2 rows");
  FeatureMask mask{std::vector<bool>(f, false)};
  for (std::size_t c = 0; c < f; ++c) {
    double mean = 0;
    for (std::size_t r = 0; r < n; ++r) mean += train(r, c);
    mean /= double(n);
    double var = 0;
    for (std::size_t r = 0; r < n; ++r) var += (train(r, c) - mean) * (train(r, c) - mean);
    var /= double(n);
    mask.keep[c] = var > threshold;
  }
  require(mask.kept() > 0, ErrorKind::degenerate_feature,
          "variance filter removed every feature column");
  return {mask, mask.apply(train)};
}

/// Per-feature z-scoring of the last axis; empty means identity.
struct FeatureScaler {
  std::vector<double> mean, scale;

  bool empty() const { return mean.empty(); }

  Tensor<double> apply(const Tensor<double>& x) const {
    if (empty()) return x;
    require(x.rank() >= 1 && x.extent(x.rank() - 1) == mean.size(), ErrorKind::dimension,
            "feature scaler of width " + std::to_string(mean.size()) + " does not fit " +
                shape_str(x.shape()));
    Tensor<double> out = x;
    const std::size_t f = mean.size();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = (x.data()[i] - mean[i % f]) / scale[i % f];
    return out;
  }
};

/// Fits a scaler on the rows of an [N, F] matrix using the population
/// standard deviation; a zero-variance column keeps unit scale.
inline FeatureScaler fit_scaler(const Tensor<double>& train) {
  require(train.rank() == 2 && train.extent(0) >= 1, ErrorKind::dimension, "scaler expects [N, F]");
  const std::size_t n = train.extent(0), f = train.extent(1);
  FeatureScaler sc{std::vector<double>(f, 0.0), std::vector<double>(f, 1.0)};
  for (std::size_t c = 0; c < f; ++c) {
    for (std::size_t r = 0; r < n; ++r) sc.mean[c] += train(r, c);
    sc.mean[c] /= double(n);
    double var = 0;
    for (std::size_t r = 0; r < n; ++r) var += (train(r, c) - sc.mean[c]) * (train(r, c) - sc.mean[c]);
    var /= double(n);
    if (var > 0) sc.scale[c] = std::sqrt(var);
  }
  return sc;
}

// ---------------------------------------------------------------------------
// augmentation

inline Tensor<double> gaussian_augment(const Tensor<double>& seq, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, ErrorKind::config, "noise sigma must be >= 0");
  Tensor<double> out = seq;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (double& v : out.data()) v += sigma * rng.normal();
  return out;
}

/// Circular shift along axis 0: out[(t + s) mod T] = seq[t].
inline Tensor<double> temporal_shift(const Tensor<double>& seq, long long s) {
  require(seq.rank() >= 1 && seq.extent(0) >= 1, ErrorKind::dimension, "cannot shift empty sequence");
  const long long t = static_cast<long long>(seq.extent(0));
  const std::size_t shift = static_cast<std::size_t>(((s % t) + t) % t);
  Tensor<double> out(seq.shape());
  const std::size_t per = seq.size() / seq.extent(0);
  for (std::size_t i = 0; i < seq.extent(0); ++i) {
    const std::size_t dst = (i + shift) % seq.extent(0);
    std::copy_n(seq.data().begin() + i * per, per, out.data().begin() + dst * per);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SMOTE

struct SmoteResult {
  Tensor<double> features;  // originals first, then synthetic rows
  std::vector<int> labels;
  std::size_t synthetic = 0;
};

/// Raises every class to the majority count by interpolating each base sample
/// toward one of its k nearest same-class neighbours. Rows of `features` are
/// compared as flat vectors. Base samples are cycled in a seeded order so each
/// original is used as evenly as possible.
inline SmoteResult smote_oversample(const Tensor<double>& features, const std::vector<int>& labels,
                                    std::size_t k, std::uint64_t seed, std::size_t num_classes = 0) {
  require(features.rank() >= 1 && features.extent(0) == labels.size(), ErrorKind::dimension,
          "features and labels disagree on sample count");
  require(!labels.empty(), ErrorKind::oversampling, "nothing to oversample");
  int max_label = 0;
  for (int l : labels) {
    require(l >= 0, ErrorKind::config, "negative class label");
    max_label = std::max(max_label, l);
  }
  const std::size_t classes = std::max<std::size_t>(num_classes, std::size_t(max_label) + 1);
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[std::size_t(labels[i])].push_back(i);
  std::size_t majority = 0;
  for (const auto& m : members) majority = std::max(majority, m.size());

  require(k >= 1, ErrorKind::config, "SMOTE k must be positive");
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t n = members[c].size();
    if (n == majority) continue;
    require(n >= 2, ErrorKind::oversampling,
            "class " + std::to_string(c) + " has " + std::to_string(n) +
                " sample(s); SMOTE needs at least 2");
    require(k <= n - 1, ErrorKind::config,
            "SMOTE k=" + std::to_string(k) + " exceeds class " + std::to_string(c) + " size - 1 (" +
                std::to_string(n - 1) + ")");
  }

  const std::size_t width = features.size() / labels.size();
  auto row = [&](std::size_t i) { return features.data().subspan(i * width, width); };
  std::vector<double> rows(features.data().begin(), features.data().end());
  std::vector<int> out_labels = labels;
  Rng rng(seed);
  std::size_t synthetic = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& m = members[c];
    if (m.size() == majority) continue;
    // k nearest neighbours within the class, ties broken by index
    std::vector<std::vector<std::size_t>> nn(m.size());
    for (std::size_t a = 0; a < m.size(); ++a) {
      std::vector<std::pair<double, std::size_t>> d;
      for (std::size_t b = 0; b < m.size(); ++b) {
        if (a == b) continue;
        double s = 0;
        auto ra = row(m[a]), rb = row(m[b]);
        for (std::size_t j = 0; j < width; ++j) s += (ra[j] - rb[j]) * (ra[j] - rb[j]);
        d.emplace_back(s, m[b]);
      }
      std::sort(d.begin(), d.end());
      for (std::size_t j = 0; j < k; ++j) nn[a].push_back(d[j].second);
    }
    std::vector<std::size_t> order = rng.permutation(m.size());
    for (std::size_t j = 0; j + m.size() < majority; ++j) {
      const std::size_t a = order[j % m.size()];
      const std::size_t b = nn[a][rng.below(k)];  // sample index
      const double u = rng.uniform();
      auto ra = row(m[a]), rb = row(b);
      for (std::size_t q = 0; q < width; ++q) rows.push_back(ra[q] + u * (rb[q] - ra[q]));
      out_labels.push_back(int(c));
      ++synthetic;
    }
  }
  Shape shape = features.shape();
  shape[0] = out_labels.size();
  return {Tensor<double>(shape, std::move(rows)), std::move(out_labels), synthetic};
}

/// SMOTE over a dataset; synthetic samples get the subject id "smote".
inline Dataset smote_dataset(const Dataset& d, std::size_t k, std::uint64_t seed) {
  require(!d.empty(), ErrorKind::oversampling, "nothing to oversample");
  auto r = smote_oversample(d.all(), d.labels(), k, seed, d.classes.size());
  Dataset out{d.classes, d.samples};
  const Shape& s0 = d.samples[0].x.shape();
  const std::size_t per = shape_size(s0);
  for (std::size_t i = d.size(); i < r.labels.size(); ++i) {
    Tensor<double> x(s0);
    std::copy_n(r.features.data().begin() + i * per, per, x.data().begin());
    out.samples.push_back({std::move(x), r.labels[i], "smote"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// silhouettes

/// Nearest-neighbour resize with src = floor(dst * src_extent / dst_extent).
inline Tensor<double> resize_silhouette(const Tensor<double>& img, std::size_t h, std::size_t w) {
  require(img.rank() == 2 && img.extent(0) >= 1 && img.extent(1) >= 1, ErrorKind::dimension,
          "silhouette frame must be a non-empty [H, W] image");
  require(h >= 1 && w >= 1, ErrorKind::config, "target size must be positive");
  const std::size_t sh = img.extent(0), sw = img.extent(1);
  Tensor<double> out({h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = img(i * sh / h, j * sw / w);
  return out;
}

/// Resizes every frame of a [T, H, W] volume.
inline Tensor<double> resize_volume(const Tensor<double>& vol, std::size_t h, std::size_t w) {
  require(vol.rank() == 3, ErrorKind::dimension, "volume must be [T, H, W]");
  Tensor<double> out({vol.extent(0), h, w});
  for (std::size_t t = 0; t < vol.extent(0); ++t) out.set_slice(t, resize_silhouette(vol.slice(t), h, w));
  return out;
}

/// Trailing zero frames when short; centered window when long.
inline Tensor<double> pad_or_crop(const Tensor<double>& seq, std::size_t target = kFrames) {
  require(seq.rank() >= 1 && seq.extent(0) >= 1, ErrorKind::dimension, "sequence has no frames");
  require(target >= 1, ErrorKind::config, "target length must be positive");
  const std::size_t t = seq.extent(0);
  if (t == target) return seq;
  Shape shape = seq.shape();
  shape[0] = target;
  Tensor<double> out(shape);
  const std::size_t per = seq.size() / t;
  const std::size_t start = t > target ? (t - target) / 2 : 0;
  const std::size_t n = std::min(t, target);
  std::copy_n(seq.data().begin() + start * per, n * per, out.data().begin());
  return out;
}

// ---------------------------------------------------------------------------
// subject split

struct SplitAssignment {
  std::set<std::string> train;
  std::set<std::string> test;
  double ratio = 0.8;
  std::uint64_t seed = 0;
};

/// Seeded subject-level split. The first ceil(ratio * S) shuffled subjects go
/// to train, capped at S - 1 so both sides are non-empty.
inline SplitAssignment subject_split(const std::vector<std::string>& subject_ids, double ratio,
                                     std::uint64_t seed) {
  require(ratio > 0.0 && ratio < 1.0, ErrorKind::config, "split ratio must be in (0, 1)");
  std::set<std::string> unique(subject_ids.begin(), subject_ids.end());
  require(unique.size() >= 2, ErrorKind::split,
          "subject split needs at least 2 distinct subjects, got " + std::to_string(unique.size()));
  std::vector<std::string> subjects(unique.begin(), unique.end());
  Rng rng(seed);
  rng.shuffle(subjects.begin(), subjects.end());
  const double exact = ratio * double(subjects.size());
  std::size_t n_train = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, subjects.size() - 1);
  SplitAssignment s;
  s.ratio = ratio;
  s.seed = seed;
  for (std::size_t i = 0; i < subjects.size(); ++i) (i < n_train ? s.train : s.test).insert(subjects[i]);
  return s;
}

/// Partitions a dataset by a split assignment, preserving sample order.
inline std::pair<Dataset, Dataset> apply_split(const Dataset& d, const SplitAssignment& s) {
  Dataset train{d.classes, {}}, test{d.classes, {}};
  for (const auto& smp : d.samples) {
    if (s.train.count(smp.subject_id)) {
      train.samples.push_back(smp);
    } else {
      require(s.test.count(smp.subject_id) != 0, ErrorKind::split,
              "subject '" + smp.subject_id + "' missing from split");
      test.samples.push_back(smp);
    }
  }
  return {std::move(train), std::move(test)};
}

inline std::vector<std::string> subject_ids(const Dataset& d) {
  std::vector<std::string> out;
  for (const auto& s : d.samples) out.push_back(s.subject_id);
  return out;
}

}  // namespace gaitlab
