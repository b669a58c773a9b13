#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gaitlab/config.hpp"
#include "gaitlab/data.hpp"
#include "gaitlab/error.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/train.hpp"

namespace gaitlab {

/// Preprocessing between loading and training.
struct PipelineConfig {
  double train_ratio = 0.8;  // subject share kept for training (rest is test)
  double val_ratio = 0.1;    // share of training subjects held out for validation
  bool smote = true;
  std::size_t smote_k = 5;
  double variance_threshold = 1e-8;
  bool standardize = true;  // z-score joint features with training statistics
  std::size_t augment_copies = 0;  // augmented copies appended per training sample
  double noise_sigma = 0.01;
  std::size_t max_shift = 2;
  bool augment_first = false;  // augment before SMOTE instead of after
  std::uint64_t seed = 0;

  void validate() const {
    require(val_ratio > 0.0 && val_ratio < 1.0, ErrorKind::config, "data.val_ratio must be in (0, 1)");
    require(noise_sigma >= 0.0, ErrorKind::config, "data.noise_sigma must be >= 0");
    require(variance_threshold >= 0.0, ErrorKind::config, "data.variance_threshold must be >= 0");
  }

  void write(FlatConfig& kv) const {
    kv.set("data.train_ratio", train_ratio);
    kv.set("data.val_ratio", val_ratio);
    kv.set("data.smote", smote);
    kv.set("data.smote_k", std::uint64_t{smote_k});
    kv.set("data.variance_threshold", variance_threshold);
    kv.set("data.standardize", standardize);
    kv.set("data.augment_copies", std::uint64_t{augment_copies});
    kv.set("data.noise_sigma", noise_sigma);
    kv.set("data.max_shift", std::uint64_t{max_shift});
    kv.set("data.augment_first", augment_first);
    kv.set("data.seed", seed);
  }

  static PipelineConfig read(FlatConfig& kv, std::uint64_t default_seed = 0) {
    PipelineConfig c;
    c.train_ratio = kv.get_real("data.train_ratio", c.train_ratio);
    c.val_ratio = kv.get_real("data.val_ratio", c.val_ratio);
    c.smote = kv.get_bool("data.smote", c.smote);
    c.smote_k = kv.get_uint("data.smote_k", c.smote_k);
    c.variance_threshold = kv.get_real("data.variance_threshold", c.variance_threshold);
    c.standardize = kv.get_bool("data.standardize", c.standardize);
    c.augment_copies = kv.get_uint("data.augment_copies", c.augment_copies);
    c.noise_sigma = kv.get_real("data.noise_sigma", c.noise_sigma);
    c.max_shift = kv.get_uint("data.max_shift", c.max_shift);
    c.augment_first = kv.get_bool("data.augment_first", c.augment_first);
    c.seed = kv.get_uint("data.seed", default_seed);
    c.validate();
    return c;
  }
};

struct PreparedData {
  Dataset train, val, test;
  FeatureMask mask;  // empty for silhouettes
  FeatureScaler scaler;  // empty for silhouettes or when standardization is off
  std::vector<double> class_weights;  // from the training labels before oversampling
  SplitAssignment outer;  // train+validation vs test
  SplitAssignment inner;  // train vs validation
  std::size_t synthetic = 0;
};

/// Applies a feature mask to the last axis of every sample.
inline Dataset apply_mask(const Dataset& d, const FeatureMask& mask) {
  if (mask.keep.empty()) return d;
  Dataset out{d.classes, {}};
  for (const auto& s : d.samples) out.samples.push_back({mask.apply(s.x), s.label, s.subject_id});
  return out;
}

inline Dataset apply_scaler(const Dataset& d, const FeatureScaler& scaler) {
  if (scaler.empty()) return d;
  Dataset out{d.classes, {}};
  for (const auto& s : d.samples) out.samples.push_back({scaler.apply(s.x), s.label, s.subject_id});
  return out;
}

/// Subject split into train/validation/test, joint-feature variance filter
/// and standardization fitted on train only, class weights, then SMOTE and
/// augmentation on train (augmentation first when `augment_first` is set).
inline PreparedData prepare_data(const Dataset& all, Modality modality, const PipelineConfig& c) {
  c.validate();
  require(!all.empty(), ErrorKind::config, "dataset is empty");
  PreparedData p;
  p.outer = subject_split(subject_ids(all), c.train_ratio, derive_seed(c.seed, "split"));
  auto [trainval, test] = apply_split(all, p.outer);
  p.inner = subject_split(subject_ids(trainval), 1.0 - c.val_ratio, derive_seed(c.seed, "validation"));
  auto [train, val] = apply_split(trainval, p.inner);

  if (modality == Modality::joints) {
    std::size_t rows = 0;
    const std::size_t f = train.samples.at(0).x.extent(1);
    for (const auto& s : train.samples) rows += s.x.extent(0);
    Tensor<double> frames({rows, f});
    std::size_t r = 0;
    for (const auto& s : train.samples)
      for (std::size_t t = 0; t < s.x.extent(0); ++t, ++r)
        for (std::size_t j = 0; j < f; ++j) frames(r, j) = s.x(t, j);
    auto filtered = variance_filter(frames, c.variance_threshold);
    p.mask = filtered.mask;
    if (c.standardize) p.scaler = fit_scaler(filtered.filtered);
    for (Dataset* d : {&train, &val, &test}) *d = apply_scaler(apply_mask(*d, p.mask), p.scaler);
  }

  p.class_weights = class_weights(train.labels(), train.classes.size());
  auto augment = [&] {
    if (c.augment_copies == 0) return;
    const std::size_t base = train.size();
    const std::uint64_t aug = derive_seed(c.seed, "augment");
    train.samples.reserve(base * (1 + c.augment_copies));
    for (std::size_t copy = 0; copy < c.augment_copies; ++copy)
      for (std::size_t i = 0; i < base; ++i) {
        const Sample& s = train.samples[i];
        Rng rng(derive_seed(derive_seed(aug, copy), i));
        const long long shift = static_cast<long long>(rng.below(2 * c.max_shift + 1)) -
                                static_cast<long long>(c.max_shift);
        Tensor<double> x = temporal_shift(gaussian_augment(s.x, c.noise_sigma, rng.next_u64()), shift);
        train.samples.push_back({std::move(x), s.label, s.subject_id});
      }
  };
  if (c.augment_first) augment();
  if (c.smote) {
    const std::size_t before = train.size();
    train = smote_dataset(train, c.smote_k, derive_seed(c.seed, "smote"));
    p.synthetic = train.size() - before;
  }
  if (!c.augment_first) augment();
  p.train = std::move(train);
  p.val = std::move(val);
  p.test = std::move(test);
  return p;
}

}  // namespace gaitlab
