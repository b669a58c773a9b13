#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gaitlab/data.hpp"
#include "gaitlab/io.hpp"
#include "gaitlab/pipeline.hpp"
#include "gaitlab/synth.hpp"
#include "gradcheck.hpp"

using namespace gaitlab;
using gradcheck::random_tensor;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::state;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gaitlab_data_" + name);
  fs::remove_all(p);
  return p;
}

// Brute-force check that `s` = x + u (nn - x) for some class member x, one of
// x's k nearest same-class neighbours nn (recomputed here), and u in [0, 1].
bool on_knn_segment(const std::vector<double>& s, const std::vector<std::vector<double>>& cls,
                    std::size_t k) {
  for (std::size_t a = 0; a < cls.size(); ++a) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t b = 0; b < cls.size(); ++b) {
      if (a == b) continue;
      double dist = 0;
      for (std::size_t j = 0; j < s.size(); ++j) dist += std::pow(cls[a][j] - cls[b][j], 2);
      d.push_back({dist, b});
    }
    std::sort(d.begin(), d.end());
    for (std::size_t n = 0; n < k; ++n) {
      const auto& x = cls[a];
      const auto& y = cls[d[n].second];
      double num = 0, den = 0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        num += (s[j] - x[j]) * (y[j] - x[j]);
        den += (y[j] - x[j]) * (y[j] - x[j]);
      }
      const double u = den > 0 ? num / den : 0.0;
      if (u < -1e-12 || u > 1 + 1e-12) continue;
      double resid = 0;
      for (std::size_t j = 0; j < s.size(); ++j) resid = std::max(resid, std::abs(x[j] + u * (y[j] - x[j]) - s[j]));
      if (resid < 1e-12) return true;
    }
  }
  return false;
}

}  // namespace

TEST(Keypoints, FlattenExamples) {
  Tensor<double> origin({2, 18, 2});
  auto flat = flatten_keypoints(origin);
  EXPECT_EQ(flat.shape(), (Shape{2, 36}));
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);

  Tensor<double> one({1, 18, 2});
  one(0, 0, 0) = 3;
  one(0, 0, 1) = 4;
  auto f = flatten_keypoints(one);
  EXPECT_EQ(f(0, 0), 3.0);
  EXPECT_EQ(f(0, 1), 4.0);
  for (std::size_t j = 2; j < 36; ++j) EXPECT_EQ(f(0, j), 0.0);

  Rng rng(1);
  auto x = random_tensor({5, 18, 2}, rng);
  EXPECT_EQ(unflatten_keypoints(flatten_keypoints(x)), x);
  EXPECT_EQ(kind_of([] { flatten_keypoints(Tensor<double>({3, 17, 2})); }), ErrorKind::format);
}

TEST(VarianceFilter, Examples) {
  Tensor<double> m({4, 3});
  const double a = std::sqrt(0.5), b = std::sqrt(2.0);
  for (std::size_t r = 0; r < 4; ++r) {
    m(r, 0) = 7.0;
    m(r, 1) = r % 2 ? a : -a;
    m(r, 2) = r % 2 ? b : -b;
  }
  EXPECT_EQ(variance_filter(m, 1.0).mask.keep, (std::vector<bool>{false, false, true}));
  EXPECT_EQ(variance_filter(m, 0.0).mask.keep, (std::vector<bool>{false, true, true}));
  Tensor<double> varied({4, 2}, {1, 5, 2, 6, 3, 8, 4, 9});
  EXPECT_EQ(variance_filter(varied, 0.1).mask.kept(), 2u);
  EXPECT_EQ(kind_of([] { variance_filter(Tensor<double>({3, 2}, 1.0), 0.0); }),
            ErrorKind::degenerate_feature);
}

TEST(VarianceFilter, MaskReusedVerbatimOnTest) {
  Rng rng(2);
  auto train = random_tensor({10, 5}, rng);
  for (std::size_t r = 0; r < 10; ++r) train(r, 3) = 1.0;
  auto res = variance_filter(train, 1e-8);
  auto test = random_tensor({6, 5}, rng);  // column 3 varies here; still dropped
  auto filtered = res.mask.apply(test);
  EXPECT_EQ(filtered.shape(), (Shape{6, 4}));
  for (std::size_t r = 0; r < 6; ++r) {
    EXPECT_EQ(filtered(r, 2), test(r, 2));
    EXPECT_EQ(filtered(r, 3), test(r, 4));
  }
}

TEST(Augment, GaussianNoise) {
  Rng rng(3);
  auto x = random_tensor({20, 36}, rng);
  EXPECT_EQ(gaussian_augment(x, 0.0, 5), x);
  EXPECT_EQ(gaussian_augment(x, 0.3, 5), gaussian_augment(x, 0.3, 5));
  EXPECT_EQ(gaussian_augment(x, 0.3, 5).shape(), x.shape());

  Tensor<double> z({100000});
  auto y = gaussian_augment(z, 0.1, 77);
  double mean = 0, sq = 0;
  for (double v : y.data()) mean += v;
  mean /= 1e5;
  for (double v : y.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / (1e5 - 1));
  EXPECT_LT(std::abs(mean), 0.002);
  EXPECT_GE(sd, 0.097);
  EXPECT_LE(sd, 0.103);
}

TEST(Augment, TemporalShift) {
  Tensor<double> abc({3, 2}, {1, 1, 2, 2, 3, 3});
  EXPECT_EQ(temporal_shift(abc, 0), abc);
  EXPECT_EQ(temporal_shift(abc, 3), abc);
  EXPECT_EQ(temporal_shift(abc, 1), (Tensor<double>({3, 2}, {3, 3, 1, 1, 2, 2})));
  EXPECT_EQ(temporal_shift(abc, -1), temporal_shift(abc, 2));
  EXPECT_EQ(temporal_shift(temporal_shift(abc, 5), -5), abc);
}

TEST(Smote, BalancedInputUnchanged) {
  Rng rng(4);
  auto x = random_tensor({6, 3}, rng);
  std::vector<int> y{0, 1, 0, 1, 1, 0};
  auto r = smote_oversample(x, y, 2, 9);
  EXPECT_EQ(r.features, x);
  EXPECT_EQ(r.labels, y);
  EXPECT_EQ(r.synthetic, 0u);
}

TEST(Smote, TwoPointMinorityLiesOnSegment) {
  Tensor<double> x({6, 2}, {0, 0, 1, 1, 2, 2, 3, 3, 10, 0, 10, 4});
  std::vector<int> y{0, 0, 0, 0, 1, 1};
  auto r = smote_oversample(x, y, 1, 3);
  ASSERT_EQ(r.labels.size(), 8u);
  for (std::size_t i = 6; i < 8; ++i) {
    EXPECT_EQ(r.labels[i], 1);
    EXPECT_EQ(r.features(i, 0), 10.0);
    EXPECT_GE(r.features(i, 1), 0.0);
    EXPECT_LE(r.features(i, 1), 4.0);
  }
}

TEST(Smote, CountsAndErrors) {
  Rng rng(5);
  auto x = random_tensor({12, 4}, rng);
  std::vector<int> y(12, 0);
  for (std::size_t i = 9; i < 12; ++i) y[i] = 1;
  auto r = smote_oversample(x, y, 2, 1);
  EXPECT_EQ(r.synthetic, 6u);
  EXPECT_EQ(std::count(r.labels.begin(), r.labels.end(), 0), 9);
  EXPECT_EQ(std::count(r.labels.begin(), r.labels.end(), 1), 9);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(r.features(i, 0), x(i, 0));

  std::vector<int> lonely(12, 0);
  lonely[11] = 1;
  EXPECT_EQ(kind_of([&] { smote_oversample(x, lonely, 1, 1); }), ErrorKind::oversampling);
  EXPECT_EQ(kind_of([&] { smote_oversample(x, y, 3, 1); }), ErrorKind::config);
  EXPECT_EQ(kind_of([&] { smote_oversample(x, y, 0, 1); }), ErrorKind::config);
}

TEST(Smote, SyntheticPointsAreKnnInterpolations) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 10 + rng.below(41);
    const std::size_t classes = 2 + rng.below(3);
    auto x = random_tensor({n, 2, 3}, rng);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = int(i < classes * 3 ? i % classes : rng.below(classes));
    std::size_t smallest = n;
    for (std::size_t c = 0; c < classes; ++c)
      smallest = std::min<std::size_t>(smallest, std::count(y.begin(), y.end(), int(c)));
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(5, smallest - 1));
    auto r = smote_oversample(x, y, k, seed);
    std::vector<std::size_t> hist(classes, 0);
    for (int l : r.labels) hist[std::size_t(l)] += 1;
    for (std::size_t c = 1; c < classes; ++c) EXPECT_EQ(hist[c], hist[0]);
    std::vector<std::vector<std::vector<double>>> members(classes);
    for (std::size_t i = 0; i < n; ++i)
      members[std::size_t(y[i])].push_back({x.data().begin() + i * 6, x.data().begin() + i * 6 + 6});
    for (std::size_t i = n; i < r.labels.size(); ++i) {
      std::vector<double> s(r.features.data().begin() + i * 6, r.features.data().begin() + i * 6 + 6);
      EXPECT_TRUE(on_knn_segment(s, members[std::size_t(r.labels[i])], k)) << "seed " << seed;
    }
  }
}

TEST(Silhouette, ResizeExamples) {
  Tensor<double> ones({5, 7}, 1.0);
  const auto up = resize_silhouette(ones, 3, 11);
  for (double v : up.data()) EXPECT_EQ(v, 1.0);
  const auto zeros = resize_silhouette(Tensor<double>({5, 7}), 44, 64);
  for (double v : zeros.data()) EXPECT_EQ(v, 0.0);
  Tensor<double> half({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) half(i, j) = 1.0;
  EXPECT_EQ(resize_silhouette(half, 2, 2), (Tensor<double>({2, 2}, {1, 0, 1, 0})));
}

TEST(Silhouette, PadOrCrop) {
  Tensor<double> seq50({50, 2});
  for (std::size_t t = 0; t < 50; ++t) seq50(t, 0) = double(t + 1);
  EXPECT_EQ(pad_or_crop(seq50), seq50);

  Tensor<double> seq30({30, 2}, 1.0);
  auto p = pad_or_crop(seq30);
  ASSERT_EQ(p.extent(0), 50u);
  for (std::size_t t = 0; t < 50; ++t) EXPECT_EQ(p(t, 1), t < 30 ? 1.0 : 0.0);

  Tensor<double> seq70({70, 1});
  for (std::size_t t = 0; t < 70; ++t) seq70(t, 0) = double(t);
  auto c = pad_or_crop(seq70);
  for (std::size_t t = 0; t < 50; ++t) EXPECT_EQ(c(t, 0), double(t + 10));

  for (auto* s : {&seq30, &seq50, &seq70}) EXPECT_EQ(pad_or_crop(pad_or_crop(*s)), pad_or_crop(*s));
}

TEST(Split, SubjectIndependent) {
  std::vector<std::string> ids;
  for (int s = 0; s < 10; ++s)
    for (int q = 0; q < 3; ++q) ids.push_back("p" + std::to_string(s));
  auto a = subject_split(ids, 0.8, 42);
  EXPECT_EQ(a.train.size(), 8u);
  EXPECT_EQ(a.test.size(), 2u);
  for (const auto& t : a.test) EXPECT_EQ(a.train.count(t), 0u);
  auto b = subject_split(ids, 0.8, 42);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(kind_of([] { subject_split({"x", "x"}, 0.8, 1); }), ErrorKind::split);
  auto tiny = subject_split({"a", "b"}, 0.8, 1);
  EXPECT_EQ(tiny.train.size(), 1u);
  EXPECT_EQ(subject_split(std::vector<std::string>(ids.begin(), ids.begin() + 21), 0.7, 3).train.size(), 5u);

  Dataset d{{"x", "y"}, {}};
  for (std::size_t i = 0; i < ids.size(); ++i) d.samples.push_back({Tensor<double>({1}), int(i % 2), ids[i]});
  auto [train, test] = apply_split(d, a);
  EXPECT_EQ(train.size() + test.size(), d.size());
  for (const auto& s : test.samples) EXPECT_EQ(a.test.count(s.subject_id), 1u);
}

TEST(Synth, HistogramAndDeterminism) {
  SynthConfig c;
  c.subjects = 10;
  c.sequences = 20;
  auto d = synth_generate(c);
  EXPECT_EQ(d.items.size(), 200u);
  EXPECT_EQ(d.histogram(), (std::vector<std::size_t>{40, 40, 40, 40, 40}));
  auto again = synth_generate(c);
  for (std::size_t i = 0; i < d.items.size(); ++i) EXPECT_EQ(d.items[i].data, again.items[i].data);

  c.classes = {"normal", "abnormal"};
  c.proportions = {0.7, 0.3};
  c.sequences = 7;  // 70 sequences: 49 / 21
  EXPECT_EQ(synth_generate(c).histogram(), (std::vector<std::size_t>{49, 21}));
  EXPECT_EQ(class_counts(10, {1, 1, 1}, 3), (std::vector<std::size_t>{4, 3, 3}));
}

TEST(Synth, JointSequencesAreValid) {
  SynthConfig c;
  c.subjects = 2;
  c.sequences = 5;
  for (const auto& it : synth_generate(c).items) {
    JointSequence js{it.data, it.subject_id, it.label};
    EXPECT_NO_THROW(js.validate());
  }
}

TEST(Synth, NearestCentroidProbeFindsSignal) {
  SynthConfig c;
  c.classes = {"normal", "abnormal"};
  c.subjects = 10;
  c.sequences = 20;
  c.seed = 5;
  auto data = synth_to_dataset(synth_generate(c), LoadOptions{});
  auto split = subject_split(subject_ids(data), 0.8, 1);
  auto [train, test] = apply_split(data, split);
  auto frame_mean = [](const Tensor<double>& x) {
    std::vector<double> m(x.extent(1), 0.0);
    for (std::size_t t = 0; t < x.extent(0); ++t)
      for (std::size_t f = 0; f < x.extent(1); ++f) m[f] += x(t, f) / double(x.extent(0));
    return m;
  };
  std::vector<std::vector<double>> centroid(2, std::vector<double>(36, 0.0));
  std::vector<double> count(2, 0.0);
  for (const auto& s : train.samples) {
    auto m = frame_mean(s.x);
    for (std::size_t f = 0; f < 36; ++f) centroid[s.label][f] += m[f];
    count[s.label] += 1;
  }
  for (int k = 0; k < 2; ++k)
    for (double& v : centroid[k]) v /= count[k];
  std::size_t correct = 0;
  for (const auto& s : test.samples) {
    auto m = frame_mean(s.x);
    double d0 = 0, d1 = 0;
    for (std::size_t f = 0; f < 36; ++f) {
      d0 += std::pow(m[f] - centroid[0][f], 2);
      d1 += std::pow(m[f] - centroid[1][f], 2);
    }
    correct += (d1 < d0 ? 1 : 0) == s.label;
  }
  EXPECT_GT(double(correct) / double(test.size()), 0.70);
}

TEST(Synth, OrderTaskBagOfFramesIsClassFree) {
  SynthConfig c;
  c.task = "order";
  c.classes = {"a_then_b", "b_then_a"};
  c.frames = 96;
  c.noise = 0.0;
  c.subjects = 2;
  c.sequences = 6;
  auto d = synth_generate(c);
  for (const auto& it : d.items) {
    // A touches features 0..11 and B 12..23; their onsets are exactly the gap apart
    std::size_t a_on = 0, b_on = 0;
    for (std::size_t t = 96; t-- > 0;) {
      if (it.data(t, 0) != 0.0) a_on = t;
      if (it.data(t, 12) != 0.0) b_on = t;
    }
    const bool a_first = a_on < b_on;
    EXPECT_EQ(a_first, it.label == "a_then_b");
    EXPECT_EQ(std::max(a_on, b_on) - std::min(a_on, b_on), 32u);
    EXPECT_GE(std::min(a_on, b_on), 24u);
    EXPECT_LE(std::max(a_on, b_on) + 6, 96u - 24u);
  }
  c.frames = 60;
  EXPECT_THROW(synth_generate(c), Error);
}

TEST(Synth, QuadrantSignalStaysInQuadrant) {
  SynthConfig c;
  c.modality = Modality::silhouettes;
  c.task = "quadrant";
  c.classes = {"horizontal", "vertical"};
  c.rows = 16;
  c.cols = 24;
  c.frames = 6;
  c.noise = 0.0;
  c.quadrant = 3;
  c.subjects = 2;
  c.sequences = 4;
  for (const auto& it : synth_generate(c).items)
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 24; ++j)
          if (it.data(t, i, j) != 0.0) {
            EXPECT_GE(i, 8u);
            EXPECT_GE(j, 12u);
          }
}

TEST(Io, JointCsvRoundTripIsExact) {
  auto dir = scratch("csv");
  fs::create_directories(dir);
  Rng rng(6);
  auto x = random_tensor({7, 36}, rng);
  write_joint_csv(dir / "a.csv", x);
  EXPECT_EQ(read_joint_csv(dir / "a.csv"), x);
  std::ofstream(dir / "bad.csv") << "1,2\n3\n";
  EXPECT_EQ(kind_of([&] { read_joint_csv(dir / "bad.csv"); }), ErrorKind::format);
  std::ofstream(dir / "nan.csv") << "1,zz\n";
  EXPECT_EQ(kind_of([&] { read_joint_csv(dir / "nan.csv"); }), ErrorKind::format);
  fs::remove_all(dir);
}

TEST(Io, PgmRoundTrip) {
  auto dir = scratch("pgm");
  fs::create_directories(dir);
  Tensor<double> img({3, 5});
  img(0, 1) = 1.0;
  img(2, 4) = 1.0;
  write_pgm(dir / "f.pgm", img);
  EXPECT_EQ(read_pgm(dir / "f.pgm"), img);
  std::ifstream in(dir / "f.pgm", std::ios::binary);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "P5");
  std::ofstream(dir / "g.pgm", std::ios::binary) << "P2\n1 1\n255\n0\n";
  EXPECT_EQ(kind_of([&] { read_pgm(dir / "g.pgm"); }), ErrorKind::format);
  fs::remove_all(dir);
}

TEST(Io, SynthDiskRoundTripMatchesMemory) {
  for (auto modality : {Modality::joints, Modality::silhouettes}) {
    auto dir = scratch("synth");
    SynthConfig c;
    c.modality = modality;
    c.subjects = 2;
    c.sequences = 3;
    c.frames = modality == Modality::joints ? 40 : 5;
    auto s = synth_generate(c);
    write_synth(s, dir);
    auto m = read_manifest(dir / "manifest.csv");
    EXPECT_EQ(m.modality, modality);
    EXPECT_EQ(m.entries.size(), 6u);
    LoadOptions opt;
    opt.classes = c.classes;
    auto disk = load_dataset(m, opt);
    auto mem = synth_to_dataset(s, opt);
    ASSERT_EQ(disk.size(), mem.size());
    for (std::size_t i = 0; i < disk.size(); ++i) {
      EXPECT_EQ(disk.samples[i].x, mem.samples[i].x);
      EXPECT_EQ(disk.samples[i].label, mem.samples[i].label);
      EXPECT_EQ(disk.samples[i].subject_id, mem.samples[i].subject_id);
    }
    if (modality == Modality::silhouettes) {
      EXPECT_EQ(disk.samples[0].x.shape(), (Shape{50, 44, 64}));
      SilhouetteSequence ss{disk.samples[0].x, "s", "normal"};
      EXPECT_NO_THROW(ss.validate());
    }
    fs::remove_all(dir);
  }
}

TEST(Io, ManifestErrors) {
  auto dir = scratch("manifest");
  fs::create_directories(dir);
  std::ofstream(dir / "mixed.csv") << "a.csv,s1,normal\nseqdir,s2,normal\n";
  EXPECT_EQ(kind_of([&] { read_manifest(dir / "mixed.csv"); }), ErrorKind::format);
  std::ofstream(dir / "short.csv") << "a.csv,s1\n";
  EXPECT_EQ(kind_of([&] { read_manifest(dir / "short.csv"); }), ErrorKind::format);
  std::ofstream(dir / "empty.csv") << "# nothing\n";
  EXPECT_EQ(kind_of([&] { read_manifest(dir / "empty.csv"); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { read_manifest(dir / "missing.csv"); }), ErrorKind::io);
  fs::remove_all(dir);
}

TEST(Dataset, HistogramSumsToCount) {
  SynthConfig c;
  c.subjects = 3;
  c.sequences = 4;
  auto d = synth_to_dataset(synth_generate(c), LoadOptions{});
  std::size_t total = 0;
  for (auto h : d.histogram()) total += h;
  EXPECT_EQ(total, d.size());
  auto sm = smote_dataset(d, 1, 3);
  for (auto h : sm.histogram()) EXPECT_EQ(h, sm.histogram()[0]);
}

TEST(FeatureScaler, Examples) {
  Tensor<double> m({2, 3}, {1, 5, 2, 3, 5, 4});
  const auto sc = fit_scaler(m);
  EXPECT_EQ(sc.mean, (std::vector<double>{2, 5, 3}));
  EXPECT_EQ(sc.scale, (std::vector<double>{1, 1, 1}));  // constant column keeps unit scale
  EXPECT_EQ(sc.apply(m), Tensor<double>({2, 3}, {-1, 0, -1, 1, 0, 1}));
  EXPECT_EQ(FeatureScaler{}.apply(m), m);
  EXPECT_THROW(sc.apply(Tensor<double>({2, 4})), Error);
}

namespace {

Dataset synth_joints(std::uint64_t seed, std::vector<double> props = {}) {
  SynthConfig sc;
  sc.classes = {"normal", "abnormal"};
  sc.proportions = std::move(props);
  sc.subjects = 12;
  sc.sequences = 6;
  sc.frames = 20;
  sc.seed = seed;
  LoadOptions opt;
  opt.frames = 20;
  return synth_to_dataset(synth_generate(sc), opt);
}

std::set<std::string> subjects_of(const Dataset& d) {
  std::set<std::string> s;
  for (const auto& x : d.samples) s.insert(x.subject_id);
  return s;
}

}  // namespace

TEST(Pipeline, SplitsAreSubjectDisjointAndComplete) {
  const Dataset all = synth_joints(1);
  PipelineConfig pc;
  pc.seed = 4;
  const auto p = prepare_data(all, Modality::joints, pc);
  auto tr = subjects_of(p.train);
  const auto va = subjects_of(p.val), te = subjects_of(p.test);
  tr.erase("smote");  // oversampled rows carry a placeholder subject
  for (const auto& s : tr) EXPECT_FALSE(va.count(s) || te.count(s)) << s;
  for (const auto& s : va) EXPECT_FALSE(te.count(s)) << s;
  EXPECT_EQ(tr.size() + va.size() + te.size(), 12u);
  EXPECT_EQ(te.size(), 2u);  // ceil(0.8 * 12) = 10 subjects kept for training
  EXPECT_EQ(p.val.size() + p.test.size() + p.train.size() - p.synthetic, all.size());
}

TEST(Pipeline, StatisticsComeFromTrainingFramesOnly) {
  PipelineConfig pc;
  pc.seed = 2;
  pc.smote = false;
  const auto p = prepare_data(synth_joints(2), Modality::joints, pc);
  ASSERT_FALSE(p.scaler.empty());
  const std::size_t f = p.mask.kept();
  ASSERT_EQ(p.train.samples[0].x.extent(1), f);
  std::vector<double> mean(f, 0.0), sq(f, 0.0);
  std::size_t rows = 0;
  for (const auto& s : p.train.samples)
    for (std::size_t t = 0; t < s.x.extent(0); ++t, ++rows)
      for (std::size_t j = 0; j < f; ++j) {
        mean[j] += s.x(t, j);
        sq[j] += s.x(t, j) * s.x(t, j);
      }
  for (std::size_t j = 0; j < f; ++j) {
    EXPECT_NEAR(mean[j] / double(rows), 0.0, 1e-9);
    EXPECT_NEAR(sq[j] / double(rows), 1.0, 1e-9);
  }
  // held-out data goes through the same transform, not its own
  PipelineConfig raw = pc;
  raw.standardize = false;
  const auto q = prepare_data(synth_joints(2), Modality::joints, raw);
  EXPECT_TRUE(q.scaler.empty());
  ASSERT_EQ(q.test.size(), p.test.size());
  for (std::size_t i = 0; i < q.test.size(); ++i)
    EXPECT_EQ(p.scaler.apply(q.test.samples[i].x), p.test.samples[i].x);
}

TEST(Pipeline, SmoteBalancesTrainingOnlyAndIsDeterministic) {
  PipelineConfig pc;
  pc.seed = 6;
  pc.smote_k = 3;
  const auto p = prepare_data(synth_joints(3, {0.75, 0.25}), Modality::joints, pc);
  const auto h = p.train.histogram();
  EXPECT_EQ(h[0], h[1]);
  EXPECT_GT(p.synthetic, 0u);
  EXPECT_GT(p.class_weights[1], p.class_weights[0]);  // weights reflect the imbalance before SMOTE
  for (const auto& s : p.val.samples) EXPECT_NE(s.subject_id, "smote");
  const auto again = prepare_data(synth_joints(3, {0.75, 0.25}), Modality::joints, pc);
  ASSERT_EQ(again.train.size(), p.train.size());
  for (std::size_t i = 0; i < p.train.size(); ++i) EXPECT_EQ(again.train.samples[i].x, p.train.samples[i].x);
}

TEST(Pipeline, AugmentationAppendsLabelledCopies) {
  PipelineConfig pc;
  pc.seed = 7;
  pc.smote = false;
  pc.augment_copies = 2;
  const auto p = prepare_data(synth_joints(4), Modality::joints, pc);
  const std::size_t base = p.train.size() / 3;
  ASSERT_EQ(p.train.size(), 3 * base);
  for (std::size_t i = 0; i < base; ++i)
    for (std::size_t copy = 1; copy <= 2; ++copy) {
      const auto& a = p.train.samples[copy * base + i];
      EXPECT_EQ(a.label, p.train.samples[i].label);
      EXPECT_EQ(a.subject_id, p.train.samples[i].subject_id);
      EXPECT_EQ(a.x.shape(), p.train.samples[i].x.shape());
      EXPECT_NE(a.x, p.train.samples[i].x);
    }
}

TEST(Pipeline, AugmentationOrderIsConfigurable) {
  PipelineConfig pc;
  pc.seed = 8;
  pc.smote_k = 3;
  pc.augment_copies = 1;
  const Dataset all = synth_joints(5, {0.75, 0.25});
  const auto after = prepare_data(all, Modality::joints, pc);
  pc.augment_first = true;
  const auto first = prepare_data(all, Modality::joints, pc);
  // augmenting after SMOTE doubles the balanced set; augmenting first lets SMOTE balance the copies
  EXPECT_EQ(after.train.size(), 2 * (after.train.size() / 2));
  EXPECT_EQ(first.train.histogram()[0], first.train.histogram()[1]);
  EXPECT_EQ(after.train.histogram()[0], after.train.histogram()[1]);
  EXPECT_EQ(first.train.size(), after.train.size());
  EXPECT_EQ(first.synthetic, 2 * after.synthetic);
}

TEST(Pipeline, Errors) {
  PipelineConfig pc;
  pc.val_ratio = 1.0;
  EXPECT_THROW(prepare_data(synth_joints(1), Modality::joints, pc), Error);
  EXPECT_THROW(prepare_data(Dataset{}, Modality::joints, PipelineConfig{}), Error);
}
