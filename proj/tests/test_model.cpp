#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gaitlab/model.hpp"
#include "gradcheck.hpp"

using namespace gaitlab;
using gradcheck::random_tensor;

namespace {

ModelConfig tiny_gavd() {
  ModelConfig c = ModelConfig::gavd_defaults();
  c.conv_channels = {2, 3, 4};
  c.lstm_hidden = {3, 2};
  c.seq_len = 8;
  c.features = 4;
  c.dense_units = 3;
  c.dropout = 0.25;
  c.seed = 11;
  return c;
}

ModelConfig tiny_oumvlp() {
  ModelConfig c = ModelConfig::oumvlp_defaults();
  c.conv_channels = {2, 3};
  c.lstm_hidden = {2};
  c.frames = 3;
  c.height = 6;
  c.width = 8;
  c.dense_units = 3;
  c.dropout = 0.25;
  c.seed = 12;
  return c;
}

// Closed-form trainable parameter count, enumerated from the config alone.
std::size_t expected_params(const ModelConfig& c) {
  std::size_t n = 0, in = c.branch == Branch::gavd_1d ? c.features : 1;
  const std::size_t kvol = c.branch == Branch::gavd_1d ? c.kernel : c.kernel * c.kernel * c.kernel;
  for (std::size_t ch : c.conv_channels) {
    const std::size_t out = c.scaled(ch);
    n += out * in * kvol + out;  // conv
    n += 2 * out;                // batchnorm gamma, beta
    in = out;
  }
  if (c.temporal == Temporal::lstm) {
    for (std::size_t h0 : c.lstm_hidden) {
      const std::size_t h = c.scaled(h0), dirs = c.bidirectional ? 2 : 1;
      n += dirs * (4 * h * in + 4 * h * h + 4 * h);
      in = dirs * h;
    }
  }
  const std::size_t d = c.scaled(c.dense_units);
  n += in * d + d;
  n += d * c.outputs() + c.outputs();
  return n;
}

double max_rel(const ModelConfig& c, Mode mode, std::uint64_t seed) {
  auto m = build_model<double>(c);
  Rng rng(seed);
  Shape s{3};
  for (auto e : c.input_spec()) s.push_back(e);
  auto x = random_tensor(s, rng);
  auto rep = gradcheck::check_model(m, x, mode, seed);
  EXPECT_GT(rep.checked, 0u);
  EXPECT_LE(rep.kinks * 10, rep.checked);
  if (rep.max_rel_err >= 1e-4) ADD_FAILURE() << rep.worst;
  return rep.max_rel_err;
}

}  // namespace

TEST(GavdBranch, DefaultOutputIsScalarLogit) {
  auto m = build_gavd_branch<float>(ModelConfig::gavd_defaults());
  EXPECT_EQ(m.input_spec(), (Shape{50, 36}));
  EXPECT_EQ(m.output_shape(), (Shape{1}));
  Tensor<float> x({2, 50, 36}, 0.1f);
  EXPECT_EQ(m.forward(x, Mode::eval).shape(), (Shape{2, 1}));
}

TEST(GavdBranch, ParameterCountMatchesEnumeration) {
  for (auto cfg : {ModelConfig::gavd_defaults(), tiny_gavd()}) {
    auto m = build_model<float>(cfg);
    EXPECT_EQ(m.parameter_count(), expected_params(cfg));
  }
  auto wide = ModelConfig::gavd_defaults();
  wide.head = Head::softmax_multiclass;
  wide.num_classes = 5;
  wide.width_scale = 0.25;
  EXPECT_EQ(build_model<float>(wide).parameter_count(), expected_params(wide));
}

TEST(GavdBranch, ShapeWalkPredictsForward) {
  auto cfg = tiny_gavd();
  cfg.head = Head::softmax_multiclass;
  cfg.num_classes = 5;
  auto m = build_model<double>(cfg);
  auto walk = m.shape_walk();
  m.set_capture(true);
  Rng rng(2);
  auto x = random_tensor({4, 8, 4}, rng);
  m.forward(x, Mode::train, 5);
  for (std::size_t i = 0; i < walk.size(); ++i) {
    Shape expect{4};
    expect.insert(expect.end(), walk[i].begin(), walk[i].end());
    EXPECT_EQ(m.activation(i).shape(), expect) << "layer " << i;
  }
}

TEST(GavdBranch, TooShortSequenceNamesMinimum) {
  auto cfg = ModelConfig::gavd_defaults();
  cfg.seq_len = 7;
  try {
    build_gavd_branch<double>(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::build);
    EXPECT_NE(std::string(e.what()).find("minimum T is 8"), std::string::npos) << e.what();
  }
  cfg.seq_len = 8;
  EXPECT_NO_THROW(build_gavd_branch<double>(cfg));
}

TEST(GavdBranch, EvalIsDeterministicAndSeedFree) {
  auto m = build_model<double>(tiny_gavd());
  Rng rng(3);
  auto x = random_tensor({5, 8, 4}, rng);
  auto a = m.forward(x, Mode::eval, 1);
  auto b = m.forward(x, Mode::eval, 999);
  EXPECT_EQ(a, b);
}

TEST(GavdBranch, BatchOutputsPreserveOrder) {
  auto m = build_model<double>(tiny_gavd());
  Rng rng(4);
  auto x = random_tensor({4, 8, 4}, rng);
  auto all = m.forward(x, Mode::eval);
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor<double> one({1, 8, 4});
    one.set_slice(0, x.slice(i));
    EXPECT_EQ(m.forward(one, Mode::eval).slice(0), all.slice(i));
  }
}

TEST(GavdBranch, ShapeMismatchBeforeComputation) {
  auto m = build_model<double>(tiny_gavd());
  try {
    m.forward(Tensor<double>({2, 8, 5}), Mode::eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
  EXPECT_THROW(m.forward(Tensor<double>({8, 4}), Mode::eval), Error);
}

TEST(GavdBranch, SingleSampleTrainIsDegenerate) {
  auto m = build_model<double>(tiny_gavd());
  try {
    m.forward(Tensor<double>({1, 8, 4}), Mode::train);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_batch);
  }
}

TEST(GavdBranch, CnnOnlyVariantDropsRecurrence) {
  auto cfg = tiny_gavd();
  cfg.temporal = Temporal::none;
  auto m = build_model<double>(cfg);
  for (std::size_t i = 0; i < m.layer_count(); ++i) EXPECT_NE(m.layer(i).kind(), LayerKind::lstm);
  EXPECT_EQ(m.parameter_count(), expected_params(cfg));
  EXPECT_EQ(m.output_shape(), (Shape{1}));
}

TEST(OumvlpBranch, DefaultOutputIsScalarLogit) {
  auto m = build_oumvlp_branch<float>(ModelConfig::oumvlp_defaults());
  EXPECT_EQ(m.input_spec(), (Shape{50, 44, 64}));
  EXPECT_EQ(m.output_shape(), (Shape{1}));
  EXPECT_EQ(m.parameter_count(), expected_params(ModelConfig::oumvlp_defaults()));
}

TEST(OumvlpBranch, ZeroVolumeGivesFiniteLogits) {
  auto cfg = ModelConfig::oumvlp_defaults();
  cfg.frames = 6;  // full spatial extent, short clip to keep the test quick
  auto m = build_model<float>(cfg);
  auto y = m.forward(Tensor<float>({1, 6, 44, 64}), Mode::eval);
  ASSERT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_TRUE(std::isfinite(y.data()[0]));
}

TEST(OumvlpBranch, SoftmaxHeadSumsToOne) {
  auto cfg = tiny_oumvlp();
  cfg.head = Head::softmax_multiclass;
  cfg.num_classes = 6;
  auto m = build_model<double>(cfg);
  Rng rng(5);
  auto p = m.predict_proba(random_tensor({3, 3, 6, 8}, rng));
  ASSERT_EQ(p.shape(), (Shape{3, 6}));
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < 6; ++k) s += p(i, k);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(OumvlpBranch, WrongInputShapeRejected) {
  auto cfg = tiny_oumvlp();
  cfg.height = 2;
  EXPECT_THROW(build_oumvlp_branch<double>(cfg), Error);
  auto m = build_model<double>(tiny_oumvlp());
  EXPECT_THROW(m.forward(Tensor<double>({2, 3, 8, 6}), Mode::eval), Error);
}

TEST(ModelGradient, TinyGavdTrainMode) {
  for (std::uint64_t s = 1; s <= 2; ++s) EXPECT_LT(max_rel(tiny_gavd(), Mode::train, s), 1e-4);
}

TEST(ModelGradient, TinyGavdEvalMode) { EXPECT_LT(max_rel(tiny_gavd(), Mode::eval, 3), 1e-4); }

TEST(ModelGradient, TinyGavdSoftmaxHead) {
  auto cfg = tiny_gavd();
  cfg.head = Head::softmax_multiclass;
  cfg.num_classes = 3;
  EXPECT_LT(max_rel(cfg, Mode::train, 4), 1e-4);
}

TEST(ModelGradient, TinyOumvlpTrainMode) {
  EXPECT_LT(max_rel(tiny_oumvlp(), Mode::train, 5), 1e-4);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto dir = std::filesystem::temp_directory_path() / "gaitlab_ckpt_test";
  std::filesystem::remove_all(dir);
  for (auto cfg : {tiny_gavd(), tiny_oumvlp()}) {
    auto m = build_model<double>(cfg);
    Rng rng(6);
    Shape s{4};
    for (auto e : cfg.input_spec()) s.push_back(e);
    auto x = random_tensor(s, rng);
    m.forward(x, Mode::train, 3);  // moves batchnorm running stats off their defaults
    save_checkpoint(m, dir);
    auto back = load_checkpoint<double>(dir);
    EXPECT_EQ(back.forward(x, Mode::eval), m.forward(x, Mode::eval));
    std::filesystem::remove_all(dir);
  }
}

TEST(Checkpoint, ShapeMismatchIsFormatError) {
  const auto dir = std::filesystem::temp_directory_path() / "gaitlab_ckpt_bad";
  std::filesystem::remove_all(dir);
  auto m = build_model<double>(tiny_gavd());
  save_checkpoint(m, dir);
  {
    std::ofstream blob(dir / "1.weight", std::ios::binary);
    write_tensor(blob, Tensor<double>({2, 2}));
  }
  try {
    load_checkpoint<double>(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
  }
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint<double>(dir), Error);
}

TEST(ModelGraph, CopiesAreIndependent) {
  auto m = build_model<double>(tiny_gavd());
  auto copy = m;
  copy.parameters()[0]->value.data()[0] += 1.0;
  EXPECT_NE(copy.parameters()[0]->value.data()[0], m.parameters()[0]->value.data()[0]);
}
