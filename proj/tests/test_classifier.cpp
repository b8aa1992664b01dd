#include <gtest/gtest.h>

#include "advml/classifier.hpp"
#include "advml/error.hpp"
#include "advml/metrics.hpp"
#include "support.hpp"

using namespace advml;

namespace {

Dataset small_set(std::size_t patients = 12, std::uint64_t seed = 4) {
  Dataset ds = generate_synthetic(patients, 2, seed);
  for (auto& im : ds.images) im.pixels = quantize(im.pixels);
  return ds;
}

Tensor ramp(std::size_t c, std::size_t h, std::size_t w) {
  Tensor t(Shape{c, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  return t;
}

}  // namespace

TEST(Architecture, DescriptorRoundTrip) {
  Architecture a;
  EXPECT_EQ(a.descriptor(), "cnn input=1x32x32 conv=8,16,32 kernel=3 dense=64 classes=2");
  EXPECT_EQ(Architecture::parse(a.descriptor()), a);
  EXPECT_THROW(Architecture::parse("mlp 3"), FormatError);
  EXPECT_THROW(Architecture::parse("cnn input=1x32x32 conv=8,16,32 kernel=3 dense=64 classes=3"), ValueError);
}

TEST(Architecture, ParameterShapes) {
  const auto shapes = Architecture{}.parameter_shapes();
  ASSERT_EQ(shapes.size(), 10u);
  EXPECT_EQ(shapes[0], (Shape{8, 1, 3, 3}));
  EXPECT_EQ(shapes[6], (Shape{64, 32 * 4 * 4}));
  EXPECT_EQ(shapes[9], (Shape{2}));
}

TEST(Classifier, GlorotBoundsAndZeroBias) {
  const auto m = ClassifierModel::initialize(Architecture{}, 1);
  const auto& p = m.parameters();
  const double bound0 = std::sqrt(6.0 / (9.0 + 72.0));
  for (double v : p[0].data()) EXPECT_LE(std::abs(v), bound0);
  for (double v : p[1].data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(ClassifierModel::initialize(Architecture{}, 1).parameters(), p);
  EXPECT_NE(ClassifierModel::initialize(Architecture{}, 2).parameters(), p);
}

TEST(Classifier, PredictRowsSumToOneAndDuplicatesMatch) {
  const auto m = ClassifierModel::initialize(Architecture{}, 5);
  Dataset ds = small_set(2);
  std::vector<Tensor> imgs{ds.images[0].pixels, ds.images[1].pixels, ds.images[0].pixels};
  Tensor p = m.predict(stack(imgs));
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(p.at({r, 0}) + p.at({r, 1}), 1.0, 1e-12);
  EXPECT_EQ(p.at({0, 0}), p.at({2, 0}));
  EXPECT_EQ(p.at({0, 1}), p.at({2, 1}));
}

TEST(Classifier, TapeAndTapeFreeLogitsAgree) {
  const auto m = ClassifierModel::initialize(Architecture{}, 5);
  Dataset ds = small_set(2);
  Tensor x = all_pixels(ds);
  Tape t;
  Var z = m.forward(t, t.leaf(x));
  EXPECT_EQ(z.value(), m.logits(x));
}

TEST(Classifier, RejectsBadInput) {
  const auto m = ClassifierModel::initialize(Architecture{}, 5);
  EXPECT_THROW(m.predict(Tensor(Shape{1, 1, 16, 16})), ShapeError);
  EXPECT_THROW(m.predict(Tensor(Shape{1, 1, 32, 32}, 1.5)), ValueError);
  EXPECT_NO_THROW(m.predict(Tensor(Shape{1, 1, 32, 32}, 1.5), false));
}

TEST(Classifier, CheckpointRoundTrip) {
  const auto dir = testkit::scratch_dir("ckpt");
  const auto m = ClassifierModel::initialize(Architecture{}, 9);
  m.save(dir / "m.amf", R"({"training_seed": 9, "note": "x"})");
  const auto back = ClassifierModel::load(dir / "m.amf");
  EXPECT_EQ(back.parameters(), m.parameters());
  EXPECT_EQ(back.architecture(), m.architecture());
  EXPECT_EQ(back.training_seed(), 9u);
  const auto bytes = read_file_bytes(dir / "m.amf");
  ASSERT_GE(bytes.size(), 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "AMF1");
}

TEST(Training, ZeroEpochsReturnsInitialization) {
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto m = train(small_set(), cfg);
  EXPECT_EQ(m.parameters(), ClassifierModel::initialize(Architecture{}, cfg.seed).parameters());
}

TEST(Training, DeterministicGivenSeed) {
  TrainConfig cfg;
  cfg.epochs = 1;
  const Dataset ds = small_set();
  EXPECT_EQ(train(ds, cfg).parameters(), train(ds, cfg).parameters());
  TrainConfig other = cfg;
  other.seed = 8;
  EXPECT_NE(train(ds, other).parameters(), train(ds, cfg).parameters());
}

TEST(Training, LogsOneLossPerEpoch) {
  TrainConfig cfg;
  cfg.epochs = 3;
  std::vector<EpochStats> log;
  train(small_set(), cfg, [&](const EpochStats& s, const ClassifierModel&) { log.push_back(s); });
  ASSERT_EQ(log.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(log[i].epoch, i + 1);
    EXPECT_TRUE(std::isfinite(log[i].mean_loss));
  }
}

TEST(Training, TrainAccuracyNotBelowInitialization) {
  const Dataset ds = small_set(30, 2);
  TrainConfig cfg;
  cfg.epochs = 4;
  const auto init = ClassifierModel::initialize(Architecture{}, cfg.seed);
  const auto trained = train(ds, cfg);
  const auto y = all_labels(ds);
  EXPECT_GE(accuracy(trained.predict(all_pixels(ds)), y), accuracy(init.predict(all_pixels(ds)), y));
}

TEST(Training, ValidatesConfig) {
  TrainConfig cfg;
  cfg.learning_rate = 0;
  EXPECT_THROW(train(small_set(), cfg), ValueError);
  cfg = {};
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), ValueError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ValueError);
  cfg = {};
  cfg.mixup_alpha = 0;
  EXPECT_THROW(cfg.validate(), ValueError);
  cfg.augmentation.mixup = false;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Training, RejectsSingleClassOrEmpty) {
  Dataset ds = small_set();
  Dataset one;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.images[i].label == 0) {
      one.images.push_back(ds.images[i]);
      one.paths.push_back(ds.paths[i]);
    }
  }
  EXPECT_THROW(train(one, TrainConfig{}), ValueError);
  EXPECT_THROW(train(Dataset{}, TrainConfig{}), ValueError);
}

TEST(Augmentation, RotationsCompose) {
  const Tensor t = ramp(1, 3, 4);
  EXPECT_EQ(rotate_quarter_turns(t, 1).shape(), (Shape{1, 4, 3}));
  EXPECT_EQ(rotate_quarter_turns(rotate_quarter_turns(t, 1), 3), t);
  EXPECT_EQ(rotate_quarter_turns(t, 4), t);
  EXPECT_EQ(rotate_quarter_turns(t, 2), flip_vertical(flip_horizontal(t)));
  // counter-clockwise: the top-right pixel moves to the top-left
  EXPECT_EQ(rotate_quarter_turns(t, 1).at({0, 0, 0}), t.at({0, 0, 3}));
}

TEST(Augmentation, FlipsAreInvolutions) {
  const Tensor t = ramp(2, 3, 5);
  EXPECT_EQ(flip_horizontal(flip_horizontal(t)), t);
  EXPECT_EQ(flip_vertical(flip_vertical(t)), t);
  EXPECT_EQ(flip_horizontal(t).at({1, 2, 0}), t.at({1, 2, 4}));
}

TEST(Augmentation, NeverTouchesLabel) {
  const Dataset ds = small_set(4);
  Rng rng = Rng::stream(1, "aug-test");
  for (int k = 0; k < 50; ++k) {
    for (const auto& im : ds.images) {
      const auto out = augment(im, Augmentation{}, rng);
      EXPECT_EQ(out.label, im.label);
      EXPECT_EQ(out.image_id, im.image_id);
    }
  }
}

TEST(Augmentation, DisabledFlagsKeepImage) {
  const Dataset ds = small_set(2);
  Rng rng = Rng::stream(1, "aug-off");
  Augmentation off{false, false, false, false};
  for (int k = 0; k < 20; ++k) EXPECT_EQ(augment(ds.images[0], off, rng).pixels, ds.images[0].pixels);
}

TEST(Augmentation, ForcedTransform) {
  const Tensor t = ramp(1, 4, 4);
  EXPECT_EQ(apply_augmentation(t, AugmentDraw{1, true, false}), flip_horizontal(rotate_quarter_turns(t, 1)));
}

TEST(Mixup, ConvexAndLabelsSumToOne) {
  const Dataset ds = small_set(2);
  const auto& a = ds.images[0];
  const auto& b = ds.images[1];
  for (double lam : {0.0, 0.25, 0.5, 1.0}) {
    const auto m = mixup_pair(a, b, lam);
    EXPECT_NEAR(m.soft_label[0] + m.soft_label[1], 1.0, 1e-15);
    for (double v : m.pixels.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(mixup_pair(a, b, 1.0).pixels, a.pixels);
  const auto half = mixup_pair(a, b, 0.5);
  EXPECT_NEAR(half.pixels[10], 0.5 * (a.pixels[10] + b.pixels[10]), 1e-15);
}

TEST(Mixup, BetaLambdaMeanIsHalf) {
  Rng rng = Rng::stream(7, "train/mixup");
  double s = 0;
  for (int i = 0; i < 1000; ++i) s += rng.beta(0.2, 0.2);
  EXPECT_NEAR(s / 1000.0, 0.5, 0.05);
}
