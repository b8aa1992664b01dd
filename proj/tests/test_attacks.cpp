#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "advml/attacks.hpp"
#include "advml/error.hpp"
#include "support.hpp"

using namespace advml;
using advml::testkit::values;

namespace {

Tensor filled(Shape s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data()) x = v;
  return t;
}

Tensor random_image(Rng& rng, double lo = 0.0, double hi = 1.0, std::size_t side = 32) {
  Tensor t(Shape{1, side, side});
  for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

testkit::LinearModel linear_model(std::uint64_t seed, std::size_t side = 8) {
  Rng rng = Rng::stream(seed, "linear");
  const std::size_t k = side * side;
  Tensor w(Shape{2, k});
  for (double& v : w.data()) v = rng.normal();
  Tensor b(Shape{2});
  b[0] = 0.1;
  b[1] = -0.2;
  return testkit::LinearModel(InputSpec{1, side, side}, w, b);
}

// Roughly unit-scale logits so gradients do not vanish.
ClassifierModel sharp_model(std::uint64_t seed) {
  ClassifierModel m = ClassifierModel::initialize(Architecture{}, seed);
  for (auto& p : m.mutable_parameters())
    for (double& v : p.data()) v *= 3.0;
  return m;
}

Dataset small_set(std::size_t patients, std::uint64_t seed) { return generate_synthetic(patients, 2, seed); }

double target_loss(const ClassifierModel& m, const Tensor& img, int target) {
  const Tensor lp = ops::log_softmax(m.logits(img.reshaped({1, 1, 32, 32})));
  return -lp[static_cast<std::size_t>(target)];
}

}  // namespace

TEST(ProjectLinf, ClampExamples) {
  PerturbationBall ball{0.02};
  Tensor a(Shape{2}, std::vector<double>{0.5, 0.99});
  Tensor c(Shape{2}, std::vector<double>{0.9, 1.2});
  const Tensor p = project_linf(c, a, ball);
  EXPECT_DOUBLE_EQ(p[0], 0.52);
  EXPECT_EQ(p[1], 1.0);
  EXPECT_EQ(values(project_linf(a, a, ball)), values(a));
}

TEST(ProjectLinf, IdempotentAndContained) {
  Rng rng = Rng::stream(4, "proj");
  PerturbationBall ball{0.03};
  for (int rep = 0; rep < 50; ++rep) {
    Tensor a = random_image(rng, 0.0, 1.0, 8);
    Tensor c = random_image(rng, -0.5, 1.5, 8);
    const Tensor p = project_linf(c, a, ball);
    EXPECT_EQ(values(project_linf(p, a, ball)), values(p));
    EXPECT_LE(max_abs_diff(p, a), ball.epsilon + 1e-12);
    for (double v : p.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(ProjectLinf, RejectsShapeMismatchAndNegativeEps) {
  EXPECT_THROW(project_linf(Tensor(Shape{3}), Tensor(Shape{4}), PerturbationBall{0.1}), ShapeError);
  EXPECT_THROW(project_linf(Tensor(Shape{3}), Tensor(Shape{3}), PerturbationBall{-0.1}), ValueError);
}

TEST(Fgsm, SignStepExamples) {
  Tensor x(Shape{3}, std::vector<double>{0.5, 0.5, 0.5});
  Tensor g(Shape{3}, std::vector<double>{0.3, -0.2, 0.0});
  const Tensor up = fgsm_step(x, g, 0.02, false);
  EXPECT_DOUBLE_EQ(up[0], 0.52);
  EXPECT_DOUBLE_EQ(up[1], 0.48);
  EXPECT_EQ(up[2], 0.5);
  const Tensor down = fgsm_step(x, g, 0.02, true);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(down[i] - x[i], -(up[i] - x[i]));
  EXPECT_EQ(values(fgsm_step(x, Tensor(Shape{3}), 0.02, false)), values(x));
  EXPECT_THROW(fgsm_step(x, g, 0.0, false), ValueError);
  EXPECT_THROW(fgsm_step(x, Tensor(Shape{2}), 0.02, false), ShapeError);
}

TEST(PgdConfig, DefaultStepAndValidation) {
  PgdConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.effective_step(), 2.5 * 0.02 / 20);
  cfg.step_size = 0.004;
  EXPECT_EQ(cfg.effective_step(), 0.004);
  cfg.iterations = 0;
  EXPECT_THROW(cfg.validate(), ValueError);
}

TEST(Pgd, ZeroEpsilonReturnsInput) {
  auto model = sharp_model(1);
  Rng rng = Rng::stream(1, "img");
  LabeledImage img{random_image(rng), 1, "p", "i"};
  PgdConfig cfg;
  cfg.ball.epsilon = 0.0;
  cfg.step_size = 0.01;
  EXPECT_EQ(values(pgd_attack(model, img, cfg)), values(img.pixels));
}

TEST(Pgd, LinearModelReachesClosedFormOptimum) {
  const auto model = linear_model(5);
  Rng rng = Rng::stream(5, "img");
  for (int label = 0; label < 2; ++label) {
    LabeledImage img{random_image(rng, 0.2, 0.8, 8), label, "p", "i"};
    PgdConfig cfg;
    const Tensor adv = pgd_attack(model, img, cfg);
    const Tensor z0 = model.logits(img.pixels.reshaped({1, 64}));
    const Tensor z1 = model.logits(adv.reshaped({1, 64}));
    double l1 = 0;
    for (std::size_t j = 0; j < 64; ++j) l1 += std::abs(model.weight()[64 + j] - model.weight()[j]);
    const double shift = (z1[1] - z1[0]) - (z0[1] - z0[0]);
    // toward the wrong label: diseased images lose margin, healthy ones gain
    const double expected = (label == 1 ? -1.0 : 1.0) * cfg.ball.epsilon * l1;
    EXPECT_NEAR(shift, expected, 1e-9);
  }
}

TEST(Pgd, UntargetedMovesAwayFromTrueLabel) {
  const auto model = linear_model(6);
  Rng rng = Rng::stream(6, "img");
  LabeledImage img{random_image(rng, 0.2, 0.8, 8), 1, "p", "i"};
  PgdConfig cfg;
  cfg.targeted = false;
  const Tensor z0 = model.logits(img.pixels.reshaped({1, 64}));
  const Tensor z1 = model.logits(pgd_attack(model, img, cfg).reshaped({1, 64}));
  EXPECT_LT(z1[1] - z1[0], z0[1] - z0[0]);
}

TEST(Pgd, BallContainmentOnDeskModel) {
  auto model = sharp_model(2);
  const Dataset ds = small_set(6, 3);
  for (double eps : {0.01, 0.02, 0.05}) {
    PgdConfig cfg;
    cfg.ball.epsilon = eps;
    cfg.random_start = true;
    cfg.seed = 9;
    const auto adv = pgd_attack_dataset(model, ds, cfg, 2);
    ASSERT_EQ(adv.size(), ds.size());
    for (std::size_t i = 0; i < adv.size(); ++i) {
      EXPECT_EQ(adv[i].shape(), ds.images[i].pixels.shape());
      EXPECT_LE(max_abs_diff(adv[i], ds.images[i].pixels), eps + 1e-12);
      for (double v : adv[i].data()) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
    }
  }
}

TEST(Pgd, EpsilonMonotoneReach) {
  auto model = sharp_model(3);
  const Dataset ds = small_set(4, 8);
  for (const auto& img : ds.images) {
    double previous = INFINITY;
    for (double eps : {0.0, 0.01, 0.02, 0.05}) {
      PgdConfig cfg;
      cfg.ball.epsilon = eps;
      cfg.step_size = eps > 0 ? 2.5 * eps / 20 : 0.001;
      const double loss = target_loss(model, pgd_attack(model, img, cfg), 1 - img.label);
      EXPECT_LE(loss, previous + 1e-12) << img.image_id << " eps " << eps;
      previous = loss;
    }
  }
}

TEST(Pgd, DeterministicAndThreadInvariant) {
  auto model = sharp_model(4);
  const Dataset ds = small_set(5, 4);
  PgdConfig cfg;
  const auto a = pgd_attack_dataset(model, ds, cfg, 1);
  const auto b = pgd_attack_dataset(model, ds, cfg, 1);
  const auto c = pgd_attack_dataset(model, ds, cfg, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(values(a[i]), values(b[i]));
    EXPECT_EQ(values(a[i]), values(c[i]));
  }
  cfg.random_start = true;
  const auto r1 = pgd_attack_dataset(model, ds, cfg, 1);
  const auto r4 = pgd_attack_dataset(model, ds, cfg, 4);
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(values(r1[i]), values(r4[i]));
}

TEST(Pgd, RejectsOutOfRangePixels) {
  auto model = sharp_model(1);
  LabeledImage img{filled(Shape{1, 32, 32}, 1.5), 0, "p", "i"};
  EXPECT_THROW(pgd_attack(model, img, PgdConfig{}), ValueError);
}

TEST(QuantizeWithinBall, StaysOnGridAndInBall) {
  Rng rng = Rng::stream(12, "q");
  const double eps = 0.02;
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor anchor = quantize(random_image(rng, 0, 1, 8));
    Tensor adv = anchor;
    for (double& v : adv.data()) v += eps * (2 * rng.uniform() - 1);
    adv = project_linf(adv, anchor, PerturbationBall{eps});
    const Tensor q = quantize_within_ball(adv, anchor, eps);
    EXPECT_LE(max_abs_diff(q, anchor), eps + 1e-12);
    for (double v : q.data()) {
      const double level = v * 255.0;
      EXPECT_NEAR(level, std::round(level), 1e-9);
    }
  }
}

TEST(Patch, SideFromScale) {
  EXPECT_EQ(patch_side(0.4, 32, 32), 13u);
  EXPECT_EQ(patch_side(0.4, 100, 100), 40u);
  EXPECT_THROW(patch_side(0.01, 32, 32), ValueError);
  EXPECT_THROW(patch_side(0.0, 32, 32), ValueError);
  EXPECT_THROW(patch_side(1.5, 32, 32), ValueError);
}

TEST(Patch, ScaleOnHundredPixelImageReplacesFortySquare) {
  Tensor img = filled(Shape{1, 100, 100}, 0.25);
  Patch p = blank_patch(InputSpec{1, 100, 100}, 0.4, 1);
  ASSERT_EQ(p.pixels.shape(), (Shape{1, 40, 40}));
  const Tensor out = apply_patch(img, p, PlacementTransform{10, 20, 0, 0.4});
  std::size_t changed = 0;
  for (std::size_t i = 0; i < out.size(); ++i) changed += out[i] != img[i];
  EXPECT_EQ(changed, 1600u);
}

TEST(Patch, TopLeftBlockIsExactAndRestUntouched) {
  Rng rng = Rng::stream(2, "patch");
  const Tensor img = random_image(rng);
  Patch p{random_image(rng, 0, 1, 13), 0.4, 1};
  for (int turns = 0; turns < 4; ++turns) {
    const PlacementTransform at{3, 7, turns, 0.4};
    const Tensor out = apply_patch(img, p, at);
    const Tensor rot = rotate_quarter_turns(p.pixels, turns);
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        const bool inside = r >= 3 && r < 16 && c >= 7 && c < 20;
        if (inside)
          EXPECT_EQ(out.at({0, r, c}), rot.at({0, r - 3, c - 7}));
        else
          EXPECT_EQ(out.at({0, r, c}), img.at({0, r, c}));
      }
  }
  const Tensor corner = apply_patch(img, p, PlacementTransform{0, 0, 0, 0.4});
  for (std::size_t r = 0; r < 13; ++r)
    for (std::size_t c = 0; c < 13; ++c) EXPECT_EQ(corner.at({0, r, c}), p.pixels.at({0, r, c}));
}

TEST(Patch, OutOfBoundsPlacementThrows) {
  const Tensor img = filled(Shape{1, 32, 32}, 0.5);
  Patch p = blank_patch(InputSpec{}, 0.4, 0);
  EXPECT_THROW(apply_patch(img, p, PlacementTransform{20, 0, 0, 0.4}), ValueError);
  EXPECT_NO_THROW(apply_patch(img, p, PlacementTransform{19, 19, 0, 0.4}));
}

TEST(Patch, SampledPlacementsStayInside) {
  Rng rng = Rng::stream(3, "place");
  std::set<int> turns;
  for (int i = 0; i < 500; ++i) {
    const auto pl = sample_placement(rng, 32, 32, 0.4);
    EXPECT_LE(pl.row + 13, 32u);
    EXPECT_LE(pl.col + 13, 32u);
    turns.insert(pl.quarter_turns);
  }
  EXPECT_EQ(turns.size(), 4u);
}

TEST(Patch, PlacePatchesMatchesApplyPatch) {
  Rng rng = Rng::stream(8, "pp");
  const Dataset ds = small_set(2, 1);
  Patch p{random_image(rng, 0, 1, 13), 0.4, 1};
  const auto placements = evaluation_placements(ds.size(), InputSpec{}, 0.4, 5);
  Tape tape;
  Var out = place_patches(tape.leaf(p.pixels, true), all_pixels(ds), placements);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor ref = apply_patch(ds.images[i].pixels, p, placements[i]);
    for (std::size_t j = 0; j < ref.size(); ++j) ASSERT_EQ(out.value()[i * ref.size() + j], ref[j]);
  }
}

TEST(TrainPatch, ZeroStepsIsMidGray) {
  auto model = sharp_model(1);
  const Dataset ds = small_set(2, 1);
  PatchTrainConfig cfg;
  cfg.steps = 0;
  const Patch p = train_patch(model, ds, 1, cfg);
  EXPECT_EQ(p.pixels.shape(), (Shape{1, 13, 13}));
  for (double v : p.pixels.data()) EXPECT_EQ(v, 0.5);
}

TEST(TrainPatch, DeterministicClampedAndImprovesObjective) {
  auto model = sharp_model(5);
  const Dataset ds = small_set(6, 2);
  PatchTrainConfig cfg;
  cfg.steps = 30;
  cfg.batch = 4;
  cfg.seed = 3;
  const Patch a = train_patch(model, ds, 1, cfg);
  const Patch b = train_patch(model, ds, 1, cfg);
  EXPECT_EQ(values(a.pixels), values(b.pixels));
  for (double v : a.pixels.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto held_out = evaluation_placements(ds.size(), InputSpec{}, 0.4, 99);
  const Patch gray = blank_patch(InputSpec{}, 0.4, 1);
  EXPECT_GE(patch_objective(model, a.pixels, ds, held_out, 1), patch_objective(model, gray.pixels, ds, held_out, 1));
}

TEST(TrainPatch, Validation) {
  auto model = sharp_model(1);
  PatchTrainConfig cfg;
  EXPECT_THROW(train_patch(model, Dataset{}, 1, cfg), ValueError);
  cfg.scale = 0.01;
  EXPECT_THROW(train_patch(model, small_set(2, 1), 1, cfg), ValueError);
}

TEST(NaturalPatch, PicksMostConfidentImage) {
  auto model = sharp_model(6);
  const Dataset ds = small_set(5, 6);
  for (int target = 0; target < 2; ++target) {
    const Patch p = natural_patch(model, ds, target, 0.4);
    const Tensor probs = model.predict(all_pixels(ds));
    std::size_t best = 0;
    for (std::size_t i = 1; i < ds.size(); ++i)
      if (probs.at({i, std::size_t(target)}) > probs.at({best, std::size_t(target)})) best = i;
    // already square, so no crop; nearest neighbour samples floor(i*32/13)
    const Tensor& src = ds.images[best].pixels;
    for (std::size_t r = 0; r < 13; ++r)
      for (std::size_t c = 0; c < 13; ++c) {
        const std::size_t sr = r * 32 / 13, sc = c * 32 / 13;
        EXPECT_EQ(p.pixels.at({0, r, c}), src.at({0, sr, sc}));
      }
    EXPECT_EQ(p.target_label, target);
  }
}

TEST(NaturalPatch, SingleImageAtFullScaleIsThatImage) {
  auto model = sharp_model(6);
  Dataset ds = small_set(2, 6);
  ds.images.resize(1);
  ds.paths.resize(1);
  const Patch p = natural_patch(model, ds, 1, 1.0);
  EXPECT_EQ(values(p.pixels), values(ds.images[0].pixels));
  EXPECT_THROW(natural_patch(model, Dataset{}, 1, 0.4), ValueError);
}

TEST(TargetedPatches, EachImageGetsOppositeTarget) {
  const Dataset ds = small_set(2, 1);
  std::array<Patch, 2> patches{Patch{filled(Shape{1, 13, 13}, 0.0), 0.4, 0},
                               Patch{filled(Shape{1, 13, 13}, 1.0), 0.4, 1}};
  const auto pl = evaluation_placements(ds.size(), InputSpec{}, 0.4, 1);
  const auto out = apply_targeted_patches(ds, patches, pl);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double want = ds.images[i].label == 1 ? 0.0 : 1.0;
    EXPECT_EQ(out[i].at({0, pl[i].row, pl[i].col}), want);
  }
  std::swap(patches[0], patches[1]);
  EXPECT_THROW(apply_targeted_patches(ds, patches, pl), ValueError);
}

TEST(Transfer, SelfTransferEqualsWhiteBox) {
  auto model = sharp_model(7);
  const Dataset ds = small_set(4, 5);
  PgdConfig cfg;
  const auto white = pgd_attack_dataset(model, ds, cfg, 1);
  const auto t = transfer_attack(model, model, ds, cfg, "PGD-Black", 2);
  ASSERT_EQ(t.adversarial.size(), white.size());
  for (std::size_t i = 0; i < white.size(); ++i) EXPECT_EQ(values(t.adversarial[i]), values(white[i]));
  const auto labels = all_labels(ds);
  const auto direct = evaluate_condition("PGD-Black", predict_images(model, white), labels);
  EXPECT_EQ(t.victim_metrics, direct);
}

TEST(Transfer, SpecMismatchThrows) {
  auto victim = sharp_model(7);
  Architecture small;
  small.input = InputSpec{1, 16, 16};
  auto other = ClassifierModel::initialize(small, 1);
  EXPECT_THROW(transfer_attack(victim, other, small_set(2, 1), PgdConfig{}, "PGD-Black"), ShapeError);
}

TEST(Parallel, CoversEveryIndexOnce) {
  std::vector<int> hits(37, 0);
  parallel_for(hits.size(), 5, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
}
