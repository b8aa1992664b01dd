#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "advml/classifier.hpp"
#include "advml/data_io.hpp"
#include "advml/metrics.hpp"
#include "advml/rng.hpp"
#include "advml/tensor.hpp"

namespace advml {

// --- L-infinity PGD ----------------------------------------------------------

/// Allowed perturbations: the L-infinity ball of radius `epsilon` (pixel
/// units) around the clean image, intersected with [0,1].
struct PerturbationBall {
  double epsilon = 0.02;

  void validate() const;
};

/// Clamp to [anchor - eps, anchor + eps], then to [0,1].
Tensor project_linf(const Tensor& candidate, const Tensor& anchor, const PerturbationBall& ball);

/// x + step * sgn(grad), or x - step * sgn(grad) when stepping toward a
/// target label. sgn(0) = 0.
Tensor fgsm_step(const Tensor& x, const Tensor& grad, double step, bool toward_target);

struct PgdConfig {
  PerturbationBall ball;
  std::size_t iterations = 20;
  /// Per-iteration step; unset means 2.5 * epsilon / iterations.
  std::optional<double> step_size;
  bool targeted = true;
  bool random_start = false;
  std::uint64_t seed = 0;

  double effective_step() const;
  void validate() const;
};

/// Iterated signed-gradient steps, each followed by projection onto the
/// ball around `image`. Targeted mode descends the loss of label 1 - y;
/// untargeted mode ascends the loss of y. `stream_index` keys the
/// random-start stream so each image of a set gets its own.
Tensor pgd_attack(const DifferentiableModel& model, const LabeledImage& image, const PgdConfig& cfg,
                  std::uint64_t stream_index = 0);

/// pgd_attack over every image of `ds` (stream index = position). Work is
/// split over `threads` workers; the result does not depend on the count.
std::vector<Tensor> pgd_attack_dataset(const DifferentiableModel& model, const Dataset& ds,
                                       const PgdConfig& cfg, std::size_t threads = 1);

/// Rounds to the 8-bit file grid without leaving the ball: a rounded value
/// that overshoots is pulled one level back toward the anchor. Assumes the
/// anchor itself is on the grid.
Tensor quantize_within_ball(const Tensor& adversarial, const Tensor& anchor, double epsilon);

// --- adversarial patches ----------------------------------------------------

/// Square patch of side round(scale * min(H, W)), pixels [C, s, s] in [0,1].
struct Patch {
  Tensor pixels;
  double scale = 0.4;
  int target_label = 1;
};

/// Where and how a patch lands: top-left corner, counter-clockwise quarter
/// turns, and the side fraction used when resizing.
struct PlacementTransform {
  std::size_t row = 0;
  std::size_t col = 0;
  int quarter_turns = 0;
  double scale = 0.4;

  friend bool operator==(const PlacementTransform&, const PlacementTransform&) = default;
};

/// round(scale * min(height, width)); throws ValueError when below one pixel
/// or when scale is outside (0,1].
std::size_t patch_side(double scale, std::size_t height, std::size_t width);

/// Mid-gray (0.5) patch for the given input geometry.
Patch blank_patch(const InputSpec& spec, double scale, int target_label);

/// Location uniform over positions that keep the patch inside the image,
/// rotation uniform over right angles, scale fixed.
PlacementTransform sample_placement(Rng& rng, std::size_t height, std::size_t width, double scale);

/// Rotates the patch, resizes it (nearest neighbour) to the placement's side
/// and overwrites that block of `image` [C,H,W]. Everything else is copied
/// untouched. Throws ValueError when the block leaves the image.
Tensor apply_patch(const Tensor& image, const Patch& patch, const PlacementTransform& placement);

/// Differentiable form of `apply_patch` for a batch [N,C,H,W] with one
/// placement per image; gradients flow to the patch only.
Var place_patches(Var patch, const Tensor& images, std::span<const PlacementTransform> placements);

struct PatchTrainConfig {
  double scale = 0.4;
  std::size_t steps = 400;
  double step_size = 0.05;
  std::size_t batch = 32;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-step record of the batch objective, for monitoring.
struct PatchTrace {
  std::vector<double> batch_objective;  // mean log p(target | patched batch)
};

/// Expectation-over-transformation patch training: each step draws a batch
/// of training images and a fresh placement per image, then takes a
/// momentum step up the mean log-probability of `target`, clamping the
/// patch to [0,1]. Starts from mid-gray; deterministic given `cfg.seed`.
Patch train_patch(const DifferentiableModel& model, const Dataset& train_set, int target,
                  const PatchTrainConfig& cfg, PatchTrace* trace = nullptr);

/// Mean log p(target | patched image) over `images` with fixed placements.
double patch_objective(const DifferentiableModel& model, const Tensor& patch_pixels,
                       const Dataset& images, std::span<const PlacementTransform> placements,
                       int target);

/// Control patch: the training image with the highest p(target) (ties to
/// the lowest index), centre-cropped to a square and resized to the patch
/// side by nearest neighbour.
Patch natural_patch(const ClassifierModel& model, const Dataset& train_set, int target, double scale);

/// One placement per image of an evaluation set, keyed by (seed, index), so
/// every patch condition sees the same placements.
std::vector<PlacementTransform> evaluation_placements(std::size_t count, const InputSpec& spec,
                                                      double scale, std::uint64_t seed);

/// Patches every image with the patch whose target is the opposite of the
/// image's label. `patches[t]` must target label t.
std::vector<Tensor> apply_targeted_patches(const Dataset& ds, const std::array<Patch, 2>& patches,
                                           std::span<const PlacementTransform> placements);

// --- transfer (black-box) ---------------------------------------------------

struct PatchAttackSpec {
  PatchTrainConfig train;
  const Dataset* train_set = nullptr;
  std::uint64_t placement_seed = 0;
};

using AttackSpec = std::variant<PgdConfig, PatchAttackSpec>;

struct TransferResult {
  std::vector<Tensor> adversarial;
  ConditionMetrics victim_metrics;
};

/// Crafts the attack against `surrogate` only and scores `victim` on the
/// results. Throws ShapeError when the input specs differ.
TransferResult transfer_attack(const ClassifierModel& victim, const ClassifierModel& surrogate,
                               const Dataset& inputs, const AttackSpec& spec,
                               std::string condition_name, std::size_t threads = 1);

/// Victim probabilities for a list of [C,H,W] images.
Tensor predict_images(const ClassifierModel& model, std::span<const Tensor> images);

/// Runs fn(i) for i in [0, n) over `threads` workers (static chunks).
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace advml
