#include "advml/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "advml/error.hpp"
#include "advml/simd/kernels.hpp"

namespace advml {

// --- PGD ----------------------------------------------------------------------

void PerturbationBall::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ValueError("epsilon must be >= 0");
}

Tensor project_linf(const Tensor& candidate, const Tensor& anchor, const PerturbationBall& ball) {
  ball.validate();
  require_same_shape(candidate, anchor, "project_linf");
  Tensor out(candidate.shape());
  simd::active().project_linf(candidate.storage().data(), anchor.storage().data(), ball.epsilon,
                              out.storage().data(), out.size());
  return out;
}

Tensor fgsm_step(const Tensor& x, const Tensor& grad, double step, bool toward_target) {
  require_same_shape(x, grad, "fgsm_step");
  if (!(step > 0.0)) throw ValueError("fgsm_step: step must be > 0");
  Tensor out(x.shape());
  simd::active().sign_step(x.storage().data(), grad.storage().data(), toward_target ? -step : step,
                           out.storage().data(), out.size());
  return out;
}

double PgdConfig::effective_step() const {
  return step_size.value_or(2.5 * ball.epsilon / static_cast<double>(iterations));
}

void PgdConfig::validate() const {
  ball.validate();
  if (iterations == 0) throw ValueError("pgd: iterations must be >= 1");
  if (step_size && !(*step_size > 0.0)) throw ValueError("pgd: step_size must be > 0");
}

namespace {

void check_image(const DifferentiableModel& model, const Tensor& pixels, const char* what) {
  if (pixels.shape() != model.input_spec().image_shape()) {
    throw ShapeError(std::string(what) + ": image " + shape_string(pixels.shape()) +
                     " does not match model input " + shape_string(model.input_spec().image_shape()));
  }
}

Shape batch_of_one(const Shape& image) {
  Shape s{1};
  s.insert(s.end(), image.begin(), image.end());
  return s;
}

}  // namespace

Tensor pgd_attack(const DifferentiableModel& model, const LabeledImage& image, const PgdConfig& cfg,
                  std::uint64_t stream_index) {
  cfg.validate();
  check_image(model, image.pixels, "pgd_attack");
  const Tensor& anchor = image.pixels;
  for (double v : anchor.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValueError("pgd_attack: pixels must lie in [0,1]");
  }
  if (cfg.ball.epsilon == 0.0) return anchor;

  Tensor x = anchor;
  if (cfg.random_start) {
    Rng rng = Rng::stream(cfg.seed, "pgd/start", stream_index);
    for (double& v : x.storage()) v += cfg.ball.epsilon * (2.0 * rng.uniform() - 1.0);
    x = project_linf(x, anchor, cfg.ball);
  }
  const int label = cfg.targeted ? 1 - image.label : image.label;
  const std::array<int, 1> labels{label};
  const Tensor targets = one_hot(labels);
  const double step = cfg.effective_step();
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tape tape;
    Var input = tape.leaf(x.reshaped(batch_of_one(x.shape())), true);
    Var logits = model.forward(tape, input);
    LossAndGradients lg = loss_and_gradients(logits, targets, {}, input);
    const Tensor grad = lg.input_grad->reshaped(x.shape());
    x = project_linf(fgsm_step(x, grad, step, cfg.targeted), anchor, cfg.ball);
  }
  return x;
}

std::vector<Tensor> pgd_attack_dataset(const DifferentiableModel& model, const Dataset& ds,
                                       const PgdConfig& cfg, std::size_t threads) {
  std::vector<Tensor> out(ds.size());
  parallel_for(ds.size(), threads,
               [&](std::size_t i) { out[i] = pgd_attack(model, ds.images[i], cfg, i); });
  return out;
}

Tensor quantize_within_ball(const Tensor& adversarial, const Tensor& anchor, double epsilon) {
  require_same_shape(adversarial, anchor, "quantize_within_ball");
  Tensor out(adversarial.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double level = std::round(std::clamp(adversarial[i], 0.0, 1.0) * 255.0);
    if (std::abs(level / 255.0 - anchor[i]) > epsilon) {
      level += level / 255.0 > anchor[i] ? -1.0 : 1.0;
    }
    out[i] = level / 255.0;
  }
  return out;
}

// --- patches ------------------------------------------------------------------

std::size_t patch_side(double scale, std::size_t height, std::size_t width) {
  if (!(scale > 0.0 && scale <= 1.0)) throw ValueError("patch scale must be in (0,1]");
  const double side = std::round(scale * static_cast<double>(std::min(height, width)));
  if (side < 1.0) throw ValueError("degenerate patch: side rounds below one pixel");
  return static_cast<std::size_t>(side);
}

Patch blank_patch(const InputSpec& spec, double scale, int target_label) {
  if (target_label != 0 && target_label != 1) throw ValueError("patch target must be 0 or 1");
  const std::size_t s = patch_side(scale, spec.height, spec.width);
  return Patch{Tensor(Shape{spec.channels, s, s}, 0.5), scale, target_label};
}

PlacementTransform sample_placement(Rng& rng, std::size_t height, std::size_t width, double scale) {
  const std::size_t side = patch_side(scale, height, width);
  PlacementTransform p;
  p.row = static_cast<std::size_t>(rng.uniform_int(height - side + 1));
  p.col = static_cast<std::size_t>(rng.uniform_int(width - side + 1));
  p.quarter_turns = static_cast<int>(rng.uniform_int(4));
  p.scale = scale;
  return p;
}

namespace {

// For each pixel of the rendered (rotated, resized) block, the flat index of
// the patch-plane pixel it copies.
std::vector<std::size_t> render_map(std::size_t native, std::size_t side, int quarter_turns) {
  Tensor index(Shape{1, native, native});
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = static_cast<double>(i);
  const Tensor rotated = rotate_quarter_turns(index, quarter_turns);
  std::vector<std::size_t> map(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    const std::size_t sy = y * native / side;
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t sx = x * native / side;
      map[y * side + x] = static_cast<std::size_t>(rotated[sy * native + sx]);
    }
  }
  return map;
}

struct PlacedBlock {
  std::size_t side;
  std::vector<std::size_t> map;
};

PlacedBlock placed_block(const Tensor& patch, std::size_t channels, std::size_t h, std::size_t w,
                         const PlacementTransform& placement) {
  if (patch.rank() != 3 || patch.dim(1) != patch.dim(2)) {
    throw ShapeError("patch must be [C,s,s], got " + shape_string(patch.shape()));
  }
  if (patch.dim(0) != channels) {
    throw ShapeError("patch has " + std::to_string(patch.dim(0)) + " channels, image has " +
                     std::to_string(channels));
  }
  const std::size_t side = patch_side(placement.scale, h, w);
  if (placement.row + side > h || placement.col + side > w) {
    throw ValueError("patch placement at (" + std::to_string(placement.row) + "," +
                     std::to_string(placement.col) + ") with side " + std::to_string(side) +
                     " leaves the " + std::to_string(h) + "x" + std::to_string(w) + " image");
  }
  return {side, render_map(patch.dim(1), side, placement.quarter_turns)};
}

}  // namespace

Tensor apply_patch(const Tensor& image, const Patch& patch, const PlacementTransform& placement) {
  if (image.rank() != 3) throw ShapeError("apply_patch: image must be [C,H,W]");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const PlacedBlock block = placed_block(patch.pixels, c, h, w, placement);
  const std::size_t native_area = patch.pixels.dim(1) * patch.pixels.dim(2);
  Tensor out = image;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < block.side; ++y) {
      for (std::size_t x = 0; x < block.side; ++x) {
        out[(ch * h + placement.row + y) * w + placement.col + x] =
            patch.pixels[ch * native_area + block.map[y * block.side + x]];
      }
    }
  }
  return out;
}

Var place_patches(Var patch, const Tensor& images, std::span<const PlacementTransform> placements) {
  if (images.rank() != 4) throw ShapeError("place_patches: images must be [N,C,H,W]");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (placements.size() != n) throw ShapeError("place_patches: one placement per image required");
  const Tensor& p = patch.value();
  const std::size_t native_area = p.rank() == 3 ? p.dim(1) * p.dim(2) : 0;

  struct Routed {
    std::size_t out_index;
    std::size_t patch_index;
  };
  std::vector<Routed> routes;
  Tensor out = images;
  for (std::size_t i = 0; i < n; ++i) {
    const PlacedBlock block = placed_block(p, c, h, w, placements[i]);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < block.side; ++y) {
        for (std::size_t x = 0; x < block.side; ++x) {
          const std::size_t o =
              ((i * c + ch) * h + placements[i].row + y) * w + placements[i].col + x;
          const std::size_t src = ch * native_area + block.map[y * block.side + x];
          out[o] = p[src];
          routes.push_back({o, src});
        }
      }
    }
  }
  return patch.tape().record(std::move(out), {patch},
                             [routes = std::move(routes)](const Tensor& g, auto grads) {
                               Tensor& gp = *grads[0];
                               for (const Routed& r : routes) gp[r.patch_index] += g[r.out_index];
                             });
}

void PatchTrainConfig::validate() const {
  if (!(scale > 0.0 && scale <= 1.0)) throw ValueError("patch.scale must be in (0,1]");
  if (!(step_size > 0.0)) throw ValueError("patch.step_size must be > 0");
  if (batch == 0) throw ValueError("patch.batch must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValueError("patch momentum must be in [0,1)");
}

Patch train_patch(const DifferentiableModel& model, const Dataset& train_set, int target,
                  const PatchTrainConfig& cfg, PatchTrace* trace) {
  cfg.validate();
  if (train_set.empty()) throw ValueError("train_patch: empty training set");
  const InputSpec spec = model.input_spec();
  check_image(model, train_set.images.front().pixels, "train_patch");
  Patch patch = blank_patch(spec, cfg.scale, target);
  Tensor velocity(patch.pixels.shape(), 0.0);
  const std::array<int, 1> target_label{target};
  const Tensor target_row = one_hot(target_label);

  Rng rng = Rng::stream(cfg.seed, "patch/train", static_cast<std::uint64_t>(target));
  std::vector<std::size_t> picks(cfg.batch);
  std::vector<PlacementTransform> placements(cfg.batch);
  Tensor targets(Shape{cfg.batch, 2});
  for (std::size_t k = 0; k < cfg.batch; ++k) {
    std::copy(target_row.data().begin(), target_row.data().end(), targets.data().begin() + 2 * k);
  }

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t k = 0; k < cfg.batch; ++k) {
      picks[k] = static_cast<std::size_t>(rng.uniform_int(train_set.size()));
      placements[k] = sample_placement(rng, spec.height, spec.width, cfg.scale);
    }
    Tape tape;
    Var p = tape.leaf(patch.pixels, true);
    Var patched = place_patches(p, batch_pixels(train_set, picks), placements);
    const std::array<Var, 1> wrt{p};
    LossAndGradients lg = loss_and_gradients(model.forward(tape, patched), targets, wrt);
    if (trace) trace->batch_objective.push_back(-lg.loss);

    // Ascent on mean log p(target) is descent on the cross-entropy.
    auto& v = velocity.storage();
    auto& px = patch.pixels.storage();
    const auto& g = lg.parameter_grads[0].storage();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = cfg.momentum * v[i] - g[i];
      px[i] = std::clamp(px[i] + cfg.step_size * v[i], 0.0, 1.0);
    }
  }
  return patch;
}

double patch_objective(const DifferentiableModel& model, const Tensor& patch_pixels,
                       const Dataset& images, std::span<const PlacementTransform> placements,
                       int target) {
  Tape tape;
  Var p = tape.leaf(patch_pixels, false);
  Var patched = place_patches(p, all_pixels(images), placements);
  const std::vector<int> labels(images.size(), target);
  Var loss = cross_entropy(model.forward(tape, patched), one_hot(labels));
  return -loss.value()[0];
}

Patch natural_patch(const ClassifierModel& model, const Dataset& train_set, int target, double scale) {
  if (train_set.empty()) throw ValueError("natural_patch: empty dataset");
  if (target != 0 && target != 1) throw ValueError("natural_patch: target must be 0 or 1");
  constexpr std::size_t kChunk = 64;
  std::size_t best = 0;
  double best_p = -1.0;
  for (std::size_t start = 0; start < train_set.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(start + kChunk, train_set.size()); ++i) idx.push_back(i);
    const Tensor probs = model.predict(batch_pixels(train_set, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double p = probs[2 * k + static_cast<std::size_t>(target)];
      if (p > best_p) {
        best_p = p;
        best = idx[k];
      }
    }
  }
  const Tensor& src = train_set.images[best].pixels;
  const std::size_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  const std::size_t crop = std::min(h, w);
  const std::size_t top = (h - crop) / 2, left = (w - crop) / 2;
  const std::size_t side = patch_side(scale, h, w);
  Patch patch{Tensor(Shape{c, side, side}), scale, target};
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        patch.pixels[(ch * side + y) * side + x] =
            src[(ch * h + top + y * crop / side) * w + left + x * crop / side];
      }
    }
  }
  return patch;
}

std::vector<PlacementTransform> evaluation_placements(std::size_t count, const InputSpec& spec,
                                                      double scale, std::uint64_t seed) {
  std::vector<PlacementTransform> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, "patch/eval", i);
    out.push_back(sample_placement(rng, spec.height, spec.width, scale));
  }
  return out;
}

std::vector<Tensor> apply_targeted_patches(const Dataset& ds, const std::array<Patch, 2>& patches,
                                           std::span<const PlacementTransform> placements) {
  if (placements.size() != ds.size()) throw ShapeError("apply_targeted_patches: placement count mismatch");
  for (int t = 0; t < 2; ++t) {
    if (patches[static_cast<std::size_t>(t)].target_label != t) {
      throw ValueError("apply_targeted_patches: patches[t] must target label t");
    }
  }
  std::vector<Tensor> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& im = ds.images[i];
    out.push_back(apply_patch(im.pixels, patches[static_cast<std::size_t>(1 - im.label)], placements[i]));
  }
  return out;
}

// --- transfer -----------------------------------------------------------------

Tensor predict_images(const ClassifierModel& model, std::span<const Tensor> images) {
  if (images.empty()) throw ValueError("predict_images: no images");
  constexpr std::size_t kChunk = 64;
  Tensor probs(Shape{images.size(), 2});
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, images.size() - start);
    const Tensor p = model.predict(stack(images.subspan(start, count)));
    std::copy(p.data().begin(), p.data().end(), probs.data().begin() + 2 * start);
  }
  return probs;
}

TransferResult transfer_attack(const ClassifierModel& victim, const ClassifierModel& surrogate,
                               const Dataset& inputs, const AttackSpec& spec,
                               std::string condition_name, std::size_t threads) {
  if (!(victim.input_spec() == surrogate.input_spec())) {
    throw ShapeError("transfer_attack: victim and surrogate input specs differ");
  }
  TransferResult result;
  if (const auto* pgd = std::get_if<PgdConfig>(&spec)) {
    result.adversarial = pgd_attack_dataset(surrogate, inputs, *pgd, threads);
  } else {
    const auto& patch = std::get<PatchAttackSpec>(spec);
    if (patch.train_set == nullptr) throw ValueError("transfer_attack: patch attack needs a training set");
    const std::array<Patch, 2> patches{train_patch(surrogate, *patch.train_set, 0, patch.train),
                                       train_patch(surrogate, *patch.train_set, 1, patch.train)};
    const auto placements =
        evaluation_placements(inputs.size(), victim.input_spec(), patch.train.scale, patch.placement_seed);
    result.adversarial = apply_targeted_patches(inputs, patches, placements);
  }
  result.victim_metrics = evaluate_condition(std::move(condition_name),
                                             predict_images(victim, result.adversarial), all_labels(inputs));
  return result;
}

// --- threading ----------------------------------------------------------------

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> workers;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace advml
