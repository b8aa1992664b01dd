#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "advml/autodiff.hpp"
#include "advml/container.hpp"
#include "advml/data_io.hpp"
#include "advml/rng.hpp"
#include "advml/tensor.hpp"

namespace advml {

struct InputSpec {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;

  Shape image_shape() const { return {channels, height, width}; }
  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

/// Anything the attacks can differentiate through: maps a batch
/// [N,C,H,W] to two-class logits [N,2] on a tape.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;
  virtual InputSpec input_spec() const = 0;
  /// Parameters enter the tape as constants; only the input can carry a
  /// gradient.
  virtual Var forward(Tape& tape, Var images) const = 0;
};

/// conv(3x3, pad 1) -> bias -> relu -> maxpool(2x2), once per entry of
/// `conv_channels`, then flatten -> dense(hidden) -> relu -> dense(classes).
struct Architecture {
  InputSpec input;
  std::array<std::size_t, 3> conv_channels{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t hidden = 64;
  std::size_t classes = 2;

  /// One-line text form stored in checkpoints, e.g.
  /// "cnn input=1x32x32 conv=8,16,32 kernel=3 dense=64 classes=2".
  std::string descriptor() const;
  static Architecture parse(const std::string& descriptor);

  /// Weight/bias shapes in parameter order.
  std::vector<Shape> parameter_shapes() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

class ClassifierModel final : public DifferentiableModel {
 public:
  /// Glorot-uniform weights, bound sqrt(6 / (fan_in + fan_out)), zero biases.
  static ClassifierModel initialize(const Architecture& arch, std::uint64_t seed);

  ClassifierModel(Architecture arch, std::vector<Tensor> parameters, std::uint64_t training_seed);

  InputSpec input_spec() const override { return arch_.input; }
  const Architecture& architecture() const noexcept { return arch_; }
  std::uint64_t training_seed() const noexcept { return training_seed_; }

  Var forward(Tape& tape, Var images) const override;

  struct TrainablePass {
    Var logits;
    std::vector<Var> parameters;
  };
  /// Forward pass with every parameter on the tape as a gradient leaf.
  TrainablePass forward_trainable(Tape& tape, Var images) const;

  /// Tape-free logits; identical values to `forward`.
  Tensor logits(const Tensor& images) const;

  /// Softmax probabilities [N,2]. With `strict`, pixels outside [0,1] are
  /// rejected.
  Tensor predict(const Tensor& images, bool strict = true) const;

  const std::vector<Tensor>& parameters() const noexcept { return params_; }
  std::vector<Tensor>& mutable_parameters() noexcept { return params_; }

  /// Writes an AMF1 checkpoint; `metadata_json` goes in the trailing block.
  void save(const std::filesystem::path& path, const std::string& metadata_json) const;
  static ClassifierModel load(const std::filesystem::path& path);
  static ClassifierModel from_container(const TensorContainer& c);

 private:
  void check_input(const Shape& shape) const;

  Architecture arch_;
  std::vector<Tensor> params_;
  std::uint64_t training_seed_ = 0;
};

struct Augmentation {
  bool rotate = true;
  bool hflip = true;
  bool vflip = true;
  bool mixup = true;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t epochs = 25;
  std::size_t batch_size = 2;
  Augmentation augmentation;
  double mixup_alpha = 0.2;
  std::uint64_t seed = 7;

  /// Throws ValueError when a field is out of range.
  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&, const ClassifierModel&)>;

/// Mini-batch SGD with momentum (v <- momentum*v - lr*g; theta <- theta + v)
/// on mean cross-entropy. Deterministic given `config.seed`. Throws
/// ValueError for an empty or single-class set and NumericError when a loss
/// turns non-finite.
ClassifierModel train(const Dataset& train_set, const TrainConfig& config,
                      const EpochCallback& on_epoch = {});

/// Explicit augmentation outcomes, so callers can force a transform.
struct AugmentDraw {
  int quarter_turns = 0;  // counter-clockwise, 0..3
  bool hflip = false;
  bool vflip = false;
};

AugmentDraw draw_augmentation(const Augmentation& flags, Rng& rng);
Tensor apply_augmentation(const Tensor& pixels, const AugmentDraw& draw);

/// Random right-angle rotation and 50% horizontal / vertical flips per the
/// flags; the label is never touched.
LabeledImage augment(const LabeledImage& image, const Augmentation& flags, Rng& rng);

/// Rotates a [C,S,S] or [C,H,W] image by quarter turns counter-clockwise.
Tensor rotate_quarter_turns(const Tensor& pixels, int quarter_turns);
Tensor flip_horizontal(const Tensor& pixels);
Tensor flip_vertical(const Tensor& pixels);

struct MixedSample {
  Tensor pixels;
  std::array<double, 2> soft_label{};
};

/// lambda * a + (1 - lambda) * b, with the matching soft label.
MixedSample mixup_pair(const LabeledImage& a, const LabeledImage& b, double lambda);

}  // namespace advml
