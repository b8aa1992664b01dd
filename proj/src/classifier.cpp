#include "advml/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <sstream>

#include "advml/error.hpp"
#include "advml/tensor_ops.hpp"

namespace advml {

// --- architecture -------------------------------------------------------------

std::string Architecture::descriptor() const {
  std::ostringstream out;
  out << "cnn input=" << input.channels << 'x' << input.height << 'x' << input.width << " conv="
      << conv_channels[0] << ',' << conv_channels[1] << ',' << conv_channels[2]
      << " kernel=" << kernel << " dense=" << hidden << " classes=" << classes;
  return out.str();
}

Architecture Architecture::parse(const std::string& descriptor) {
  static const std::regex pattern(
      R"(cnn input=(\d+)x(\d+)x(\d+) conv=(\d+),(\d+),(\d+) kernel=(\d+) dense=(\d+) classes=(\d+))");
  std::smatch m;
  if (!std::regex_match(descriptor, m, pattern)) {
    throw FormatError("unrecognised architecture descriptor '" + descriptor + "'");
  }
  auto num = [&](int i) { return static_cast<std::size_t>(std::stoul(m[i].str())); };
  Architecture arch;
  arch.input = {num(1), num(2), num(3)};
  arch.conv_channels = {num(4), num(5), num(6)};
  arch.kernel = num(7);
  arch.hidden = num(8);
  arch.classes = num(9);
  arch.parameter_shapes();  // validates geometry
  return arch;
}

std::vector<Shape> Architecture::parameter_shapes() const {
  if (input.channels == 0 || hidden == 0 || classes != 2 || kernel == 0 || kernel % 2 == 0) {
    throw ValueError("invalid architecture '" + descriptor() + "'");
  }
  std::vector<Shape> shapes;
  std::size_t channels = input.channels, h = input.height, w = input.width;
  for (std::size_t filters : conv_channels) {
    if (filters == 0) throw ValueError("architecture: zero conv channels");
    if (h < 2 || w < 2) throw ShapeError("architecture: input " + descriptor() + " too small to pool");
    shapes.push_back({filters, channels, kernel, kernel});
    shapes.push_back({filters});
    channels = filters;
    h /= 2;
    w /= 2;
  }
  const std::size_t flat = channels * h * w;
  if (flat == 0) throw ShapeError("architecture: input " + descriptor() + " too small to pool");
  shapes.push_back({hidden, flat});
  shapes.push_back({hidden});
  shapes.push_back({classes, hidden});
  shapes.push_back({classes});
  return shapes;
}

// --- model --------------------------------------------------------------------

ClassifierModel ClassifierModel::initialize(const Architecture& arch, std::uint64_t seed) {
  const auto shapes = arch.parameter_shapes();
  Rng rng = Rng::stream(seed, "init");
  std::vector<Tensor> params;
  for (const Shape& shape : shapes) {
    Tensor t(shape, 0.0);
    if (shape.size() > 1) {
      const std::size_t receptive = shape.size() == 4 ? shape[2] * shape[3] : 1;
      const double fan_in = static_cast<double>(shape[1] * receptive);
      const double fan_out = static_cast<double>(shape[0] * receptive);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t.storage()) v = bound * (2.0 * rng.uniform() - 1.0);
    }
    params.push_back(std::move(t));
  }
  return ClassifierModel(arch, std::move(params), seed);
}

ClassifierModel::ClassifierModel(Architecture arch, std::vector<Tensor> parameters,
                                 std::uint64_t training_seed)
    : arch_(arch), params_(std::move(parameters)), training_seed_(training_seed) {
  const auto shapes = arch_.parameter_shapes();
  if (shapes.size() != params_.size()) {
    throw ShapeError("architecture expects " + std::to_string(shapes.size()) + " tensors, got " +
                     std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params_[i].shape() != shapes[i]) {
      throw ShapeError("parameter " + std::to_string(i) + " has shape " +
                       shape_string(params_[i].shape()) + ", expected " + shape_string(shapes[i]));
    }
  }
}

void ClassifierModel::check_input(const Shape& shape) const {
  const Shape expected = arch_.input.image_shape();
  if (shape.size() != 4 || !std::equal(expected.begin(), expected.end(), shape.begin() + 1)) {
    throw ShapeError("model expects [N," + std::to_string(expected[0]) + "," +
                     std::to_string(expected[1]) + "," + std::to_string(expected[2]) + "], got " +
                     shape_string(shape));
  }
}

namespace {

template <typename Conv, typename Bias, typename Relu, typename Pool, typename Flatten, typename Dense,
          typename X, typename P>
X run_layers(X x, const std::vector<P>& p, Conv conv, Bias bias, Relu relu, Pool pool, Flatten flatten,
             Dense dense) {
  for (std::size_t block = 0; block < 3; ++block) {
    x = pool(relu(bias(conv(x, p[2 * block]), p[2 * block + 1])));
  }
  x = relu(dense(flatten(x), p[6], p[7]));
  return dense(x, p[8], p[9]);
}

}  // namespace

Var ClassifierModel::forward(Tape& tape, Var images) const {
  check_input(images.shape());
  std::vector<Var> p;
  p.reserve(params_.size());
  for (const Tensor& t : params_) p.push_back(tape.leaf(t, false));
  const std::size_t pad = arch_.kernel / 2;
  return run_layers(
      images, p, [pad](Var x, Var k) { return conv2d(x, k, 1, pad); },
      [](Var x, Var b) { return add_channel_bias(x, b); }, [](Var x) { return relu(x); },
      [](Var x) { return max_pool2x2(x); }, [](Var x) { return flatten(x); },
      [](Var x, Var w, Var b) { return linear(x, w, b); });
}

ClassifierModel::TrainablePass ClassifierModel::forward_trainable(Tape& tape, Var images) const {
  check_input(images.shape());
  TrainablePass pass;
  for (const Tensor& t : params_) pass.parameters.push_back(tape.leaf(t, true));
  const std::size_t pad = arch_.kernel / 2;
  pass.logits = run_layers(
      images, pass.parameters, [pad](Var x, Var k) { return conv2d(x, k, 1, pad); },
      [](Var x, Var b) { return add_channel_bias(x, b); }, [](Var x) { return relu(x); },
      [](Var x) { return max_pool2x2(x); }, [](Var x) { return flatten(x); },
      [](Var x, Var w, Var b) { return linear(x, w, b); });
  return pass;
}

Tensor ClassifierModel::logits(const Tensor& images) const {
  check_input(images.shape());
  const std::size_t pad = arch_.kernel / 2;
  return run_layers(
      images, params_, [pad](const Tensor& x, const Tensor& k) { return ops::conv2d(x, k, 1, pad); },
      [](const Tensor& x, const Tensor& b) { return ops::add_channel_bias(x, b); },
      [](const Tensor& x) { return ops::relu(x); },
      [](const Tensor& x) { return ops::max_pool2x2(x).output; },
      [](const Tensor& x) { return x.reshaped(Shape{x.dim(0), x.size() / x.dim(0)}); },
      [](const Tensor& x, const Tensor& w, const Tensor& b) { return ops::linear(x, w, b); });
}

Tensor ClassifierModel::predict(const Tensor& images, bool strict) const {
  check_input(images.shape());
  if (strict) {
    for (double v : images.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValueError("predict: pixel value outside [0,1]");
    }
  }
  return ops::softmax(logits(images));
}

void ClassifierModel::save(const std::filesystem::path& path, const std::string& metadata_json) const {
  write_container(path, TensorContainer{arch_.descriptor(), params_, metadata_json});
}

ClassifierModel ClassifierModel::from_container(const TensorContainer& c) {
  std::uint64_t seed = 0;
  // The seed is echoed in the metadata JSON; a missing key keeps 0.
  static const std::regex seed_pattern(R"("training_seed"\s*:\s*(\d+))");
  std::smatch m;
  if (std::regex_search(c.metadata, m, seed_pattern)) seed = std::stoull(m[1].str());
  return ClassifierModel(Architecture::parse(c.descriptor), c.tensors, seed);
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& path) {
  return from_container(read_container(path));
}

// --- training -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValueError("train.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValueError("train.momentum must be in [0,1)");
  if (batch_size == 0) throw ValueError("train.batch_size must be positive");
  if (augmentation.mixup && !(mixup_alpha > 0.0)) {
    throw ValueError("train.mixup_alpha must be > 0 when mixup is enabled");
  }
}

ClassifierModel train(const Dataset& train_set, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ValueError("train: empty training set");
  if (train_set.count_label(0) == 0 || train_set.count_label(1) == 0) {
    throw ValueError("train: training set must contain both classes");
  }
  const Shape& image_shape = train_set.images.front().pixels.shape();
  Architecture arch;
  arch.input = {image_shape[0], image_shape[1], image_shape[2]};
  ClassifierModel model = ClassifierModel::initialize(arch, config.seed);

  std::vector<Tensor> velocity;
  for (const Tensor& p : model.parameters()) velocity.emplace_back(p.shape(), 0.0);

  const std::size_t n = train_set.size();
  double last_finite = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng order_rng = Rng::stream(config.seed, "train/shuffle", epoch);
    Rng aug_rng = Rng::stream(config.seed, "train/augment", epoch);
    Rng mix_rng = Rng::stream(config.seed, "train/mixup", epoch);
    const auto order = shuffled_indices(n, order_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      std::vector<LabeledImage> batch;
      batch.reserve(count);
      for (std::size_t k = 0; k < count; ++k) {
        batch.push_back(augment(train_set.images[order[start + k]], config.augmentation, aug_rng));
      }

      std::vector<Tensor> pixels;
      Tensor targets(Shape{count, 2});
      if (config.augmentation.mixup) {
        const double lambda = mix_rng.beta(config.mixup_alpha, config.mixup_alpha);
        const auto partner = shuffled_indices(count, mix_rng);
        for (std::size_t k = 0; k < count; ++k) {
          MixedSample mixed = mixup_pair(batch[k], batch[partner[k]], lambda);
          pixels.push_back(std::move(mixed.pixels));
          targets[2 * k] = mixed.soft_label[0];
          targets[2 * k + 1] = mixed.soft_label[1];
        }
      } else {
        for (std::size_t k = 0; k < count; ++k) {
          pixels.push_back(batch[k].pixels);
          targets[2 * k + static_cast<std::size_t>(batch[k].label)] = 1.0;
        }
      }

      Tape tape;
      Var x = tape.leaf(stack(pixels), false);
      auto pass = model.forward_trainable(tape, x);
      LossAndGradients lg;
      try {
        lg = loss_and_gradients(pass.logits, targets, pass.parameters);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batches + 1) + " (" + e.what() +
                           "); last finite loss " + std::to_string(last_finite));
      }
      last_finite = lg.loss;
      loss_sum += lg.loss;
      ++batches;

      auto& params = model.mutable_parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& v = velocity[i].storage();
        const auto& g = lg.parameter_grads[i].storage();
        auto& theta = params[i].storage();
        for (std::size_t j = 0; j < v.size(); ++j) {
          v[j] = config.momentum * v[j] - config.learning_rate * g[j];
          theta[j] += v[j];
        }
      }
    }
    if (on_epoch) on_epoch(EpochStats{epoch + 1, loss_sum / static_cast<double>(batches)}, model);
  }
  return model;
}

// --- augmentation -------------------------------------------------------------

Tensor rotate_quarter_turns(const Tensor& pixels, int quarter_turns) {
  if (pixels.rank() != 3) throw ShapeError("rotate: expected [C,H,W], got " + shape_string(pixels.shape()));
  const int turns = ((quarter_turns % 4) + 4) % 4;
  if (turns == 0) return pixels;
  const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  const bool swap = turns % 2 == 1;
  const std::size_t oh = swap ? w : h, ow = swap ? h : w;
  Tensor out(Shape{c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t sy = 0, sx = 0;
        switch (turns) {
          case 1:  // counter-clockwise
            sy = x;
            sx = w - 1 - y;
            break;
          case 2:
            sy = h - 1 - y;
            sx = w - 1 - x;
            break;
          default:
            sy = h - 1 - x;
            sx = y;
            break;
        }
        out[(ch * oh + y) * ow + x] = pixels[(ch * h + sy) * w + sx];
      }
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& pixels) {
  if (pixels.rank() != 3) throw ShapeError("flip: expected [C,H,W], got " + shape_string(pixels.shape()));
  Tensor out(pixels.shape());
  const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  for (std::size_t r = 0; r < c * h; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = pixels[r * w + (w - 1 - x)];
  }
  return out;
}

Tensor flip_vertical(const Tensor& pixels) {
  if (pixels.rank() != 3) throw ShapeError("flip: expected [C,H,W], got " + shape_string(pixels.shape()));
  Tensor out(pixels.shape());
  const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = pixels[(ch * h + (h - 1 - y)) * w + x];
    }
  }
  return out;
}

AugmentDraw draw_augmentation(const Augmentation& flags, Rng& rng) {
  AugmentDraw d;
  if (flags.rotate) d.quarter_turns = static_cast<int>(rng.uniform_int(4));
  if (flags.hflip) d.hflip = rng.bernoulli(0.5);
  if (flags.vflip) d.vflip = rng.bernoulli(0.5);
  return d;
}

Tensor apply_augmentation(const Tensor& pixels, const AugmentDraw& draw) {
  Tensor out = rotate_quarter_turns(pixels, draw.quarter_turns);
  if (draw.hflip) out = flip_horizontal(out);
  if (draw.vflip) out = flip_vertical(out);
  return out;
}

LabeledImage augment(const LabeledImage& image, const Augmentation& flags, Rng& rng) {
  LabeledImage out = image;
  out.pixels = apply_augmentation(image.pixels, draw_augmentation(flags, rng));
  return out;
}

MixedSample mixup_pair(const LabeledImage& a, const LabeledImage& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValueError("mixup: lambda must be in [0,1]");
  require_same_shape(a.pixels, b.pixels, "mixup");
  for (int label : {a.label, b.label}) {
    if (label != 0 && label != 1) throw ValueError("mixup: label outside {0,1}");
  }
  MixedSample out{Tensor(a.pixels.shape()), {}};
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    out.pixels[i] = std::clamp(lambda * a.pixels[i] + (1.0 - lambda) * b.pixels[i], 0.0, 1.0);
  }
  out.soft_label[static_cast<std::size_t>(a.label)] += lambda;
  out.soft_label[static_cast<std::size_t>(b.label)] += 1.0 - lambda;
  return out;
}

}  // namespace advml
