#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advml/autodiff.hpp"
#include "advml/classifier.hpp"
#include "advml/rng.hpp"
#include "advml/tensor_ops.hpp"

namespace advml::testkit {

struct GradCheck {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst_relative_error = 0.0;
};

inline double mean_cross_entropy(const Tensor& logits, const Tensor& targets) {
  const Tensor lp = ops::log_softmax(logits);
  double s = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) s -= targets[i] * lp[i];
  return s / static_cast<double>(logits.dim(0));
}

/// Central differences (h = 1e-5) against the tape gradients of the default
/// classifier on a small random batch with soft targets. Coordinates are
/// drawn across every parameter tensor and the input.
inline GradCheck gradient_check(std::size_t coordinates, std::uint64_t seed, double tolerance = 1e-4) {
  ClassifierModel model = ClassifierModel::initialize(Architecture{}, seed);
  Rng rng = Rng::stream(seed, "gradcheck");
  const std::size_t batch = 3;
  Tensor x(Shape{batch, 1, 32, 32});
  for (double& v : x.data()) v = rng.uniform();
  Tensor targets(Shape{batch, 2});
  for (std::size_t i = 0; i < batch; ++i) {
    const double lam = rng.uniform();
    targets.at({i, 0}) = lam;
    targets.at({i, 1}) = 1.0 - lam;
  }
  // Larger-than-init weights so the loss surface is not flat.
  for (auto& p : model.mutable_parameters()) {
    for (double& v : p.data()) v = 3.0 * v + 0.05 * (rng.uniform() - 0.5);
  }

  Tape tape;
  Var input = tape.leaf(x, true);
  auto pass = model.forward_trainable(tape, input);
  auto lg = loss_and_gradients(pass.logits, targets, pass.parameters, input);

  auto loss_at = [&]() { return mean_cross_entropy(model.logits(x), targets); };

  std::size_t total = x.size();
  for (const auto& p : model.parameters()) total += p.size();

  GradCheck out;
  const double h = 1e-5;
  for (std::size_t k = 0; k < coordinates; ++k) {
    std::size_t flat = rng.uniform_int(total);
    double* slot = nullptr;
    double analytic = 0.0;
    for (std::size_t t = 0; t < model.parameters().size() && slot == nullptr; ++t) {
      Tensor& p = model.mutable_parameters()[t];
      if (flat < p.size()) {
        slot = &p[flat];
        analytic = lg.parameter_grads[t][flat];
      } else {
        flat -= p.size();
      }
    }
    if (slot == nullptr) {
      slot = &x[flat];
      analytic = (*lg.input_grad)[flat];
    }
    const double saved = *slot;
    *slot = saved + h;
    const double up = loss_at();
    *slot = saved - h;
    const double down = loss_at();
    *slot = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    ++out.checked;
    if (rel < tolerance) ++out.passed;
    out.worst_relative_error = std::max(out.worst_relative_error, rel);
  }
  return out;
}

/// Two-class linear model z = W x + b, differentiable on a tape.
class LinearModel final : public DifferentiableModel {
 public:
  LinearModel(InputSpec spec, Tensor weight, Tensor bias) : spec_(spec), w_(std::move(weight)), b_(std::move(bias)) {}
  InputSpec input_spec() const override { return spec_; }
  Var forward(Tape& tape, Var images) const override {
    return linear(flatten(images), tape.leaf(w_), tape.leaf(b_));
  }
  Tensor logits(const Tensor& images) const {
    return ops::linear(images.reshaped({images.dim(0), images.size() / images.dim(0)}), w_, b_);
  }
  const Tensor& weight() const { return w_; }

 private:
  InputSpec spec_;
  Tensor w_, b_;
};

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("advml-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace advml::testkit
