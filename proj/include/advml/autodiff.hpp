#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "advml/tensor.hpp"

namespace advml {

class Tape;

/// Handle to a value recorded on a `Tape`. Cheap to copy; valid while the
/// tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient accumulated by `Tape::backward`. Throws TapeError if none.
  const Tensor& grad() const;
  bool has_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-use reverse-mode tape. Nodes are appended in execution order, so
/// the node list is topologically sorted by construction. `backward` walks it
/// once in reverse and then marks the tape consumed; build a new tape for the
/// next forward pass.
///
/// One tape per thread. Tapes are neither copyable nor movable because
/// `Var` handles point at them.
class Tape {
 public:
  /// Receives dL/d(output) and one accumulation buffer per input; the buffer
  /// is null when that input does not need a gradient.
  using BackwardFn = std::function<void(const Tensor& grad_output, std::span<Tensor* const> grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);

  /// Records an operation result. `backward` may be empty when no input
  /// requires a gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node that
  /// requires a gradient. Root must hold a single element.
  void backward(Var root);

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  void check_owned(Var v, const char* op) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Differentiable operations. All inputs must live on the same tape.

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding);
Var add_channel_bias(Var x, Var bias);
Var relu(Var x);
Var max_pool2x2(Var x);
/// [N, ...] -> [N, prod(...)]
Var flatten(Var x);
Var linear(Var x, Var weight, Var bias);
Var add(Var a, Var b);
Var scale(Var x, double factor);

/// Mean softmax cross-entropy of logits [N,C] against target rows [N,C]
/// (one-hot or soft, each row summing to 1). Log-sum-exp stabilised.
Var cross_entropy(Var logits, const Tensor& targets);

/// One-hot rows for integer labels in [0, classes). Throws ValueError otherwise.
Tensor one_hot(std::span<const int> labels, std::size_t classes = 2);

struct LossAndGradients {
  double loss = 0.0;
  /// One entry per requested parameter, same order.
  std::vector<Tensor> parameter_grads;
  /// Present when an input variable was passed.
  std::optional<Tensor> input_grad;
};

/// Cross-entropy of `logits` against `targets`, then a backward pass that
/// collects gradients for `params` and (optionally) `input`. Consumes the tape.
/// Throws NumericError when the loss or any collected gradient is not finite.
LossAndGradients loss_and_gradients(Var logits, const Tensor& targets, std::span<const Var> params,
                                    std::optional<Var> input = std::nullopt);

}  // namespace advml
