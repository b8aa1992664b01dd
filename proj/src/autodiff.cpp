#include "advml/autodiff.hpp"

#include <cmath>
#include <string>

#include "advml/error.hpp"
#include "advml/simd/kernels.hpp"
#include "advml/tensor_ops.hpp"

namespace advml {

const Tensor& Var::value() const { return tape_->node(*this).value; }

bool Var::requires_grad() const { return tape_->node(*this).requires_grad; }

bool Var::has_grad() const { return tape_->node(*this).grad.has_value(); }

const Tensor& Var::grad() const {
  const auto& n = tape_->node(*this);
  if (!n.grad) throw TapeError("no gradient recorded for variable " + std::to_string(id_));
  return *n.grad;
}

const Tape::Node& Tape::node(Var v) const {
  check_owned(v, "access");
  return nodes_[v.id_];
}

void Tape::check_owned(Var v, const char* op) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw TapeError(std::string(op) + ": variable does not belong to this tape");
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw TapeError("tape already consumed by backward; start a new tape");
  nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw TapeError("tape already consumed by backward; start a new tape");
  Node n{std::move(value), std::nullopt, false, {}, {}};
  n.inputs.reserve(inputs.size());
  for (Var in : inputs) {
    check_owned(in, "record");
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) {
    if (!backward) throw TapeError("record: differentiable inputs but no backward function");
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (consumed_) throw TapeError("backward called twice on the same tape");
  if (nodes_.empty()) throw TapeError("backward called before any forward pass");
  check_owned(root, "backward");
  Node& top = nodes_[root.id_];
  if (top.value.size() != 1) {
    throw TapeError("backward root must be a scalar, got " + shape_string(top.value.shape()));
  }
  consumed_ = true;
  if (!top.requires_grad) return;
  top.grad = Tensor(top.value.shape(), 1.0);

  std::vector<Tensor*> grads;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad || !n.backward) continue;
    grads.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      Node& in = nodes_[n.inputs[k]];
      if (!in.requires_grad) continue;
      if (!in.grad) in.grad = Tensor(in.value.shape(), 0.0);
      grads[k] = &*in.grad;
    }
    n.backward(*n.grad, grads);
  }
}

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  Tensor out = ops::conv2d(input.value(), kernel.value(), stride, padding);
  return input.tape().record(std::move(out), {input, kernel},
                             [input, kernel, stride, padding](const Tensor& g, auto grads) {
                               ops::conv2d_backward(input.value(), kernel.value(), g, stride,
                                                    padding, grads[0], grads[1]);
                             });
}

Var add_channel_bias(Var x, Var bias) {
  Tensor out = ops::add_channel_bias(x.value(), bias.value());
  return x.tape().record(std::move(out), {x, bias}, [](const Tensor& g, auto grads) {
    const Shape& s = g.shape();
    const std::size_t area = s[2] * s[3];
    if (grads[0]) simd::active().axpy(1.0, g.storage().data(), grads[0]->storage().data(), g.size());
    if (grads[1]) {
      for (std::size_t n = 0; n < s[0]; ++n) {
        for (std::size_t c = 0; c < s[1]; ++c) {
          const double* plane = g.storage().data() + (n * s[1] + c) * area;
          double sum = 0.0;
          for (std::size_t i = 0; i < area; ++i) sum += plane[i];
          (*grads[1])[c] += sum;
        }
      }
    }
  });
}

Var relu(Var x) {
  Tensor out = ops::relu(x.value());
  return x.tape().record(std::move(out), {x}, [x](const Tensor& g, auto grads) {
    simd::active().relu_backward(x.value().storage().data(), g.storage().data(),
                                 grads[0]->storage().data(), g.size());
  });
}

Var max_pool2x2(Var x) {
  ops::PoolResult pooled = ops::max_pool2x2(x.value());
  return x.tape().record(std::move(pooled.output), {x},
                         [argmax = std::move(pooled.argmax)](const Tensor& g, auto grads) {
                           Tensor& gx = *grads[0];
                           for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
                         });
}

Var flatten(Var x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("flatten: scalar input");
  Tensor out = x.value().reshaped(Shape{s[0], x.value().size() / s[0]});
  return x.tape().record(std::move(out), {x}, [](const Tensor& g, auto grads) {
    simd::active().axpy(1.0, g.storage().data(), grads[0]->storage().data(), g.size());
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tensor out = ops::linear(x.value(), weight.value(), bias.value());
  return x.tape().record(std::move(out), {x, weight, bias}, [x, weight](const Tensor& g, auto grads) {
    const auto& k = simd::active();
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < out; ++j) {
        const double go = g[i * out + j];
        if (grads[0]) k.axpy(go, wv.storage().data() + j * in, grads[0]->storage().data() + i * in, in);
        if (grads[1]) k.axpy(go, xv.storage().data() + i * in, grads[1]->storage().data() + j * in, in);
        if (grads[2]) (*grads[2])[j] += go;
      }
    }
  });
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a.value();
  simd::active().axpy(1.0, b.value().storage().data(), out.storage().data(), out.size());
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, auto grads) {
    for (Tensor* gi : grads) {
      if (gi) simd::active().axpy(1.0, g.storage().data(), gi->storage().data(), g.size());
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out(x.shape());
  simd::active().axpy(factor, x.value().storage().data(), out.storage().data(), out.size());
  return x.tape().record(std::move(out), {x}, [factor](const Tensor& g, auto grads) {
    simd::active().axpy(factor, g.storage().data(), grads[0]->storage().data(), g.size());
  });
}

Var cross_entropy(Var logits, const Tensor& targets) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,C], got " + shape_string(z.shape()));
  require_same_shape(z, targets, "cross_entropy targets");
  const std::size_t n = z.dim(0), c = z.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = targets[i * c + j];
      if (!(t >= 0.0 && t <= 1.0)) {
        throw ValueError("cross_entropy: target probability outside [0,1] in row " + std::to_string(i));
      }
      row += t;
    }
    if (std::abs(row - 1.0) > 1e-9) {
      throw ValueError("cross_entropy: target row " + std::to_string(i) + " does not sum to 1");
    }
  }
  const Tensor log_p = ops::log_softmax(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < n * c; ++i) {
    if (targets[i] != 0.0) loss -= targets[i] * log_p[i];
  }
  loss /= static_cast<double>(n);
  return logits.tape().record(
      Tensor::scalar(loss), {logits}, [log_p, targets, n, c](const Tensor& g, auto grads) {
        const double coeff = g[0] / static_cast<double>(n);
        Tensor& gz = *grads[0];
        for (std::size_t i = 0; i < n; ++i) {
          double mass = 0.0;
          for (std::size_t j = 0; j < c; ++j) mass += targets[i * c + j];
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            gz[k] += coeff * (std::exp(log_p[k]) * mass - targets[k]);
          }
        }
      });
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) throw ValueError("one_hot: no labels");
  Tensor out(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValueError("label " + std::to_string(labels[i]) + " out of range [0," +
                       std::to_string(classes) + ")");
    }
    out[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return out;
}

LossAndGradients loss_and_gradients(Var logits, const Tensor& targets, std::span<const Var> params,
                                    std::optional<Var> input) {
  Tape& tape = logits.tape();
  Var loss = cross_entropy(logits, targets);
  LossAndGradients result;
  result.loss = loss.value()[0];
  if (!std::isfinite(result.loss)) throw NumericError("non-finite loss " + std::to_string(result.loss));
  tape.backward(loss);

  auto collect = [](Var v, const char* what) {
    Tensor g = v.has_grad() ? v.grad() : Tensor(v.shape(), 0.0);
    if (!g.all_finite()) throw NumericError(std::string("non-finite gradient for ") + what);
    return g;
  };
  result.parameter_grads.reserve(params.size());
  for (Var p : params) result.parameter_grads.push_back(collect(p, "parameter"));
  if (input) result.input_grad = collect(*input, "input");
  return result;
}

}  // namespace advml
