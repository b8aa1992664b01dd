#pragma once

#include <cstddef>
#include <vector>

#include "advml/tensor.hpp"

// Tape-free forward kernels and their gradient helpers. The autodiff layer
// wraps these; inference calls them directly.
namespace advml::ops {

/// Cross-correlation of input [N,C,H,W] with kernel [F,C,kH,kW]. Output is
/// [N,F,H',W'] with H' = (H + 2*padding - kH) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

/// Accumulates dL/dinput and dL/dkernel (either may be null) given dL/doutput.
void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                     std::size_t stride, std::size_t padding, Tensor* grad_input,
                     Tensor* grad_kernel);

/// x [N,C,H,W] + bias[C] broadcast over N, H, W.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);

struct PoolResult {
  Tensor output;
  /// Flat input index chosen for each output element.
  std::vector<std::size_t> argmax;
};

/// 2x2 max pool with stride 2 over [N,C,H,W]; odd trailing rows/cols are
/// dropped. Ties go to the lowest flat input index.
PoolResult max_pool2x2(const Tensor& x);

/// x [N,K] times weight [M,K] transposed, plus bias [M].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Row-wise softmax over [N,C], max-subtracted.
Tensor softmax(const Tensor& logits);

/// Row-wise log-softmax over [N,C] via log-sum-exp.
Tensor log_softmax(const Tensor& logits);

}  // namespace advml::ops
