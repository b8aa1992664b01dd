#include "advml/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "advml/error.hpp"
#include "advml/simd/kernels.hpp"

namespace advml::ops {
namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kernel_h, kernel_w;
  std::size_t out_h, out_w;
  std::size_t stride, padding;

  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t out_area() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, std::size_t stride,
                           std::size_t padding) {
  if (input.rank() != 4) {
    throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_string(input.shape()));
  }
  if (kernel.rank() != 4) {
    throw ShapeError("conv2d: kernel must be [F,C,kH,kW], got " + shape_string(kernel.shape()));
  }
  if (stride == 0) throw ValueError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.filters = kernel.dim(0);
  g.kernel_h = kernel.dim(2);
  g.kernel_w = kernel.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (kernel.dim(1) != g.channels) {
    throw ShapeError("conv2d: channel mismatch, input has C=" + std::to_string(g.channels) + " but kernel has C=" +
                     std::to_string(kernel.dim(1)));
  }
  if (g.kernel_h > g.height + 2 * padding) {
    throw ShapeError("conv2d: kH=" + std::to_string(g.kernel_h) + " exceeds padded H=" +
                     std::to_string(g.height + 2 * padding));
  }
  if (g.kernel_w > g.width + 2 * padding) {
    throw ShapeError("conv2d: kW=" + std::to_string(g.kernel_w) + " exceeds padded W=" +
                     std::to_string(g.width + 2 * padding));
  }
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

// col[k, p] for k = (c, i, j) and p = (oh, ow); zero where the window
// reaches into padding.
void im2col(const ConvGeometry& g, const double* image, double* col) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j, ++row) {
        double* out = col + row * g.out_area();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oh * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ow * g.stride + j) -
                                     static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.height) &&
                                x < static_cast<std::ptrdiff_t>(g.width);
            out[oh * g.out_w + ow] =
                inside ? plane[static_cast<std::size_t>(y) * g.width + static_cast<std::size_t>(x)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* image) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j, ++row) {
        const double* in = col + row * g.out_area();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oh * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ow * g.stride + j) -
                                     static_cast<std::ptrdiff_t>(g.padding);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
            plane[static_cast<std::size_t>(y) * g.width + static_cast<std::size_t>(x)] +=
                in[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, padding);
  const auto& k = simd::active();
  Tensor output(Shape{g.batch, g.filters, g.out_h, g.out_w});
  std::vector<double> col(g.patch_size() * g.out_area());
  const std::size_t image_size = g.channels * g.height * g.width;
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, input.storage().data() + n * image_size, col.data());
    for (std::size_t f = 0; f < g.filters; ++f) {
      double* out = output.storage().data() + (n * g.filters + f) * g.out_area();
      const double* weights = kernel.storage().data() + f * g.patch_size();
      for (std::size_t r = 0; r < g.patch_size(); ++r) {
        k.axpy(weights[r], col.data() + r * g.out_area(), out, g.out_area());
      }
    }
  }
  return output;
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                     std::size_t stride, std::size_t padding, Tensor* grad_input,
                     Tensor* grad_kernel) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, padding);
  if (grad_output.shape() != Shape{g.batch, g.filters, g.out_h, g.out_w}) {
    throw ShapeError("conv2d_backward: unexpected output gradient " +
                     shape_string(grad_output.shape()));
  }
  const auto& k = simd::active();
  std::vector<double> col(g.patch_size() * g.out_area());
  std::vector<double> grad_col(grad_input ? col.size() : 0);
  const std::size_t image_size = g.channels * g.height * g.width;
  for (std::size_t n = 0; n < g.batch; ++n) {
    if (grad_kernel) im2col(g, input.storage().data() + n * image_size, col.data());
    if (grad_input) std::fill(grad_col.begin(), grad_col.end(), 0.0);
    for (std::size_t f = 0; f < g.filters; ++f) {
      const double* gout = grad_output.storage().data() + (n * g.filters + f) * g.out_area();
      const double* weights = kernel.storage().data() + f * g.patch_size();
      double* gweights = grad_kernel ? grad_kernel->storage().data() + f * g.patch_size() : nullptr;
      for (std::size_t r = 0; r < g.patch_size(); ++r) {
        if (gweights) gweights[r] += k.dot(gout, col.data() + r * g.out_area(), g.out_area());
        if (grad_input) k.axpy(weights[r], gout, grad_col.data() + r * g.out_area(), g.out_area());
      }
    }
    if (grad_input) col2im_add(g, grad_col.data(), grad_input->storage().data() + n * image_size);
  }
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 4 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_channel_bias: " + shape_string(x.shape()) + " with bias " +
                     shape_string(bias.shape()));
  }
  Tensor out = x;
  const std::size_t area = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < x.dim(1); ++c) {
      double* plane = out.storage().data() + (n * x.dim(1) + c) * area;
      for (std::size_t i = 0; i < area; ++i) plane[i] += bias[c];
    }
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  simd::active().relu(x.storage().data(), out.storage().data(), x.size());
  return out;
}

PoolResult max_pool2x2(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) {
    throw ShapeError("max_pool2x2: input must be [N,C,H>=2,W>=2], got " + shape_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult result{Tensor(Shape{x.dim(0), x.dim(1), oh, ow}), {}};
  result.argmax.resize(result.output.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c, ++o) {
        // Scan order is increasing flat index, and only a strictly larger
        // value replaces the current best.
        const std::size_t candidates[4] = {
            base + 2 * r * w + 2 * c, base + 2 * r * w + 2 * c + 1,
            base + (2 * r + 1) * w + 2 * c, base + (2 * r + 1) * w + 2 * c + 1};
        std::size_t best = candidates[0];
        for (std::size_t q = 1; q < 4; ++q) {
          if (x[candidates[q]] > x[best]) best = candidates[q];
        }
        result.output[o] = x[best];
        result.argmax[o] = best;
      }
    }
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != x.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: x " + shape_string(x.shape()) + ", weight " +
                     shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  const auto& k = simd::active();
  Tensor y(Shape{n, out});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.storage().data() + i * in;
    for (std::size_t j = 0; j < out; ++j) {
      y[i * out + j] = k.dot(weight.storage().data() + j * in, row, in) + bias[j];
    }
  }
  return y;
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("log_softmax: expected [N,C], got " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.storage().data() + i * c;
    const double peak = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - peak);
    const double lse = peak + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax: expected [N,C], got " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.storage().data() + i * c;
    const double peak = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - peak);
      sum += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= sum;
  }
  return out;
}

}  // namespace advml::ops
