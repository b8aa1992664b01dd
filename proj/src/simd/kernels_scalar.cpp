#include <algorithm>

#include "kernels_internal.hpp"

namespace advml::simd::detail {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* gy, double* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? gy[i] : 0.0;
}

void project_linf(const double* candidate, const double* anchor, double eps, double* out,
                  std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = std::min(std::max(candidate[i], anchor[i] - eps), anchor[i] + eps);
    out[i] = std::min(std::max(v, 0.0), 1.0);
  }
}

void sign_step(const double* x, const double* g, double step, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(g[i] > 0.0) - static_cast<double>(g[i] < 0.0);
    out[i] = x[i] + step * s;
  }
}

}  // namespace

const KernelTable kScalarTable{
    Isa::scalar, dot, axpy, relu, relu_backward, project_linf, sign_step,
};

}  // namespace advml::simd::detail
