#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace advml::simd {

/// Instruction-set variants of the inner-loop kernels.
enum class Isa { scalar, avx2 };

std::string_view to_string(Isa isa) noexcept;

/// Function table for the data-parallel inner loops used by the tensor core
/// and the attacks. Every variant must match the scalar reference:
/// bit-exactly for the elementwise kernels, and up to summation order for
/// `dot`.
struct KernelTable {
  Isa isa;

  /// sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y[i] += alpha * x[i]   (multiply then add, never fused)
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// y[i] = max(x[i], 0); NaN maps to 0
  void (*relu)(const double* x, double* y, std::size_t n);
  /// gx[i] += x[i] > 0 ? gy[i] : 0
  void (*relu_backward)(const double* x, const double* gy, double* gx, std::size_t n);
  /// out[i] = clamp(clamp(candidate[i], anchor[i] - eps, anchor[i] + eps), 0, 1)
  void (*project_linf)(const double* candidate, const double* anchor, double eps, double* out,
                       std::size_t n);
  /// out[i] = x[i] + step * sgn(g[i]), sgn(0) = 0
  void (*sign_step)(const double* x, const double* g, double step, double* out, std::size_t n);
};

const KernelTable& scalar_kernels() noexcept;

/// Null when the binary was built without the variant or the CPU lacks it.
const KernelTable* avx2_kernels() noexcept;

/// Table used by the library. Chosen once at startup: the best variant the
/// CPU supports, unless the ADVML_SIMD environment variable names one
/// ("scalar" or "avx2").
const KernelTable& active() noexcept;

/// Overrides the active table; returns false (and changes nothing) when the
/// variant is unavailable. Not thread-safe with respect to running kernels.
bool select(Isa isa) noexcept;

// Span conveniences over the active table.

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace advml::simd
