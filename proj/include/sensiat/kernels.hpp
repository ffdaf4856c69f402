#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "sensiat/common.hpp"

namespace sensiat {

enum class Kernel { Epanechnikov, Gaussian, Uniform, Biweight };

Kernel kernel_from_string(const std::string& name);
std::string kernel_to_string(Kernel k);

// Pointwise kernel value kappa(u).
inline double kernel_value(Kernel k, double u) {
  switch (k) {
    case Kernel::Gaussian:
      return 0.3989422804014326779 * std::exp(-0.5 * u * u);
    case Kernel::Epanechnikov:
      return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    case Kernel::Uniform:
      return std::abs(u) <= 1.0 ? 0.5 : 0.0;
    case Kernel::Biweight: {
      if (std::abs(u) > 1.0) return 0.0;
      double t = 1.0 - u * u;
      return 0.9375 * t * t;
    }
  }
  return 0.0;
}

// Half-width of the kernel support; infinity for the Gaussian.
inline double kernel_support(Kernel k) {
  return k == Kernel::Gaussian ? std::numeric_limits<double>::infinity() : 1.0;
}

namespace simd {

// Batch kernels used in the inner loops.  Scalar reference implementations
// and an AVX2 variant are provided; the active set is chosen at runtime.
struct Ops {
  // w[i] = kappa((s[i] - center) * inv_h)
  void (*kernel_weights)(Kernel k, const double* s, std::size_t n, double center,
                         double inv_h, double* w);
  // out[0] = sum w[i]
  // out[1] = sum w[i] * exp(alpha * (y[i] - shift))
  // out[2] = sum w[i] * y[i] * exp(alpha * (y[i] - shift))
  void (*tilt_sums)(const double* w, const double* y, std::size_t n, double alpha,
                    double shift, double out[3]);
  const char* name;
};

const Ops& scalar_ops();
const Ops& active_ops();       // AVX2 when the CPU supports it, else scalar
void force_scalar(bool on);    // for equivalence tests and --no-simd

#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
bool avx2_available();
#endif

}  // namespace simd
}  // namespace sensiat
