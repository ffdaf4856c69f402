#include <atomic>
#include <cmath>

#include "sensiat/kernels.hpp"

namespace sensiat::simd {

namespace {

void kernel_weights_scalar(Kernel k, const double* s, std::size_t n, double center,
                           double inv_h, double* w) {
  switch (k) {
    case Kernel::Gaussian:
      for (std::size_t i = 0; i < n; ++i) {
        double u = (s[i] - center) * inv_h;
        w[i] = 0.3989422804014326779 * std::exp(-0.5 * u * u);
      }
      break;
    case Kernel::Epanechnikov:
      for (std::size_t i = 0; i < n; ++i) {
        double u = (s[i] - center) * inv_h;
        w[i] = std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
      }
      break;
    case Kernel::Uniform:
      for (std::size_t i = 0; i < n; ++i) {
        double u = (s[i] - center) * inv_h;
        w[i] = std::abs(u) <= 1.0 ? 0.5 : 0.0;
      }
      break;
    case Kernel::Biweight:
      for (std::size_t i = 0; i < n; ++i) {
        double u = (s[i] - center) * inv_h;
        double t = 1.0 - u * u;
        w[i] = std::abs(u) <= 1.0 ? 0.9375 * t * t : 0.0;
      }
      break;
  }
}

void tilt_sums_scalar(const double* w, const double* y, std::size_t n, double alpha,
                      double shift, double out[3]) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = std::exp(alpha * (y[i] - shift));
    s0 += w[i];
    s1 += w[i] * e;
    s2 += w[i] * y[i] * e;
  }
  out[0] = s0;
  out[1] = s1;
  out[2] = s2;
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops{kernel_weights_scalar, tilt_sums_scalar, "scalar"};
  return ops;
}

namespace {
std::atomic<bool> g_force_scalar{false};
}

void force_scalar(bool on) { g_force_scalar.store(on); }

const Ops& active_ops() {
  if (g_force_scalar.load()) return scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
  if (avx2_available()) return avx2_ops();
#endif
  return scalar_ops();
}

}  // namespace sensiat::simd
