// AVX2 variants of the batch kernels.  Compiled with -mavx2 -mfma; selected
// at runtime only when the CPU reports AVX2 support.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

#include "sensiat/kernels.hpp"

namespace sensiat::simd {

namespace {

// Cephes-style double-precision exp, 4 lanes.  Accurate to ~2 ulp, which
// keeps SIMD/scalar differences far below the 1e-10 equivalence tolerance.
inline __m256d exp4(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);
  const __m256d max_x = _mm256_set1_pd(708.0);
  const __m256d min_x = _mm256_set1_pd(-708.0);

  __m256d xc = _mm256_min_pd(_mm256_max_pd(x, min_x), max_x);
  __m256d n = _mm256_round_pd(_mm256_mul_pd(xc, log2e),
                              _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, c1, xc);
  r = _mm256_fnmadd_pd(n, c2, r);

  __m256d z = _mm256_mul_pd(r, r);
  __m256d px = _mm256_fmadd_pd(p0, z, p1);
  px = _mm256_fmadd_pd(px, z, p2);
  px = _mm256_mul_pd(px, r);
  __m256d qx = _mm256_fmadd_pd(q0, z, q1);
  qx = _mm256_fmadd_pd(qx, z, q2);
  qx = _mm256_fmadd_pd(qx, z, q3);
  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));

  // scale by 2^n via the exponent field
  __m128i ni = _mm256_cvtpd_epi32(n);
  __m256i nl = _mm256_cvtepi32_epi64(ni);
  __m256i bias = _mm256_add_epi64(nl, _mm256_set1_epi64x(1023));
  __m256d scale = _mm256_castsi256_pd(_mm256_slli_epi64(bias, 52));
  __m256d out = _mm256_mul_pd(e, scale);

  // flush underflow to zero
  __m256d under = _mm256_cmp_pd(xc, _mm256_set1_pd(-707.9), _CMP_LE_OQ);
  return _mm256_andnot_pd(under, out);
}

void kernel_weights_avx2(Kernel k, const double* s, std::size_t n, double center,
                         double inv_h, double* w) {
  const __m256d vc = _mm256_set1_pd(center);
  const __m256d vh = _mm256_set1_pd(inv_h);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
  std::size_t i = 0;
  switch (k) {
    case Kernel::Gaussian: {
      const __m256d norm = _mm256_set1_pd(0.3989422804014326779);
      const __m256d mhalf = _mm256_set1_pd(-0.5);
      for (; i + 4 <= n; i += 4) {
        __m256d u = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(s + i), vc), vh);
        __m256d e = exp4(_mm256_mul_pd(mhalf, _mm256_mul_pd(u, u)));
        _mm256_storeu_pd(w + i, _mm256_mul_pd(norm, e));
      }
      break;
    }
    case Kernel::Epanechnikov: {
      const __m256d c = _mm256_set1_pd(0.75);
      for (; i + 4 <= n; i += 4) {
        __m256d u = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(s + i), vc), vh);
        __m256d t = _mm256_mul_pd(c, _mm256_fnmadd_pd(u, u, one));
        __m256d in = _mm256_cmp_pd(_mm256_and_pd(u, abs_mask), one, _CMP_LE_OQ);
        _mm256_storeu_pd(w + i, _mm256_and_pd(in, t));
      }
      break;
    }
    case Kernel::Uniform: {
      const __m256d c = _mm256_set1_pd(0.5);
      for (; i + 4 <= n; i += 4) {
        __m256d u = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(s + i), vc), vh);
        __m256d in = _mm256_cmp_pd(_mm256_and_pd(u, abs_mask), one, _CMP_LE_OQ);
        _mm256_storeu_pd(w + i, _mm256_and_pd(in, c));
      }
      break;
    }
    case Kernel::Biweight: {
      const __m256d c = _mm256_set1_pd(0.9375);
      for (; i + 4 <= n; i += 4) {
        __m256d u = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(s + i), vc), vh);
        __m256d t = _mm256_fnmadd_pd(u, u, one);
        __m256d v = _mm256_mul_pd(c, _mm256_mul_pd(t, t));
        __m256d in = _mm256_cmp_pd(_mm256_and_pd(u, abs_mask), one, _CMP_LE_OQ);
        _mm256_storeu_pd(w + i, _mm256_and_pd(in, v));
      }
      break;
    }
  }
  for (; i < n; ++i) {
    w[i] = kernel_value(k, (s[i] - center) * inv_h);
  }
}

void tilt_sums_avx2(const double* w, const double* y, std::size_t n, double alpha,
                    double shift, double out[3]) {
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d vs = _mm256_set1_pd(shift);
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d wv = _mm256_loadu_pd(w + i);
    __m256d yv = _mm256_loadu_pd(y + i);
    __m256d e = exp4(_mm256_mul_pd(va, _mm256_sub_pd(yv, vs)));
    __m256d we = _mm256_mul_pd(wv, e);
    s0 = _mm256_add_pd(s0, wv);
    s1 = _mm256_add_pd(s1, we);
    s2 = _mm256_fmadd_pd(we, yv, s2);
  }
  alignas(32) double b0[4], b1[4], b2[4];
  _mm256_store_pd(b0, s0);
  _mm256_store_pd(b1, s1);
  _mm256_store_pd(b2, s2);
  double t0 = (b0[0] + b0[1]) + (b0[2] + b0[3]);
  double t1 = (b1[0] + b1[1]) + (b1[2] + b1[3]);
  double t2 = (b2[0] + b2[1]) + (b2[2] + b2[3]);
  for (; i < n; ++i) {
    double e = std::exp(alpha * (y[i] - shift));
    t0 += w[i];
    t1 += w[i] * e;
    t2 += w[i] * y[i] * e;
  }
  out[0] = t0;
  out[1] = t1;
  out[2] = t2;
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops ops{kernel_weights_avx2, tilt_sums_avx2, "avx2"};
  return ops;
}

bool avx2_available() {
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
}

}  // namespace sensiat::simd

#endif  // x86_64
