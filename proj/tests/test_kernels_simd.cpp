#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "sensiat/kernels.hpp"

using namespace sensiat;

TEST_CASE("kernel names round trip and dnorm aliases the gaussian") {
  for (Kernel k : {Kernel::Epanechnikov, Kernel::Gaussian, Kernel::Uniform,
                   Kernel::Biweight}) {
    CHECK(kernel_from_string(kernel_to_string(k)) == k);
  }
  CHECK(kernel_from_string("dnorm") == Kernel::Gaussian);
  CHECK_THROWS_AS(kernel_from_string("triangle"), ValidationError);
}

TEST_CASE("kernel values integrate to one and vanish outside support") {
  for (Kernel k : {Kernel::Epanechnikov, Kernel::Gaussian, Kernel::Uniform,
                   Kernel::Biweight}) {
    double acc = 0.0;
    const int n = 200001;
    const double lo = -10.0, hi = 10.0;
    for (int i = 0; i < n; ++i) {
      double u = lo + (hi - lo) * i / (n - 1);
      double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      acc += w * kernel_value(k, u);
    }
    acc *= (hi - lo) / (n - 1);
    // the uniform kernel's jump at +-1 limits the trapezoid rule to O(step)
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-4));
    if (k != Kernel::Gaussian) {
      CHECK(kernel_value(k, 1.0001) == 0.0);
      CHECK(kernel_value(k, -1.0001) == 0.0);
    }
  }
}

#if defined(__x86_64__)
TEST_CASE("avx2 kernel weights match the scalar reference") {
  if (!simd::avx2_available()) return;
  std::mt19937 rng(11);
  std::normal_distribution<double> g(0.0, 2.0);
  for (Kernel k : {Kernel::Epanechnikov, Kernel::Gaussian, Kernel::Uniform,
                   Kernel::Biweight}) {
    for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 1001u}) {
      std::vector<double> s(n), ws(n), wa(n);
      for (auto& v : s) v = g(rng);
      double center = g(rng), inv_h = std::abs(g(rng)) + 0.1;
      simd::scalar_ops().kernel_weights(k, s.data(), n, center, inv_h, ws.data());
      simd::avx2_ops().kernel_weights(k, s.data(), n, center, inv_h, wa.data());
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(ws[i] - wa[i]) < 1e-12);
      }
    }
  }
}

TEST_CASE("avx2 tilt sums match the scalar reference") {
  if (!simd::avx2_available()) return;
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> u(0.0, 6.0);
  for (std::size_t n : {1u, 5u, 8u, 257u}) {
    std::vector<double> w(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = u(rng) / 6.0;
      y[i] = u(rng);
    }
    for (double alpha : {-0.7, 0.0, 0.3, 2.0}) {
      double shift = *std::max_element(y.begin(), y.end());
      double a[3], b[3];
      simd::scalar_ops().tilt_sums(w.data(), y.data(), n, alpha, shift, a);
      simd::avx2_ops().tilt_sums(w.data(), y.data(), n, alpha, shift, b);
      for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(a[c] - b[c]) <= 1e-10 * std::max(1.0, std::abs(a[c])));
      }
    }
  }
}

TEST_CASE("runtime dispatch honours force_scalar") {
  if (!simd::avx2_available()) return;
  CHECK(std::string(simd::active_ops().name) == "avx2");
  simd::force_scalar(true);
  CHECK(std::string(simd::active_ops().name) == "scalar");
  simd::force_scalar(false);
  CHECK(std::string(simd::active_ops().name) == "avx2");
}
#endif

TEST_CASE("scalar tilt sums agree with direct summation") {
  std::vector<double> w = {0.5, 0.25, 0.25};
  std::vector<double> y = {0.0, 1.0, 2.0};
  double out[3];
  double alpha = 0.4, shift = 2.0;
  simd::scalar_ops().tilt_sums(w.data(), y.data(), 3, alpha, shift, out);
  double s0 = 0, s1 = 0, s2 = 0;
  for (int i = 0; i < 3; ++i) {
    double e = std::exp(alpha * (y[i] - shift));
    s0 += w[i];
    s1 += w[i] * e;
    s2 += w[i] * y[i] * e;
  }
  CHECK(out[0] == doctest::Approx(s0).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(s1).epsilon(1e-15));
  CHECK(out[2] == doctest::Approx(s2).epsilon(1e-15));
}
