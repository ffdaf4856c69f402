#include "sensiat/rng.hpp"

namespace sensiat {

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw ValidationError("gamma: shape must be > 0");
  if (shape < 1.0) {
    // boost: Gamma(a) = Gamma(a+1) * U^{1/a}
    return gamma(shape + 1.0) * std::pow(uniform(), 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

long RngStream::poisson(double mean) {
  if (!(mean >= 0.0)) throw ValidationError("poisson: mean must be >= 0");
  if (mean == 0.0) return 0;
  if (mean > 5000.0) throw ValidationError("poisson: mean too large for exact sampling");
  // product-of-uniforms method in log space (exact for any practical mean)
  double s = 0.0;
  long k = -1;
  do {
    s += std::log(uniform());
    ++k;
  } while (s > -mean);
  return k;
}

}  // namespace sensiat
