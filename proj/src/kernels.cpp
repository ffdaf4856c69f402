#include "sensiat/kernels.hpp"

namespace sensiat {

Kernel kernel_from_string(const std::string& name) {
  if (name == "epanechnikov") return Kernel::Epanechnikov;
  if (name == "gaussian" || name == "dnorm") return Kernel::Gaussian;
  if (name == "uniform") return Kernel::Uniform;
  if (name == "biweight") return Kernel::Biweight;
  throw ValidationError("unknown kernel: " + name);
}

std::string kernel_to_string(Kernel k) {
  switch (k) {
    case Kernel::Epanechnikov: return "epanechnikov";
    case Kernel::Gaussian: return "gaussian";
    case Kernel::Uniform: return "uniform";
    case Kernel::Biweight: return "biweight";
  }
  return "?";
}

}  // namespace sensiat
