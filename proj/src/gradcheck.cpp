#include "kpc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace kpc {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double step) {
  Tensor probe = x;
  probe.drop_grad();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(probe);
    probe[i] = orig - step;
    const double down = f(probe);
    probe[i] = orig;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace kpc
