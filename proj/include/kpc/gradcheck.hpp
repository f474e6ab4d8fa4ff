#pragma once

#include <functional>

#include "kpc/tensor.hpp"

namespace kpc {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central-difference gradient estimate (f(x + h e_i) - f(x - h e_i)) / 2h.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double step = 1e-5);

// |a - b| / max(1, |a|, |b|), the comparison used by every gradient check here.
double grad_rel_error(double analytic, double numeric);

}  // namespace kpc

#include <cstdint>
#include <string>
#include <vector>

namespace kpc {

struct GradCheckOptions {
  std::size_t trials = 3;
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Test hook: perturb one analytic gradient so the suite must fail.
  bool inject_fault = false;
};

struct GradCheckResult {
  std::string op;
  double max_rel_error = 0.0;
  std::string worst_location;  // "<tensor>[<flat index>] trial <t>"
  std::size_t checked = 0;
  // Coordinates whose one-sided differences disagree, i.e. straddling a kink.
  std::size_t skipped = 0;
  bool passed = true;
};

/// Compares backward() with central differences for every differentiable
/// operation and for the full condensed-head loss.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts);

}  // namespace kpc
