#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kpc/graph.hpp"
#include "kpc/tensor.hpp"

namespace kpc {

/// Key-part discovery network settings.
struct OkpdConfig {
  std::size_t channels = 256;
  std::size_t num_parts = 16;
  std::size_t num_blocks = 2;
  std::size_t reduction = 8;
  std::size_t groups = 32;
  std::size_t dilation = 2;
  double alpha = 0.5;
  double epsilon = 0.1;

  std::size_t reduced_channels() const { return channels / reduction; }
  void validate() const;
};

// One residual concentration block: 3x3 grouped dilated conv (C -> C/r), relu,
// 1x1 conv back to C, plus the block input.
struct ConcentrationBlock {
  Tensor reduce_w, reduce_b;
  Tensor restore_w, restore_b;
};

struct OkpdParams {
  std::vector<ConcentrationBlock> blocks;
  Tensor predict_w, predict_b;

  // All weights and biases zero.
  static OkpdParams zeros(const OkpdConfig& cfg);
  // Weights uniform in +-1/sqrt(fan_in), zero biases.
  static OkpdParams init(const OkpdConfig& cfg, std::mt19937_64& rng);

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  std::size_t scalar_count();
};

struct KeyPartSet {
  std::vector<GridPoint> points;
  std::vector<double> confidences;
};

Var concentration_forward(Var x, OkpdParams& params, const OkpdConfig& cfg);

// Raw (unsquashed) K x H x W confidence maps.
Var predict_confidence(Var refined, OkpdParams& params, const OkpdConfig& cfg);

/// Truncated maximum regularization, per map:
///   c -> max{0, (c + alpha) / (max{0, c_max + alpha - 1} + 1 + epsilon)}
/// c_max is the value at the row-major-first maximum, and gradients reach it
/// through the denominator as well as through its own numerator.
Var tmr_squash(Var raw, double alpha, double epsilon);
Tensor tmr_squash(const Tensor& raw, double alpha, double epsilon);

/// Per-map argmax of squashed K x H x W maps. Not differentiable.
KeyPartSet extract_key_parts(const Tensor& maps);

}  // namespace kpc
