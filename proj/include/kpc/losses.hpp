#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "kpc/graph.hpp"

namespace kpc {

// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, with d = a - b.
double smooth_l1(double a, double b);
// d/da of smooth_l1(a, b).
double smooth_l1_grad(double a, double b);

/// sum_i weights[i] * smooth_l1(values[i], targets[i]) as a scalar.
Var smooth_l1_sum(Var values, std::vector<double> targets, std::vector<double> weights);

// Squashed value at each map's row-major-first maximum; argmax positions are
// frozen for this forward pass.
Var map_peaks(Var maps);
// Spatial maximum of the channel-wise summed maps.
Var summed_peak(Var maps);

/// sum_{i,k} smooth_l1(peak of map k of example i, y_hat_i).
Var discriminative_loss(std::span<const Var> maps_batch, std::span<const int> labels);
/// sum_i y_hat_i * smooth_l1(max over cells of sum_k map_k, 1).
Var uniqueness_loss(std::span<const Var> maps_batch, std::span<const int> labels);
/// discriminative_loss + uniqueness_loss.
Var okpd_objective(std::span<const Var> maps_batch, std::span<const int> labels);

/// -log softmax(logits)[target].
Var cross_entropy(Var logits, std::size_t target);

/// Cross-entropy over v_cls plus smooth L1 over the target class's four box
/// outputs. Class 0 is background and carries no regression term.
Var toy_detection_loss(Var cls, Var reg, std::size_t target_class, const std::array<double, 4>& box_target,
                       bool reg_per_class);

}  // namespace kpc
