#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kpc/graph.hpp"
#include "kpc/okpd.hpp"

namespace kpc {

/// Condensed head geometry. num_parts is K, sub_len is L.
struct HeadConfig {
  std::size_t channels = 256;
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t num_parts = 16;
  std::size_t sub_len = 5;
  double channel_keep = 0.25;
  std::size_t hidden = 1024;
  std::size_t num_classes = 20;
  bool reg_per_class = true;

  std::size_t kept_channels() const;
  std::size_t key_part_len() const { return num_parts * channels + num_parts * height * width; }
  std::size_t global_len() const { return sub_len * sub_len * kept_channels(); }
  // Input width of the single hidden FC: K*C + K*H*W + L*L*C*keep.
  std::size_t descriptor_len() const { return key_part_len() + global_len(); }
  std::size_t cls_outputs() const { return num_classes + 1; }
  std::size_t reg_outputs() const { return reg_per_class ? 4 * num_classes : 4; }
  void validate() const;
};

struct HeadParams {
  Tensor global_w, global_b;  // 1x1 conv C -> C*keep
  Tensor fc_w, fc_b;          // descriptor -> hidden
  Tensor cls_w, cls_b;        // hidden -> classes + background
  Tensor reg_w, reg_b;        // hidden -> box offsets

  static HeadParams zeros(const HeadConfig& cfg);
  static HeadParams init(const HeadConfig& cfg, std::mt19937_64& rng);

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

struct HeadOutputVars {
  Var cls;
  Var reg;
};

struct HeadOutput {
  std::vector<double> cls;
  std::vector<double> reg;
};

HeadOutput to_output(const HeadOutputVars& vars);

/// Fibers of x at each key part (in key-part order), then the K full maps.
Var key_part_modeling(Var x, Var maps, const KeyPartSet& parts);

/// Adaptive pooling to L x L, 1x1 channel reduction, flatten.
Var global_modeling(Var x, HeadParams& params, const HeadConfig& cfg);

// Un-flattened (C*keep) x L x L activations of global modeling.
Var global_activations(Var x, HeadParams& params, const HeadConfig& cfg);

/// concat(z_k, z_g) -> FC -> relu -> {classifier, regressor}.
HeadOutputVars head_forward(Var z_k, Var z_g, HeadParams& params, const HeadConfig& cfg);

/// Everything needed to run the condensed head end to end.
struct CondensedModel {
  OkpdConfig okpd_cfg;
  HeadConfig head_cfg;
  OkpdParams okpd;
  HeadParams head;
  // Gather fibers from the concentration output instead of the raw input.
  bool gather_refined = false;

  static CondensedModel init(const OkpdConfig& okpd_cfg, const HeadConfig& head_cfg, std::uint64_t seed);
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  std::size_t scalar_count();
};

// Configs must describe the same C, K and spatial size.
void check_compatible(const OkpdConfig& okpd_cfg, const HeadConfig& head_cfg);

struct CondensedForward {
  HeadOutputVars out;
  Var raw_maps;
  Var maps;
  Var z_k;
  Var z_g;
  KeyPartSet parts;
};

CondensedForward full_condensed_forward(Var x, CondensedModel& model);

/// Conventional two-FC head on the flattened proposal grid, used as the
/// reference the condensed head is compared against.
struct BaselineConfig {
  std::size_t channels = 256;
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t hidden = 1024;
  std::size_t num_classes = 20;
  bool reg_per_class = true;

  std::size_t input_len() const { return channels * height * width; }
  std::size_t reg_outputs() const { return reg_per_class ? 4 * num_classes : 4; }
  void validate() const;
};

struct BaselineModel {
  BaselineConfig cfg;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b, cls_w, cls_b, reg_w, reg_b;

  static BaselineModel init(const BaselineConfig& cfg, std::uint64_t seed);
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  std::size_t scalar_count();
};

HeadOutputVars baseline_forward(Var x, BaselineModel& model);

}  // namespace kpc
