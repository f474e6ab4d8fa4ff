#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kpc/condense.hpp"
#include "kpc/okpd.hpp"

namespace kpc {

enum class LayerKind { conv, fc, pool, gather, concat, activation };

const char* layer_kind_name(LayerKind kind);

/// One layer of a head as seen by the counter. Convolutions use the channel
/// and spatial extents; fc layers use in_channels/out_channels as D_in/D_out.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::fc;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_h = 1, in_w = 1;
  std::size_t out_h = 1, out_w = 1;
  std::size_t kernel = 1;
  std::size_t groups = 1;
  std::size_t dilation = 1;
  bool bias = true;
};

struct ReportRow {
  std::string layer;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct ParamReport {
  std::string title;
  std::vector<std::string> notes;
  std::vector<ReportRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
  // Set when the report is compared against a reference head.
  std::optional<std::uint64_t> baseline_params;

  // 1 - condensed / baseline.
  std::optional<double> reduction_ratio() const;
  // condensed / baseline.
  std::optional<double> size_ratio() const;
};

/// Closed-form per-layer parameter and per-proposal MAC counts.
/// conv: k^2 (C_in/g) C_out + C_out params, k^2 (C_in/g) C_out H_out W_out MACs.
/// fc:   D_in D_out + D_out params, D_in D_out MACs.
/// Pooling, gathering, concatenation and activations hold no parameters and
/// are counted as zero-MAC.
ParamReport count_params(const std::vector<LayerSpec>& layers);
// Same report; kept as a separate entry point for MAC-oriented callers.
ParamReport count_macs(const std::vector<LayerSpec>& layers);

std::vector<LayerSpec> okpd_layers(const OkpdConfig& okpd_cfg, std::size_t height, std::size_t width,
                                   const std::string& prefix = "okpd");
std::vector<LayerSpec> condensed_layers(const HeadConfig& head_cfg, const OkpdConfig& okpd_cfg);
std::vector<LayerSpec> baseline_two_fc_layers(std::size_t channels, std::size_t height, std::size_t width,
                                              std::size_t hidden, std::size_t cls_out, std::size_t reg_out);

ParamReport count_params_condensed(const HeadConfig& head_cfg, const OkpdConfig& okpd_cfg);

struct HeadPreset {
  std::string name;
  std::string description;
  std::vector<std::string> notes;
  std::vector<LayerSpec> layers;
  // Name of the reference preset for ratio reporting; empty for baselines.
  std::string baseline;
  // Condensed FPN-style presets carry their configs so they can be swept.
  std::optional<HeadConfig> head_cfg;
  std::optional<OkpdConfig> okpd_cfg;
};

std::vector<std::string> preset_names();
// Throws ConfigError for unknown names.
HeadPreset find_preset(const std::string& name);
ParamReport preset_report(const std::string& name);

struct SweepRow {
  std::size_t num_parts = 0;
  std::size_t sub_len = 0;
  std::uint64_t params = 0;
  double ratio = 0.0;  // condensed / baseline
};

/// Parameter totals over a (K, L) grid, holding every other setting fixed.
std::vector<SweepRow> sweep(const HeadConfig& base, const OkpdConfig& okpd_cfg, std::uint64_t baseline_params,
                            const std::vector<std::size_t>& ks, const std::vector<std::size_t>& ls);

std::string format_table(const ParamReport& report);
std::string format_csv(const ParamReport& report);
std::string format_sweep(const std::vector<SweepRow>& rows);

}  // namespace kpc
