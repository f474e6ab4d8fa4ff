#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kpc/accounting.hpp"
#include "kpc/toybench.hpp"

namespace kpc {

/// Flat key/value experiment settings shared by every CLI command. Keys map
/// one-to-one onto command-line flags of the same name.
struct RunConfig {
  // model
  std::string model = "condensed";
  // dataset
  std::size_t channels = 64;
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t num_classes = 4;
  std::size_t parts_per_class = 4;
  double signature_norm = 8.0;
  double noise_sigma = 1.0;
  std::size_t n_train = 1600;
  std::size_t n_test = 400;
  std::uint64_t seed = 1;
  double background_fraction = 0.25;
  // key-part discovery
  std::size_t num_parts = 4;
  std::size_t num_blocks = 2;
  std::size_t reduction = 8;
  std::size_t groups = 4;
  std::size_t dilation = 2;
  double alpha = 0.5;
  double epsilon = 0.1;
  bool gather_refined = false;
  // head
  std::size_t sub_len = 3;
  double channel_keep = 0.25;
  std::size_t hidden = 128;
  bool reg_per_class = true;
  std::uint64_t init_seed = 7;
  // training
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double okpd_weight = 1.0;
  std::uint64_t train_seed = 3;
  bool use_ld = true;
  bool use_lu = true;
  bool okpd_mean = false;

  ToyDatasetSpec dataset_spec() const;
  OkpdConfig okpd_config() const;
  HeadConfig head_config() const;
  BaselineConfig baseline_config() const;
  ToyModelConfig model_config() const;
  TrainConfig train_config() const;

  // Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();
  static std::string describe(const std::string& key);

  // Pretty-printed JSON object with every key.
  std::string dump() const;
  // Single-line JSON, used in parameter manifests.
  std::string dump_compact() const;
  static RunConfig parse(const std::string& json_text);
  // "default" yields the built-in defaults.
  static RunConfig load(const std::string& path_or_default);
};

}  // namespace kpc
