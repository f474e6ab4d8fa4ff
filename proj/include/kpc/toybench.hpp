#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kpc/condense.hpp"
#include "kpc/graph.hpp"

namespace kpc {

/// Synthetic proposal grids: each foreground class owns D fixed signature
/// vectors which are planted at D distinct cells over Gaussian noise.
struct ToyDatasetSpec {
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

  void validate() const;
};

struct ToyExample {
  Tensor x;
  int y_hat = 0;
  // 0 is background, foreground classes are 1..num_classes.
  int class_id = 0;
  // (center x, center y, width, height) of the planted cells' bounding
  // rectangle, each normalized by the grid extent. Zeros for background.
  std::array<double, 4> box_target{};
  // planted_points[j] holds signature j of the example's class.
  std::vector<GridPoint> planted_points;
};

struct ToyDataset {
  ToyDatasetSpec spec;
  std::vector<ToyExample> examples;
};

// signatures[c][j] is the C-vector of signature j of foreground class c + 1.
std::vector<std::vector<std::vector<double>>> class_signatures(const ToyDatasetSpec& spec);

/// Deterministic (train, test) pair; every example derives its randomness
/// from (seed, split, index) alone.
std::pair<ToyDataset, ToyDataset> generate_dataset(const ToyDatasetSpec& spec);

// Binary dataset file: 32-byte little-endian header then one record per example.
void write_dataset(const std::filesystem::path& path, const ToyDataset& data);
ToyDataset read_dataset(const std::filesystem::path& path);

enum class ModelKind { baseline, condensed };

struct ToyModelConfig {
  ModelKind kind = ModelKind::condensed;
  OkpdConfig okpd;
  HeadConfig head;
  BaselineConfig baseline;
  bool gather_refined = false;
  std::uint64_t init_seed = 7;
};

/// Either head, behind one interface for training and evaluation.
class ToyModel {
 public:
  explicit ToyModel(const ToyModelConfig& cfg);

  struct Forward {
    HeadOutputVars out;
    std::optional<CondensedForward> condensed;
  };

  Forward forward(Var x);
  ModelKind kind() const { return cfg_.kind; }
  const ToyModelConfig& config() const { return cfg_; }
  bool reg_per_class() const;
  std::size_t num_parts() const;

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  std::size_t scalar_count();

  CondensedModel& condensed() { return *condensed_; }
  BaselineModel& baseline() { return *baseline_; }

 private:
  ToyModelConfig cfg_;
  std::optional<CondensedModel> condensed_;
  std::optional<BaselineModel> baseline_;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double okpd_weight = 1.0;
  std::uint64_t seed = 3;
  bool use_ld = true;
  bool use_lu = true;
  // Divide the key-part losses by K instead of summing over parts.
  bool okpd_mean = false;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double det_loss = 0.0;
  double l_d = 0.0;
  double l_u = 0.0;
  double acc = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minibatch SGD with momentum over the detection loss, plus the weighted
/// key-part objective for condensed models. Throws DivergenceError on a
/// non-finite loss.
std::vector<EpochLog> train(ToyModel& model, const ToyDataset& data, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochLog& row);

struct EvalMetrics {
  double accuracy = 0.0;
  double box_error = 0.0;  // mean |offset error| over foreground examples
  std::optional<double> key_part_recall;
  double chance_level = 0.0;           // D*K/(H*W)
  double chance_level_tolerant = 0.0;  // uniform K points, Chebyshev tolerance 1
  double fg_peak = 0.0;
  double bg_peak = 0.0;
  double distinct_parts = 0.0;  // mean distinct key-part points on foregrounds
};

/// Fraction of planted cells lying within Chebyshev distance 1 of some
/// extracted point, pooled over examples.
double key_part_recall(const std::vector<std::vector<GridPoint>>& extracted,
                       const std::vector<std::vector<GridPoint>>& planted);

// Exact recall of K points drawn uniformly with replacement, averaged over
// every possible planted cell.
double chance_recall_tolerant(std::size_t height, std::size_t width, std::size_t num_parts);

EvalMetrics evaluate(ToyModel& model, const ToyDataset& data);

std::string format_metrics(const EvalMetrics& m);

// Binary 8-bit graymap (P5, maxval 255) of values in [0, 1].
void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t height,
               std::size_t width);
std::vector<double> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);

// Min-max normalization to [0, 1]; a constant map becomes 0.5 everywhere.
std::vector<double> normalize_unit(std::span<const double> values);

// Key parts shown in visualizations must exceed this confidence.
inline constexpr double kShownConfidence = 0.1;

/// Writes part_XX.pgm for each key-part confidence map, global.pgm for the
/// rectified channel-summed global-modeling activations (min-max normalized),
/// and keyparts.txt listing coordinates and confidences. Returns the graymap
/// paths in that order.
std::vector<std::filesystem::path> export_heatmaps(ToyModel& model, const ToyExample& example,
                                                   const std::filesystem::path& out_dir);

/// Flat little-endian float32 parameters plus "<path>.manifest" listing each
/// tensor's name, shape and byte offset. `header` lines are stored verbatim
/// as comments so the model can be rebuilt.
void save_params(const std::filesystem::path& path, ToyModel& model, const std::vector<std::string>& header);
// Returns the stored header lines.
std::vector<std::string> read_manifest_header(const std::filesystem::path& path);
void load_params(const std::filesystem::path& path, ToyModel& model);

}  // namespace kpc
