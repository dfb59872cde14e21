#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vskel/architectures.hpp"
#include "vskel/io.hpp"
#include "vskel/losses.hpp"
#include "vskel/synthgen.hpp"
#include "vskel/tiling.hpp"

namespace vskel::harness {

namespace fs = std::filesystem;

enum class Scale { Desk, Paper };
enum class TrainMode { EndToEnd, Split };
enum class TuneMetric { Auto, Coverage, SkeletonError, Dice };

/// Raised for bad configuration values; the message names the key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  int experiment = 2;
  Scale scale = Scale::Desk;
  std::uint64_t seed = 7;

  std::vector<arch::Kind> kinds;           // empty: the experiment's rows
  std::optional<loss::LossKind> loss;      // unset: the experiment's loss
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t clstm_filters = 8;

  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  TrainMode train_mode = TrainMode::EndToEnd;
  std::size_t finetune_epochs = 0;  // split mode: extra end-to-end epochs

  std::size_t train_volumes = 10;
  std::size_t test_volumes = 5;
  double val_fraction = 0.10;
  Index3 volume_dims{128, 128, 16};
  Index3 tile_dims{64, 64, 16};
  double overlap = 0.0;
  std::array<double, 3> spacing = kDefaultSpacing;
  synth::PhantomParams phantom;

  std::vector<double> thresholds;  // ascending, inside (0, 1)
  TuneMetric tune_metric = TuneMetric::Auto;
  double sigma_um = loss::kDefaultSigmaUm;
  double min_branch_um = 10.0;
  double coverage_radius_um = 20.0;

  bool record_runtime = false;  // runtime_s column; off keeps tables byte-stable

  /// Defaults for an experiment at a scale.
  static ExperimentConfig preset(int experiment, Scale scale);

  /// Applies key=value settings; unknown keys and bad values throw ConfigError.
  void apply(const io::ConfigMap& values);
  void set(const std::string& key, const std::string& value);
  void validate() const;

  /// Every key with its current value, one "key=value" line each, in a fixed
  /// order. The config hash is taken over this text.
  std::string canonical() const;
  std::string hash() const;

  static std::vector<std::string> keys();
  std::size_t val_volume_count() const;
};

// ---- data ----------------------------------------------------------------------

struct Sample {
  std::string id;
  Volume image, mask, skeleton;
  SkeletonGraph graph;
};

struct Dataset {
  std::vector<Sample> train;  // gradient volumes
  std::vector<Sample> val;    // held-out training volumes (threshold tuning, val loss)
  std::vector<Sample> test;
};

/// Synthetic volumes from the seed sub-streams "train/<i>" and "test/<i>".
/// Validation volumes are the last training volumes, split at volume level.
Dataset make_dataset(const ExperimentConfig& cfg);

struct Tile {
  std::size_t volume = 0;
  Index3 origin{0, 0, 0};
};

std::vector<Tile> tile_index(const std::vector<Sample>& volumes, const Index3& volume_dims,
                             const Index3& tile_dims, double overlap);

enum class Target { Mask, Skeleton, Skeleton2D };

// ---- training ------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  std::string phase;  // "train", "cnn", "head", "finetune"
  double train_loss = 0.0;  // mean per voxel over the epoch
  double val_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> curve;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t val_gradient_tiles = 0;  // audit counter; always 0
};

struct TrainOptions {
  loss::LossKind loss = loss::LossKind::Wbce;
  Target target = Target::Skeleton;
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  Index3 tile_dims{64, 64, 16};
  double overlap = 0.5;
  double sigma_um = loss::kDefaultSigmaUm;
  std::uint64_t seed = 0;
  std::string phase = "train";
  /// Which part of the network is fitted: the whole network, the CNN alone,
  /// or the ConvLSTM head on the output of the CNN run in eval mode without
  /// gradients.
  enum class Part { Full, Cnn, HeadOnFrozenCnn } part = Part::Full;
};

/// Shuffled mini-batch Adam on the training tiles, validation loss after each
/// epoch, parameters restored to the best validation epoch at the end.
/// Throws std::runtime_error on a non-finite loss, naming epoch and step.
TrainReport train(arch::Network& net, const Dataset& data, const TrainOptions& opt);

/// Phase 1 fits the CNN to per-slice 2D skeletons, phase 2 fits the ConvLSTM
/// head on the frozen CNN output, optional phase 3 fine-tunes end to end.
TrainReport train_split(arch::Network& net, const Dataset& data, const TrainOptions& opt,
                        std::size_t finetune_epochs);

/// Per-voxel targets for one volume.
const Volume& target_of(const Sample& s, Target t);
Volume slice_skeletons(const Volume& mask);

// ---- inference and evaluation --------------------------------------------------

/// Probability map over a whole volume (padded to the network divisor).
Volume predict(arch::Network& net, const Volume& image);

struct TuneResult {
  double threshold = 0.0;
  double score = 0.0;
  std::vector<std::optional<double>> scores;  // per grid value; empty skeletons -> nullopt
};

class TuneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scores each threshold on the validation predictions and returns the best
/// one, the lowest threshold winning ties. Throws TuneError when every
/// threshold gives an empty skeleton.
TuneResult tune_threshold(const std::vector<Volume>& predictions, const std::vector<const Sample*>& truth,
                          TuneMetric metric, const std::vector<double>& grid, double min_branch_um,
                          double coverage_radius_um);

/// Score of one threshold (nullopt when a skeleton comes out empty).
std::optional<double> threshold_score(const std::vector<Volume>& predictions,
                                      const std::vector<const Sample*>& truth, TuneMetric metric,
                                      double threshold, double min_branch_um,
                                      double coverage_radius_um);

struct Evaluation {
  std::optional<double> dice, skeleton_error_um, coverage, node_distance_um;
  std::size_t empty_volumes = 0;
};

Evaluation evaluate(const std::vector<Volume>& predictions, const std::vector<const Sample*>& truth,
                    double threshold, bool segmentation, double min_branch_um,
                    double coverage_radius_um);

// ---- experiments ---------------------------------------------------------------

struct ResultRow {
  int experiment = 0;
  std::string architecture;
  std::string loss;
  std::optional<double> threshold, dice, skeleton_error_um, coverage, node_distance_um;
  std::string status = "ok";  // ok | partial | n/a | failed
  std::string config_hash;
  std::optional<double> runtime_s;
};

std::string results_header();
std::string format_row(const ResultRow& r);

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<fs::path> outputs;  // files written under the output directory
};

struct CellInfo {
  std::string architecture;  // row label, e.g. "U-2D+CLSTM (S)" or "Bidirectional"
  std::string loss;          // "bce", "w_bce" or "Dice"
  std::string tag;           // file stem for curves and checkpoints
};

/// The rows an experiment will emit, in order.
std::vector<CellInfo> experiment_cells(const ExperimentConfig& cfg);

/// Runs every cell of the configured experiment: train, tune on validation
/// volumes, evaluate on test volumes. A failing cell is recorded and the rest
/// continue. Writes results.tsv, per-cell curves and checkpoints, and
/// manifest.json into `out_dir`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                                const std::string& command = "experiment");

}  // namespace vskel::harness
