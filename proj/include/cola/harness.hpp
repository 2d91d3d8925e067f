#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cola/featurize.hpp"
#include "cola/lidar_io.hpp"
#include "cola/metrics.hpp"
#include "cola/model.hpp"
#include "cola/optim.hpp"
#include "cola/taxonomy.hpp"

namespace cola {

// ---------------------------------------------------------------------------
// Splits

/// Scene-level hold-out. The test side gets round(fraction * scenes) scenes,
/// at least one, and never all of them.
std::pair<DatasetIndex, DatasetIndex> extract_test_split(const DatasetIndex& index, double fraction, std::uint64_t seed);

struct PartialSplit {
  DatasetIndex train;
  DatasetIndex validation;
  std::vector<std::string> scene_ids;  ///< selected scenes, sorted
};

/// Keeps round(percent% of scenes) whole scenes, then splits their scans 70/30
/// into train and validation. percent is one of 10, 25, 50, 100.
PartialSplit make_partial_split(const DatasetIndex& index, int percent, std::uint64_t seed);

/// Number of scenes make_partial_split keeps.
std::size_t partial_scene_count(std::size_t n_scenes, int percent);

// ---------------------------------------------------------------------------
// Label spaces: raw label ids to dense class indices, -1 for ignore.

struct LabelSpace {
  std::vector<std::string> names;
  std::unordered_map<std::uint16_t, int> dense;

  std::size_t size() const { return names.size(); }
  int operator()(std::uint16_t raw) const {
    const auto it = dense.find(raw);
    return it == dense.end() ? -1 : it->second;
  }
};

/// Every non-zero id of the vocabulary, in ascending id order.
LabelSpace fine_space(const Vocabulary& vocabulary);
/// Fine ids through the map to coarse ids 1..K, densified to 0..K-1.
LabelSpace coarse_space(const LabelMap& map, const CoarseLabelSet& coarse);

// ---------------------------------------------------------------------------
// Featurized datasets

/// One featurized voxel grid of a scan. point_voxel[i] is the row of point i.
struct ScanView {
  Eigen::MatrixXd features;
  std::vector<std::uint32_t> point_voxel;
};

struct ScanData {
  std::string scene_id;
  std::string scan_id;
  std::vector<std::uint16_t> point_labels;  ///< raw fine ids
  ScanView raw;
  std::vector<ScanView> augmented;

  /// View used in training epoch e: raw, then each augmented view in turn.
  const ScanView& view_for_epoch(std::size_t epoch) const;
};

struct LoadedDataset {
  std::string name;
  Vocabulary vocabulary;
  DatasetIndex index;
  std::vector<ScanData> scans;
  std::map<std::pair<std::string, std::string>, std::size_t> position;

  const ScanData& scan(const std::string& scene_id, const std::string& scan_id) const;
  std::vector<const ScanData*> select(const DatasetIndex& subset) const;
};

struct FeaturizeOptions {
  double voxel_size = 0.2;
  std::size_t augment_views = 0;
  AugmentConfig augment;
  std::uint64_t augment_seed = 0;
  std::size_t jobs = 1;
};

LoadedDataset load_dataset(const DatasetIndex& index, const FeaturizeOptions& options);

/// Runs body(0..n-1) on up to `jobs` threads; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body);

/// Dense voxel targets of a view: majority of the mapped point labels.
std::vector<int> voxel_targets(const ScanView& view, std::span<const std::uint16_t> point_labels,
                               const LabelSpace& space);

/// Point-level confusion of head(backbone(standardize(features))) on the raw views.
ConfusionMatrix evaluate(const Backbone& backbone, const DenseLayer& head, const FeatureStats& stats,
                         std::span<const ScanData* const> scans, const LabelSpace& space);

/// Per-point dense predictions for one scan.
std::vector<int> predict_points(const Model& model, const FeatureStats& stats, const ScanData& scan);

// ---------------------------------------------------------------------------
// Experiment description

enum class Arm { Scratch, ColaPretrain, FineLabelPretrain, MultiHeadPretrain };

std::string_view arm_name(Arm arm);
std::optional<Arm> parse_arm(std::string_view text);

struct PhaseConfig {
  std::size_t epochs = 10;
  std::size_t batch_scans = 4;
  double base_lr = 0.4;
  double momentum = 0.9;
  ScheduleKind schedule = ScheduleKind::CosineAnneal;
  double warmup_fraction = 0.05;
  double lovasz_weight = 1.0;

  void validate(std::string_view phase) const;
  std::string canonical() const;
};

struct ExperimentSpec {
  std::string name = "experiment";
  /// When set, the corpus is generated from this config into <output_dir>/corpus.
  std::filesystem::path corpus_config;
  std::uint64_t corpus_seed = 0;
  /// Otherwise datasets are read from <corpus_dir>/<dataset>.
  std::filesystem::path corpus_dir;
  std::filesystem::path map_dir;
  std::filesystem::path output_dir = "cola_out";

  std::string target;
  std::vector<std::string> pretrain_datasets;
  /// FineLabelPretrain source; empty means the largest pre-training dataset.
  std::string fine_label_source;
  std::vector<Arm> arms{Arm::Scratch, Arm::ColaPretrain};
  CoarseVariant variant = CoarseVariant::Eight;
  std::vector<int> fractions{100};
  std::vector<std::uint64_t> seeds{0};

  double test_fraction = 0.2;
  double pretrain_val_fraction = 0.1;
  bool balance_datasets = false;
  std::vector<std::size_t> hidden{64, 64, 32};
  FeaturizeOptions featurize;
  PhaseConfig pretrain;
  PhaseConfig finetune{30, 2, 0.4, 0.9, ScheduleKind::CosineAnneal, 0.05, 1.0};

  void validate() const;
  std::filesystem::path dataset_root(const std::string& dataset) const;
  /// Everything that shapes finetuning except the initial parameters.
  std::uint64_t finetune_digest(int fraction) const;
};

/// Key-value experiment file; relative paths resolve against base_dir.
ExperimentSpec parse_experiment_spec(std::string_view text, const std::filesystem::path& base_dir);
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Phases

using ProgressFn = std::function<void(const std::string&)>;

/// Featurized datasets and label maps shared read-only by every cell of an
/// experiment. Construction generates the corpus when the spec asks for it,
/// then loads the target and every pre-training source.
class Workspace {
 public:
  explicit Workspace(ExperimentSpec spec, ProgressFn progress = {});

  const ExperimentSpec& spec() const { return spec_; }
  const LoadedDataset& dataset(const std::string& name) const;
  const LabelMap& label_map(const std::string& name) const;
  /// Digest of the pre-training sources' manifests and vocabularies.
  std::uint64_t corpus_digest() const { return corpus_digest_; }
  void log(const std::string& line) const;

 private:
  ExperimentSpec spec_;
  ProgressFn progress_;
  std::map<std::string, LoadedDataset> datasets_;
  std::map<std::string, LabelMap> maps_;
  std::uint64_t corpus_digest_ = 0;
};

struct PretrainResult {
  Arm arm = Arm::ColaPretrain;
  Checkpoint checkpoint;
  std::vector<double> val_curve;
  double majority_baseline = 0.0;
  std::filesystem::path checkpoint_path;
};

/// Trains one pre-training arm. Throws ValidationFailure if a source's labels
/// are not covered by its map and Diverged on a non-finite loss.
PretrainResult pretrain(const Workspace& ws, Arm arm, std::uint64_t seed);

struct TargetSplit {
  const LoadedDataset* data = nullptr;
  DatasetIndex test;
  PartialSplit partial;
  LabelSpace space;
};

TargetSplit prepare_target(const Workspace& ws, int fraction, std::uint64_t seed);

struct FinetuneResult {
  Model model;
  FeatureStats stats;
  std::vector<double> val_curve;
  ConfusionMatrix test_confusion{1};
  double test_miou = 0.0;
  std::uint64_t config_digest = 0;
};

/// Swaps the checkpoint head (or draws a fresh model when checkpoint is null),
/// trains every parameter on the target train split and scores the test split.
/// The backbone equality after the swap and the update of every layer are
/// checked; a violation throws ValidationFailure.
FinetuneResult finetune(const Workspace& ws, const Checkpoint* checkpoint, const TargetSplit& target, int fraction,
                        std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reports

struct CellResult {
  Arm arm = Arm::Scratch;
  int fraction = 100;
  std::uint64_t seed = 0;
  double test_miou = 0.0;
  std::vector<double> class_iou;  ///< NaN where the class is absent from the test split
  std::vector<double> val_curve;
  double pretrain_val_miou = -1.0;
  double pretrain_majority = -1.0;
  std::uint64_t config_digest = 0;
  std::filesystem::path checkpoint_path;
};

struct ExperimentReport {
  std::string name;
  std::vector<std::string> class_names;
  std::vector<Arm> arms;
  std::vector<int> fractions;
  std::vector<std::uint64_t> seeds;
  std::vector<CellResult> cells;

  const CellResult& cell(Arm arm, int fraction, std::uint64_t seed) const;
  double median_miou(Arm arm, int fraction) const;
  /// Median over seeds of (arm - Scratch); requires the Scratch arm.
  double median_delta(Arm arm, int fraction) const;
};

ExperimentReport run_experiment(const ExperimentSpec& spec, ProgressFn progress = {});

/// One block per fraction: arms as rows, per-seed mIoU and the median, each
/// followed by the difference to Scratch in parentheses.
std::string format_report_table(const ExperimentReport& report);
std::string format_report_csv(const ExperimentReport& report);

/// Median with the mean of the two middle values for even counts.
double median(std::vector<double> values);

}  // namespace cola
