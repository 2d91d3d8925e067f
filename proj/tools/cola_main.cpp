// cola: command-line front end for corpus generation, label remapping,
// splitting, pre-training, finetuning and evaluation.

#include <CLI11.hpp>
#include <malloc.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "cola/error.hpp"
#include "cola/harness.hpp"
#include "cola/kv_config.hpp"
#include "cola/random.hpp"
#include "cola/synthgen.hpp"
#include "cola/taxonomy.hpp"

namespace fs = std::filesystem;
using namespace cola;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool quiet = false;

  std::uint64_t resolved_seed() const {
    if (seed) return *seed;
    if (const char* env = std::getenv("COLA_SEED")) {
      const auto v = parse_int(env);
      if (!v || *v < 0) throw Error(ErrorCode::InvalidConfig, std::string("COLA_SEED is not a seed: ") + env);
      return static_cast<std::uint64_t>(*v);
    }
    return 0;
  }

  ProgressFn progress() const {
    if (quiet) return {};
    return [](const std::string& line) { std::cerr << line << '\n'; };
  }
};

CoarseVariant variant_from(const std::string& text, const fs::path& map_path) {
  if (!text.empty()) {
    const auto v = parse_variant(text);
    if (!v) throw Error(ErrorCode::InvalidConfig, "unknown coarse variant '" + text + "'");
    return *v;
  }
  // <dataset>.coarse<N>.csv
  const std::string stem = map_path.stem().string();
  const auto dot = stem.rfind(".coarse");
  if (dot != std::string::npos) {
    if (const auto v = parse_variant(stem.substr(dot + 7))) return *v;
  }
  return CoarseVariant::Eight;
}

DatasetIndex open_dataset(const fs::path& root, const std::string& manifest) {
  DatasetLayout layout = detect_layout(root);
  if (!manifest.empty()) {
    layout.kind = LayoutKind::FlatManifest;
    layout.manifest_name = fs::absolute(manifest).string();
  }
  return index_dataset(root, layout);
}

void write_manifest(const fs::path& path, const DatasetIndex& index, const fs::path& root) {
  write_text_file(path, format_manifest(index, root));
}

ExperimentSpec load_spec(const std::string& path, const std::string& out, const Common& common) {
  ExperimentSpec spec = load_experiment_spec(path);
  if (!out.empty()) spec.output_dir = out;
  spec.featurize.jobs = common.jobs;
  return spec;
}

int run_gen(const std::string& config, const std::string& out, const Common& common) {
  const CorpusConfig cfg = parse_corpus_config(read_text_file(config));
  const auto indices = generate_corpus(cfg, common.resolved_seed(), out, common.jobs);
  for (const auto& index : indices) {
    std::cout << index.dataset_name << '\t' << index.scenes.size() << " scenes\t" << index.scan_count() << " scans\n";
  }
  return 0;
}

int run_validate_map(const std::string& map_path, const std::string& dataset, const std::string& variant) {
  const CoarseLabelSet coarse = coarse_set(variant_from(variant, map_path));
  const LabelMap map = load_label_map_file(map_path, coarse);
  const DatasetIndex index = open_dataset(dataset, "");
  std::set<std::uint16_t> ids = vocabulary_ids(index.fine_vocabulary);
  for (const auto& scene : index.scenes) {
    for (const auto& scan : scene.scans) {
      const PointScan points = load_scan(scan.scan_path);
      const LabelArray labels = load_labels(scan.label_path, points.size());
      ids.insert(labels.semantic.begin(), labels.semantic.end());
    }
  }
  const ValidationReport report = validate_label_map(map, ids);
  for (auto id : report.unmapped_fine_ids) std::cerr << "unmapped fine id " << id << '\n';
  for (auto id : report.out_of_range_coarse_ids) std::cerr << "coarse id " << id << " outside the " << coarse.size() << "-label set\n";
  for (auto id : report.uncovered_coarse_ids) std::cout << "note: no fine label maps to " << coarse.name_of(id) << '\n';
  if (!report.ok()) return kExitData;
  std::cout << map.dataset_name << ": " << map.entries.size() << " fine labels map onto " << coarse.size()
            << " coarse labels\n";
  return 0;
}

int run_remap(const std::string& map_path, const std::string& variant, const std::string& in, const std::string& out) {
  const LabelMap map = load_label_map_file(map_path, coarse_set(variant_from(variant, map_path)));
  const Bytes bytes = read_file(in);
  if (bytes.size() % 4 != 0) throw Error(ErrorCode::LengthMismatch, in + " is not a whole number of labels");
  const LabelArray labels = parse_label_file(bytes, bytes.size() / 4);
  write_file(out, write_label_file(remap(labels, map)));
  return 0;
}

int run_split(const std::string& dataset, const std::string& out, int percent, double test_fraction,
              const Common& common) {
  if (test_fraction < 0.10 || test_fraction > 0.20) {
    std::cerr << "warning: test fraction " << test_fraction << " is outside the usual 0.10-0.20 range\n";
  }
  const std::uint64_t seed = common.resolved_seed();
  const fs::path root = fs::absolute(dataset);
  const DatasetIndex index = open_dataset(root, "");
  const auto [train, test] = extract_test_split(index, test_fraction, derive_seed(seed, "test_split"));
  const PartialSplit partial = make_partial_split(train, percent, derive_seed(seed, "partial", static_cast<std::uint64_t>(percent)));
  fs::create_directories(out);
  write_manifest(fs::path(out) / "test.tsv", test, root);
  write_manifest(fs::path(out) / "train.tsv", partial.train, root);
  write_manifest(fs::path(out) / "val.tsv", partial.validation, root);
  std::cout << "test " << test.scenes.size() << " scenes / " << test.scan_count() << " scans; "
            << percent << "% keeps " << partial.scene_ids.size() << " scenes: train " << partial.train.scan_count()
            << " scans, val " << partial.validation.scan_count() << " scans\n";
  return 0;
}

int run_pretrain(const std::string& experiment, const std::string& arm_text, const std::string& out_dir,
                 const Common& common) {
  const auto arm = parse_arm(arm_text);
  if (!arm || *arm == Arm::Scratch) throw Error(ErrorCode::InvalidConfig, "arm must be cola, fine_label or multi_head");
  ExperimentSpec spec = load_spec(experiment, out_dir, common);
  if (std::find(spec.arms.begin(), spec.arms.end(), *arm) == spec.arms.end()) spec.arms.push_back(*arm);
  const Workspace ws(spec, common.progress());
  const PretrainResult r = pretrain(ws, *arm, common.resolved_seed());
  std::cout << "checkpoint " << r.checkpoint_path.string() << "\nvalidation mIoU " << r.val_curve.back()
            << " (majority baseline " << r.majority_baseline << ")\n";
  return 0;
}

int run_finetune(const std::string& experiment, const std::string& checkpoint_path, int fraction,
                 const std::string& out_dir, const Common& common) {
  ExperimentSpec spec = load_spec(experiment, out_dir, common);
  spec.arms = {Arm::Scratch};
  const Workspace ws(spec, common.progress());
  std::optional<Checkpoint> checkpoint;
  if (!checkpoint_path.empty()) checkpoint = load_checkpoint(read_file(checkpoint_path));
  const std::uint64_t seed = common.resolved_seed();
  const TargetSplit target = prepare_target(ws, fraction, seed);
  const FinetuneResult r = finetune(ws, checkpoint ? &*checkpoint : nullptr, target, fraction, seed);
  CheckpointStats stats;
  stats.features = r.stats;
  stats.seed = seed;
  stats.note = "finetuned " + spec.target;
  const fs::path model_path = spec.output_dir / ("model_" + spec.target + "_" + std::to_string(fraction) + "_seed" +
                                                 std::to_string(seed) + ".colaptk");
  fs::create_directories(model_path.parent_path());
  write_file(model_path, save_checkpoint(r.model, stats));
  std::cout << format_iou_table(r.test_confusion, target.space.names) << "model " << model_path.string() << '\n';
  return 0;
}

int run_eval(const std::string& model_path, const std::string& dataset, const std::string& manifest, double voxel_size,
             const Common& common) {
  const Checkpoint cp = load_checkpoint(read_file(model_path));
  const DatasetIndex index = open_dataset(dataset, manifest);
  FeaturizeOptions options;
  options.voxel_size = voxel_size;
  options.jobs = common.jobs;
  const LoadedDataset data = load_dataset(index, options);
  const LabelSpace space = fine_space(data.vocabulary);
  const auto scans = data.select(data.index);
  const Model model = cp.model();
  const ConfusionMatrix cm = evaluate(model.backbone, model.head, cp.stats.features, scans, space);
  std::cout << format_iou_table(cm, space.names);
  return 0;
}

int run_export(const std::string& model_path, const std::string& dataset, const std::string& manifest,
               double voxel_size, const std::string& out, const Common& common) {
  const Checkpoint cp = load_checkpoint(read_file(model_path));
  const DatasetIndex index = open_dataset(dataset, manifest);
  FeaturizeOptions options;
  options.voxel_size = voxel_size;
  options.jobs = common.jobs;
  const LoadedDataset data = load_dataset(index, options);
  const LabelSpace space = fine_space(data.vocabulary);
  const Model model = cp.model();
  std::ofstream file(out);
  if (!file) throw Error(ErrorCode::IoFailure, "cannot write " + out);
  file << "scene_id,scan_id,voxel,label";
  for (std::size_t c = 0; c < model.backbone.output_width(); ++c) file << ",f" << c;
  file << '\n';
  file.precision(9);
  for (const auto& scan : data.scans) {
    const Eigen::MatrixXd pen = extract_penultimate(model, standardize(scan.raw.features, cp.stats.features));
    const auto targets = voxel_targets(scan.raw, scan.point_labels, space);
    for (Eigen::Index r = 0; r < pen.rows(); ++r) {
      const int t = targets[static_cast<std::size_t>(r)];
      file << scan.scene_id << ',' << scan.scan_id << ',' << r << ',' << (t >= 0 ? space.names[static_cast<std::size_t>(t)] : "ignore");
      for (Eigen::Index c = 0; c < pen.cols(); ++c) file << ',' << pen(r, c);
      file << '\n';
    }
  }
  if (!file) throw Error(ErrorCode::IoFailure, "failed writing " + out);
  return 0;
}

int run_report(const std::string& experiment, const std::string& out_dir, const Common& common) {
  const ExperimentSpec spec = load_spec(experiment, out_dir, common);
  const ExperimentReport report = run_experiment(spec, common.progress());
  const std::string table = format_report_table(report);
  std::cout << table;
  fs::create_directories(spec.output_dir);
  write_text_file(spec.output_dir / "report.txt", table);
  write_text_file(spec.output_dir / "report.csv", format_report_csv(report));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees multi-megabyte matrices every step; keep them
  // on the heap instead of paying for fresh mmap pages each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"COLA coarse-label pre-training toolkit"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Seed (overrides COLA_SEED)");
    sub->add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--quiet", common.quiet, "No progress lines");
  };

  std::string config, out, map, dataset, variant, labels, experiment, arm, checkpoint, model, manifest;
  int percent = 100;
  double test_fraction = 0.2;
  double voxel_size = 0.2;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen->add_option("--config", config, "Corpus config")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();

  auto* vmap = app.add_subcommand("validate-map", "Check a label map against a dataset");
  vmap->add_option("--map", map, "Label map CSV")->required()->check(CLI::ExistingFile);
  vmap->add_option("--dataset", dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  vmap->add_option("--variant", variant, "five, eight or ten (default: from the file name)");

  auto* rmap = app.add_subcommand("remap", "Rewrite a label file into coarse labels");
  rmap->add_option("--map", map, "Label map CSV")->required()->check(CLI::ExistingFile);
  rmap->add_option("--labels", labels, "Input .label file")->required()->check(CLI::ExistingFile);
  rmap->add_option("--out", out, "Output .label file")->required();
  rmap->add_option("--variant", variant, "five, eight or ten (default: from the file name)");

  auto* split_cmd = app.add_subcommand("split", "Write test/train/val manifests");
  split_cmd->add_option("--dataset", dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  split_cmd->add_option("--out", out, "Output directory")->required();
  split_cmd->add_option("--percent", percent, "Partial level: 10, 25, 50 or 100");
  split_cmd->add_option("--test-fraction", test_fraction, "Scene fraction held out for test");

  auto* pre = app.add_subcommand("pretrain", "Pre-train one arm of an experiment");
  pre->add_option("--experiment", experiment, "Experiment spec")->required()->check(CLI::ExistingFile);
  pre->add_option("--arm", arm, "cola, fine_label or multi_head")->default_val("cola");
  pre->add_option("--out", out, "Output directory (default: from the spec)");

  auto* fine = app.add_subcommand("finetune", "Finetune on the experiment's target");
  fine->add_option("--experiment", experiment, "Experiment spec")->required()->check(CLI::ExistingFile);
  fine->add_option("--checkpoint", checkpoint, "Pre-trained checkpoint (omit to train from scratch)")
      ->check(CLI::ExistingFile);
  fine->add_option("--percent", percent, "Target data level: 10, 25, 50 or 100");
  fine->add_option("--out", out, "Output directory (default: from the spec)");

  auto* eval = app.add_subcommand("eval", "Per-class IoU of a model on a dataset");
  eval->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--manifest", manifest, "Restrict to the scans of this manifest")->check(CLI::ExistingFile);
  eval->add_option("--voxel-size", voxel_size, "Voxel edge in metres");

  auto* exp = app.add_subcommand("export-features", "Dump penultimate activations per voxel as CSV");
  exp->add_option("--model", model, "Model or checkpoint file")->required()->check(CLI::ExistingFile);
  exp->add_option("--dataset", dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  exp->add_option("--manifest", manifest, "Restrict to the scans of this manifest")->check(CLI::ExistingFile);
  exp->add_option("--voxel-size", voxel_size, "Voxel edge in metres");
  exp->add_option("--out", out, "Output CSV")->required();

  auto* rep = app.add_subcommand("report", "Run every arm, fraction and seed of an experiment");
  rep->add_option("--experiment", experiment, "Experiment spec")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", out, "Output directory (default: from the spec)");

  for (auto* sub : {gen, vmap, rmap, split_cmd, pre, fine, eval, exp, rep}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return run_gen(config, out, common);
    if (*vmap) return run_validate_map(map, dataset, variant);
    if (*rmap) return run_remap(map, variant, labels, out);
    if (*split_cmd) return run_split(dataset, out, percent, test_fraction, common);
    if (*pre) return run_pretrain(experiment, arm, out, common);
    if (*fine) return run_finetune(experiment, checkpoint, percent, out, common);
    if (*eval) return run_eval(model, dataset, manifest, voxel_size, common);
    if (*exp) return run_export(model, dataset, manifest, voxel_size, out, common);
    if (*rep) return run_report(experiment, out, common);
  } catch (const Error& e) {
    std::cerr << "cola: " << e.what() << '\n';
    if (e.code() == ErrorCode::InvalidConfig) return kExitUsage;
    return e.category() == ErrorCategory::Numeric ? kExitNumeric : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "cola: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
