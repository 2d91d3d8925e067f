#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

#include "cola/error.hpp"
#include "cola/harness.hpp"
#include "cola/kv_config.hpp"
#include "cola/random.hpp"

namespace cola {

namespace fs = std::filesystem;

namespace {

DatasetIndex subset_of(const DatasetIndex& index, const std::vector<std::string>& scene_ids) {
  DatasetIndex out;
  out.dataset_name = index.dataset_name;
  out.fine_vocabulary = index.fine_vocabulary;
  for (const auto& scene : index.scenes) {
    if (std::binary_search(scene_ids.begin(), scene_ids.end(), scene.scene_id)) out.scenes.push_back(scene);
  }
  return out;
}

std::vector<std::string> shuffled_scene_ids(const DatasetIndex& index, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& scene : index.scenes) ids.push_back(scene.scene_id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(ids));
  return ids;
}

}  // namespace

std::pair<DatasetIndex, DatasetIndex> extract_test_split(const DatasetIndex& index, double fraction,
                                                         std::uint64_t seed) {
  const std::size_t n = index.scenes.size();
  if (n < 2) throw Error(ErrorCode::TooFewScenes, index.dataset_name + " has " + std::to_string(n) + " scene(s)");
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorCode::InvalidConfig, "test fraction must be in (0, 1)");
  const auto wanted = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  const std::size_t n_test = std::clamp<std::size_t>(wanted, 1, n - 1);

  auto ids = shuffled_scene_ids(index, seed);
  std::vector<std::string> test(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::string> train(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {subset_of(index, train), subset_of(index, test)};
}

std::size_t partial_scene_count(std::size_t n_scenes, int percent) {
  if (percent != 10 && percent != 25 && percent != 50 && percent != 100) {
    throw Error(ErrorCode::InvalidConfig, "partial level must be 10, 25, 50 or 100, got " + std::to_string(percent));
  }
  // Round half up in integer arithmetic.
  const std::size_t k = (n_scenes * static_cast<std::size_t>(percent) + 50) / 100;
  return std::max<std::size_t>(k, 1);
}

PartialSplit make_partial_split(const DatasetIndex& index, int percent, std::uint64_t seed) {
  const std::size_t n = index.scenes.size();
  const std::size_t k = partial_scene_count(n, percent);
  if (n == 0 || k > n) throw Error(ErrorCode::TooFewScenes, index.dataset_name + " has no scenes to select");

  PartialSplit split;
  auto ids = shuffled_scene_ids(index, derive_seed(seed, "scenes"));
  split.scene_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(split.scene_ids.begin(), split.scene_ids.end());
  const DatasetIndex kept = subset_of(index, split.scene_ids);

  std::vector<std::pair<std::size_t, std::size_t>> scans;  // (scene, scan) positions in kept
  for (std::size_t s = 0; s < kept.scenes.size(); ++s) {
    for (std::size_t j = 0; j < kept.scenes[s].scans.size(); ++j) scans.emplace_back(s, j);
  }
  Rng rng(derive_seed(seed, "train_val"));
  rng.shuffle(std::span(scans));
  const std::size_t m = scans.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(m)));
  n_train = m >= 2 ? std::clamp<std::size_t>(n_train, 1, m - 1) : m;
  std::sort(scans.begin(), scans.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(scans.begin() + static_cast<std::ptrdiff_t>(n_train), scans.end());

  auto build = [&](auto first, auto last) {
    DatasetIndex out;
    out.dataset_name = index.dataset_name;
    out.fine_vocabulary = index.fine_vocabulary;
    for (auto it = first; it != last; ++it) {
      const Scene& scene = kept.scenes[it->first];
      if (out.scenes.empty() || out.scenes.back().scene_id != scene.scene_id) out.scenes.push_back({scene.scene_id, {}});
      out.scenes.back().scans.push_back(scene.scans[it->second]);
    }
    return out;
  };
  split.train = build(scans.begin(), scans.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.validation = build(scans.begin() + static_cast<std::ptrdiff_t>(n_train), scans.end());
  return split;
}

LabelSpace fine_space(const Vocabulary& vocabulary) {
  LabelSpace space;
  for (const auto& [id, name] : vocabulary) {
    if (id == kIgnoreLabel) continue;
    space.dense[id] = static_cast<int>(space.names.size());
    space.names.push_back(name);
  }
  return space;
}

LabelSpace coarse_space(const LabelMap& map, const CoarseLabelSet& coarse) {
  LabelSpace space;
  for (const auto& label : coarse.labels) space.names.push_back(label.name);
  for (const auto& [fine, c] : map.entries) {
    if (c != kIgnoreLabel && coarse.contains(c)) space.dense[fine] = static_cast<int>(c) - 1;
  }
  return space;
}

const ScanView& ScanData::view_for_epoch(std::size_t epoch) const {
  const std::size_t k = epoch % (augmented.size() + 1);
  return k == 0 ? raw : augmented[k - 1];
}

const ScanData& LoadedDataset::scan(const std::string& scene_id, const std::string& scan_id) const {
  const auto it = position.find({scene_id, scan_id});
  if (it == position.end()) {
    throw Error(ErrorCode::InvalidConfig, name + " has no scan " + scene_id + "/" + scan_id);
  }
  return scans[it->second];
}

std::vector<const ScanData*> LoadedDataset::select(const DatasetIndex& subset) const {
  std::vector<const ScanData*> out;
  for (const auto& scene : subset.scenes) {
    for (const auto& entry : scene.scans) out.push_back(&scan(scene.scene_id, entry.scan_id));
  }
  return out;
}

namespace {

ScanView make_view(const Cloud& cloud, double voxel_size) {
  const VoxelGrid grid = voxelize(cloud, voxel_size);
  ScanView view;
  view.features = compute_features(cloud, grid).values;
  view.point_voxel.assign(cloud.size(), 0);
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (std::uint32_t m : grid.members[c]) view.point_voxel[m] = static_cast<std::uint32_t>(c);
  }
  return view;
}

}  // namespace

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) body(i);
      } catch (...) {
        failures[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
}

LoadedDataset load_dataset(const DatasetIndex& index, const FeaturizeOptions& options) {
  options.augment.validate();
  LoadedDataset data;
  data.name = index.dataset_name;
  data.vocabulary = index.fine_vocabulary;
  data.index = index;
  std::vector<std::pair<const Scene*, const ScanEntry*>> entries;
  for (const auto& scene : index.scenes) {
    for (const auto& entry : scene.scans) entries.emplace_back(&scene, &entry);
  }
  data.scans.resize(entries.size());
  parallel_for(entries.size(), options.jobs, [&](std::size_t i) {
    const auto [scene, entry] = entries[i];
    const PointScan scan = load_scan(entry->scan_path);
    const LabelArray labels = load_labels(entry->label_path, scan.size());
    const Cloud cloud = to_cloud(scan);
    ScanData& sd = data.scans[i];
    sd.scene_id = scene->scene_id;
    sd.scan_id = entry->scan_id;
    sd.point_labels = labels.semantic;
    sd.raw = make_view(cloud, options.voxel_size);
    for (std::size_t v = 0; v < options.augment_views; ++v) {
      const std::uint64_t seed = derive_seed(options.augment_seed, data.name, sd.scene_id, sd.scan_id, v);
      sd.augmented.push_back(make_view(augment(cloud, options.augment, seed), options.voxel_size));
    }
  });
  for (std::size_t i = 0; i < data.scans.size(); ++i) {
    data.position[{data.scans[i].scene_id, data.scans[i].scan_id}] = i;
  }
  return data;
}

std::vector<int> voxel_targets(const ScanView& view, std::span<const std::uint16_t> point_labels,
                               const LabelSpace& space) {
  if (point_labels.size() != view.point_voxel.size()) {
    throw Error(ErrorCode::LengthMismatch, "labels do not match the view's points");
  }
  std::vector<std::pair<std::uint32_t, int>> pairs;
  pairs.reserve(point_labels.size());
  for (std::size_t i = 0; i < point_labels.size(); ++i) {
    const int d = space(point_labels[i]);
    if (d >= 0) pairs.emplace_back(view.point_voxel[i], d);
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> targets(static_cast<std::size_t>(view.features.rows()), -1);
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j] == pairs[i]) ++j;
    const std::uint32_t voxel = pairs[i].first;
    const std::size_t count = j - i;
    if (i == 0 || pairs[i - 1].first != voxel) best_count = 0;
    // Runs are in ascending label order, so a strict improvement keeps the smallest id on ties.
    if (count > best_count) {
      best_count = count;
      targets[voxel] = pairs[i].second;
    }
    i = j;
  }
  return targets;
}

namespace {

std::vector<int> predict_voxels(const Backbone& backbone, const DenseLayer& head, const FeatureStats& stats,
                                const Eigen::MatrixXd& features) {
  const BackboneCache cache = forward_backbone(backbone, standardize(features, stats));
  const Eigen::MatrixXd logits = apply_dense(head, cache.penultimate());
  std::vector<int> pred(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index c;
    logits.row(r).maxCoeff(&c);
    pred[static_cast<std::size_t>(r)] = static_cast<int>(c);
  }
  return pred;
}

}  // namespace

std::vector<int> predict_points(const Model& model, const FeatureStats& stats, const ScanData& scan) {
  const auto voxels = predict_voxels(model.backbone, model.head, stats, scan.raw.features);
  std::vector<int> out(scan.raw.point_voxel.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = voxels[scan.raw.point_voxel[i]];
  return out;
}

ConfusionMatrix evaluate(const Backbone& backbone, const DenseLayer& head, const FeatureStats& stats,
                         std::span<const ScanData* const> scans, const LabelSpace& space) {
  if (static_cast<std::size_t>(head.fan_out()) != space.size()) {
    throw Error(ErrorCode::ClassCountMismatch, "head predicts " + std::to_string(head.fan_out()) +
                                                   " classes, label space has " + std::to_string(space.size()));
  }
  ConfusionMatrix cm(space.size());
  std::vector<int> pred, gt;
  for (const ScanData* scan : scans) {
    const auto voxels = predict_voxels(backbone, head, stats, scan->raw.features);
    pred.resize(scan->point_labels.size());
    gt.resize(scan->point_labels.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = voxels[scan->raw.point_voxel[i]];
      gt[i] = space(scan->point_labels[i]);
    }
    cm.add(pred, gt, -1);
  }
  return cm;
}

std::string_view arm_name(Arm arm) {
  switch (arm) {
    case Arm::Scratch: return "scratch";
    case Arm::ColaPretrain: return "cola";
    case Arm::FineLabelPretrain: return "fine_label";
    case Arm::MultiHeadPretrain: return "multi_head";
  }
  return "?";
}

std::optional<Arm> parse_arm(std::string_view text) {
  for (Arm a : {Arm::Scratch, Arm::ColaPretrain, Arm::FineLabelPretrain, Arm::MultiHeadPretrain}) {
    if (arm_name(a) == text) return a;
  }
  return std::nullopt;
}

void PhaseConfig::validate(std::string_view phase) const {
  const std::string p(phase);
  if (epochs < 1) throw Error(ErrorCode::InvalidConfig, p + ": epochs must be at least 1");
  if (batch_scans < 1) throw Error(ErrorCode::InvalidConfig, p + ": batch_scans must be at least 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw Error(ErrorCode::InvalidConfig, p + ": lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::InvalidConfig, p + ": momentum must be in [0, 1)");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, p + ": warmup_fraction must be in [0, 1)");
  }
  if (!(lovasz_weight >= 0.0)) throw Error(ErrorCode::InvalidConfig, p + ": lovasz_weight must be non-negative");
}

std::string PhaseConfig::canonical() const {
  std::ostringstream out;
  out.precision(17);
  out << "epochs=" << epochs << ";batch=" << batch_scans << ";lr=" << base_lr << ";momentum=" << momentum
      << ";schedule=" << schedule_name(schedule) << ";warmup=" << warmup_fraction << ";lovasz=" << lovasz_weight;
  return out.str();
}

void ExperimentSpec::validate() const {
  if (target.empty()) throw Error(ErrorCode::InvalidConfig, "no target dataset");
  if (std::find(pretrain_datasets.begin(), pretrain_datasets.end(), target) != pretrain_datasets.end()) {
    throw Error(ErrorCode::InvalidConfig, "target " + target + " is also listed for pre-training");
  }
  if (arms.empty() || seeds.empty() || fractions.empty()) {
    throw Error(ErrorCode::InvalidConfig, "arms, seeds and fractions must be non-empty");
  }
  const bool needs_sources = std::any_of(arms.begin(), arms.end(), [](Arm a) { return a != Arm::Scratch; });
  if (needs_sources && pretrain_datasets.empty()) {
    throw Error(ErrorCode::InvalidConfig, "pre-training arms need at least one pre-training dataset");
  }
  if (!fine_label_source.empty() &&
      std::find(pretrain_datasets.begin(), pretrain_datasets.end(), fine_label_source) == pretrain_datasets.end()) {
    throw Error(ErrorCode::InvalidConfig, "fine_label_source " + fine_label_source + " is not a pre-training dataset");
  }
  for (int f : fractions) partial_scene_count(1, f);
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error(ErrorCode::InvalidConfig, "test_fraction must be in (0, 1)");
  if (!(pretrain_val_fraction > 0.0 && pretrain_val_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "pretrain_val_fraction must be in (0, 1)");
  }
  if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(), [](std::size_t w) { return w == 0; })) {
    throw Error(ErrorCode::InvalidWidth, "hidden widths must be positive");
  }
  if (!(featurize.voxel_size > 0.0)) throw Error(ErrorCode::InvalidVoxelSize, "voxel_size must be positive");
  pretrain.validate("pretrain");
  finetune.validate("finetune");
}

fs::path ExperimentSpec::dataset_root(const std::string& dataset) const {
  if (!corpus_config.empty()) return output_dir / "corpus" / dataset;
  return corpus_dir / dataset;
}

std::uint64_t ExperimentSpec::finetune_digest(int fraction) const {
  std::ostringstream out;
  out.precision(17);
  out << "target=" << target << ";fraction=" << fraction << ";test=" << test_fraction
      << ";voxel=" << featurize.voxel_size << ";views=" << featurize.augment_views << ";hidden=";
  for (auto w : hidden) out << w << ',';
  out << ';' << finetune.canonical();
  return fnv1a(out.str());
}

namespace {

std::vector<std::int64_t> int_list(const KvSection& sec, const std::string& key) {
  std::vector<std::int64_t> out;
  for (const auto& item : sec.get_list(key)) {
    const auto v = parse_int(item);
    if (!v) throw Error(ErrorCode::ParseError, key + ": '" + item + "' is not an integer");
    out.push_back(*v);
  }
  return out;
}

void reject_unknown_keys(const KvSection& sec, std::initializer_list<std::string_view> known) {
  for (const auto& [key, value] : sec.entries) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      const std::string where = sec.name.empty() ? "experiment" : sec.kind + " " + sec.name;
      throw Error(ErrorCode::ParseError, where + ": unknown key '" + key + "'");
    }
  }
}

void read_phase(const KvSection& sec, PhaseConfig& phase) {
  reject_unknown_keys(sec, {"epochs", "batch_scans", "lr", "momentum", "schedule", "warmup_fraction", "lovasz_weight"});
  const auto epochs = sec.get_int_or("epochs", static_cast<std::int64_t>(phase.epochs));
  const auto batch = sec.get_int_or("batch_scans", static_cast<std::int64_t>(phase.batch_scans));
  if (epochs < 1 || batch < 1) throw Error(ErrorCode::InvalidConfig, sec.name + ": epochs and batch_scans must be >= 1");
  phase.epochs = static_cast<std::size_t>(epochs);
  phase.batch_scans = static_cast<std::size_t>(batch);
  phase.base_lr = sec.get_double_or("lr", phase.base_lr);
  phase.momentum = sec.get_double_or("momentum", phase.momentum);
  if (sec.has("schedule")) {
    const auto kind = parse_schedule(sec.get("schedule"));
    if (!kind) throw Error(ErrorCode::ParseError, sec.name + ": unknown schedule '" + sec.get("schedule") + "'");
    phase.schedule = *kind;
  }
  phase.warmup_fraction = sec.get_double_or("warmup_fraction", phase.warmup_fraction);
  phase.lovasz_weight = sec.get_double_or("lovasz_weight", phase.lovasz_weight);
}

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

}  // namespace

ExperimentSpec parse_experiment_spec(std::string_view text, const fs::path& base_dir) {
  const KvDocument doc = parse_kv(text);
  const KvSection& g = doc.globals();
  reject_unknown_keys(g, {"name", "corpus_config", "corpus_seed", "corpus_dir", "map_dir", "output_dir", "target",
                          "pretrain", "fine_label_source", "arms", "variant", "fractions", "seeds", "test_fraction",
                          "pretrain_val_fraction", "balance_datasets", "hidden", "voxel_size", "augment_views",
                          "augment.yaw_range", "augment.scale_min", "augment.scale_max", "augment.jitter",
                          "augment_seed"});
  for (const auto& sec : doc.sections) {
    if (&sec != &g && sec.kind != "phase") throw Error(ErrorCode::ParseError, "unknown section kind '" + sec.kind + "'");
  }
  ExperimentSpec spec;
  spec.name = g.get_or("name", spec.name);
  if (g.has("corpus_config")) spec.corpus_config = resolve(base_dir, g.get("corpus_config"));
  spec.corpus_seed = static_cast<std::uint64_t>(g.get_int_or("corpus_seed", 0));
  if (g.has("corpus_dir")) spec.corpus_dir = resolve(base_dir, g.get("corpus_dir"));
  if (spec.corpus_config.empty() && spec.corpus_dir.empty()) {
    throw Error(ErrorCode::InvalidConfig, "either corpus_config or corpus_dir is required");
  }
  spec.map_dir = resolve(base_dir, g.get("map_dir"));
  if (g.has("output_dir")) spec.output_dir = resolve(base_dir, g.get("output_dir"));
  spec.target = g.get("target");
  spec.pretrain_datasets = g.get_list_or("pretrain", {});
  spec.fine_label_source = g.get_or("fine_label_source", "");
  if (g.has("arms")) {
    spec.arms.clear();
    for (const auto& item : g.get_list("arms")) {
      const auto arm = parse_arm(item);
      if (!arm) throw Error(ErrorCode::ParseError, "unknown arm '" + item + "'");
      spec.arms.push_back(*arm);
    }
  }
  if (g.has("variant")) {
    const auto v = parse_variant(g.get("variant"));
    if (!v) throw Error(ErrorCode::ParseError, "unknown coarse variant '" + g.get("variant") + "'");
    spec.variant = *v;
  }
  if (g.has("fractions")) {
    spec.fractions.clear();
    for (auto f : int_list(g, "fractions")) spec.fractions.push_back(static_cast<int>(f));
  }
  if (g.has("seeds")) {
    spec.seeds.clear();
    for (auto s : int_list(g, "seeds")) spec.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  spec.test_fraction = g.get_double_or("test_fraction", spec.test_fraction);
  spec.pretrain_val_fraction = g.get_double_or("pretrain_val_fraction", spec.pretrain_val_fraction);
  spec.balance_datasets = g.get_bool_or("balance_datasets", spec.balance_datasets);
  if (g.has("hidden")) {
    spec.hidden.clear();
    for (auto w : int_list(g, "hidden")) {
      if (w < 1) throw Error(ErrorCode::InvalidWidth, "hidden widths must be positive");
      spec.hidden.push_back(static_cast<std::size_t>(w));
    }
  }
  spec.featurize.voxel_size = g.get_double_or("voxel_size", spec.featurize.voxel_size);
  const auto views = g.get_int_or("augment_views", 0);
  if (views < 0) throw Error(ErrorCode::InvalidConfig, "augment_views must be non-negative");
  spec.featurize.augment_views = static_cast<std::size_t>(views);
  spec.featurize.augment.yaw_range_deg = g.get_double_or("augment.yaw_range", spec.featurize.augment.yaw_range_deg);
  spec.featurize.augment.scale_min = g.get_double_or("augment.scale_min", spec.featurize.augment.scale_min);
  spec.featurize.augment.scale_max = g.get_double_or("augment.scale_max", spec.featurize.augment.scale_max);
  spec.featurize.augment.jitter_sigma = g.get_double_or("augment.jitter", spec.featurize.augment.jitter_sigma);
  spec.featurize.augment_seed = static_cast<std::uint64_t>(g.get_int_or("augment_seed", 0));

  for (const KvSection* sec : doc.of_kind("phase")) {
    if (sec->name == "pretrain") {
      read_phase(*sec, spec.pretrain);
    } else if (sec->name == "finetune") {
      read_phase(*sec, spec.finetune);
    } else {
      throw Error(ErrorCode::ParseError, "unknown phase '" + sec->name + "'");
    }
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_experiment_spec(const fs::path& path) {
  return parse_experiment_spec(read_text_file(path), path.parent_path());
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyBatch, "median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace cola
