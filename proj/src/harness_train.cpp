#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <set>
#include <sstream>

#include "cola/error.hpp"
#include "cola/kv_config.hpp"
#include "cola/harness.hpp"
#include "cola/losses.hpp"
#include "cola/random.hpp"
#include "cola/synthgen.hpp"

namespace cola {

namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

void ensure_corpus(const ExperimentSpec& spec, const ProgressFn& log) {
  const std::string text = read_text_file(spec.corpus_config);
  const CorpusConfig corpus = parse_corpus_config(text);
  const fs::path dir = spec.output_dir / "corpus";
  const std::string stamp = hex64(fnv1a(text, fnv1a(std::to_string(spec.corpus_seed)))) + "\n";
  const fs::path stamp_path = dir / "corpus.stamp";
  if (fs::exists(stamp_path) && read_text_file(stamp_path) == stamp) return;
  if (log) log("generating corpus into " + dir.string());
  generate_corpus(corpus, spec.corpus_seed, dir, spec.featurize.jobs);
  write_text_file(stamp_path, stamp);
}

bool same_bits(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_bits(const DenseLayer& a, const DenseLayer& b) {
  return same_bits(a.weight, b.weight) && a.bias.size() == b.bias.size() &&
         std::memcmp(a.bias.data(), b.bias.data(), sizeof(double) * static_cast<std::size_t>(a.bias.size())) == 0;
}

}  // namespace

Workspace::Workspace(ExperimentSpec spec, ProgressFn progress) : spec_(std::move(spec)), progress_(std::move(progress)) {
  spec_.validate();
  if (!spec_.corpus_config.empty()) ensure_corpus(spec_, progress_);

  std::vector<std::string> names{spec_.target};
  names.insert(names.end(), spec_.pretrain_datasets.begin(), spec_.pretrain_datasets.end());
  const bool any_pretrain =
      std::any_of(spec_.arms.begin(), spec_.arms.end(), [](Arm a) { return a != Arm::Scratch; });
  if (!any_pretrain) names.resize(1);

  std::uint64_t digest = fnv1a("corpus");
  for (const auto& name : names) {
    const fs::path root = spec_.dataset_root(name);
    const DatasetIndex index = index_dataset(root, detect_layout(root));
    log("featurizing " + name + " (" + std::to_string(index.scan_count()) + " scans)");
    datasets_.emplace(name, load_dataset(index, spec_.featurize));
    if (name != spec_.target) digest = fnv1a(format_manifest(index, root) + format_vocabulary(index.fine_vocabulary), digest);
  }
  corpus_digest_ = digest;

  if (std::find(spec_.arms.begin(), spec_.arms.end(), Arm::ColaPretrain) != spec_.arms.end()) {
    const CoarseLabelSet coarse = coarse_set(spec_.variant);
    for (const auto& name : spec_.pretrain_datasets) {
      maps_.emplace(name, load_label_map_file(label_map_path(spec_.map_dir, name, spec_.variant), coarse));
    }
  }
}

const LoadedDataset& Workspace::dataset(const std::string& name) const {
  const auto it = datasets_.find(name);
  if (it == datasets_.end()) throw Error(ErrorCode::InvalidConfig, "dataset " + name + " is not loaded");
  return it->second;
}

const LabelMap& Workspace::label_map(const std::string& name) const {
  const auto it = maps_.find(name);
  if (it == maps_.end()) throw Error(ErrorCode::InvalidConfig, "no label map loaded for " + name);
  return it->second;
}

void Workspace::log(const std::string& line) const {
  if (progress_) progress_(line);
}

namespace {

// Backbone plus any number of heads; a plain Model is the one-head case.
struct Net {
  Backbone backbone;
  std::vector<DenseLayer> heads;
};

struct TrainItem {
  const ScanData* scan = nullptr;
  std::size_t head = 0;
  std::size_t group = 0;                 // dataset, for balanced sampling
  std::vector<std::vector<int>> targets;  // per view, see ScanData::view_for_epoch
};

TrainItem make_item(const ScanData* scan, std::size_t head, std::size_t group, const LabelSpace& space) {
  TrainItem item{scan, head, group, {}};
  item.targets.push_back(voxel_targets(scan->raw, scan->point_labels, space));
  for (const auto& view : scan->augmented) item.targets.push_back(voxel_targets(view, scan->point_labels, space));
  return item;
}

std::vector<std::size_t> epoch_order(const std::vector<TrainItem>& items, bool balance, Rng& rng) {
  std::vector<std::size_t> order;
  if (!balance) {
    order.resize(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) order[i] = i;
  } else {
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].group].push_back(i);
    std::size_t largest = 0;
    for (const auto& [g, members] : groups) largest = std::max(largest, members.size());
    for (auto& [g, members] : groups) {
      rng.shuffle(std::span(members));
      for (std::size_t k = 0; k < largest; ++k) order.push_back(members[k % members.size()]);
    }
  }
  rng.shuffle(std::span(order));
  return order;
}

std::size_t epoch_length(const std::vector<TrainItem>& items, bool balance) {
  if (!balance) return items.size();
  std::map<std::size_t, std::size_t> sizes;
  for (const auto& item : items) ++sizes[item.group];
  std::size_t largest = 0;
  for (const auto& [g, n] : sizes) largest = std::max(largest, n);
  return largest * sizes.size();
}

using ValidateFn = std::function<double(const Net&)>;

/// Mini-batch SGD over scans. The loss of a batch is sum_h (n_h / N) * mixed_h
/// where n_h counts the labelled voxels routed to head h.
std::vector<double> train_net(Net& net, const std::vector<TrainItem>& items, const FeatureStats& stats,
                              const PhaseConfig& phase, bool balance, std::uint64_t seed, const ValidateFn& validate,
                              const ProgressFn& log, const std::string& tag) {
  if (items.empty()) throw Error(ErrorCode::EmptyDataset, tag + ": no training scans");
  const std::size_t per_epoch = epoch_length(items, balance);
  const std::size_t batches = (per_epoch + phase.batch_scans - 1) / phase.batch_scans;
  OptState opt;
  opt.base_lr = phase.base_lr;
  opt.momentum = phase.momentum;
  opt.schedule.kind = phase.schedule;
  opt.schedule.total_steps = phase.epochs * batches;
  opt.schedule.warmup_steps = phase.schedule == ScheduleKind::CosineWarmup
                                  ? static_cast<std::size_t>(std::llround(phase.warmup_fraction *
                                                                          static_cast<double>(opt.schedule.total_steps)))
                                  : 0;

  std::vector<DenseLayer*> params;
  for (auto& l : net.backbone.layers) params.push_back(&l);
  for (auto& h : net.heads) params.push_back(&h);

  const Eigen::Index width = static_cast<Eigen::Index>(net.backbone.output_width());
  std::vector<double> curve;
  Rng rng(seed);
  for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
    const auto order = epoch_order(items, balance, rng);
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * phase.batch_scans;
      const std::size_t hi = std::min(order.size(), lo + phase.batch_scans);
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(hi));
      // Group rows by head so each head sees one contiguous block.
      std::stable_sort(batch.begin(), batch.end(),
                       [&](std::size_t x, std::size_t y) { return items[x].head < items[y].head; });
      Eigen::Index rows = 0;
      for (std::size_t i : batch) rows += items[i].scan->view_for_epoch(epoch).features.rows();
      Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(kFeatureWidth));
      std::vector<int> targets;
      targets.reserve(static_cast<std::size_t>(rows));
      std::vector<std::pair<std::size_t, std::pair<Eigen::Index, Eigen::Index>>> blocks;  // head, (start, len)
      Eigen::Index at = 0;
      for (std::size_t i : batch) {
        const TrainItem& item = items[i];
        const std::size_t v = epoch % (item.scan->augmented.size() + 1);
        const Eigen::MatrixXd& f = item.scan->view_for_epoch(epoch).features;
        x.middleRows(at, f.rows()) = f;
        targets.insert(targets.end(), item.targets[v].begin(), item.targets[v].end());
        if (blocks.empty() || blocks.back().first != item.head) blocks.push_back({item.head, {at, 0}});
        blocks.back().second.second += f.rows();
        at += f.rows();
      }
      const auto valid = std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; });
      if (valid == 0 || rows == 0) continue;

      const BackboneCache cache = forward_backbone(net.backbone, standardize(x, stats));
      const Eigen::MatrixXd& pen = cache.penultimate();
      Eigen::MatrixXd grad_pen = Eigen::MatrixXd::Zero(rows, width);
      std::vector<DenseLayer> head_grads;
      for (const auto& h : net.heads) {
        head_grads.push_back({Eigen::MatrixXd::Zero(h.weight.rows(), h.weight.cols()), Eigen::VectorXd::Zero(h.bias.size())});
      }
      double loss = 0.0;
      for (const auto& [head, range] : blocks) {
        const auto [start, len] = range;
        const std::span<const int> t(targets.data() + start, static_cast<std::size_t>(len));
        const auto n_h = std::count_if(t.begin(), t.end(), [](int v) { return v >= 0; });
        if (n_h == 0) continue;
        const Eigen::MatrixXd p = pen.middleRows(start, len);
        const LossResult l = mixed_loss(apply_dense(net.heads[head], p), t, -1, phase.lovasz_weight);
        const double w = static_cast<double>(n_h) / static_cast<double>(valid);
        loss += w * l.loss;
        auto [g_head, g_pen] = backward_head(net.heads[head], p, w * l.grad);
        head_grads[head].weight += g_head.weight;
        head_grads[head].bias += g_head.bias;
        grad_pen.middleRows(start, len) = g_pen;
      }
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::Diverged, tag + ": non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      const std::vector<DenseLayer> g_backbone = backward_backbone(net.backbone, cache, grad_pen);
      std::vector<const DenseLayer*> grads;
      for (const auto& g : g_backbone) grads.push_back(&g);
      for (const auto& g : head_grads) grads.push_back(&g);
      sgd_update(params, grads, opt);
      epoch_loss += loss;
      ++epoch_steps;
    }
    for (const DenseLayer* p : params) {
      if (!p->weight.allFinite() || !p->bias.allFinite()) {
        throw Error(ErrorCode::Diverged, tag + ": non-finite parameters after epoch " + std::to_string(epoch + 1));
      }
    }
    std::string line = tag + " epoch " + std::to_string(epoch + 1) + "/" + std::to_string(phase.epochs) +
                       " loss " + fixed(epoch_steps ? epoch_loss / static_cast<double>(epoch_steps) : 0.0);
    if (validate) {
      curve.push_back(validate(net));
      line += " val mIoU " + fixed(curve.back());
    }
    if (log) log(line);
  }
  return curve;
}

/// mIoU of always predicting the most frequent training class.
double majority_miou(const std::vector<const ScanData*>& train, const std::vector<const ScanData*>& val,
                     const LabelSpace& space) {
  std::vector<std::uint64_t> histogram(space.size(), 0);
  for (const ScanData* s : train) {
    for (auto l : s->point_labels) {
      const int d = space(l);
      if (d >= 0) ++histogram[static_cast<std::size_t>(d)];
    }
  }
  const int majority = static_cast<int>(std::max_element(histogram.begin(), histogram.end()) - histogram.begin());
  ConfusionMatrix cm(space.size());
  for (const ScanData* s : val) {
    std::vector<int> gt(s->point_labels.size());
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = space(s->point_labels[i]);
    cm.add(std::vector<int>(gt.size(), majority), gt, -1);
  }
  return miou(cm);
}

std::set<std::uint16_t> observed_labels(const LoadedDataset& data) {
  std::set<std::uint16_t> ids;
  for (const auto& s : data.scans) ids.insert(s.point_labels.begin(), s.point_labels.end());
  return ids;
}

std::string largest_source(const ExperimentSpec& spec, const Workspace& ws) {
  if (!spec.fine_label_source.empty()) return spec.fine_label_source;
  std::string best;
  std::size_t best_n = 0;
  for (const auto& name : spec.pretrain_datasets) {
    const std::size_t n = ws.dataset(name).scans.size();
    if (n > best_n || (n == best_n && name < best)) {
      best = name;
      best_n = n;
    }
  }
  return best;
}

/// Fine labels of several datasets made disjoint by shifting dataset k's ids
/// by the sum of (max id + 1) over the datasets before it.
std::vector<LabelSpace> offset_fine_spaces(const std::vector<const LoadedDataset*>& sets) {
  std::vector<std::pair<std::uint32_t, std::string>> combined;
  std::vector<std::uint32_t> offsets;
  std::uint32_t offset = 0;
  for (const LoadedDataset* d : sets) {
    offsets.push_back(offset);
    std::uint32_t top = 0;
    for (const auto& [id, name] : d->vocabulary) {
      top = std::max<std::uint32_t>(top, id);
      if (id != kIgnoreLabel) combined.emplace_back(id + offset, d->name + ":" + name);
    }
    offset += top + 1;
  }
  std::sort(combined.begin(), combined.end());
  std::vector<std::string> names;
  std::map<std::uint32_t, int> dense;
  for (const auto& [id, name] : combined) {
    dense[id] = static_cast<int>(names.size());
    names.push_back(name);
  }
  std::vector<LabelSpace> spaces;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    LabelSpace s;
    s.names = names;
    for (const auto& [id, name] : sets[k]->vocabulary) {
      if (id != kIgnoreLabel) s.dense[id] = dense.at(id + offsets[k]);
    }
    spaces.push_back(std::move(s));
  }
  return spaces;
}

}  // namespace

PretrainResult pretrain(const Workspace& ws, Arm arm, std::uint64_t seed) {
  const ExperimentSpec& spec = ws.spec();
  if (arm == Arm::Scratch) throw Error(ErrorCode::InvalidConfig, "the scratch arm has no pre-training phase");
  const std::string tag = "pretrain " + std::string(arm_name(arm)) + " seed " + std::to_string(seed);

  std::vector<std::string> sources = spec.pretrain_datasets;
  if (arm == Arm::FineLabelPretrain) sources = {largest_source(spec, ws)};
  std::vector<const LoadedDataset*> sets;
  for (const auto& name : sources) sets.push_back(&ws.dataset(name));

  // Per-source label spaces and head names.
  std::vector<LabelSpace> spaces;
  std::vector<std::string> head_names;
  std::vector<std::size_t> head_of(sets.size(), 0);
  const CoarseLabelSet coarse = coarse_set(spec.variant);
  if (arm == Arm::ColaPretrain) {
    for (const LoadedDataset* d : sets) {
      const LabelMap& map = ws.label_map(d->name);
      auto ids = vocabulary_ids(d->vocabulary);
      const auto seen = observed_labels(*d);
      ids.insert(seen.begin(), seen.end());
      const ValidationReport report = validate_label_map(map, ids);
      if (!report.ok()) {
        std::string msg = d->name + ": label map does not cover fine id(s)";
        for (auto id : report.unmapped_fine_ids) msg += " " + std::to_string(id);
        for (auto id : report.out_of_range_coarse_ids) msg += " coarse:" + std::to_string(id);
        throw Error(ErrorCode::ValidationFailure, msg);
      }
      spaces.push_back(coarse_space(map, coarse));
    }
    head_names = {"coarse" + std::to_string(static_cast<int>(spec.variant))};
  } else if (arm == Arm::FineLabelPretrain) {
    spaces = offset_fine_spaces(sets);
    head_names = {"fine"};
  } else {
    for (std::size_t k = 0; k < sets.size(); ++k) {
      spaces.push_back(fine_space(sets[k]->vocabulary));
      head_names.push_back(sets[k]->name);
      head_of[k] = k;
    }
  }

  // Scene-level held-out validation slice per source.
  std::vector<std::vector<const ScanData*>> train_scans(sets.size()), val_scans(sets.size());
  std::vector<TrainItem> items;
  std::vector<const Eigen::MatrixXd*> stat_inputs;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const auto [train, val] =
        extract_test_split(sets[k]->index, spec.pretrain_val_fraction, derive_seed(seed, "pretrain_val", sets[k]->name));
    train_scans[k] = sets[k]->select(train);
    val_scans[k] = sets[k]->select(val);
    for (const ScanData* s : train_scans[k]) {
      items.push_back(make_item(s, head_of[k], k, spaces[k]));
      stat_inputs.push_back(&s->raw.features);
    }
  }
  FeatureStats stats = compute_stats(stat_inputs);

  Net net;
  const std::uint64_t init_seed = derive_seed(seed, "pretrain_init", arm_name(arm));
  if (arm == Arm::MultiHeadPretrain) {
    std::map<std::string, std::size_t> classes;
    for (std::size_t k = 0; k < sets.size(); ++k) classes[head_names[k]] = spaces[k].size();
    MHModel mh = init_mh_model(spec.hidden, classes, init_seed);
    net.backbone = std::move(mh.backbone);
    for (const auto& name : head_names) net.heads.push_back(mh.heads.at(name));
  } else {
    Model m = init_model(spec.hidden, spaces.front().size(), init_seed);
    net.backbone = std::move(m.backbone);
    net.heads.push_back(std::move(m.head));
  }

  // Validation: pooled confusion for single-head arms, mean of per-head mIoU for MH.
  auto validate = [&](const Net& n) {
    if (arm == Arm::MultiHeadPretrain) {
      double sum = 0.0;
      for (std::size_t k = 0; k < sets.size(); ++k) {
        sum += miou(evaluate(n.backbone, n.heads[k], stats, val_scans[k], spaces[k]));
      }
      return sum / static_cast<double>(sets.size());
    }
    ConfusionMatrix cm(spaces.front().size());
    for (std::size_t k = 0; k < sets.size(); ++k) cm += evaluate(n.backbone, n.heads[0], stats, val_scans[k], spaces[k]);
    return miou(cm);
  };

  PretrainResult result;
  result.arm = arm;
  if (arm == Arm::MultiHeadPretrain) {
    double sum = 0.0;
    for (std::size_t k = 0; k < sets.size(); ++k) sum += majority_miou(train_scans[k], val_scans[k], spaces[k]);
    result.majority_baseline = sum / static_cast<double>(sets.size());
  } else {
    // Pool the label histograms across sources through the shared space.
    std::vector<std::uint64_t> histogram(spaces.front().size(), 0);
    for (std::size_t k = 0; k < sets.size(); ++k) {
      for (const ScanData* s : train_scans[k]) {
        for (auto l : s->point_labels) {
          const int d = spaces[k](l);
          if (d >= 0) ++histogram[static_cast<std::size_t>(d)];
        }
      }
    }
    const int majority = static_cast<int>(std::max_element(histogram.begin(), histogram.end()) - histogram.begin());
    ConfusionMatrix cm(spaces.front().size());
    for (std::size_t k = 0; k < sets.size(); ++k) {
      for (const ScanData* s : val_scans[k]) {
        std::vector<int> gt(s->point_labels.size());
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = spaces[k](s->point_labels[i]);
        cm.add(std::vector<int>(gt.size(), majority), gt, -1);
      }
    }
    result.majority_baseline = miou(cm);
  }

  result.val_curve = train_net(net, items, stats, spec.pretrain, spec.balance_datasets,
                               derive_seed(seed, "pretrain", arm_name(arm)), validate, [&](const std::string& l) { ws.log(l); },
                               tag);

  Checkpoint cp;
  cp.backbone = net.backbone;
  for (std::size_t h = 0; h < net.heads.size(); ++h) cp.heads.emplace_back(head_names[h], net.heads[h]);
  cp.stats.features = stats;
  cp.stats.coarse_variant = arm == Arm::ColaPretrain ? static_cast<std::uint8_t>(spec.variant) : 0;
  cp.stats.corpus_digest = ws.corpus_digest();
  cp.stats.seed = seed;
  cp.stats.note = std::string(arm_name(arm));
  for (const auto& s : sources) cp.stats.note += " " + s;

  const Bytes bytes = save_checkpoint(cp);
  result.checkpoint_path = spec.output_dir / "checkpoints" / (std::string(arm_name(arm)) + "_seed" + std::to_string(seed) + ".colaptk");
  std::error_code ec;
  fs::create_directories(result.checkpoint_path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + result.checkpoint_path.parent_path().string());
  write_file(result.checkpoint_path, bytes);
  result.checkpoint = load_checkpoint(bytes);
  return result;
}

TargetSplit prepare_target(const Workspace& ws, int fraction, std::uint64_t seed) {
  const ExperimentSpec& spec = ws.spec();
  TargetSplit split;
  split.data = &ws.dataset(spec.target);
  auto [train, test] = extract_test_split(split.data->index, spec.test_fraction, derive_seed(seed, "test_split"));
  split.test = std::move(test);
  split.partial = make_partial_split(train, fraction, derive_seed(seed, "partial", static_cast<std::uint64_t>(fraction)));
  split.space = fine_space(split.data->vocabulary);
  return split;
}

FinetuneResult finetune(const Workspace& ws, const Checkpoint* checkpoint, const TargetSplit& target, int fraction,
                        std::uint64_t seed) {
  const ExperimentSpec& spec = ws.spec();
  const std::size_t n_classes = target.space.size();
  if (n_classes == 0) throw Error(ErrorCode::ClassCountMismatch, spec.target + " has no non-ignore classes");
  const std::string origin = checkpoint ? split(checkpoint->stats.note, ' ').front() : "scratch";
  const std::string tag = "finetune " + origin + " " + std::to_string(fraction) + "% seed " + std::to_string(seed);

  const auto train_scans = target.data->select(target.partial.train);
  const auto val_scans = target.data->select(target.partial.validation);
  const auto test_scans = target.data->select(target.test);

  FinetuneResult result;
  Model model;
  if (checkpoint) {
    result.stats = checkpoint->stats.features;
    model = swap_head(checkpoint->backbone, n_classes, derive_seed(seed, "finetune_head"));
    for (std::size_t l = 0; l < model.backbone.layers.size(); ++l) {
      if (!same_bits(model.backbone.layers[l], checkpoint->backbone.layers[l])) {
        throw Error(ErrorCode::ValidationFailure, tag + ": backbone layer " + std::to_string(l) + " changed by the head swap");
      }
    }
  } else {
    std::vector<const Eigen::MatrixXd*> inputs;
    for (const ScanData* s : train_scans) inputs.push_back(&s->raw.features);
    result.stats = compute_stats(inputs);
    model = init_model(spec.hidden, n_classes, derive_seed(seed, "scratch_init"));
  }
  const Model initial = model;

  Net net{std::move(model.backbone), {std::move(model.head)}};
  std::vector<TrainItem> items;
  for (const ScanData* s : train_scans) items.push_back(make_item(s, 0, 0, target.space));
  ValidateFn validate;
  if (!val_scans.empty()) {
    validate = [&](const Net& n) { return miou(evaluate(n.backbone, n.heads[0], result.stats, val_scans, target.space)); };
  }
  result.val_curve = train_net(net, items, result.stats, spec.finetune, false,
                               derive_seed(seed, "finetune", static_cast<std::uint64_t>(fraction)), validate,
                               [&](const std::string& l) { ws.log(l); }, tag);
  result.model = Model{std::move(net.backbone), std::move(net.heads[0])};

  // No layer may be frozen.
  for (std::size_t l = 0; l < result.model.backbone.layers.size(); ++l) {
    if (same_bits(result.model.backbone.layers[l].weight, initial.backbone.layers[l].weight)) {
      throw Error(ErrorCode::ValidationFailure, tag + ": backbone layer " + std::to_string(l) + " was not updated");
    }
  }
  if (same_bits(result.model.head.weight, initial.head.weight)) {
    throw Error(ErrorCode::ValidationFailure, tag + ": head was not updated");
  }

  result.test_confusion = evaluate(result.model.backbone, result.model.head, result.stats, test_scans, target.space);
  result.test_miou = miou(result.test_confusion);
  result.config_digest = spec.finetune_digest(fraction);
  return result;
}

ExperimentReport run_experiment(const ExperimentSpec& spec, ProgressFn progress) {
  const Workspace ws(spec, progress);
  ExperimentReport report;
  report.name = spec.name;
  report.arms = spec.arms;
  report.fractions = spec.fractions;
  report.seeds = spec.seeds;
  report.class_names = fine_space(ws.dataset(spec.target).vocabulary).names;

  // Pre-training does not depend on the target fraction, so it runs once per (arm, seed).
  std::vector<std::pair<Arm, std::uint64_t>> pre_cells;
  for (Arm arm : spec.arms) {
    if (arm == Arm::Scratch) continue;
    for (auto seed : spec.seeds) pre_cells.emplace_back(arm, seed);
  }
  std::vector<PretrainResult> pre(pre_cells.size());
  parallel_for(pre_cells.size(), spec.featurize.jobs,
               [&](std::size_t i) { pre[i] = pretrain(ws, pre_cells[i].first, pre_cells[i].second); });
  auto find_pre = [&](Arm arm, std::uint64_t seed) -> const PretrainResult* {
    for (std::size_t i = 0; i < pre_cells.size(); ++i) {
      if (pre_cells[i] == std::pair{arm, seed}) return &pre[i];
    }
    return nullptr;
  };
  for (std::size_t i = 0; i < pre_cells.size(); ++i) {
    ws.log("pretrain " + std::string(arm_name(pre_cells[i].first)) + " seed " + std::to_string(pre_cells[i].second) +
           ": val mIoU " + fixed(pre[i].val_curve.back()) + " (majority baseline " + fixed(pre[i].majority_baseline) + ")");
  }

  for (int fraction : spec.fractions) {
    for (Arm arm : spec.arms) {
      for (auto seed : spec.seeds) {
        CellResult cell;
        cell.arm = arm;
        cell.fraction = fraction;
        cell.seed = seed;
        report.cells.push_back(std::move(cell));
      }
    }
  }
  parallel_for(report.cells.size(), spec.featurize.jobs, [&](std::size_t i) {
    CellResult& cell = report.cells[i];
    const TargetSplit target = prepare_target(ws, cell.fraction, cell.seed);
    const PretrainResult* p = find_pre(cell.arm, cell.seed);
    const FinetuneResult r = finetune(ws, p ? &p->checkpoint : nullptr, target, cell.fraction, cell.seed);
    cell.test_miou = r.test_miou;
    for (const auto& c : iou_per_class(r.test_confusion)) {
      cell.class_iou.push_back(c.absent() ? std::nan("") : c.value());
    }
    cell.val_curve = r.val_curve;
    cell.config_digest = r.config_digest;
    if (p) {
      cell.pretrain_val_miou = p->val_curve.back();
      cell.pretrain_majority = p->majority_baseline;
      cell.checkpoint_path = p->checkpoint_path;
    }
  });

  // Arms at the same fraction must share the finetune configuration.
  for (const auto& a : report.cells) {
    for (const auto& b : report.cells) {
      if (a.fraction == b.fraction && a.config_digest != b.config_digest) {
        throw Error(ErrorCode::ValidationFailure, "finetune configurations differ between arms at " +
                                                      std::to_string(a.fraction) + "%");
      }
    }
  }
  return report;
}

}  // namespace cola
