#include "cola/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "cola/error.hpp"
#include "cola/random.hpp"

namespace cola {

DenseLayer init_dense(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  if (fan_in == 0 || fan_out == 0) throw Error(ErrorCode::InvalidWidth, "layer widths must be >= 1");
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DenseLayer layer;
  layer.weight.resize(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-limit, limit);
  }
  layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fan_out));
  return layer;
}

Backbone init_backbone(std::span<const std::size_t> hidden_widths, std::size_t input_width, std::uint64_t seed) {
  if (hidden_widths.empty()) throw Error(ErrorCode::InvalidWidth, "at least one hidden layer is required");
  Backbone backbone;
  std::size_t fan_in = input_width;
  for (std::size_t l = 0; l < hidden_widths.size(); ++l) {
    backbone.layers.push_back(init_dense(fan_in, hidden_widths[l], derive_seed(seed, "layer", l)));
    fan_in = hidden_widths[l];
  }
  return backbone;
}

Model init_model(std::span<const std::size_t> hidden_widths, std::size_t n_classes, std::uint64_t seed,
                 std::size_t input_width) {
  Model model;
  model.backbone = init_backbone(hidden_widths, input_width, seed);
  model.head = init_dense(model.backbone.output_width(), n_classes, derive_seed(seed, "head"));
  return model;
}

MHModel init_mh_model(std::span<const std::size_t> hidden_widths,
                      const std::map<std::string, std::size_t>& classes_per_head, std::uint64_t seed,
                      std::size_t input_width) {
  MHModel mh;
  mh.backbone = init_backbone(hidden_widths, input_width, seed);
  for (const auto& [name, n_classes] : classes_per_head) {
    mh.heads.emplace(name, init_dense(mh.backbone.output_width(), n_classes, derive_seed(seed, "head", name)));
  }
  return mh;
}

Eigen::MatrixXd apply_dense(const DenseLayer& layer, const Eigen::MatrixXd& input) {
  if (input.cols() != layer.fan_in()) {
    throw Error(ErrorCode::ShapeMismatch, "input width " + std::to_string(input.cols()) + " != layer fan-in " +
                                              std::to_string(layer.fan_in()));
  }
  Eigen::MatrixXd out(input.rows(), layer.fan_out());
  out.noalias() = input * layer.weight.transpose();
  out.rowwise() += layer.bias.transpose();
  return out;
}

BackboneCache forward_backbone(const Backbone& backbone, const Eigen::MatrixXd& features) {
  BackboneCache cache;
  cache.activations.reserve(backbone.layers.size() + 1);
  cache.pre_activations.reserve(backbone.layers.size());
  cache.activations.push_back(features);
  for (const auto& layer : backbone.layers) {
    cache.pre_activations.push_back(apply_dense(layer, cache.activations.back()));
    cache.activations.push_back(cache.pre_activations.back().cwiseMax(0.0));
  }
  return cache;
}

ForwardResult forward(const Model& model, const Eigen::MatrixXd& features) {
  ForwardResult result;
  result.cache = forward_backbone(model.backbone, features);
  result.logits = apply_dense(model.head, result.cache.penultimate());
  return result;
}

std::pair<DenseLayer, Eigen::MatrixXd> backward_head(const DenseLayer& head, const Eigen::MatrixXd& penultimate,
                                                     const Eigen::MatrixXd& grad_logits) {
  if (grad_logits.cols() != head.fan_out() || grad_logits.rows() != penultimate.rows() ||
      penultimate.cols() != head.fan_in()) {
    throw Error(ErrorCode::ShapeMismatch, "logit gradient does not match the head");
  }
  DenseLayer grad;
  grad.weight.noalias() = grad_logits.transpose() * penultimate;
  grad.bias = grad_logits.colwise().sum().transpose();
  Eigen::MatrixXd grad_in(penultimate.rows(), head.fan_in());
  grad_in.noalias() = grad_logits * head.weight;
  return {std::move(grad), std::move(grad_in)};
}

std::vector<DenseLayer> backward_backbone(const Backbone& backbone, const BackboneCache& cache,
                                          const Eigen::MatrixXd& grad_penultimate) {
  const std::size_t n_layers = backbone.layers.size();
  if (cache.pre_activations.size() != n_layers || cache.activations.size() != n_layers + 1) {
    throw Error(ErrorCode::ShapeMismatch, "cache does not match the backbone");
  }
  std::vector<DenseLayer> grads(n_layers);
  Eigen::MatrixXd upstream = grad_penultimate;
  for (std::size_t l = n_layers; l-- > 0;) {
    const Eigen::MatrixXd& pre = cache.pre_activations[l];
    if (upstream.rows() != pre.rows() || upstream.cols() != pre.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "upstream gradient does not match layer " + std::to_string(l));
    }
    const Eigen::MatrixXd delta = (pre.array() > 0.0).select(upstream, 0.0);
    grads[l].weight.noalias() = delta.transpose() * cache.activations[l];
    grads[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      upstream.resize(delta.rows(), backbone.layers[l].fan_in());
      upstream.noalias() = delta * backbone.layers[l].weight;
    }
  }
  return grads;
}

Gradients backward(const Model& model, const BackboneCache& cache, const Eigen::MatrixXd& grad_logits) {
  if (cache.activations.empty()) throw Error(ErrorCode::ShapeMismatch, "empty cache");
  auto [head_grad, grad_pen] = backward_head(model.head, cache.penultimate(), grad_logits);
  Gradients grads;
  grads.head = std::move(head_grad);
  grads.backbone = backward_backbone(model.backbone, cache, grad_pen);
  return grads;
}

Model swap_head(const Backbone& backbone, std::size_t n_new_classes, std::uint64_t seed) {
  Model model;
  model.backbone = backbone;
  model.head = init_dense(backbone.output_width(), n_new_classes, seed);
  return model;
}

Model swap_head(const Model& model, std::size_t n_new_classes, std::uint64_t seed) {
  return swap_head(model.backbone, n_new_classes, seed);
}

Eigen::MatrixXd mh_forward(const MHModel& mh, const Eigen::MatrixXd& features, const std::string& dataset_name) {
  const auto it = mh.heads.find(dataset_name);
  if (it == mh.heads.end()) throw Error(ErrorCode::UnknownHead, "no head for dataset '" + dataset_name + "'");
  return apply_dense(it->second, forward_backbone(mh.backbone, features).penultimate());
}

Model mh_as_model(const MHModel& mh, const std::string& dataset_name) {
  const auto it = mh.heads.find(dataset_name);
  if (it == mh.heads.end()) throw Error(ErrorCode::UnknownHead, "no head for dataset '" + dataset_name + "'");
  return {mh.backbone, it->second};
}

Eigen::MatrixXd extract_penultimate(const Model& model, const Eigen::MatrixXd& features) {
  return forward_backbone(model.backbone, features).penultimate();
}

Model Checkpoint::model(std::size_t head_index) const {
  if (head_index >= heads.size()) throw Error(ErrorCode::UnknownHead, "checkpoint has no head " + std::to_string(head_index));
  return {backbone, heads[head_index].second};
}

MHModel Checkpoint::mh_model() const {
  MHModel mh;
  mh.backbone = backbone;
  for (const auto& [name, head] : heads) mh.heads.emplace(name, head);
  return mh;
}

namespace {

constexpr char kMagic[4] = {'C', 'O', 'L', 'A'};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void u64(std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int s = 0; s < 32; s += 8) v |= static_cast<std::uint32_t>(in_[pos_++]) << s;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int s = 0; s < 64; s += 8) v |= static_cast<std::uint64_t>(in_[pos_++]) << s;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(ErrorCode::CorruptCheckpoint, "truncated checkpoint");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_shape(ByteWriter& w, const DenseLayer& layer) {
  w.u32(static_cast<std::uint32_t>(layer.fan_out()));
  w.u32(static_cast<std::uint32_t>(layer.fan_in()));
}

void write_params(ByteWriter& w, const DenseLayer& layer) {
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) w.f64(layer.weight(r, c));
  }
  for (Eigen::Index r = 0; r < layer.bias.size(); ++r) w.f64(layer.bias(r));
}

DenseLayer read_shape(ByteReader& r) {
  const std::uint32_t fan_out = r.u32();
  const std::uint32_t fan_in = r.u32();
  // Bound shapes so a corrupt header cannot request a huge allocation.
  if (fan_out == 0 || fan_in == 0 || fan_out > (1u << 16) || fan_in > (1u << 16)) {
    throw Error(ErrorCode::CorruptCheckpoint, "implausible layer shape");
  }
  DenseLayer layer;
  layer.weight.resize(fan_out, fan_in);
  layer.bias.resize(fan_out);
  return layer;
}

void read_params(ByteReader& r, DenseLayer& layer) {
  for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = r.f64();
  }
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = r.f64();
}

void write_vector(ByteWriter& w, const Eigen::VectorXd& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v(i));
}

Eigen::VectorXd read_vector(ByteReader& r) {
  const std::uint32_t n = r.u32();
  if (n > (1u << 16)) throw Error(ErrorCode::CorruptCheckpoint, "implausible vector length");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.f64();
  return v;
}

}  // namespace

Bytes save_checkpoint(const Checkpoint& checkpoint) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u8(checkpoint.stats.coarse_variant);
  w.u32(static_cast<std::uint32_t>(checkpoint.backbone.layers.size()));
  for (const auto& layer : checkpoint.backbone.layers) write_shape(w, layer);
  w.u32(static_cast<std::uint32_t>(checkpoint.heads.size()));
  for (const auto& [name, head] : checkpoint.heads) {
    w.str(name);
    write_shape(w, head);
  }
  for (const auto& layer : checkpoint.backbone.layers) write_params(w, layer);
  for (const auto& [name, head] : checkpoint.heads) write_params(w, head);
  write_vector(w, checkpoint.stats.features.mean);
  write_vector(w, checkpoint.stats.features.stddev);
  w.u64(checkpoint.stats.corpus_digest);
  w.u64(checkpoint.stats.seed);
  w.str(checkpoint.stats.note);
  return w.take();
}

Bytes save_checkpoint(const Model& model, const CheckpointStats& stats) {
  return save_checkpoint(Checkpoint{model.backbone, {{"head", model.head}}, stats});
}

Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::CorruptCheckpoint, "bad magic");
  }
  ByteReader r(bytes.subspan(4));
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    throw Error(ErrorCode::CorruptCheckpoint, "unsupported version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.stats.coarse_variant = r.u8();
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0 || n_layers > 64) throw Error(ErrorCode::CorruptCheckpoint, "implausible layer count");
  for (std::uint32_t l = 0; l < n_layers; ++l) cp.backbone.layers.push_back(read_shape(r));
  const std::uint32_t n_heads = r.u32();
  if (n_heads == 0 || n_heads > 1024) throw Error(ErrorCode::CorruptCheckpoint, "implausible head count");
  for (std::uint32_t h = 0; h < n_heads; ++h) {
    std::string name = r.str();
    cp.heads.emplace_back(std::move(name), read_shape(r));
  }
  for (std::size_t l = 1; l < cp.backbone.layers.size(); ++l) {
    if (cp.backbone.layers[l].fan_in() != cp.backbone.layers[l - 1].fan_out()) {
      throw Error(ErrorCode::CorruptCheckpoint, "layer shapes do not chain");
    }
  }
  for (const auto& [name, head] : cp.heads) {
    if (head.fan_in() != cp.backbone.layers.back().fan_out()) {
      throw Error(ErrorCode::CorruptCheckpoint, "head '" + name + "' does not match the backbone width");
    }
  }
  for (auto& layer : cp.backbone.layers) read_params(r, layer);
  for (auto& [name, head] : cp.heads) read_params(r, head);
  cp.stats.features.mean = read_vector(r);
  cp.stats.features.stddev = read_vector(r);
  cp.stats.corpus_digest = r.u64();
  cp.stats.seed = r.u64();
  cp.stats.note = r.str();
  if (!r.done()) throw Error(ErrorCode::CorruptCheckpoint, "trailing bytes");
  return cp;
}

namespace {

bool finite(const DenseLayer& layer) { return layer.weight.allFinite() && layer.bias.allFinite(); }

}  // namespace

bool parameters_finite(const Model& model) {
  for (const auto& layer : model.backbone.layers) {
    if (!finite(layer)) return false;
  }
  return finite(model.head);
}

bool parameters_finite(const MHModel& model) {
  for (const auto& layer : model.backbone.layers) {
    if (!finite(layer)) return false;
  }
  for (const auto& [name, head] : model.heads) {
    if (!finite(head)) return false;
  }
  return true;
}

}  // namespace cola
