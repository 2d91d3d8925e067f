#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cola/featurize.hpp"
#include "cola/lidar_io.hpp"
#include "cola/taxonomy.hpp"

namespace cola {

/// Affine layer mapping row vectors: out = in * weight^T + bias^T.
struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_out x fan_in
  Eigen::VectorXd bias;    // fan_out

  Eigen::Index fan_in() const { return weight.cols(); }
  Eigen::Index fan_out() const { return weight.rows(); }
  bool same_shape(const DenseLayer& other) const {
    return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
           bias.size() == other.bias.size();
  }
  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.same_shape(b) && a.weight == b.weight && a.bias == b.bias;
  }
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
DenseLayer init_dense(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

/// Affine + ReLU layers.
struct Backbone {
  std::vector<DenseLayer> layers;

  std::size_t input_width() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().fan_in()); }
  std::size_t output_width() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().fan_out()); }
  friend bool operator==(const Backbone&, const Backbone&) = default;
};

struct Model {
  Backbone backbone;
  DenseLayer head;

  std::size_t n_classes() const { return static_cast<std::size_t>(head.fan_out()); }
  friend bool operator==(const Model&, const Model&) = default;
};

/// Shared backbone with one head per source dataset.
struct MHModel {
  Backbone backbone;
  std::map<std::string, DenseLayer> heads;

  friend bool operator==(const MHModel&, const MHModel&) = default;
};

struct Gradients {
  std::vector<DenseLayer> backbone;
  DenseLayer head;
};

struct MHGradients {
  std::vector<DenseLayer> backbone;
  std::map<std::string, DenseLayer> heads;
};

Backbone init_backbone(std::span<const std::size_t> hidden_widths, std::size_t input_width, std::uint64_t seed);
Model init_model(std::span<const std::size_t> hidden_widths, std::size_t n_classes, std::uint64_t seed,
                 std::size_t input_width = kFeatureWidth);
MHModel init_mh_model(std::span<const std::size_t> hidden_widths,
                      const std::map<std::string, std::size_t>& classes_per_head, std::uint64_t seed,
                      std::size_t input_width = kFeatureWidth);

/// activations[0] is the input; activations[l + 1] = relu(pre_activations[l]).
struct BackboneCache {
  std::vector<Eigen::MatrixXd> activations;
  std::vector<Eigen::MatrixXd> pre_activations;

  const Eigen::MatrixXd& penultimate() const { return activations.back(); }
};

struct ForwardResult {
  Eigen::MatrixXd logits;
  BackboneCache cache;
};

BackboneCache forward_backbone(const Backbone& backbone, const Eigen::MatrixXd& features);
Eigen::MatrixXd apply_dense(const DenseLayer& layer, const Eigen::MatrixXd& input);
ForwardResult forward(const Model& model, const Eigen::MatrixXd& features);

/// Head gradient plus the gradient flowing into the penultimate activations.
std::pair<DenseLayer, Eigen::MatrixXd> backward_head(const DenseLayer& head, const Eigen::MatrixXd& penultimate,
                                                     const Eigen::MatrixXd& grad_logits);
std::vector<DenseLayer> backward_backbone(const Backbone& backbone, const BackboneCache& cache,
                                          const Eigen::MatrixXd& grad_penultimate);
Gradients backward(const Model& model, const BackboneCache& cache, const Eigen::MatrixXd& grad_logits);

/// Keeps the backbone bit-for-bit and draws a fresh head with init_dense.
Model swap_head(const Model& model, std::size_t n_new_classes, std::uint64_t seed);
Model swap_head(const Backbone& backbone, std::size_t n_new_classes, std::uint64_t seed);

Eigen::MatrixXd mh_forward(const MHModel& mh, const Eigen::MatrixXd& features, const std::string& dataset_name);
Model mh_as_model(const MHModel& mh, const std::string& dataset_name);

/// Activations entering the head (rows x last hidden width).
Eigen::MatrixXd extract_penultimate(const Model& model, const Eigen::MatrixXd& features);

/// Standardisation statistics and provenance stored with the parameters.
struct CheckpointStats {
  FeatureStats features;
  /// 0 for fine-label pre-training or no pre-training.
  std::uint8_t coarse_variant = 0;
  std::uint64_t corpus_digest = 0;
  std::uint64_t seed = 0;
  std::string note;
};

struct Checkpoint {
  Backbone backbone;
  std::vector<std::pair<std::string, DenseLayer>> heads;
  CheckpointStats stats;

  Model model(std::size_t head_index = 0) const;
  MHModel mh_model() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "COLA", u32 version, u8 variant tag, u32 layer count and
/// (fan_out, fan_in) shapes, u32 head count with names and shapes, f64
/// parameters, then stats. All integers and floats little-endian.
Bytes save_checkpoint(const Checkpoint& checkpoint);
Bytes save_checkpoint(const Model& model, const CheckpointStats& stats);
Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes);

bool parameters_finite(const Model& model);
bool parameters_finite(const MHModel& model);

}  // namespace cola
