#pragma once

#include <Eigen/Core>
#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cola/lidar_io.hpp"

namespace cola {

/// Double-precision point; augmentation and features work in this space so
/// geometric transforms are not rounded back to float32.
struct PointD {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;
};

using Cloud = std::vector<PointD>;

Cloud to_cloud(const PointScan& scan);

struct VoxelKey {
  std::int32_t i = 0;
  std::int32_t j = 0;
  std::int32_t k = 0;

  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& key) const noexcept {
    return static_cast<std::size_t>(static_cast<std::uint32_t>(key.i) * 73856093u ^
                                    static_cast<std::uint32_t>(key.j) * 19349669u ^
                                    static_cast<std::uint32_t>(key.k) * 83492791u);
  }
};

/// Occupied cells only, sorted by key. members[c] holds ascending point indices.
struct VoxelGrid {
  double voxel_size = 0.0;
  std::vector<VoxelKey> keys;
  std::vector<std::vector<std::uint32_t>> members;
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> lookup;

  std::size_t size() const { return keys.size(); }
  bool occupied(const VoxelKey& key) const { return lookup.count(key) != 0; }
};

VoxelKey voxel_of(const PointD& p, double voxel_size);

VoxelGrid voxelize(const Cloud& cloud, double voxel_size);
VoxelGrid voxelize(const PointScan& scan, double voxel_size);

inline constexpr std::size_t kFeatureWidth = 14;
inline constexpr int kFeatureSchemaVersion = 1;

/// Column order of compute_features.
const std::array<const char*, kFeatureWidth>& feature_names();

struct FeatureMatrix {
  std::vector<VoxelKey> keys;
  Eigen::MatrixXd values;  // rows x kFeatureWidth

  std::size_t rows() const { return keys.size(); }
};

/// Per voxel: log(1+count), centroid z, vertical extent, mean intensity,
/// intensity std, linearity, planarity, sphericity, then occupancy of the six
/// face neighbours (-x, +x, -y, +y, -z, +z). Eigen-features are 0 when the
/// voxel has fewer than 3 points or a zero leading eigenvalue.
FeatureMatrix compute_features(const Cloud& cloud, const VoxelGrid& grid);
FeatureMatrix compute_features(const PointScan& scan, const VoxelGrid& grid);

/// Majority label per voxel ignoring id 0; ties go to the smallest id.
std::vector<std::uint16_t> voxel_labels(const VoxelGrid& grid, std::span<const std::uint16_t> semantic);

struct AugmentConfig {
  double yaw_range_deg = 180.0;
  double scale_min = 0.95;
  double scale_max = 1.05;
  double jitter_sigma = 0.0;

  void validate() const;
  static AugmentConfig identity() { return {0.0, 1.0, 1.0, 0.0}; }
};

/// Yaw about z, then uniform scale about the origin, then Gaussian jitter.
/// Intensity is untouched and point order is preserved.
Cloud augment(const Cloud& cloud, const AugmentConfig& cfg, std::uint64_t seed);

/// Column-wise standardisation statistics.
struct FeatureStats {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kFeatureWidth);
  Eigen::VectorXd stddev = Eigen::VectorXd::Ones(kFeatureWidth);
};

FeatureStats compute_stats(const std::vector<const Eigen::MatrixXd*>& matrices);
Eigen::MatrixXd standardize(const Eigen::MatrixXd& values, const FeatureStats& stats);

/// CSV with header `i,j,k,<feature names>[,label]`.
std::string format_features_csv(const FeatureMatrix& features, const std::vector<std::uint16_t>* labels = nullptr);

}  // namespace cola
