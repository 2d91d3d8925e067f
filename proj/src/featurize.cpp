#include "cola/featurize.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "cola/error.hpp"
#include "cola/random.hpp"

namespace cola {

Cloud to_cloud(const PointScan& scan) {
  Cloud cloud(scan.points.size());
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const Point& p = scan.points[i];
    cloud[i] = {p.x, p.y, p.z, p.intensity};
  }
  return cloud;
}

VoxelKey voxel_of(const PointD& p, double voxel_size) {
  return {static_cast<std::int32_t>(std::floor(p.x / voxel_size)),
          static_cast<std::int32_t>(std::floor(p.y / voxel_size)),
          static_cast<std::int32_t>(std::floor(p.z / voxel_size))};
}

VoxelGrid voxelize(const Cloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw Error(ErrorCode::InvalidVoxelSize, "voxel size must be positive, got " + std::to_string(voxel_size));
  }
  std::vector<std::pair<VoxelKey, std::uint32_t>> keyed(cloud.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    keyed[n] = {voxel_of(cloud[n], voxel_size), static_cast<std::uint32_t>(n)};
  }
  std::sort(keyed.begin(), keyed.end());

  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  for (const auto& [key, index] : keyed) {
    if (grid.keys.empty() || grid.keys.back() != key) {
      grid.keys.push_back(key);
      grid.members.emplace_back();
    }
    grid.members.back().push_back(index);
  }
  grid.lookup.reserve(grid.keys.size());
  for (std::size_t c = 0; c < grid.keys.size(); ++c) grid.lookup.emplace(grid.keys[c], c);
  return grid;
}

VoxelGrid voxelize(const PointScan& scan, double voxel_size) { return voxelize(to_cloud(scan), voxel_size); }

const std::array<const char*, kFeatureWidth>& feature_names() {
  static const std::array<const char*, kFeatureWidth> names = {
      "log_count", "centroid_z", "vertical_extent", "mean_intensity", "intensity_std",
      "linearity", "planarity",  "sphericity",      "adj_neg_x",      "adj_pos_x",
      "adj_neg_y", "adj_pos_y",  "adj_neg_z",       "adj_pos_z"};
  return names;
}

namespace {

struct ByValue {
  bool operator()(const PointD& a, const PointD& b) const {
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    if (a.z != b.z) return a.z < b.z;
    return a.intensity < b.intensity;
  }
};

}  // namespace

FeatureMatrix compute_features(const Cloud& cloud, const VoxelGrid& grid) {
  FeatureMatrix out;
  out.keys = grid.keys;
  out.values.resize(static_cast<Eigen::Index>(grid.size()), kFeatureWidth);

  std::vector<PointD> pts;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    // Sorting by value makes every reduction independent of input point order.
    pts.clear();
    for (std::uint32_t idx : grid.members[c]) pts.push_back(cloud.at(idx));
    std::sort(pts.begin(), pts.end(), ByValue{});

    const double n = static_cast<double>(pts.size());
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    double zmin = pts.front().z, zmax = pts.front().z;
    double isum = 0.0;
    for (const auto& p : pts) {
      centroid += Eigen::Vector3d(p.x, p.y, p.z);
      zmin = std::min(zmin, p.z);
      zmax = std::max(zmax, p.z);
      isum += p.intensity;
    }
    centroid /= n;
    const double imean = isum / n;
    double ivar = 0.0;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
      const Eigen::Vector3d d = Eigen::Vector3d(p.x, p.y, p.z) - centroid;
      cov.noalias() += d * d.transpose();
      ivar += (p.intensity - imean) * (p.intensity - imean);
    }
    cov /= n;
    ivar /= n;

    double linearity = 0.0, planarity = 0.0, sphericity = 0.0;
    if (pts.size() >= 3) {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov, Eigen::EigenvaluesOnly);
      // Ascending order; clamp round-off negatives.
      const double l3 = std::max(0.0, solver.eigenvalues()(0));
      const double l2 = std::max(0.0, solver.eigenvalues()(1));
      const double l1 = std::max(0.0, solver.eigenvalues()(2));
      if (l1 > 0.0) {
        linearity = (l1 - l2) / l1;
        planarity = (l2 - l3) / l1;
        sphericity = l3 / l1;
      }
    }

    auto row = out.values.row(static_cast<Eigen::Index>(c));
    row(0) = std::log1p(n);
    row(1) = centroid.z();
    row(2) = zmax - zmin;
    row(3) = imean;
    row(4) = std::sqrt(ivar);
    row(5) = linearity;
    row(6) = planarity;
    row(7) = sphericity;
    const VoxelKey& key = grid.keys[c];
    const VoxelKey neighbours[6] = {{key.i - 1, key.j, key.k}, {key.i + 1, key.j, key.k},
                                    {key.i, key.j - 1, key.k}, {key.i, key.j + 1, key.k},
                                    {key.i, key.j, key.k - 1}, {key.i, key.j, key.k + 1}};
    for (int a = 0; a < 6; ++a) row(8 + a) = grid.occupied(neighbours[a]) ? 1.0 : 0.0;
  }
  return out;
}

FeatureMatrix compute_features(const PointScan& scan, const VoxelGrid& grid) {
  return compute_features(to_cloud(scan), grid);
}

std::vector<std::uint16_t> voxel_labels(const VoxelGrid& grid, std::span<const std::uint16_t> semantic) {
  std::vector<std::uint16_t> out(grid.size(), kIgnoreLabel);
  std::map<std::uint16_t, std::size_t> votes;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    votes.clear();
    for (std::uint32_t idx : grid.members[c]) {
      const std::uint16_t label = semantic[idx];
      if (label != kIgnoreLabel) ++votes[label];
    }
    std::size_t best = 0;
    // Ascending id order, strict comparison: ties keep the smaller id.
    for (const auto& [label, count] : votes) {
      if (count > best) {
        best = count;
        out[c] = label;
      }
    }
  }
  return out;
}

void AugmentConfig::validate() const {
  if (!(scale_min > 0.0) || !(scale_max < 2.0) || scale_min > scale_max) {
    throw Error(ErrorCode::InvalidConfig, "scale range must lie within (0, 2)");
  }
  if (!(jitter_sigma >= 0.0) || !(yaw_range_deg >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "jitter sigma and yaw range must be non-negative");
  }
}

Cloud augment(const Cloud& cloud, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const double yaw = rng.uniform(-cfg.yaw_range_deg, cfg.yaw_range_deg) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double c = std::cos(yaw), s = std::sin(yaw);
  Cloud out(cloud.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const PointD& p = cloud[n];
    PointD q{c * p.x - s * p.y, s * p.x + c * p.y, p.z, p.intensity};
    q.x *= scale;
    q.y *= scale;
    q.z *= scale;
    if (cfg.jitter_sigma > 0.0) {
      q.x += cfg.jitter_sigma * rng.normal();
      q.y += cfg.jitter_sigma * rng.normal();
      q.z += cfg.jitter_sigma * rng.normal();
    }
    out[n] = q;
  }
  return out;
}

FeatureStats compute_stats(const std::vector<const Eigen::MatrixXd*>& matrices) {
  FeatureStats stats;
  double rows = 0.0;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kFeatureWidth);
  for (const auto* m : matrices) {
    sum += m->colwise().sum().transpose();
    rows += static_cast<double>(m->rows());
  }
  if (rows == 0.0) return stats;
  stats.mean = sum / rows;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(kFeatureWidth);
  for (const auto* m : matrices) {
    sq += (m->rowwise() - stats.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  stats.stddev = (sq / rows).array().sqrt().max(1e-6).matrix();
  return stats;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& values, const FeatureStats& stats) {
  return ((values.rowwise() - stats.mean.transpose()).array().rowwise() / stats.stddev.transpose().array())
      .matrix();
}

std::string format_features_csv(const FeatureMatrix& features, const std::vector<std::uint16_t>* labels) {
  std::ostringstream out;
  out.precision(17);
  out << "i,j,k";
  for (const char* name : feature_names()) out << ',' << name;
  if (labels) out << ",label";
  out << '\n';
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto& key = features.keys[r];
    out << key.i << ',' << key.j << ',' << key.k;
    for (std::size_t c = 0; c < kFeatureWidth; ++c) out << ',' << features.values(r, c);
    if (labels) out << ',' << (*labels)[r];
    out << '\n';
  }
  return out.str();
}

}  // namespace cola
