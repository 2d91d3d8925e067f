#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cola/lidar_io.hpp"

namespace cola {

/// Procedural object kinds. Each has a fixed ten-set coarse category, so a
/// generated scan is its own labelling oracle.
enum class Archetype : std::uint8_t {
  Road,
  Sidewalk,
  Terrain,
  Building,
  Fence,
  Car,
  Truck,
  Bicycle,
  Pedestrian,
  Rider,
  Pole,
  TrafficSign,
  Trunk,
  Vegetation,
  Trashcan,
  Cone,
  Stroller,
};

inline constexpr std::size_t kArchetypeCount = 17;

std::string_view archetype_name(Archetype a);
std::optional<Archetype> parse_archetype(std::string_view name);
/// Coarse id in the ten-label set.
std::uint16_t archetype_coarse_ten(Archetype a);
/// Archetypes whose primitives an instance of `a` emits (e.g. a tree emits a
/// trunk and a vegetation canopy).
std::vector<Archetype> emitted_archetypes(Archetype a);

struct SensorModel {
  std::size_t n_beams = 32;
  double azimuth_resolution_deg = 1.0;
  double vfov_min_deg = -25.0;
  double vfov_max_deg = 3.0;
  double max_range = 30.0;
  double dropout_rate = 0.0;
  double height = 1.8;
  double range_noise = 0.02;
  double intensity_noise = 0.06;

  void validate() const;
  /// Beam b sits at vfov_min + (vfov_max - vfov_min) * b / n_beams, so the
  /// rings of n beams are a subset of the rings of 2n beams.
  double beam_fraction(std::size_t b) const;
  std::size_t azimuth_steps() const;
};

struct SceneConfig {
  /// Objects are placed within +-extent metres laterally and along the path.
  double extent = 30.0;
  double road_half_width = 5.0;
  double sidewalk_width = 2.5;
  double sidewalk_height = 0.15;
  double building_setback = 14.0;
  /// Road: 0/1 strips; Sidewalk: 0-2 strips; Terrain is implicit everywhere
  /// else. The remaining entries count objects.
  std::array<int, kArchetypeCount> counts{};
  /// Fine label for points of each archetype; defaults to archetype index + 1.
  std::array<std::uint16_t, kArchetypeCount> fine_label{};
  SensorModel sensor;

  SceneConfig();
  void validate() const;
  int& count(Archetype a) { return counts[static_cast<std::size_t>(a)]; }
  int count(Archetype a) const { return counts[static_cast<std::size_t>(a)]; }
  std::uint16_t& label(Archetype a) { return fine_label[static_cast<std::size_t>(a)]; }
  std::uint16_t label(Archetype a) const { return fine_label[static_cast<std::size_t>(a)]; }
};

enum class PrimitiveKind : std::uint8_t { Box, Cylinder, Ellipsoid };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Box;
  Archetype archetype = Archetype::Building;
  std::uint16_t instance = 0;
  Eigen::Vector3d a = Eigen::Vector3d::Zero();  ///< box min | cylinder (cx, cy, z0) | ellipsoid centre
  Eigen::Vector3d b = Eigen::Vector3d::Zero();  ///< box max | cylinder (radius, -, z1) | ellipsoid radii
};

struct SceneLayout {
  SceneConfig config;
  std::vector<Primitive> primitives;
};

struct SceneSample {
  PointScan scan;
  LabelArray labels;
  std::vector<Archetype> archetypes;
};

/// Places the configured objects without footprint overlap. Throws
/// PlacementFailure when an object finds no free spot after bounded retries.
/// path_length widens the free corridor along +x for multi-scan scenes.
SceneLayout place_scene(const SceneConfig& cfg, std::uint64_t seed, double path_length = 0.0);

/// Ray-samples a layout from a sensor at (sensor_x, 0, height). Points are in
/// the sensor frame. Dropout and noise are keyed per ray, so adding beams only
/// adds points.
SceneSample sample_scan(const SceneLayout& layout, double sensor_x, std::uint64_t seed);

/// place_scene + sample_scan from the origin.
SceneSample generate_scene(const SceneConfig& cfg, std::uint64_t seed);

struct DatasetSpec {
  std::string name;
  SceneConfig scene;
  Vocabulary vocabulary;
  std::size_t n_scenes = 1;
  std::size_t scans_per_scene = 1;
  double scan_spacing = 2.0;
};

struct CorpusConfig {
  std::vector<DatasetSpec> datasets;

  const DatasetSpec& dataset(std::string_view name) const;
};

/// Key-value corpus description; see README for the schema.
CorpusConfig parse_corpus_config(std::string_view text);

/// Writes `<out>/<dataset>/{manifest.tsv, vocabulary.csv, <scene>/velodyne/*.bin,
/// <scene>/labels/*.label}` and returns the resulting indices. Scan seeds are
/// derive_seed(seed, dataset, scene, scan).
std::vector<DatasetIndex> generate_corpus(const CorpusConfig& cfg, std::uint64_t seed,
                                          const std::filesystem::path& out_dir, std::size_t jobs = 1);

}  // namespace cola
