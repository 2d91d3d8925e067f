#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cola {

struct Point {
  float x = 0.f;
  float y = 0.f;
  float z = 0.f;
  float intensity = 0.f;

  friend bool operator==(const Point&, const Point&) = default;
};

/// One sweep. Intensity is kept exactly as read.
struct PointScan {
  std::vector<Point> points;
  std::string scan_id;

  std::size_t size() const { return points.size(); }
};

/// Per-point semantic and instance ids; semantic id 0 is ignore.
struct LabelArray {
  std::vector<std::uint16_t> semantic;
  std::vector<std::uint16_t> instance;

  std::size_t size() const { return semantic.size(); }
  friend bool operator==(const LabelArray&, const LabelArray&) = default;
};

inline constexpr std::uint16_t kIgnoreLabel = 0;

using Bytes = std::vector<std::uint8_t>;
using Vocabulary = std::map<std::uint16_t, std::string>;

// Raw little-endian float32 quadruplets (x, y, z, intensity).
PointScan parse_point_scan(std::span<const std::uint8_t> bytes);
Bytes write_point_scan(const PointScan& scan);

// Little-endian uint32 per point: low 16 bits semantic, high 16 bits instance.
LabelArray parse_label_file(std::span<const std::uint8_t> bytes, std::size_t n_points);
Bytes write_label_file(const LabelArray& labels);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

PointScan load_scan(const std::filesystem::path& path);
LabelArray load_labels(const std::filesystem::path& path, std::size_t n_points);

/// `id,name` CSV with an `id,name` header line and `#` comments.
Vocabulary parse_vocabulary(std::string_view text);
std::string format_vocabulary(const Vocabulary& vocabulary);

struct ScanEntry {
  std::string scan_id;
  std::filesystem::path scan_path;
  std::filesystem::path label_path;

  friend bool operator==(const ScanEntry&, const ScanEntry&) = default;
};

struct Scene {
  std::string scene_id;
  std::vector<ScanEntry> scans;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct DatasetIndex {
  std::string dataset_name;
  Vocabulary fine_vocabulary;
  std::vector<Scene> scenes;

  std::size_t scan_count() const;
  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

enum class LayoutKind {
  /// root/sequences/<scene>/velodyne/<scan>.bin + root/sequences/<scene>/labels/<scan>.label
  SequenceFolders,
  /// root/<manifest>: `scene_id<TAB>scan_path<TAB>label_path`, paths relative to root
  FlatManifest,
};

struct DatasetLayout {
  LayoutKind kind = LayoutKind::FlatManifest;
  std::string manifest_name = "manifest.tsv";
  /// Optional `id,name` file relative to root.
  std::string vocabulary_name = "vocabulary.csv";
};

/// Builds a deterministic, lexicographically sorted index. The dataset name
/// is the root directory's file name.
DatasetIndex index_dataset(const std::filesystem::path& root, const DatasetLayout& layout = {});

/// Detects the layout: a manifest file wins, else a `sequences` folder.
DatasetLayout detect_layout(const std::filesystem::path& root);

std::string format_manifest(const DatasetIndex& index, const std::filesystem::path& root);

}  // namespace cola
