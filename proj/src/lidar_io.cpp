#include "cola/lidar_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cola/error.hpp"
#include "cola/kv_config.hpp"

namespace fs = std::filesystem;

namespace cola {

namespace {

std::uint32_t load_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32_le(std::uint32_t v, Bytes& out) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

float load_f32_le(const std::uint8_t* p) { return std::bit_cast<float>(load_u32_le(p)); }

}  // namespace

PointScan parse_point_scan(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0) {
    throw Error(ErrorCode::MalformedScan,
                "scan byte length " + std::to_string(bytes.size()) + " is not a multiple of 16");
  }
  PointScan scan;
  const std::size_t n = bytes.size() / 16;
  scan.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = bytes.data() + 16 * i;
    Point& pt = scan.points[i];
    pt.x = load_f32_le(p);
    pt.y = load_f32_le(p + 4);
    pt.z = load_f32_le(p + 8);
    pt.intensity = load_f32_le(p + 12);
    if (!std::isfinite(pt.x) || !std::isfinite(pt.y) || !std::isfinite(pt.z) ||
        !std::isfinite(pt.intensity)) {
      throw Error(ErrorCode::NonFiniteValue, "point " + std::to_string(i) + " has a non-finite value");
    }
  }
  return scan;
}

Bytes write_point_scan(const PointScan& scan) {
  Bytes out;
  out.reserve(scan.points.size() * 16);
  for (const Point& pt : scan.points) {
    for (float v : {pt.x, pt.y, pt.z, pt.intensity}) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "cannot write a non-finite point");
      store_u32_le(std::bit_cast<std::uint32_t>(v), out);
    }
  }
  return out;
}

LabelArray parse_label_file(std::span<const std::uint8_t> bytes, std::size_t n_points) {
  if (bytes.size() != 4 * n_points) {
    throw Error(ErrorCode::LengthMismatch, "label byte length " + std::to_string(bytes.size()) +
                                               " != 4 * " + std::to_string(n_points) + " points");
  }
  LabelArray labels;
  labels.semantic.resize(n_points);
  labels.instance.resize(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const std::uint32_t v = load_u32_le(bytes.data() + 4 * i);
    labels.semantic[i] = static_cast<std::uint16_t>(v & 0xFFFFu);
    labels.instance[i] = static_cast<std::uint16_t>(v >> 16);
  }
  return labels;
}

Bytes write_label_file(const LabelArray& labels) {
  if (labels.semantic.size() != labels.instance.size()) {
    throw Error(ErrorCode::LengthMismatch, "semantic and instance arrays differ in length");
  }
  Bytes out;
  out.reserve(labels.size() * 4);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    store_u32_le(static_cast<std::uint32_t>(labels.semantic[i]) |
                     (static_cast<std::uint32_t>(labels.instance[i]) << 16),
                 out);
  }
  return out;
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

std::string read_text_file(const fs::path& path) {
  const Bytes bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const fs::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

PointScan load_scan(const fs::path& path) {
  PointScan scan = parse_point_scan(read_file(path));
  scan.scan_id = path.stem().string();
  return scan;
}

LabelArray load_labels(const fs::path& path, std::size_t n_points) {
  return parse_label_file(read_file(path), n_points);
}

Vocabulary parse_vocabulary(std::string_view text) {
  Vocabulary vocabulary;
  std::size_t line_no = 0;
  bool header_seen = false;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line == "id,name") continue;
    }
    const auto fields = split(line, ',');
    const auto id = fields.size() == 2 ? parse_int(fields[0]) : std::nullopt;
    if (!id || *id < 0 || *id > 0xFFFF) {
      throw Error(ErrorCode::ParseError, "bad vocabulary line " + std::to_string(line_no) + ": " + line);
    }
    if (!vocabulary.emplace(static_cast<std::uint16_t>(*id), trim(fields[1])).second) {
      throw Error(ErrorCode::ParseError, "duplicate vocabulary id " + std::to_string(*id));
    }
  }
  return vocabulary;
}

std::string format_vocabulary(const Vocabulary& vocabulary) {
  std::ostringstream out;
  out << "id,name\n";
  for (const auto& [id, name] : vocabulary) out << id << ',' << name << '\n';
  return out.str();
}

std::size_t DatasetIndex::scan_count() const {
  std::size_t n = 0;
  for (const auto& scene : scenes) n += scene.scans.size();
  return n;
}

DatasetLayout detect_layout(const fs::path& root) {
  DatasetLayout layout;
  if (fs::exists(root / layout.manifest_name)) {
    layout.kind = LayoutKind::FlatManifest;
  } else if (fs::is_directory(root / "sequences")) {
    layout.kind = LayoutKind::SequenceFolders;
  }
  return layout;
}

namespace {

void sort_index(DatasetIndex& index) {
  std::sort(index.scenes.begin(), index.scenes.end(),
            [](const Scene& a, const Scene& b) { return a.scene_id < b.scene_id; });
  for (auto& scene : index.scenes) {
    std::sort(scene.scans.begin(), scene.scans.end(), [](const ScanEntry& a, const ScanEntry& b) {
      return a.scan_id != b.scan_id ? a.scan_id < b.scan_id : a.scan_path < b.scan_path;
    });
  }
}

void index_sequences(const fs::path& root, DatasetIndex& index) {
  const fs::path sequences = root / "sequences";
  if (!fs::is_directory(sequences)) return;
  for (const auto& seq : fs::directory_iterator(sequences)) {
    if (!seq.is_directory()) continue;
    const fs::path velodyne = seq.path() / "velodyne";
    if (!fs::is_directory(velodyne)) continue;
    Scene scene;
    scene.scene_id = seq.path().filename().string();
    for (const auto& file : fs::directory_iterator(velodyne)) {
      if (file.path().extension() != ".bin") continue;
      const fs::path label = seq.path() / "labels" / (file.path().stem().string() + ".label");
      if (!fs::exists(label)) throw Error(ErrorCode::MissingLabel, "no label file for " + file.path().string());
      scene.scans.push_back({file.path().stem().string(), file.path(), label});
    }
    if (!scene.scans.empty()) index.scenes.push_back(std::move(scene));
  }
}

void index_manifest(const fs::path& root, const DatasetLayout& layout, DatasetIndex& index) {
  const std::string text = read_text_file(root / layout.manifest_name);
  std::map<std::string, Scene> scenes;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw Error(ErrorCode::ParseError, "manifest line " + std::to_string(line_no) +
                                             " must have 3 tab-separated fields");
    }
    const fs::path scan_path = root / fields[1];
    const fs::path label_path = root / fields[2];
    if (!fs::exists(scan_path)) throw Error(ErrorCode::IoFailure, "missing scan file " + scan_path.string());
    if (!fs::exists(label_path)) throw Error(ErrorCode::MissingLabel, "no label file for " + scan_path.string());
    auto& scene = scenes[fields[0]];
    scene.scene_id = fields[0];
    scene.scans.push_back({scan_path.stem().string(), scan_path, label_path});
  }
  for (auto& [id, scene] : scenes) index.scenes.push_back(std::move(scene));
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root, const DatasetLayout& layout) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::IoFailure, "dataset root not found: " + root.string());
  DatasetIndex index;
  index.dataset_name = fs::path(root).lexically_normal().filename().string();
  if (index.dataset_name.empty()) index.dataset_name = fs::path(root).lexically_normal().parent_path().filename().string();
  if (layout.kind == LayoutKind::SequenceFolders) {
    index_sequences(root, index);
  } else {
    index_manifest(root, layout, index);
  }
  if (index.scan_count() == 0) throw Error(ErrorCode::EmptyDataset, "no scans under " + root.string());
  if (!layout.vocabulary_name.empty() && fs::exists(root / layout.vocabulary_name)) {
    index.fine_vocabulary = parse_vocabulary(read_text_file(root / layout.vocabulary_name));
  }
  sort_index(index);
  return index;
}

std::string format_manifest(const DatasetIndex& index, const fs::path& root) {
  std::ostringstream out;
  out << "# scene_id\tscan_path\tlabel_path\n";
  for (const auto& scene : index.scenes) {
    for (const auto& scan : scene.scans) {
      out << scene.scene_id << '\t' << scan.scan_path.lexically_relative(root).generic_string() << '\t'
          << scan.label_path.lexically_relative(root).generic_string() << '\n';
    }
  }
  return out.str();
}

}  // namespace cola
