#include "cola/taxonomy.hpp"

#include <array>
#include <sstream>

#include "cola/error.hpp"
#include "cola/kv_config.hpp"

namespace cola {

std::string_view variant_name(CoarseVariant variant) {
  switch (variant) {
    case CoarseVariant::Five: return "five";
    case CoarseVariant::Eight: return "eight";
    case CoarseVariant::Ten: return "ten";
  }
  return "eight";
}

std::optional<CoarseVariant> parse_variant(std::string_view text) {
  if (text == "five" || text == "5") return CoarseVariant::Five;
  if (text == "eight" || text == "8") return CoarseVariant::Eight;
  if (text == "ten" || text == "10") return CoarseVariant::Ten;
  return std::nullopt;
}

std::optional<std::uint16_t> CoarseLabelSet::id_of(std::string_view name) const {
  for (const auto& label : labels) {
    if (label.name == name) return label.id;
  }
  return std::nullopt;
}

const std::string& CoarseLabelSet::name_of(std::uint16_t id) const {
  static const std::string ignore(kIgnoreName);
  if (!contains(id)) return ignore;
  return labels[id - 1].name;
}

namespace {

CoarseLabelSet make_set(CoarseVariant variant, std::initializer_list<const char*> names) {
  CoarseLabelSet set;
  set.variant = variant;
  std::uint16_t id = 1;
  for (const char* name : names) set.labels.push_back({id++, name});
  return set;
}

// Indexed by coarse id; entry 0 is ignore.
constexpr std::array<std::uint16_t, 11> kTenToEight = {0, 1, 2, 3, 4, 4, 5, 6, 7, 8, 8};
constexpr std::array<std::uint16_t, 9> kEightToFive = {0, 1, 1, 2, 3, 4, 5, 2, 2};

}  // namespace

CoarseLabelSet coarse_set(CoarseVariant variant) {
  switch (variant) {
    case CoarseVariant::Five:
      return make_set(variant, {"ground", "structure_and_objects", "vehicles", "nature", "living_being"});
    case CoarseVariant::Eight:
      return make_set(variant, {"driveable_ground", "other_ground", "structure", "vehicles", "nature",
                                "living_being", "dynamic_objects", "static_objects"});
    case CoarseVariant::Ten:
      return make_set(variant, {"driveable_ground", "other_ground", "structure", "four_wheeled_vehicles",
                                "two_wheeled_vehicles", "nature", "living_being", "dynamic_objects", "poles",
                                "other_static_objects"});
  }
  return {};
}

std::uint16_t project_ten_to_eight(std::uint16_t ten_id) {
  if (ten_id >= kTenToEight.size()) throw Error(ErrorCode::OutOfRangeClass, "not a ten-set id: " + std::to_string(ten_id));
  return kTenToEight[ten_id];
}

std::uint16_t project_eight_to_five(std::uint16_t eight_id) {
  if (eight_id >= kEightToFive.size()) throw Error(ErrorCode::OutOfRangeClass, "not an eight-set id: " + std::to_string(eight_id));
  return kEightToFive[eight_id];
}

std::optional<std::uint16_t> LabelMap::lookup(std::uint16_t fine_id) const {
  const auto it = entries.find(fine_id);
  if (it == entries.end()) return std::nullopt;
  return it->second;
}

LabelMap load_label_map(std::string_view text, const CoarseLabelSet& coarse) {
  LabelMap map;
  map.variant = coarse.variant;
  std::size_t line_no = 0;
  bool header_seen = false;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto where = " (line " + std::to_string(line_no) + ")";
    if (!header_seen) {
      header_seen = true;
      if (line == "dataset,fine_id,fine_name,coarse_id,coarse_name") continue;
      throw Error(ErrorCode::ParseError, "missing mapping header" + where);
    }
    const auto fields = split(line, ',');
    if (fields.size() != 5) throw Error(ErrorCode::ParseError, "expected 5 fields" + where);
    const std::string dataset = trim(fields[0]);
    const auto fine_id = parse_int(fields[1]);
    const auto coarse_id = parse_int(fields[3]);
    const std::string coarse_name = trim(fields[4]);
    if (dataset.empty() || !fine_id || !coarse_id || *fine_id < 0 || *fine_id > 0xFFFF || *coarse_id < 0 ||
        *coarse_id > 0xFFFF) {
      throw Error(ErrorCode::ParseError, "malformed mapping row" + where);
    }
    if (map.dataset_name.empty()) {
      map.dataset_name = dataset;
    } else if (map.dataset_name != dataset) {
      throw Error(ErrorCode::ParseError, "mixed datasets '" + map.dataset_name + "' and '" + dataset + "'" + where);
    }
    std::uint16_t expected_id = 0;
    if (coarse_name != kIgnoreName) {
      const auto named = coarse.id_of(coarse_name);
      if (!named) throw Error(ErrorCode::UnknownCoarseName, "'" + coarse_name + "'" + where);
      expected_id = *named;
    }
    if (expected_id != *coarse_id) {
      throw Error(ErrorCode::ParseError, "coarse id " + std::to_string(*coarse_id) + " does not match name '" +
                                             coarse_name + "'" + where);
    }
    const auto fine = static_cast<std::uint16_t>(*fine_id);
    if (!map.entries.emplace(fine, static_cast<std::uint16_t>(*coarse_id)).second) {
      throw Error(ErrorCode::DuplicateFineId, std::to_string(fine) + where);
    }
    map.fine_names[fine] = trim(fields[2]);
  }
  return map;
}

LabelMap load_label_map_file(const std::filesystem::path& path, const CoarseLabelSet& coarse) {
  try {
    return load_label_map(read_text_file(path), coarse);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string format_label_map(const LabelMap& map) {
  const CoarseLabelSet coarse = coarse_set(map.variant);
  std::ostringstream out;
  out << "dataset,fine_id,fine_name,coarse_id,coarse_name\n";
  for (const auto& [fine, coarse_id] : map.entries) {
    const auto name_it = map.fine_names.find(fine);
    out << map.dataset_name << ',' << fine << ',' << (name_it == map.fine_names.end() ? "" : name_it->second)
        << ',' << coarse_id << ',' << coarse.name_of(coarse_id) << '\n';
  }
  return out.str();
}

std::filesystem::path label_map_path(const std::filesystem::path& dir, std::string_view dataset,
                                     CoarseVariant variant) {
  return dir / (std::string(dataset) + ".coarse" + std::to_string(static_cast<int>(variant)) + ".csv");
}

ValidationReport validate_label_map(const LabelMap& map, const std::set<std::uint16_t>& fine_vocabulary) {
  const CoarseLabelSet coarse = coarse_set(map.variant);
  ValidationReport report;
  for (std::uint16_t id : fine_vocabulary) {
    if (!map.entries.count(id)) report.unmapped_fine_ids.insert(id);
  }
  std::set<std::uint16_t> reached;
  for (const auto& [fine, coarse_id] : map.entries) {
    if (coarse_id != kIgnoreLabel && !coarse.contains(coarse_id)) {
      report.out_of_range_coarse_ids.insert(coarse_id);
    }
    reached.insert(coarse_id);
  }
  for (const auto& label : coarse.labels) {
    if (!reached.count(label.id)) report.uncovered_coarse_ids.insert(label.id);
  }
  return report;
}

std::set<std::uint16_t> vocabulary_ids(const Vocabulary& vocabulary) {
  std::set<std::uint16_t> ids;
  for (const auto& [id, name] : vocabulary) ids.insert(id);
  return ids;
}

LabelArray remap(const LabelArray& labels, const LabelMap& map) {
  LabelArray out;
  out.semantic.resize(labels.semantic.size());
  out.instance = labels.instance;
  // Dense table for the hot loop; 0xFFFF marks "absent" (valid coarse ids are tiny).
  std::vector<std::uint32_t> table(0x10000, 0xFFFFFFFFu);
  for (const auto& [fine, coarse_id] : map.entries) table[fine] = coarse_id;
  for (std::size_t i = 0; i < labels.semantic.size(); ++i) {
    const std::uint32_t mapped = table[labels.semantic[i]];
    if (mapped == 0xFFFFFFFFu) {
      throw Error(ErrorCode::UnmappedLabel, "fine id " + std::to_string(labels.semantic[i]) +
                                                " has no entry in the '" + map.dataset_name + "' map");
    }
    out.semantic[i] = static_cast<std::uint16_t>(mapped);
  }
  return out;
}

LabelMap identity_map(const CoarseLabelSet& coarse) {
  LabelMap map;
  map.dataset_name = std::string("coarse_") + std::string(variant_name(coarse.variant));
  map.variant = coarse.variant;
  map.entries[kIgnoreLabel] = kIgnoreLabel;
  map.fine_names[kIgnoreLabel] = std::string(kIgnoreName);
  for (const auto& label : coarse.labels) {
    map.entries[label.id] = label.id;
    map.fine_names[label.id] = label.name;
  }
  return map;
}

}  // namespace cola
