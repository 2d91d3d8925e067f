#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cola/lidar_io.hpp"

namespace cola {

enum class CoarseVariant : std::uint8_t { Five = 5, Eight = 8, Ten = 10 };

std::string_view variant_name(CoarseVariant variant);
std::optional<CoarseVariant> parse_variant(std::string_view text);

struct CoarseLabel {
  std::uint16_t id;
  std::string name;
};

/// Coarse vocabulary; ids are contiguous from 1, 0 is ignore.
struct CoarseLabelSet {
  CoarseVariant variant = CoarseVariant::Eight;
  std::vector<CoarseLabel> labels;

  std::size_t size() const { return labels.size(); }
  bool contains(std::uint16_t id) const { return id >= 1 && id <= labels.size(); }
  std::optional<std::uint16_t> id_of(std::string_view name) const;
  const std::string& name_of(std::uint16_t id) const;
};

inline constexpr std::string_view kIgnoreName = "ignore";

/// Eight: driveable ground, other ground, structure, vehicles, nature, living
/// being, dynamic objects, static objects. Five merges the two grounds and
/// structure with both object kinds. Ten splits vehicles into two/four wheels
/// and static objects into poles and the rest.
CoarseLabelSet coarse_set(CoarseVariant variant);

/// Ten -> Eight and Eight -> Five projections (ignore maps to ignore).
std::uint16_t project_ten_to_eight(std::uint16_t ten_id);
std::uint16_t project_eight_to_five(std::uint16_t eight_id);

struct LabelMap {
  std::string dataset_name;
  CoarseVariant variant = CoarseVariant::Eight;
  std::map<std::uint16_t, std::uint16_t> entries;
  std::map<std::uint16_t, std::string> fine_names;

  std::optional<std::uint16_t> lookup(std::uint16_t fine_id) const;
};

/// Parses `dataset,fine_id,fine_name,coarse_id,coarse_name` rows. The coarse
/// name must name a label of `coarse` (or be `ignore` with id 0) and agree
/// with the coarse id.
LabelMap load_label_map(std::string_view text, const CoarseLabelSet& coarse);
LabelMap load_label_map_file(const std::filesystem::path& path, const CoarseLabelSet& coarse);
std::string format_label_map(const LabelMap& map);

/// `<dir>/<dataset>.coarse<N>.csv`
std::filesystem::path label_map_path(const std::filesystem::path& dir, std::string_view dataset,
                                     CoarseVariant variant);

struct ValidationReport {
  std::set<std::uint16_t> unmapped_fine_ids;
  std::set<std::uint16_t> out_of_range_coarse_ids;
  /// Coarse labels that no fine label reaches; informational only.
  std::set<std::uint16_t> uncovered_coarse_ids;

  bool ok() const { return unmapped_fine_ids.empty() && out_of_range_coarse_ids.empty(); }
};

ValidationReport validate_label_map(const LabelMap& map, const std::set<std::uint16_t>& fine_vocabulary);
std::set<std::uint16_t> vocabulary_ids(const Vocabulary& vocabulary);

/// Replaces semantic ids through the map; instance ids pass through.
/// Throws UnmappedLabel naming the first id the map lacks.
LabelArray remap(const LabelArray& labels, const LabelMap& map);

/// Identity map over the ids of a coarse set.
LabelMap identity_map(const CoarseLabelSet& coarse);

}  // namespace cola
