#include <doctest.h>

#include "cola/error.hpp"
#include "cola/taxonomy.hpp"
#include "test_util.hpp"

using namespace cola;

namespace {

const char* kDatasets[] = {"semantickitti", "nuscenes", "semanticposs", "syn_kitti", "syn_nusc", "syn_panda", "syn_poss"};

LabelMap bundled(const std::string& dataset, CoarseVariant variant) {
  return load_label_map_file(label_map_path(test::data_dir() / "maps", dataset, variant), coarse_set(variant));
}

}  // namespace

TEST_SUITE("taxonomy") {

TEST_CASE("coarse set sizes and names") {
  CHECK(coarse_set(CoarseVariant::Five).size() == 5);
  CHECK(coarse_set(CoarseVariant::Eight).size() == 8);
  CHECK(coarse_set(CoarseVariant::Ten).size() == 10);
  const auto ten = coarse_set(CoarseVariant::Ten);
  CHECK(ten.id_of("poles") == 9);
  CHECK(ten.name_of(0) == "ignore");
  CHECK_FALSE(ten.id_of("vehicles").has_value());
  CHECK(parse_variant("8") == CoarseVariant::Eight);
  CHECK_FALSE(parse_variant("seven").has_value());
}

TEST_CASE("projections merge the documented pairs") {
  const auto ten = coarse_set(CoarseVariant::Ten);
  const auto eight = coarse_set(CoarseVariant::Eight);
  const auto five = coarse_set(CoarseVariant::Five);
  auto via = [&](const char* ten_name) { return eight.name_of(project_ten_to_eight(*ten.id_of(ten_name))); };
  CHECK(via("four_wheeled_vehicles") == "vehicles");
  CHECK(via("two_wheeled_vehicles") == "vehicles");
  CHECK(via("poles") == "static_objects");
  CHECK(via("other_static_objects") == "static_objects");
  CHECK(via("nature") == "nature");
  auto down = [&](const char* eight_name) { return five.name_of(project_eight_to_five(*eight.id_of(eight_name))); };
  CHECK(down("driveable_ground") == "ground");
  CHECK(down("other_ground") == "ground");
  CHECK(down("structure") == "structure_and_objects");
  CHECK(down("dynamic_objects") == "structure_and_objects");
  CHECK(down("static_objects") == "structure_and_objects");
  CHECK(project_ten_to_eight(0) == 0);
  CHECK(project_eight_to_five(0) == 0);
  CHECK_THROWS_AS(project_ten_to_eight(11), Error);
}

TEST_CASE("every bundled map is total over its vocabulary") {
  for (const char* ds : kDatasets) {
    const Vocabulary vocab = parse_vocabulary(read_text_file(test::data_dir() / "vocab" / (std::string(ds) + ".csv")));
    for (auto variant : {CoarseVariant::Five, CoarseVariant::Eight, CoarseVariant::Ten}) {
      CAPTURE(ds);
      const LabelMap map = bundled(ds, variant);
      CHECK(map.dataset_name == ds);
      const auto report = validate_label_map(map, vocabulary_ids(vocab));
      CHECK(report.ok());
    }
  }
}

TEST_CASE("bundled maps commute: ten -> eight -> five equals the direct maps") {
  for (const char* ds : kDatasets) {
    const LabelMap m5 = bundled(ds, CoarseVariant::Five);
    const LabelMap m8 = bundled(ds, CoarseVariant::Eight);
    const LabelMap m10 = bundled(ds, CoarseVariant::Ten);
    for (const auto& [fine, ten_id] : m10.entries) {
      CAPTURE(ds);
      CAPTURE(fine);
      REQUIRE(m8.lookup(fine).has_value());
      REQUIRE(m5.lookup(fine).has_value());
      CHECK(project_ten_to_eight(ten_id) == *m8.lookup(fine));
      CHECK(project_eight_to_five(*m8.lookup(fine)) == *m5.lookup(fine));
    }
    CHECK(m10.entries.size() == m8.entries.size());
    CHECK(m8.entries.size() == m5.entries.size());
  }
}

TEST_CASE("map parsing errors") {
  const auto eight = coarse_set(CoarseVariant::Eight);
  const std::string header = "dataset,fine_id,fine_name,coarse_id,coarse_name\n";
  auto code_of = [&](const std::string& body) {
    try {
      load_label_map(header + body, eight);
    } catch (const Error& e) {
      return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::ParseError;
  };
  CHECK(code_of("d,1,a,1,nonsense\n") == ErrorCode::UnknownCoarseName);
  CHECK(code_of("d,1,a,1,driveable_ground\nd,1,b,2,other_ground\n") == ErrorCode::DuplicateFineId);
  CHECK(code_of("d,1,a,2,driveable_ground\n") == ErrorCode::ParseError);
  CHECK(code_of("d,1,a\n") == ErrorCode::ParseError);
  CHECK(code_of("d,1,a,1,driveable_ground\ne,2,b,1,driveable_ground\n") == ErrorCode::ParseError);
  CHECK_THROWS_AS(load_label_map("d,1,a,1,driveable_ground\n", eight), Error);
}

TEST_CASE("validation reports gaps without failing on uncovered coarse labels") {
  const auto eight = coarse_set(CoarseVariant::Eight);
  const LabelMap map = load_label_map(
      "dataset,fine_id,fine_name,coarse_id,coarse_name\nd,0,unlabeled,0,ignore\nd,5,road,1,driveable_ground\n", eight);
  const auto ok = validate_label_map(map, {0, 5});
  CHECK(ok.ok());
  CHECK(ok.uncovered_coarse_ids.size() == 7);
  const auto missing = validate_label_map(map, {0, 5, 9});
  CHECK_FALSE(missing.ok());
  CHECK(missing.unmapped_fine_ids == std::set<std::uint16_t>{9});
}

TEST_CASE("remap replaces semantics and keeps instances") {
  const auto eight = coarse_set(CoarseVariant::Eight);
  const LabelMap map = load_label_map(
      "dataset,fine_id,fine_name,coarse_id,coarse_name\n"
      "d,0,unlabeled,0,ignore\nd,10,car,4,vehicles\nd,40,road,1,driveable_ground\n",
      eight);
  LabelArray labels;
  labels.semantic = {10, 40, 0, 10};
  labels.instance = {7, 0, 0, 8};
  const LabelArray out = remap(labels, map);
  CHECK(out.semantic == std::vector<std::uint16_t>{4, 1, 0, 4});
  CHECK(out.instance == labels.instance);

  labels.semantic[2] = 99;
  try {
    remap(labels, map);
    FAIL("expected UnmappedLabel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnmappedLabel);
    CHECK(std::string(e.what()).find("99") != std::string::npos);
  }
}

TEST_CASE("identity map is idempotent on coarse labels") {
  const auto ten = coarse_set(CoarseVariant::Ten);
  const LabelMap id = identity_map(ten);
  LabelArray labels;
  for (std::uint16_t c = 0; c <= 10; ++c) {
    labels.semantic.push_back(c);
    labels.instance.push_back(static_cast<std::uint16_t>(c * 3));
  }
  CHECK(remap(labels, id) == labels);
  CHECK(remap(remap(labels, id), id) == labels);
}

TEST_CASE("format_label_map round trips") {
  const LabelMap map = bundled("semantickitti", CoarseVariant::Ten);
  const LabelMap again = load_label_map(format_label_map(map), coarse_set(CoarseVariant::Ten));
  CHECK(again.entries == map.entries);
  CHECK(again.fine_names == map.fine_names);
  CHECK(again.dataset_name == map.dataset_name);
}

}  // TEST_SUITE
