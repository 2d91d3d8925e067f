#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "cola/error.hpp"
#include "cola/lidar_io.hpp"
#include "test_util.hpp"

using namespace cola;
namespace fs = std::filesystem;

TEST_SUITE("lidar_io") {

TEST_CASE("scan bytes are little-endian float quadruplets") {
  PointScan scan;
  scan.points = {{1.0f, -2.0f, 0.5f, 0.25f}};
  const Bytes bytes = write_point_scan(scan);
  REQUIRE(bytes.size() == 16);
  // IEEE-754: 1.0f = 0x3F800000, -2.0f = 0xC0000000, 0.5f = 0x3F000000, 0.25f = 0x3E800000.
  const Bytes expected{0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0xC0,
                       0x00, 0x00, 0x00, 0x3F, 0x00, 0x00, 0x80, 0x3E};
  CHECK(bytes == expected);
  CHECK(parse_point_scan(bytes).points == scan.points);
}

TEST_CASE("label words pack semantic in the low half") {
  LabelArray labels;
  labels.semantic = {10, 0xFFFF};
  labels.instance = {3, 0};
  const Bytes bytes = write_label_file(labels);
  const Bytes expected{0x0A, 0x00, 0x03, 0x00, 0xFF, 0xFF, 0x00, 0x00};
  CHECK(bytes == expected);
  CHECK(parse_label_file(bytes, 2) == labels);
}

TEST_CASE("empty scan is valid") {
  CHECK(parse_point_scan(Bytes{}).size() == 0);
  CHECK(write_point_scan(PointScan{}).empty());
}

TEST_CASE("intensity keeps its raw value") {
  PointScan scan;
  scan.points = {{0.f, 0.f, 0.f, 37.0f}};
  CHECK(parse_point_scan(write_point_scan(scan)).points[0].intensity == 37.0f);
}

TEST_CASE("malformed inputs") {
  CHECK_THROWS_AS(parse_point_scan(Bytes(15, 0)), Error);
  try {
    parse_point_scan(Bytes(17, 0));
    FAIL("expected MalformedScan");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedScan);
  }

  Bytes nan_scan(16, 0);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_scan.data() + 4, &nan, 4);
  try {
    parse_point_scan(nan_scan);
    FAIL("expected NonFiniteValue");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteValue);
  }

  try {
    parse_label_file(Bytes(8, 0), 3);
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LengthMismatch);
  }
}

TEST_CASE("random round trips are bit-exact") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = rng.below(500);
    const PointScan scan = test::random_scan(rng, n);
    const Bytes bytes = write_point_scan(scan);
    CHECK(write_point_scan(parse_point_scan(bytes)) == bytes);
    const LabelArray labels = test::random_labels(rng, n);
    CHECK(parse_label_file(write_label_file(labels), n) == labels);
  }
}

TEST_CASE("vocabulary parsing") {
  const Vocabulary v = parse_vocabulary("# comment\nid,name\n0,unlabeled\n10,car\n 40 , road \n");
  CHECK(v.size() == 3);
  CHECK(v.at(10) == "car");
  CHECK(v.at(40) == "road");
  CHECK(parse_vocabulary(format_vocabulary(v)) == v);
  CHECK_THROWS_AS(parse_vocabulary("id,name\n1,a\n1,b\n"), Error);
  CHECK_THROWS_AS(parse_vocabulary("id,name\nx,a\n"), Error);
}

TEST_CASE("sequence folder indexing is sorted and detects missing labels") {
  test::TempDir dir("seq");
  const fs::path root = dir.path() / "kitti_like";
  Rng rng(2);
  for (const char* seq : {"08", "00"}) {
    fs::create_directories(root / "sequences" / seq / "velodyne");
    fs::create_directories(root / "sequences" / seq / "labels");
    for (const char* id : {"000001", "000000"}) {
      const auto scan = test::random_scan(rng, 4);
      write_file(root / "sequences" / seq / "velodyne" / (std::string(id) + ".bin"), write_point_scan(scan));
      write_file(root / "sequences" / seq / "labels" / (std::string(id) + ".label"),
                 write_label_file(test::random_labels(rng, 4)));
    }
  }
  const DatasetLayout layout = detect_layout(root);
  CHECK(layout.kind == LayoutKind::SequenceFolders);
  const DatasetIndex index = index_dataset(root, layout);
  CHECK(index.dataset_name == "kitti_like");
  REQUIRE(index.scenes.size() == 2);
  CHECK(index.scenes[0].scene_id == "00");
  CHECK(index.scenes[0].scans[0].scan_id == "000000");
  CHECK(index.scan_count() == 4);
  CHECK(index_dataset(root, layout) == index);

  fs::remove(root / "sequences" / "08" / "labels" / "000001.label");
  try {
    index_dataset(root, layout);
    FAIL("expected MissingLabel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingLabel);
  }
}

TEST_CASE("manifest indexing") {
  test::TempDir dir("manifest");
  const fs::path root = dir.path() / "flat";
  fs::create_directories(root / "s");
  Rng rng(3);
  write_file(root / "s/a.bin", write_point_scan(test::random_scan(rng, 3)));
  write_file(root / "s/a.label", write_label_file(test::random_labels(rng, 3)));
  write_file(root / "s/b.bin", write_point_scan(test::random_scan(rng, 3)));
  write_file(root / "s/b.label", write_label_file(test::random_labels(rng, 3)));
  write_text_file(root / "vocabulary.csv", "id,name\n1,road\n");
  write_text_file(root / "manifest.tsv", "# scene\tscan\tlabel\nz\ts/b.bin\ts/b.label\nz\ts/a.bin\ts/a.label\n");
  const DatasetIndex index = index_dataset(root, detect_layout(root));
  REQUIRE(index.scenes.size() == 1);
  CHECK(index.scenes[0].scans[0].scan_id == "a");
  CHECK(index.fine_vocabulary.at(1) == "road");

  write_text_file(root / "manifest.tsv", "z\ts/a.bin\n");
  CHECK_THROWS_AS(index_dataset(root, detect_layout(root)), Error);
  write_text_file(root / "manifest.tsv", "# nothing\n");
  try {
    index_dataset(root, detect_layout(root));
    FAIL("expected EmptyDataset");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyDataset);
  }
}

TEST_CASE("load_labels checks the point count") {
  test::TempDir dir("labels");
  Rng rng(4);
  write_file(dir.path() / "x.label", write_label_file(test::random_labels(rng, 5)));
  CHECK(load_labels(dir.path() / "x.label", 5).size() == 5);
  CHECK_THROWS_AS(load_labels(dir.path() / "x.label", 6), Error);
  CHECK_THROWS_AS(load_scan(dir.path() / "missing.bin"), Error);
}

}  // TEST_SUITE
